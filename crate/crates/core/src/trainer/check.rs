//! Finite-difference checks of every loss term on small random models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    discriminator_objective, encoder_generator_objective, model_arrays, BoundModel, Hyperparams,
    LossMask,
};
use crate::diffcore::{grad_check, Array, Graph, Var, DEFAULT_STEP};
use crate::error::Result;
use crate::losses::{self, SimilarityMatrix};
use crate::nets::{Model, ModelDims, Role};

/// Largest relative gradient error per term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheckReport {
    pub hash: f64,
    pub centroid: f64,
    pub classification: f64,
    pub recon: f64,
    pub adversarial_d: f64,
    pub adversarial_g: f64,
    /// Encoder/generator objective with every term on.
    pub combined: f64,
    /// Combined objective plus the discriminator loss.
    pub combined_with_d: f64,
}

impl GradCheckReport {
    pub fn rows(&self) -> [(&'static str, f64); 8] {
        [
            ("L_h", self.hash),
            ("L_s", self.centroid),
            ("L_c", self.classification),
            ("L_1", self.recon),
            ("L_a_d", self.adversarial_d),
            ("L_a_g", self.adversarial_g),
            ("combined", self.combined),
            ("combined+L_a_d", self.combined_with_d),
        ]
    }

    pub fn max(&self) -> f64 {
        self.rows().iter().map(|r| r.1).fold(0.0, f64::max)
    }

    pub fn merge(&self, other: &Self) -> Self {
        let m = f64::max;
        Self {
            hash: m(self.hash, other.hash),
            centroid: m(self.centroid, other.centroid),
            classification: m(self.classification, other.classification),
            recon: m(self.recon, other.recon),
            adversarial_d: m(self.adversarial_d, other.adversarial_d),
            adversarial_g: m(self.adversarial_g, other.adversarial_g),
            combined: m(self.combined, other.combined),
            combined_with_d: m(self.combined_with_d, other.combined_with_d),
        }
    }
}

/// A random model with nets at most `width` units wide, plus a batch pair.
#[derive(Debug, Clone)]
pub struct CheckInstance {
    pub model: Model,
    pub xs: Array,
    pub ys: Vec<usize>,
    pub xt: Array,
    pub pseudo: Vec<i64>,
    pub hp: Hyperparams,
}

impl CheckInstance {
    pub fn random(seed: u64, width: usize, batch: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.random_range(2..=3);
        let input = rng.random_range(2..=width.clamp(2, 5));
        let bits = rng.random_range(2..=width.clamp(2, 6));
        let hidden = rng.random_range(2..=width.max(2));
        let dims = ModelDims {
            input_dim: input,
            hash_bits: bits,
            num_classes: classes,
            encoder_hidden: vec![hidden],
            generator_hidden: vec![hidden],
            discriminator_hidden: vec![hidden],
        };
        let mut model = Model::init(&dims, seed)?;
        for role in Role::ALL {
            for layer in &mut model.network_mut(role).params.layers {
                for b in layer.bias.data_mut() {
                    *b = rng.random_range(-0.5..0.5);
                }
            }
        }
        let mut uniform = |r: usize, c: usize| {
            let d = (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect();
            Array::matrix(r, c, d)
        };
        let xs = uniform(batch, input)?;
        let xt = uniform(batch, input)?;
        let ys: Vec<usize> = (0..batch)
            .map(|i| {
                if i < classes {
                    i
                } else {
                    rng.random_range(0..classes)
                }
            })
            .collect();
        let pseudo: Vec<i64> = (0..batch)
            .map(|i| {
                if i < classes {
                    i as i64
                } else {
                    rng.random_range(-1..classes as i64)
                }
            })
            .collect();
        let hp = Hyperparams {
            alpha: rng.random_range(0.1..2.0),
            beta: rng.random_range(0.1..2.0),
            chi: rng.random_range(0.1..2.0),
            epsilon: rng.random_range(0.05..1.0),
            upsilon: rng.random_range(0.001..0.1),
            hash_bits: bits,
            batch_size: Some(batch),
            terms: LossMask::ALL,
            ..Hyperparams::default()
        };
        Ok(Self {
            model,
            xs,
            ys,
            xt,
            pseudo,
            hp,
        })
    }

    fn check<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&mut Graph, &BoundModel, Var, Var) -> Result<Var>,
    {
        let model = &self.model;
        grad_check(
            |g, vars| {
                let b = BoundModel::from_vars(model, vars)?;
                let xs = g.constant(self.xs.clone());
                let xt = g.constant(self.xt.clone());
                f(g, &b, xs, xt)
            },
            &model_arrays(model),
            DEFAULT_STEP,
        )
    }

    /// Checks each loss term and the combined objectives against central
    /// differences over all six networks' parameters.
    pub fn run(&self) -> Result<GradCheckReport> {
        let m = &self.model;
        let n = m.num_classes();
        let fwd =
            |g: &mut Graph, b: &BoundModel, r: Role, x: Var| m.network(r).forward(g, b.get(r), x);
        let hash = self.check(|g, b, xs, _| {
            let u = fwd(g, b, Role::Encoder, xs)?;
            losses::hash_pair_loss(
                g,
                u,
                &SimilarityMatrix::from_labels(&self.ys),
                self.hp.upsilon,
            )
        })?;
        let centroid = self.check(|g, b, xs, xt| {
            let us = fwd(g, b, Role::Encoder, xs)?;
            let ut = fwd(g, b, Role::Encoder, xt)?;
            losses::centroid_loss(g, us, &self.ys, ut, &self.pseudo, n)
        })?;
        let classification = self.check(|g, b, xs, xt| {
            let us = fwd(g, b, Role::Encoder, xs)?;
            let ut = fwd(g, b, Role::Encoder, xt)?;
            let ps = fwd(g, b, Role::Classifier, us)?;
            let pt = fwd(g, b, Role::Classifier, ut)?;
            losses::classification_loss(g, ps, &self.ys, pt, &self.pseudo, self.hp.epsilon)
        })?;
        let recon = self.check(|g, b, xs, xt| {
            let us = fwd(g, b, Role::Encoder, xs)?;
            let ut = fwd(g, b, Role::Encoder, xt)?;
            let rs = fwd(g, b, Role::SourceGenerator, us)?;
            let rt = fwd(g, b, Role::TargetGenerator, ut)?;
            losses::recon_l1_loss(g, xs, rs, xt, rt)
        })?;
        let cross = |g: &mut Graph, b: &BoundModel, xs: Var, xt: Var| -> Result<(Var, Var)> {
            let us = fwd(g, b, Role::Encoder, xs)?;
            let ut = fwd(g, b, Role::Encoder, xt)?;
            Ok((
                fwd(g, b, Role::TargetGenerator, us)?,
                fwd(g, b, Role::SourceGenerator, ut)?,
            ))
        };
        let adversarial_g = self.check(|g, b, xs, xt| {
            let (x_st, x_ts) = cross(g, b, xs, xt)?;
            let d_st = fwd(g, b, Role::TargetDiscriminator, x_st)?;
            let d_ts = fwd(g, b, Role::SourceDiscriminator, x_ts)?;
            losses::adversarial_g_loss(g, d_st, &self.ys, d_ts, &self.pseudo, n)
        })?;
        let adversarial_d = self.check(|g, b, xs, xt| {
            let (x_st, x_ts) = cross(g, b, xs, xt)?;
            discriminator_objective(g, m, b, xs, &self.ys, xt, &self.pseudo, x_st, x_ts)
        })?;
        let combined = self.check(|g, b, xs, xt| {
            Ok(
                encoder_generator_objective(g, m, b, xs, &self.ys, xt, &self.pseudo, &self.hp)?
                    .total,
            )
        })?;
        let combined_with_d = self.check(|g, b, xs, xt| {
            let eg =
                encoder_generator_objective(g, m, b, xs, &self.ys, xt, &self.pseudo, &self.hp)?
                    .total;
            let (x_st, x_ts) = cross(g, b, xs, xt)?;
            let d = discriminator_objective(g, m, b, xs, &self.ys, xt, &self.pseudo, x_st, x_ts)?;
            g.add(eg, d)
        })?;
        Ok(GradCheckReport {
            hash,
            centroid,
            classification,
            recon,
            adversarial_d,
            adversarial_g,
            combined,
            combined_with_d,
        })
    }
}

/// Worst-case report over `instances` random problems seeded from `seed`.
pub fn random_grad_check(
    seed: u64,
    instances: usize,
    width: usize,
    batch: usize,
) -> Result<GradCheckReport> {
    let mut worst = GradCheckReport::default();
    for i in 0..instances as u64 {
        let inst =
            CheckInstance::random(seed.wrapping_mul(1_000_003).wrapping_add(i), width, batch)?;
        worst = worst.merge(&inst.run()?);
    }
    Ok(worst)
}
