//! Staged adversarial training.
//!
//! Each step alternates two parameter-scoped updates: the discriminators on
//! their cross-entropy with everything else frozen, then the encoder,
//! classifier and generators on the joint objective with the discriminators
//! frozen. Target labels never enter this module except through
//! [`EvalSet`], which is only read for reporting.

mod check;
mod config;
mod metrics;

pub use check::{random_grad_check, CheckInstance, GradCheckReport};
pub use config::{DataSource, Hyperparams, LossMask, TrainConfig};
pub use metrics::{metrics_csv, write_metrics_csv, EpochMetrics, METRICS_HEADER};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, UnlabeledView};
use crate::diffcore::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::hashindex::{binarize, mean_average_precision, MapOptions, RetrievalIndex};
use crate::losses::{self, LossTerms, SimilarityMatrix};
use crate::nets::{BoundParams, Model, Role};
use crate::pseudo::pseudo_label;

/// Shuffled index batches covering `0..n` once; the short tail is dropped.
pub fn make_batches(
    n: usize,
    batch_size: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size <= classes {
        return Err(Error::Config(format!(
            "batch size must be larger than the number of classes: batch_size={batch_size}, classes={classes}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Fraction of rows whose argmax class equals the label.
pub fn evaluate_accuracy(model: &Model, features: &Array, labels: &[usize]) -> Result<f64> {
    if features.rows() != labels.len() {
        return Err(Error::shape(
            "evaluate_accuracy",
            &[features.rows()],
            &[labels.len()],
        ));
    }
    if labels.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let pred = model.predict_proba(features)?.argmax_rows();
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Binarized codes of `features` as an index with ids `0..n`.
pub fn build_index(model: &Model, features: &Array, labels: &[i32]) -> Result<RetrievalIndex> {
    let codes = binarize(&model.encode(features)?);
    if codes.is_empty() {
        return Err(Error::Empty("feature set"));
    }
    RetrievalIndex::from_codes(&codes, labels)
}

/// MAP of `queries` ranked against a `database`, both encoded with `model`.
pub fn evaluate_map(
    model: &Model,
    database: (&Array, &[usize]),
    queries: (&Array, &[usize]),
) -> Result<f64> {
    let lab = |l: &[usize]| l.iter().map(|&v| v as i32).collect::<Vec<_>>();
    let index = build_index(model, database.0, &lab(database.1))?;
    let q = build_index(model, queries.0, &lab(queries.1))?;
    mean_average_precision(
        &index,
        &q,
        &MapOptions {
            exclude_self: false,
            cutoff: None,
        },
    )
}

/// Labelled target data used only for reporting.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub features: &'a Array,
    pub labels: &'a [usize],
}

/// Graph handles for all six networks.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: BoundParams,
    pub classifier: BoundParams,
    pub gen_source: BoundParams,
    pub gen_target: BoundParams,
    pub disc_source: BoundParams,
    pub disc_target: BoundParams,
}

impl BoundModel {
    /// Registers every network; `trainable(role)` picks params vs constants.
    pub fn bind(model: &Model, g: &mut Graph, trainable: impl Fn(Role) -> bool) -> Self {
        let mut b = |r: Role| model.network(r).bind(g, trainable(r));
        Self {
            encoder: b(Role::Encoder),
            classifier: b(Role::Classifier),
            gen_source: b(Role::SourceGenerator),
            gen_target: b(Role::TargetGenerator),
            disc_source: b(Role::SourceDiscriminator),
            disc_target: b(Role::TargetDiscriminator),
        }
    }

    /// Reassembles handles from a flat list laid out like [`model_arrays`].
    pub fn from_vars(model: &Model, vars: &[Var]) -> Result<Self> {
        let mut rest = vars;
        let mut take = |r: Role| -> Result<BoundParams> {
            let k = model.network(r).params.layers.len();
            if rest.len() < 2 * k {
                return Err(Error::shape(
                    "BoundModel::from_vars",
                    &[2 * k],
                    &[rest.len()],
                ));
            }
            let (head, tail) = rest.split_at(2 * k);
            rest = tail;
            Ok(BoundParams {
                layers: head.chunks(2).map(|p| (p[0], p[1])).collect(),
            })
        };
        let out = Self {
            encoder: take(Role::Encoder)?,
            classifier: take(Role::Classifier)?,
            gen_source: take(Role::SourceGenerator)?,
            gen_target: take(Role::TargetGenerator)?,
            disc_source: take(Role::SourceDiscriminator)?,
            disc_target: take(Role::TargetDiscriminator)?,
        };
        if !rest.is_empty() {
            return Err(Error::Contract(format!("{} unused vars", rest.len())));
        }
        Ok(out)
    }

    pub fn get(&self, role: Role) -> &BoundParams {
        match role {
            Role::Encoder => &self.encoder,
            Role::Classifier => &self.classifier,
            Role::SourceGenerator => &self.gen_source,
            Role::TargetGenerator => &self.gen_target,
            Role::SourceDiscriminator => &self.disc_source,
            Role::TargetDiscriminator => &self.disc_target,
        }
    }
}

/// Every weight and bias of the model, networks in [`Role::ALL`] order.
pub fn model_arrays(model: &Model) -> Vec<Array> {
    Role::ALL
        .iter()
        .flat_map(|&r| model.network(r).params.arrays())
        .collect()
}

fn run(model: &Model, b: &BoundModel, g: &mut Graph, role: Role, x: Var) -> Result<Var> {
    model.network(role).forward(g, b.get(role), x)
}

/// Nodes of the encoder/generator objective.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: Var,
    pub terms: LossTerms,
}

/// Builds `L_c + L_a(G) + α L_h + β L_s + χ L_1` for one batch pair.
/// Terms switched off in `hp.terms` are left out of the graph.
#[allow(clippy::too_many_arguments)]
pub fn encoder_generator_objective(
    g: &mut Graph,
    model: &Model,
    b: &BoundModel,
    xs: Var,
    ys: &[usize],
    xt: Var,
    pseudo: &[i64],
    hp: &Hyperparams,
) -> Result<Objective> {
    let n = model.num_classes();
    let us = run(model, b, g, Role::Encoder, xs)?;
    let ut = run(model, b, g, Role::Encoder, xt)?;
    let ps = run(model, b, g, Role::Classifier, us)?;
    let pt = run(model, b, g, Role::Classifier, ut)?;
    let classification = losses::classification_loss(g, ps, ys, pt, pseudo, hp.epsilon)?;
    let hash = if hp.terms.hash {
        Some(losses::hash_pair_loss(
            g,
            us,
            &SimilarityMatrix::from_labels(ys),
            hp.upsilon,
        )?)
    } else {
        None
    };
    let centroid = if hp.terms.centroid {
        Some(losses::centroid_loss(g, us, ys, ut, pseudo, n)?)
    } else {
        None
    };
    let recon = if hp.terms.recon {
        let rs = run(model, b, g, Role::SourceGenerator, us)?;
        let rt = run(model, b, g, Role::TargetGenerator, ut)?;
        Some(losses::recon_l1_loss(g, xs, rs, xt, rt)?)
    } else {
        None
    };
    let adversarial_g = if hp.terms.adversarial {
        let x_st = run(model, b, g, Role::TargetGenerator, us)?;
        let x_ts = run(model, b, g, Role::SourceGenerator, ut)?;
        let d_st = run(model, b, g, Role::TargetDiscriminator, x_st)?;
        let d_ts = run(model, b, g, Role::SourceDiscriminator, x_ts)?;
        Some(losses::adversarial_g_loss(g, d_st, ys, d_ts, pseudo, n)?)
    } else {
        None
    };
    let terms = LossTerms {
        classification,
        adversarial_g,
        hash,
        centroid,
        recon,
    };
    let total = losses::total_encoder_generator_loss(g, &terms, &hp.weights())?;
    Ok(Objective { total, terms })
}

/// Discriminator cross-entropy: `D^s` sees real source against `G^s(u^t)`,
/// `D^t` sees real target (pseudo-labelled) against `G^t(u^s)`.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_objective(
    g: &mut Graph,
    model: &Model,
    b: &BoundModel,
    xs: Var,
    ys: &[usize],
    xt: Var,
    pseudo: &[i64],
    fake_st: Var,
    fake_ts: Var,
) -> Result<Var> {
    let n = model.num_classes();
    let ys_i: Vec<i64> = ys.iter().map(|&l| l as i64).collect();
    let real_s = run(model, b, g, Role::SourceDiscriminator, xs)?;
    let fake_s = run(model, b, g, Role::SourceDiscriminator, fake_ts)?;
    let real_t = run(model, b, g, Role::TargetDiscriminator, xt)?;
    let fake_t = run(model, b, g, Role::TargetDiscriminator, fake_st)?;
    let ls = losses::adversarial_d_loss(g, real_s, &ys_i, fake_s, n)?;
    let lt = losses::adversarial_d_loss(g, real_t, pseudo, fake_t, n)?;
    g.add(ls, lt)
}

/// Loss values seen during one step (before its updates).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub l_c: f64,
    pub l_h: f64,
    pub l_s: f64,
    pub l_1: f64,
    pub l_a_d: f64,
    pub l_a_g: f64,
    pub total: f64,
    pub confident_frac: f64,
}

/// Which half of a training step just finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepPhase {
    Discriminator,
    EncoderGenerator,
}

#[derive(Debug, Default, Clone, Copy)]
struct Acc {
    sum: StepLosses,
    n: usize,
}

impl Acc {
    fn add(&mut self, s: &StepLosses) {
        let a = &mut self.sum;
        a.l_c += s.l_c;
        a.l_h += s.l_h;
        a.l_s += s.l_s;
        a.l_1 += s.l_1;
        a.l_a_d += s.l_a_d;
        a.l_a_g += s.l_a_g;
        a.total += s.total;
        self.n += 1;
    }

    fn mean(&self) -> StepLosses {
        let k = self.n.max(1) as f64;
        let a = &self.sum;
        StepLosses {
            l_c: a.l_c / k,
            l_h: a.l_h / k,
            l_s: a.l_s / k,
            l_1: a.l_1 / k,
            l_a_d: a.l_a_d / k,
            l_a_g: a.l_a_g / k,
            total: a.total / k,
            confident_frac: 0.0,
        }
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub hp: Hyperparams,
    pub stage: usize,
    pub epoch: usize,
    pub step: u64,
    rng: ChaCha8Rng,
    pub history: Vec<EpochMetrics>,
    pub pretrain_history: Vec<EpochMetrics>,
}

impl TrainState {
    pub fn new(model: Model, hp: Hyperparams) -> Result<Self> {
        model.validate()?;
        hp.validate(model.num_classes())?;
        if hp.hash_bits != model.hash_bits() {
            return Err(Error::Config(format!(
                "hash_bits={} but the encoder emits {} bits",
                hp.hash_bits,
                model.hash_bits()
            )));
        }
        let rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x5EED_0F_7EA1);
        Ok(Self {
            model,
            hp,
            stage: 0,
            epoch: 0,
            step: 0,
            rng,
            history: Vec::new(),
            pretrain_history: Vec::new(),
        })
    }

    /// Learning rate of the current stage.
    pub fn lr(&self) -> f64 {
        self.hp.lr * self.hp.lr_decay.powi(self.stage as i32)
    }

    fn check_source(&self, source: &Dataset) -> Result<()> {
        if source.is_empty() {
            return Err(Error::Empty("source dataset"));
        }
        if source.num_classes() > self.model.num_classes() {
            return Err(Error::Config(format!(
                "source has {} classes, model has {}",
                source.num_classes(),
                self.model.num_classes()
            )));
        }
        source.require_labels()?;
        Ok(())
    }

    fn batches(&mut self, n: usize, what: &'static str) -> Result<Vec<Vec<usize>>> {
        let bs = self.hp.batch_size_for(self.model.num_classes());
        let seed = self.rng.next_u64();
        let b = make_batches(n, bs, self.model.num_classes(), seed)?;
        if b.is_empty() {
            return Err(Error::Config(format!(
                "{what} has {n} rows, fewer than one batch of {bs}"
            )));
        }
        Ok(b)
    }

    /// One gradient step of `L_c(source) + α L_h` on encoder and classifier.
    pub fn pretrain_step(&mut self, xs: &Array, ys: &[usize]) -> Result<StepLosses> {
        let mut g = Graph::new();
        let b = BoundModel::bind(&self.model, &mut g, |r| {
            matches!(r, Role::Encoder | Role::Classifier)
        });
        let x = g.constant(xs.clone());
        let u = run(&self.model, &b, &mut g, Role::Encoder, x)?;
        let p = run(&self.model, &b, &mut g, Role::Classifier, u)?;
        let none = vec![losses::UNASSIGNED; ys.len()];
        let l_c = losses::classification_loss(&mut g, p, ys, p, &none, 0.0)?;
        // The loss mask only governs adaptation, so every ablation row starts
        // from the same source model.
        let hash = Some(losses::hash_pair_loss(
            &mut g,
            u,
            &SimilarityMatrix::from_labels(ys),
            self.hp.upsilon,
        )?);
        let terms = LossTerms {
            classification: l_c,
            adversarial_g: None,
            hash,
            centroid: None,
            recon: None,
        };
        let total = losses::total_encoder_generator_loss(&mut g, &terms, &self.hp.weights())?;
        let grads = g.backward(total)?;
        let lr = self.hp.lr;
        self.model.encoder.params.sgd_step(&b.encoder, &grads, lr);
        self.model
            .classifier
            .params
            .sgd_step(&b.classifier, &grads, lr);
        self.step += 1;
        Ok(StepLosses {
            l_c: g.scalar(l_c),
            l_h: hash.map_or(0.0, |h| g.scalar(h)),
            total: g.scalar(total),
            ..StepLosses::default()
        })
    }

    /// Source-only training of encoder and classifier.
    pub fn pretrain_source(&mut self, source: &Dataset, epochs: usize) -> Result<()> {
        self.check_source(source)?;
        let labels = source.require_labels()?;
        for epoch in 0..epochs {
            let mut acc = Acc::default();
            for batch in self.batches(source.len(), "source dataset")? {
                let xs = source.features().select_rows(&batch);
                let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                acc.add(&self.pretrain_step(&xs, &ys)?);
            }
            let m = acc.mean();
            self.pretrain_history.push(EpochMetrics {
                stage: 0,
                epoch,
                l_c: m.l_c,
                l_h: m.l_h,
                l_s: 0.0,
                l_1: 0.0,
                l_a_d: 0.0,
                l_a_g: 0.0,
                src_acc: evaluate_accuracy(&self.model, source.features(), labels)?,
                tgt_acc: None,
                confident_frac: 0.0,
            });
        }
        if !self.model.is_finite() {
            return Err(Error::Contract(
                "non-finite parameters after pretraining".into(),
            ));
        }
        Ok(())
    }

    pub fn train_step(&mut self, xs: &Array, ys: &[usize], xt: &Array) -> Result<StepLosses> {
        self.train_step_observed(xs, ys, xt, &mut |_, _| {})
    }

    /// [`Self::train_step`] that calls `observer` after each of its updates.
    pub fn train_step_observed(
        &mut self,
        xs: &Array,
        ys: &[usize],
        xt: &Array,
        observer: &mut dyn FnMut(StepPhase, &Model),
    ) -> Result<StepLosses> {
        let n = self.model.num_classes();
        let bs = xs.rows();
        if bs <= n || xt.rows() <= n {
            return Err(Error::Config(format!(
                "batch size must be larger than the number of classes: batch_size={}, classes={n}",
                bs.min(xt.rows())
            )));
        }
        if ys.len() != bs {
            return Err(Error::shape("train_step labels", &[bs], &[ys.len()]));
        }
        let lr = self.lr();
        let hp = self.hp.clone();
        let mut out = StepLosses::default();

        // forward with the current encoder/classifier to fix this step's pseudo-labels
        let u_t = self.model.encode(xt)?;
        let pl = pseudo_label(&self.model.classify(&u_t)?, hp.threshold);
        out.confident_frac = pl.confident_fraction();

        if hp.terms.adversarial {
            let u_s = self.model.encode(xs)?;
            let fake_st = self.model.gen_target.predict(&u_s)?;
            let fake_ts = self.model.gen_source.predict(&u_t)?;
            for _ in 0..hp.d_steps {
                let mut g = Graph::new();
                let b = BoundModel::bind(&self.model, &mut g, |r| {
                    matches!(r, Role::SourceDiscriminator | Role::TargetDiscriminator)
                });
                let (xsv, xtv) = (g.constant(xs.clone()), g.constant(xt.clone()));
                let (fst, fts) = (g.constant(fake_st.clone()), g.constant(fake_ts.clone()));
                let loss = discriminator_objective(
                    &mut g,
                    &self.model,
                    &b,
                    xsv,
                    ys,
                    xtv,
                    &pl.labels,
                    fst,
                    fts,
                )?;
                let grads = g.backward(loss)?;
                self.model
                    .disc_source
                    .params
                    .sgd_step(&b.disc_source, &grads, lr);
                self.model
                    .disc_target
                    .params
                    .sgd_step(&b.disc_target, &grads, lr);
                out.l_a_d = g.scalar(loss);
            }
            observer(StepPhase::Discriminator, &self.model);
        }

        let with_gen = hp.terms.uses_generators();
        let mut g = Graph::new();
        let b = BoundModel::bind(&self.model, &mut g, |r| match r {
            Role::Encoder | Role::Classifier => true,
            Role::SourceGenerator | Role::TargetGenerator => with_gen,
            Role::SourceDiscriminator | Role::TargetDiscriminator => false,
        });
        let (xsv, xtv) = (g.constant(xs.clone()), g.constant(xt.clone()));
        let obj =
            encoder_generator_objective(&mut g, &self.model, &b, xsv, ys, xtv, &pl.labels, &hp)?;
        let grads = g.backward(obj.total)?;
        self.model.encoder.params.sgd_step(&b.encoder, &grads, lr);
        self.model
            .classifier
            .params
            .sgd_step(&b.classifier, &grads, lr);
        if with_gen {
            self.model
                .gen_source
                .params
                .sgd_step(&b.gen_source, &grads, lr);
            self.model
                .gen_target
                .params
                .sgd_step(&b.gen_target, &grads, lr);
        }
        observer(StepPhase::EncoderGenerator, &self.model);

        let val = |v: Option<Var>| v.map_or(0.0, |v| g.scalar(v));
        out.l_c = g.scalar(obj.terms.classification);
        out.l_h = val(obj.terms.hash);
        out.l_s = val(obj.terms.centroid);
        out.l_1 = val(obj.terms.recon);
        out.l_a_g = val(obj.terms.adversarial_g);
        out.total = g.scalar(obj.total);
        self.step += 1;
        Ok(out)
    }

    /// One pass over paired source/target batches.
    pub fn train_epoch(
        &mut self,
        source: &Dataset,
        target: UnlabeledView<'_>,
        eval: Option<EvalSet<'_>>,
    ) -> Result<EpochMetrics> {
        self.check_source(source)?;
        let labels = source.require_labels()?;
        if target.features().cols() != source.dim() {
            return Err(Error::shape(
                "target features",
                &[source.dim()],
                &[target.features().cols()],
            ));
        }
        let sb = self.batches(source.len(), "source dataset")?;
        let tb = self.batches(target.len(), "target dataset")?;
        let mut acc = Acc::default();
        for (bs, bt) in sb.iter().zip(&tb) {
            let xs = source.features().select_rows(bs);
            let ys: Vec<usize> = bs.iter().map(|&i| labels[i]).collect();
            let xt = target.features().select_rows(bt);
            acc.add(&self.train_step(&xs, &ys, &xt)?);
        }
        if !self.model.is_finite() {
            return Err(Error::Contract(format!(
                "non-finite parameters at stage {} epoch {}",
                self.stage, self.epoch
            )));
        }
        let m = acc.mean();
        let probs = self.model.predict_proba(target.features())?;
        let metrics = EpochMetrics {
            stage: self.stage,
            epoch: self.epoch,
            l_c: m.l_c,
            l_h: m.l_h,
            l_s: m.l_s,
            l_1: m.l_1,
            l_a_d: m.l_a_d,
            l_a_g: m.l_a_g,
            src_acc: evaluate_accuracy(&self.model, source.features(), labels)?,
            tgt_acc: eval
                .map(|e| evaluate_accuracy(&self.model, e.features, e.labels))
                .transpose()?,
            confident_frac: pseudo_label(&probs, self.hp.threshold).confident_fraction(),
        };
        self.history.push(metrics.clone());
        self.epoch += 1;
        Ok(metrics)
    }

    /// `stages × epochs_per_stage` epochs. At every boundary after the first
    /// the encoder and classifier carry over and the generators and
    /// discriminators are drawn afresh; the learning rate decays.
    /// `on_stage_end` runs after each stage (e.g. to checkpoint).
    pub fn run_stages(
        &mut self,
        source: &Dataset,
        target: UnlabeledView<'_>,
        stages: usize,
        epochs_per_stage: usize,
        eval: Option<EvalSet<'_>>,
        on_stage_end: &mut dyn FnMut(&TrainState) -> Result<()>,
    ) -> Result<()> {
        if stages == 0 {
            return Err(Error::Config("stages must be >= 1".into()));
        }
        for s in 0..stages {
            if s > 0 {
                self.stage += 1;
                self.model
                    .reinit_adversarial(self.hp.seed, self.stage as u64)?;
            }
            self.epoch = 0;
            for _ in 0..epochs_per_stage {
                self.train_epoch(source, target, eval)?;
            }
            on_stage_end(self)?;
        }
        Ok(())
    }
}

/// Outcome of [`train_full`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub state: TrainState,
    /// Model right after source pretraining.
    pub pretrained: Model,
}

/// Initializes a model, pretrains on the source and runs the staged schedule
/// from `hp`.
pub fn train_full(
    source: &Dataset,
    target: UnlabeledView<'_>,
    hp: &Hyperparams,
    dims: &crate::nets::ModelDims,
    eval: Option<EvalSet<'_>>,
) -> Result<RunSummary> {
    let model = Model::init(dims, hp.seed)?;
    let mut state = TrainState::new(model, hp.clone())?;
    state.pretrain_source(source, hp.pretrain_epochs)?;
    let pretrained = state.model.clone();
    state.run_stages(
        source,
        target,
        hp.stages,
        hp.epochs_per_stage,
        eval,
        &mut |_| Ok(()),
    )?;
    Ok(RunSummary { state, pretrained })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_pair, ShiftSpec, SyntheticSpec};
    use crate::nets::ModelDims;

    fn tiny() -> (Dataset, Dataset, ModelDims, Hyperparams) {
        let spec = SyntheticSpec {
            per_class: 12,
            ..SyntheticSpec::default()
        };
        let (s, t) = make_synthetic_pair(&spec, &ShiftSpec::default(), 3).unwrap();
        let dims = ModelDims {
            input_dim: s.dim(),
            hash_bits: 8,
            num_classes: 4,
            encoder_hidden: vec![8],
            generator_hidden: vec![8],
            discriminator_hidden: vec![8],
        };
        let hp = Hyperparams {
            hash_bits: 8,
            batch_size: Some(8),
            pretrain_epochs: 2,
            stages: 2,
            epochs_per_stage: 2,
            ..Hyperparams::default()
        };
        (s, t, dims, hp)
    }

    #[test]
    fn batches_drop_tail_and_are_seeded() {
        let b = make_batches(23, 5, 4, 9).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|x| x.len() == 5));
        assert_eq!(b, make_batches(23, 5, 4, 9).unwrap());
        assert_ne!(b, make_batches(23, 5, 4, 10).unwrap());
        let mut seen: Vec<usize> = b.concat();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 20);
        assert!(make_batches(23, 4, 4, 0).is_err());
    }

    #[test]
    fn accuracy_of_constant_classifier_is_class_share() {
        let (s, _, dims, _) = tiny();
        let mut model = Model::init(&dims, 0).unwrap();
        for l in &mut model.classifier.params.layers {
            l.weight = Array::zeros(l.weight.shape());
        }
        // zero classifier -> uniform rows -> argmax picks class 0
        let acc = evaluate_accuracy(&model, s.features(), s.labels().unwrap()).unwrap();
        assert!((acc - 0.25).abs() < 1e-12);
        assert!(evaluate_accuracy(&model, s.features(), &[0]).is_err());
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (s, t, dims, hp) = tiny();
        let hp = Hyperparams { lr: 0.0, ..hp };
        let mut st = TrainState::new(Model::init(&dims, 1).unwrap(), hp).unwrap();
        let before = st.model.clone();
        let idx: Vec<usize> = (0..8).collect();
        let ys: Vec<usize> = idx.iter().map(|&i| s.labels().unwrap()[i]).collect();
        st.train_step(
            &s.features().select_rows(&idx),
            &ys,
            &t.features().select_rows(&idx),
        )
        .unwrap();
        assert_eq!(st.model, before);
    }

    #[test]
    fn stage_boundary_carries_encoder_and_redraws_adversaries() {
        let (s, t, dims, hp) = tiny();
        let mut st = TrainState::new(Model::init(&dims, 1).unwrap(), hp).unwrap();
        let mut snaps: Vec<Model> = Vec::new();
        st.run_stages(&s, t.unlabeled(), 2, 1, None, &mut |x| {
            snaps.push(x.model.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(st.history.len(), 2);
        // the second stage starts from the first stage's encoder: redo that stage by hand
        let mut probe = TrainState::new(snaps[0].clone(), st.hp.clone()).unwrap();
        probe.model.reinit_adversarial(st.hp.seed, 1).unwrap();
        assert_ne!(probe.model.gen_source, snaps[0].gen_source);
        assert_eq!(probe.model.encoder, snaps[0].encoder);
        assert!((st.lr() - st.hp.lr * st.hp.lr_decay).abs() < 1e-15);
    }

    #[test]
    fn from_vars_matches_bind_layout() {
        let (_, _, dims, _) = tiny();
        let model = Model::init(&dims, 0).unwrap();
        let arrays = model_arrays(&model);
        let mut g = Graph::new();
        let vars: Vec<Var> = arrays.iter().map(|a| g.param(a.clone())).collect();
        let b = BoundModel::from_vars(&model, &vars).unwrap();
        for r in Role::ALL {
            for (&(w, bias), l) in b.get(r).layers.iter().zip(&model.network(r).params.layers) {
                assert_eq!(g.value(w), &l.weight);
                assert_eq!(g.value(bias), &l.bias);
            }
        }
        assert!(BoundModel::from_vars(&model, &vars[1..]).is_err());
    }

    #[test]
    fn tiny_run_is_finite_and_deterministic() {
        let (s, t, dims, hp) = tiny();
        let eval = EvalSet {
            features: t.features(),
            labels: t.labels().unwrap(),
        };
        let a = train_full(&s, t.unlabeled(), &hp, &dims, Some(eval)).unwrap();
        let b = train_full(&s, t.unlabeled(), &hp, &dims, Some(eval)).unwrap();
        assert_eq!(a.state.model, b.state.model);
        assert_eq!(a.state.history, b.state.history);
        assert_eq!(a.state.history.len(), 4);
        assert!(a.state.model.is_finite());
        assert!(a.state.history.iter().all(|m| m.tgt_acc.is_some()));
    }
}
