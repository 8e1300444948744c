use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Domain};
use crate::diffcore::Array;
use crate::error::{Error, Result};

/// Gaussian class clusters with means spread evenly on a ring in the first
/// two coordinates. With `lift > 0` the third coordinate of the means
/// alternates `+lift, -lift, ...` around the ring, which breaks the ring's
/// rotational symmetry. Remaining coordinates have mean zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub sigma: f64,
    pub radius: f64,
    /// Angle of class 0 on the ring, radians.
    pub phase: f64,
    pub lift: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 200,
            dim: 3,
            sigma: 0.15,
            radius: 1.0,
            phase: 0.0,
            lift: 0.8,
        }
    }
}

/// Domain shift applied to the target: `x ↦ scale · R(rotation) · x + translation`,
/// followed by extra isotropic noise. The rotation acts in the coordinate
/// plane `plane`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub rotation: f64,
    pub plane: [usize; 2],
    pub translation: Vec<f64>,
    pub scale: f64,
    pub noise: f64,
}

impl ShiftSpec {
    pub fn none(dim: usize) -> Self {
        Self {
            rotation: 0.0,
            plane: [0, 1],
            translation: vec![0.0; dim],
            scale: 1.0,
            noise: 0.0,
        }
    }

    fn apply(&self, x: &mut [f64]) {
        let (s, c) = self.rotation.sin_cos();
        let [p, q] = self.plane;
        let (a, b) = (x[p], x[q]);
        x[p] = c * a - s * b;
        x[q] = s * a + c * b;
        for (i, v) in x.iter_mut().enumerate() {
            *v = *v * self.scale + self.translation.get(i).copied().unwrap_or(0.0);
        }
    }
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            rotation: 50f64.to_radians(),
            plane: [0, 1],
            translation: vec![0.3, -0.2],
            scale: 1.0,
            noise: 0.0,
        }
    }
}

fn validate(spec: &SyntheticSpec, shift: &ShiftSpec) -> Result<()> {
    if spec.num_classes < 2 {
        return Err(Error::Config(
            "synthetic data needs at least 2 classes".into(),
        ));
    }
    if spec.dim < 2 {
        return Err(Error::Config("synthetic data needs dim >= 2".into()));
    }
    if spec.per_class == 0 {
        return Err(Error::Config("synthetic data needs per_class >= 1".into()));
    }
    if spec.lift != 0.0 && spec.dim < 3 {
        return Err(Error::Config("synthetic lift needs dim >= 3".into()));
    }
    if !(spec.sigma >= 0.0) || !(spec.radius > 0.0) || !spec.lift.is_finite() {
        return Err(Error::Config(
            "synthetic data needs sigma >= 0 and radius > 0".into(),
        ));
    }
    if !(shift.scale > 0.0) || !(shift.noise >= 0.0) {
        return Err(Error::Config("shift needs scale > 0 and noise >= 0".into()));
    }
    let [p, q] = shift.plane;
    if p == q || p >= spec.dim || q >= spec.dim {
        return Err(Error::Config(format!(
            "rotation plane {:?} must name two distinct axes below dim {}",
            shift.plane, spec.dim
        )));
    }
    if shift.translation.len() > spec.dim {
        return Err(Error::Config(format!(
            "translation has {} components for dim {}",
            shift.translation.len(),
            spec.dim
        )));
    }
    Ok(())
}

/// Generative class means of the source and (shifted) target domains.
pub fn class_means(
    spec: &SyntheticSpec,
    shift: &ShiftSpec,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    validate(spec, shift)?;
    let n = spec.num_classes as f64;
    let source: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|k| {
            let angle = spec.phase + std::f64::consts::TAU * k as f64 / n;
            let mut m = vec![0.0; spec.dim];
            m[0] = spec.radius * angle.cos();
            m[1] = spec.radius * angle.sin();
            if spec.lift != 0.0 {
                m[2] = if k % 2 == 0 { spec.lift } else { -spec.lift };
            }
            m
        })
        .collect();
    let target = source
        .iter()
        .map(|m| {
            let mut t = m.clone();
            shift.apply(&mut t);
            t
        })
        .collect();
    Ok((source, target))
}

/// Source clusters and their shifted counterparts. Rows are class-major.
/// Both datasets keep their labels; hand only `target.unlabeled()` to training.
pub fn make_synthetic_pair(
    spec: &SyntheticSpec,
    shift: &ShiftSpec,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (means, _) = class_means(spec, shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, sigma: f64, x: &mut [f64]| {
        if sigma > 0.0 {
            for v in x.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += sigma * z;
            }
        }
    };
    let rows = spec.num_classes * spec.per_class;
    let mut src = Vec::with_capacity(rows * spec.dim);
    let mut tgt = Vec::with_capacity(rows * spec.dim);
    let mut labels = Vec::with_capacity(rows);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            let mut x = mean.clone();
            draw(&mut rng, spec.sigma, &mut x);
            src.extend_from_slice(&x);
            labels.push(k);
        }
    }
    // separate stream so the target never replays source noise
    let mut trng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_7A26_E7D0_0A11);
    for mean in &means {
        for _ in 0..spec.per_class {
            let mut x = mean.clone();
            draw(&mut trng, spec.sigma, &mut x);
            shift.apply(&mut x);
            draw(&mut trng, shift.noise, &mut x);
            tgt.extend_from_slice(&x);
        }
    }
    let source = Dataset::new(
        Array::matrix(rows, spec.dim, src)?,
        Some(labels.clone()),
        spec.num_classes,
        Domain::Source,
    )?;
    let target = Dataset::new(
        Array::matrix(rows, spec.dim, tgt)?,
        Some(labels),
        spec.num_classes,
        Domain::Target,
    )?;
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_keeps_means() {
        let spec = SyntheticSpec::default();
        let (s, t) = class_means(&spec, &ShiftSpec::none(3)).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn half_turn_permutes_symmetric_means() {
        let spec = SyntheticSpec::default();
        let shift = ShiftSpec {
            rotation: std::f64::consts::PI,
            ..ShiftSpec::none(3)
        };
        let (s, t) = class_means(&spec, &shift).unwrap();
        for (k, tm) in t.iter().enumerate() {
            let other = &s[(k + 2) % 4];
            assert!(tm.iter().zip(other).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let dist =
            |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        for i in 0..4 {
            for j in 0..4 {
                assert!((dist(&s[i], &s[j]) - dist(&t[i], &t[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = SyntheticSpec::default();
        let shift = ShiftSpec::default();
        let a = make_synthetic_pair(&spec, &shift, 3).unwrap();
        let b = make_synthetic_pair(&spec, &shift, 3).unwrap();
        let c = make_synthetic_pair(&spec, &shift, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
        assert_eq!(a.0.len(), 800);
        assert_eq!(a.1.dim(), 3);
    }

    #[test]
    fn noiseless_samples_sit_on_means() {
        let spec = SyntheticSpec {
            sigma: 0.0,
            per_class: 2,
            ..SyntheticSpec::default()
        };
        let shift = ShiftSpec::default();
        let (_, tm) = class_means(&spec, &shift).unwrap();
        let (_, t) = make_synthetic_pair(&spec, &shift, 0).unwrap();
        for i in 0..t.len() {
            let k = t.labels().unwrap()[i];
            assert!(t
                .features()
                .row(i)
                .iter()
                .zip(&tm[k])
                .all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn rejects_invalid_spec() {
        let bad = SyntheticSpec {
            num_classes: 1,
            ..SyntheticSpec::default()
        };
        assert!(make_synthetic_pair(&bad, &ShiftSpec::default(), 0).is_err());
        let bad_shift = ShiftSpec {
            scale: 0.0,
            ..ShiftSpec::default()
        };
        assert!(make_synthetic_pair(&SyntheticSpec::default(), &bad_shift, 0).is_err());
    }
}
