use super::array::Array;
use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares reverse-mode gradients of `f` at `params` against central
/// finite differences and returns the largest relative error over every
/// coordinate.
///
/// `f` receives a fresh graph plus one trainable leaf per entry of `params`
/// and must return a scalar node. It is re-evaluated twice per coordinate.
pub fn grad_check<F>(f: F, params: &[Array], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let eval = |values: &[Array]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|v| g.param(v.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.scalar(root))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|v| g.param(v.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Array> = params.to_vec();
    for (p, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var);
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            probe[p].data_mut()[k] = orig + step;
            let plus = eval(&probe)?;
            probe[p].data_mut()[k] = orig - step;
            let minus = eval(&probe)?;
            probe[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], seed: u64) -> Array {
        // small LCG keeps these tests free of RNG plumbing
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
            })
            .collect();
        Array::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn linear_sum_is_exact() {
        let err = grad_check(|g, v| Ok(g.sum(v[0])), &[arr(&[3, 4], 1)], DEFAULT_STEP).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(
            |g, _| Ok(g.constant(Array::scalar(3.5))),
            &[arr(&[2, 2], 2)],
            DEFAULT_STEP,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(grad_check(|g, v| Ok(g.sum(v[0])), &[arr(&[1], 0)], 0.0).is_err());
    }

    type Build = fn(&mut Graph, &[Var]) -> Result<Var>;

    #[test]
    fn every_op_matches_finite_differences() {
        let cases: Vec<(&str, Vec<Array>, Build)> = vec![
            ("matmul", vec![arr(&[3, 4], 3), arr(&[4, 2], 4)], |g, v| {
                let m = g.matmul(v[0], v[1])?;
                let t = g.tanh(m);
                Ok(g.sum(t))
            }),
            (
                "add_sub_mul",
                vec![arr(&[2, 3], 5), arr(&[2, 3], 6)],
                |g, v| {
                    let a = g.add(v[0], v[1])?;
                    let s = g.sub(v[0], v[1])?;
                    let m = g.mul(a, s)?;
                    Ok(g.sum(m))
                },
            ),
            ("scale_square_mean", vec![arr(&[5], 7)], |g, v| {
                let s = g.scale(v[0], -1.7);
                let q = g.square(s);
                Ok(g.mean(q))
            }),
            ("bias", vec![arr(&[4, 3], 8), arr(&[1, 3], 9)], |g, v| {
                let b = g.add_bias(v[0], v[1])?;
                let q = g.square(b);
                Ok(g.sum(q))
            }),
            ("leaky", vec![arr(&[3, 3], 10)], |g, v| {
                let l = g.leaky_relu(v[0], 0.2);
                let q = g.square(l);
                Ok(g.sum(q))
            }),
            ("softmax_log", vec![arr(&[3, 4], 11)], |g, v| {
                let p = g.softmax_rows(v[0]);
                let l = g.log(p);
                let picked = g.pick(l, &[(0, 1), (1, 3), (2, 0), (2, 2)])?;
                Ok(g.sum(picked))
            }),
            ("abs", vec![arr(&[6], 12)], |g, v| {
                let a = g.abs(v[0]);
                Ok(g.sum(a))
            }),
            (
                "concat_transpose",
                vec![arr(&[2, 3], 13), arr(&[1, 3], 14)],
                |g, v| {
                    let c = g.concat_rows(&[v[0], v[1], v[0]])?;
                    let t = g.transpose(c);
                    let m = g.matmul(c, t)?;
                    let q = g.square(m);
                    Ok(g.sum(q))
                },
            ),
        ];
        for (name, params, f) in cases {
            let err = grad_check(f, &params, DEFAULT_STEP).unwrap();
            assert!(err < 1e-6, "{name}: {err}");
        }
    }
}
