//! Loss terms of the joint objective.
//!
//! Every loss is a batch *sum*, never a mean. Target-domain labels are
//! pseudo-labels where `-1` marks a row the classifier was not confident
//! about; such rows contribute nothing to any term.

use crate::diffcore::{Array, Graph, Var};
use crate::error::{Error, Result};

/// Pseudo-label value for "unassigned".
pub const UNASSIGNED: i64 = -1;

/// Pairwise similarity of a labelled batch: `+1` for equal labels, `-1` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Array);

impl SimilarityMatrix {
    pub fn from_labels(labels: &[usize]) -> Self {
        let n = labels.len();
        let data = (0..n * n)
            .map(|k| {
                if labels[k / n] == labels[k % n] {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        Self(Array::matrix(n, n, data).expect("square"))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> &Array {
        &self.0
    }
}

/// `sign` with `sign(0) = +1`.
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn zero(g: &mut Graph) -> Var {
    g.constant(Array::scalar(0.0))
}

fn check_source_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&l) => Err(Error::LabelOutOfRange {
            label: l as i64,
            classes,
        }),
        None => Ok(()),
    }
}

fn check_pseudo_labels(labels: &[i64], classes: usize) -> Result<()> {
    match labels
        .iter()
        .find(|&&l| l < UNASSIGNED || l >= classes as i64)
    {
        Some(&l) => Err(Error::LabelOutOfRange { label: l, classes }),
        None => Ok(()),
    }
}

fn check_rows(op: &'static str, g: &Graph, v: Var, rows: usize) -> Result<()> {
    if g.value(v).rows() != rows {
        return Err(Error::shape(op, g.value(v).shape(), &[rows]));
    }
    Ok(())
}

/// Pairwise hash loss with quantization penalty:
///
/// `½ Σ_ij ((1/d) u_iᵀu_j − s_ij)² + υ · ½ Σ_i ‖u_i − sign(u_i)‖²`
///
/// The sum runs over all ordered pairs including `i = j`. `sign(u)` is held
/// constant when differentiating.
pub fn hash_pair_loss(g: &mut Graph, u: Var, s: &SimilarityMatrix, upsilon: f64) -> Result<Var> {
    let (n, d) = (g.value(u).rows(), g.value(u).cols());
    if s.len() != n {
        return Err(Error::shape(
            "hash_pair_loss",
            g.value(u).shape(),
            s.as_array().shape(),
        ));
    }
    let ut = g.transpose(u);
    let inner = g.matmul(u, ut)?;
    let inner = g.scale(inner, 1.0 / d as f64);
    let target = g.constant(s.as_array().clone());
    let diff = g.sub(inner, target)?;
    let sq = g.square(diff);
    let pair = g.sum(sq);
    let pair = g.scale(pair, 0.5);
    if upsilon == 0.0 {
        return Ok(pair);
    }
    let signs = g.constant(g.value(u).map(sign));
    let qd = g.sub(u, signs)?;
    let qsq = g.square(qd);
    let quant = g.sum(qsq);
    let quant = g.scale(quant, 0.5 * upsilon);
    g.add(pair, quant)
}

/// Squared distance between per-class centroids of the two domains, summed
/// over classes present in both batches.
pub fn centroid_loss(
    g: &mut Graph,
    u_source: Var,
    y_source: &[usize],
    u_target: Var,
    y_target: &[i64],
    classes: usize,
) -> Result<Var> {
    check_source_labels(y_source, classes)?;
    check_pseudo_labels(y_target, classes)?;
    check_rows("centroid_loss", g, u_source, y_source.len())?;
    check_rows("centroid_loss", g, u_target, y_target.len())?;

    let mut src_count = vec![0usize; classes];
    let mut tgt_count = vec![0usize; classes];
    for &l in y_source {
        src_count[l] += 1;
    }
    for &l in y_target.iter().filter(|&&l| l != UNASSIGNED) {
        tgt_count[l as usize] += 1;
    }
    let shared: Vec<usize> = (0..classes)
        .filter(|&c| src_count[c] > 0 && tgt_count[c] > 0)
        .collect();
    if shared.is_empty() {
        return Ok(zero(g));
    }

    // Centroids as constant averaging matrices times the embeddings.
    let averaging =
        |labels: &mut dyn Iterator<Item = Option<usize>>, n: usize, counts: &[usize]| {
            let mut m = vec![0.0; shared.len() * n];
            for (i, l) in labels.enumerate() {
                if let Some(row) = l.and_then(|l| shared.iter().position(|&c| c == l)) {
                    m[row * n + i] = 1.0 / counts[shared[row]] as f64;
                }
            }
            Array::matrix(shared.len(), n, m).expect("averaging shape")
        };
    let a_src = averaging(
        &mut y_source.iter().map(|&l| Some(l)),
        y_source.len(),
        &src_count,
    );
    let a_tgt = averaging(
        &mut y_target
            .iter()
            .map(|&l| (l != UNASSIGNED).then_some(l as usize)),
        y_target.len(),
        &tgt_count,
    );
    let a_src = g.constant(a_src);
    let a_tgt = g.constant(a_tgt);
    let c_src = g.matmul(a_src, u_source)?;
    let c_tgt = g.matmul(a_tgt, u_target)?;
    let diff = g.sub(c_src, c_tgt)?;
    let sq = g.square(diff);
    Ok(g.sum(sq))
}

fn neg_log_picked(g: &mut Graph, probs: Var, cells: &[(usize, usize)], weight: f64) -> Result<Var> {
    if cells.is_empty() {
        return Ok(zero(g));
    }
    let picked = g.pick(probs, cells)?;
    let logs = g.log(picked);
    let total = g.sum(logs);
    Ok(g.scale(total, -weight))
}

/// `−Σ log p_s[y_s] − ε Σ_{ỹ≠−1} log p_t[ỹ]`, logs clamped at 1e-12.
pub fn classification_loss(
    g: &mut Graph,
    p_source: Var,
    y_source: &[usize],
    p_target: Var,
    y_target: &[i64],
    epsilon: f64,
) -> Result<Var> {
    let classes = g.value(p_source).cols();
    check_source_labels(y_source, classes)?;
    check_pseudo_labels(y_target, g.value(p_target).cols())?;
    check_rows("classification_loss", g, p_source, y_source.len())?;
    check_rows("classification_loss", g, p_target, y_target.len())?;
    let src_cells: Vec<_> = y_source.iter().enumerate().map(|(i, &l)| (i, l)).collect();
    let tgt_cells = confident_cells(y_target);
    let src = neg_log_picked(g, p_source, &src_cells, 1.0)?;
    let tgt = neg_log_picked(g, p_target, &tgt_cells, epsilon)?;
    g.add(src, tgt)
}

fn confident_cells(labels: &[i64]) -> Vec<(usize, usize)> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != UNASSIGNED)
        .map(|(i, &l)| (i, l as usize))
        .collect()
}

/// `Σ|x_s − x̃_s| + Σ|x_t − x̃_t|`.
pub fn recon_l1_loss(
    g: &mut Graph,
    x_source: Var,
    recon_source: Var,
    x_target: Var,
    recon_target: Var,
) -> Result<Var> {
    let ds = g.sub(x_source, recon_source)?;
    let dt = g.sub(x_target, recon_target)?;
    let abs_s = g.abs(ds);
    let abs_t = g.abs(dt);
    let ls = g.sum(abs_s);
    let lt = g.sum(abs_t);
    g.add(ls, lt)
}

fn check_disc_width(g: &Graph, v: Var, classes: usize) -> Result<()> {
    if g.value(v).cols() != classes + 1 {
        return Err(Error::shape(
            "discriminator output",
            g.value(v).shape(),
            &[classes + 1],
        ));
    }
    Ok(())
}

/// Discriminator side of the semantic adversarial game as a minimisable
/// cross-entropy: real rows should land on their class, fakes on slot `N`.
/// Real rows labelled `-1` are skipped.
pub fn adversarial_d_loss(
    g: &mut Graph,
    real: Var,
    real_labels: &[i64],
    fake: Var,
    classes: usize,
) -> Result<Var> {
    check_disc_width(g, real, classes)?;
    check_disc_width(g, fake, classes)?;
    check_pseudo_labels(real_labels, classes)?;
    check_rows("adversarial_d_loss", g, real, real_labels.len())?;
    let real_cells = confident_cells(real_labels);
    let fake_cells: Vec<_> = (0..g.value(fake).rows()).map(|i| (i, classes)).collect();
    let r = neg_log_picked(g, real, &real_cells, 1.0)?;
    let f = neg_log_picked(g, fake, &fake_cells, 1.0)?;
    g.add(r, f)
}

/// Generator side, non-saturating: each cross-reconstruction should be
/// judged real with the class carried over from the embedding it came from.
///
/// `fake_st` is `D^t(G^t(u^s))` scored against source labels, `fake_ts` is
/// `D^s(G^s(u^t))` scored against target pseudo-labels.
pub fn adversarial_g_loss(
    g: &mut Graph,
    fake_st: Var,
    y_source: &[usize],
    fake_ts: Var,
    y_target: &[i64],
    classes: usize,
) -> Result<Var> {
    check_disc_width(g, fake_st, classes)?;
    check_disc_width(g, fake_ts, classes)?;
    check_source_labels(y_source, classes)?;
    check_pseudo_labels(y_target, classes)?;
    check_rows("adversarial_g_loss", g, fake_st, y_source.len())?;
    check_rows("adversarial_g_loss", g, fake_ts, y_target.len())?;
    let st_cells: Vec<_> = y_source.iter().enumerate().map(|(i, &l)| (i, l)).collect();
    let ts_cells = confident_cells(y_target);
    let a = neg_log_picked(g, fake_st, &st_cells, 1.0)?;
    let b = neg_log_picked(g, fake_ts, &ts_cells, 1.0)?;
    g.add(a, b)
}

/// Balance weights of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// hash loss
    pub alpha: f64,
    /// centroid alignment
    pub beta: f64,
    /// L1 reconstruction
    pub chi: f64,
}

/// Component losses already built on one graph. Absent terms are skipped.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub classification: Var,
    pub adversarial_g: Option<Var>,
    pub hash: Option<Var>,
    pub centroid: Option<Var>,
    pub recon: Option<Var>,
}

/// `L_c + L_a(G) + α L_h + β L_s + χ L_1`.
pub fn total_encoder_generator_loss(
    g: &mut Graph,
    terms: &LossTerms,
    w: &LossWeights,
) -> Result<Var> {
    let mut total = terms.classification;
    if let Some(a) = terms.adversarial_g {
        total = g.add(total, a)?;
    }
    for (term, weight) in [
        (terms.hash, w.alpha),
        (terms.centroid, w.beta),
        (terms.recon, w.chi),
    ] {
        if let Some(t) = term {
            let scaled = g.scale(t, weight);
            total = g.add(total, scaled)?;
        }
    }
    Ok(total)
}
