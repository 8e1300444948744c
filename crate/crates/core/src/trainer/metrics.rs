use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::fsutil;

pub const METRICS_HEADER: &str =
    "stage,epoch,L_c,L_h,L_s,L_1,L_a_d,L_a_g,src_acc,tgt_acc,confident_frac";

/// Epoch-averaged losses and end-of-epoch accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub stage: usize,
    pub epoch: usize,
    pub l_c: f64,
    pub l_h: f64,
    pub l_s: f64,
    pub l_1: f64,
    pub l_a_d: f64,
    pub l_a_g: f64,
    pub src_acc: f64,
    /// Only when evaluation labels were supplied.
    pub tgt_acc: Option<f64>,
    pub confident_frac: f64,
}

impl EpochMetrics {
    /// Value of the encoder/generator objective implied by the averaged terms.
    pub fn objective(&self, alpha: f64, beta: f64, chi: f64) -> f64 {
        self.l_c + self.l_a_g + alpha * self.l_h + beta * self.l_s + chi * self.l_1
    }

    pub fn csv_row(&self) -> String {
        let tgt = self.tgt_acc.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6}",
            self.stage,
            self.epoch,
            self.l_c,
            self.l_h,
            self.l_s,
            self.l_1,
            self.l_a_d,
            self.l_a_g,
            self.src_acc,
            tgt,
            self.confident_frac
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.csv_row()).unwrap();
    }
    s
}

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    fsutil::atomic_write(path, metrics_csv(rows).as_bytes())
}
