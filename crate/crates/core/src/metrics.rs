//! Depth error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::DepthGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Meters.
    pub mae: f64,
    /// Meters.
    pub rmse: f64,
    /// Percentages of pixels with `max(pred/gt, gt/pred) < 1.25^k`.
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// Inverse-depth RMSE in 1/km.
    pub irmse: f64,
    pub n_evaluated: usize,
    pub depth_cap: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "mae,rmse,delta1,delta2,delta3,irmse,n_evaluated,depth_cap";

    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.mae, self.rmse, self.delta1, self.delta2, self.delta3, self.irmse, self.n_evaluated, self.depth_cap
        )
    }
}

/// Compares `pred` against `gt` on pixels where the ground truth is valid
/// with `0 < gt <= depth_cap` and the prediction is finite and positive.
pub fn evaluate(pred: &DepthGrid, gt: &DepthGrid, depth_cap: f64) -> Result<MetricReport> {
    check_len("prediction height", gt.height(), pred.height())?;
    check_len("prediction width", gt.width(), pred.width())?;

    let mut n = 0usize;
    let (mut abs, mut sq, mut isq) = (0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    for ((&p, &g), &ok) in pred.values().iter().zip(gt.values()).zip(gt.valid()) {
        if !(ok && g > 0.0 && g <= depth_cap && p.is_finite() && p > 0.0) {
            continue;
        }
        n += 1;
        let e = p - g;
        abs += e.abs();
        sq += e * e;
        let ie = 1000.0 / p - 1000.0 / g;
        isq += ie * ie;
        let ratio = (p / g).max(g / p);
        for (h, t) in hits.iter_mut().zip(&thresholds) {
            if ratio < *t {
                *h += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let nf = n as f64;
    let pct = |h: usize| 100.0 * h as f64 / nf;
    Ok(MetricReport {
        mae: abs / nf,
        rmse: (sq / nf).sqrt(),
        delta1: pct(hits[0]),
        delta2: pct(hits[1]),
        delta3: pct(hits[2]),
        irmse: (isq / nf).sqrt(),
        n_evaluated: n,
        depth_cap,
    })
}
