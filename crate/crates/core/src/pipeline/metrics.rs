use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Error metrics of one prediction series. `r2` is `None` (and
/// `r2_defined` false) when the measured series is constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub r2_defined: bool,
}

pub fn metrics(y: &[f64], y_hat: &[f64]) -> Result<Metrics, PipelineError> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(PipelineError::Invalid(format!(
            "metrics need equal non-zero lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut abs = 0.0;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&a, &b) in y.iter().zip(y_hat) {
        abs += (a - b).abs();
        ss_res += (a - b) * (a - b);
        ss_tot += (a - mean) * (a - mean);
    }
    let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(Metrics {
        mae: abs / n,
        rmse: (ss_res / n).sqrt(),
        r2,
        r2_defined: r2.is_some(),
    })
}

/// Box-plot summary with 1.5 IQR whiskers. Quartiles interpolate linearly
/// between order statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme samples inside the fences.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats, PipelineError> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::Invalid("box statistics need finite, non-empty data".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
    Ok(BoxStats {
        n: v.len(),
        median: quantile_sorted(&v, 0.5),
        q1,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers: v.iter().copied().filter(|x| !(lo_fence..=hi_fence).contains(x)).collect(),
    })
}
