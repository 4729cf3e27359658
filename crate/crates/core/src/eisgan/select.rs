use serde::{Deserialize, Serialize};

use super::EisganError;

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson: series lengths differ");
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let tiny = 1e-300;
    if sxx <= tiny || syy <= tiny {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Latent dimensions ranked by |correlation| with capacity, with the top two
/// sign-aligned to decrease over cycles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// All dimensions, most correlated first; undefined correlations last.
    pub ranking: Vec<usize>,
    /// Correlation of each dimension with capacity, `None` if undefined.
    pub correlations: Vec<Option<f64>>,
    /// Indices of c1 and c2 (fewer if only one latent exists).
    pub selected: Vec<usize>,
    /// Whether each selected series was negated.
    pub flipped: Vec<bool>,
    /// The selected series after sign alignment, one per selected index.
    pub traces: Vec<Vec<f64>>,
}

/// `latents[i]` is the code of the curve measured at `cycles[i]` with
/// capacity `capacities[i]`.
pub fn align_and_select(
    cycles: &[f64],
    latents: &[Vec<f64>],
    capacities: &[f64],
) -> Result<Selection, EisganError> {
    let n = latents.len();
    if n < 3 {
        return Err(EisganError::Invalid(format!(
            "latent selection needs at least 3 cycles, got {n}"
        )));
    }
    if cycles.len() != n || capacities.len() != n {
        return Err(EisganError::Shape(format!(
            "{n} latent rows, {} cycles, {} capacities",
            cycles.len(),
            capacities.len()
        )));
    }
    let dim = latents[0].len();
    if dim == 0 || latents.iter().any(|l| l.len() != dim) {
        return Err(EisganError::Shape("latent rows must share one positive length".into()));
    }
    let series: Vec<Vec<f64>> = (0..dim).map(|k| latents.iter().map(|l| l[k]).collect()).collect();
    let correlations: Vec<Option<f64>> = series.iter().map(|s| pearson(s, capacities)).collect();
    let mut ranking: Vec<usize> = (0..dim).collect();
    // stable sort keeps index order among ties
    ranking.sort_by(|&a, &b| {
        let key = |k: usize| correlations[k].map_or(-1.0, f64::abs);
        key(b).total_cmp(&key(a))
    });
    let selected: Vec<usize> = ranking.iter().take(2).copied().collect();
    let mut flipped = Vec::new();
    let mut traces = Vec::new();
    for &k in &selected {
        let trend = pearson(cycles, &series[k]).unwrap_or(0.0);
        let flip = trend > 0.0;
        flipped.push(flip);
        traces.push(series[k].iter().map(|&v| if flip { -v } else { v }).collect());
    }
    Ok(Selection {
        ranking,
        correlations,
        selected,
        flipped,
        traces,
    })
}
