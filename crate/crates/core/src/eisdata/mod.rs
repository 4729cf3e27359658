//! Impedance spectra, capacity records and the dataset they form.

mod csvio;
mod dataset;

pub(crate) use csvio::{save_capacity_csv, save_eis_csv};
pub use csvio::{
    load_capacity_csv, load_eis_csv, read_capacity_csv, read_eis_csv, write_capacity_csv,
    write_eis_csv, CsvOptions, CAPACITY_HEADER, EIS_HEADER,
};
pub use dataset::{Dataset, Partition};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndgrad::Tensor;

/// Points per spectrum seen by the networks.
pub const CURVE_POINTS: usize = 60;
/// Real and imaginary channels.
pub const CHANNELS: usize = 2;
pub const DEFAULT_F_MAX_HZ: f64 = 20_000.0;
pub const DEFAULT_F_MIN_HZ: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EisDataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("incomplete curve {key}: {message}")]
    Incomplete { key: String, message: String },
    #[error("resampling needs extrapolation: {0}")]
    Extrapolation(String),
    #[error("invalid data: {0}")]
    Invalid(String),
}

/// One row of the measurement-stage table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageTag {
    pub id: u8,
    pub description: &'static str,
    pub has_resting: bool,
    pub has_dc: bool,
}

/// Measurement stages within one charge/discharge cycle.
pub const STAGES: [StageTag; 9] = [
    StageTag { id: 1, description: "Before charging", has_resting: true, has_dc: false },
    StageTag { id: 2, description: "Start charging", has_resting: true, has_dc: true },
    StageTag { id: 3, description: "After 20-min charging", has_resting: false, has_dc: true },
    StageTag { id: 4, description: "After charging and before resting", has_resting: false, has_dc: false },
    StageTag { id: 5, description: "After 15-min rest", has_resting: true, has_dc: false },
    StageTag { id: 6, description: "Start discharging", has_resting: true, has_dc: true },
    StageTag { id: 7, description: "After 10-min discharging", has_resting: false, has_dc: true },
    StageTag { id: 8, description: "After discharging and before resting", has_resting: false, has_dc: false },
    StageTag { id: 9, description: "After 15-min rest", has_resting: true, has_dc: false },
];

pub fn stage_tag(id: u8) -> Option<&'static StageTag> {
    STAGES.iter().find(|s| s.id == id)
}

/// Measured discharge capacity of one cell at one cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityRecord {
    pub cell_id: String,
    pub cycle: u32,
    pub capacity_mah: f64,
}

/// One impedance spectrum, highest frequency first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EisCurve {
    pub cell_id: String,
    pub stage: u8,
    pub cycle: u32,
    pub freq_hz: Vec<f64>,
    pub re_z_ohm: Vec<f64>,
    pub im_z_ohm: Vec<f64>,
}

impl EisCurve {
    pub fn new(
        cell_id: impl Into<String>,
        stage: u8,
        cycle: u32,
        freq_hz: Vec<f64>,
        re_z_ohm: Vec<f64>,
        im_z_ohm: Vec<f64>,
    ) -> Result<Self, EisDataError> {
        let curve = Self {
            cell_id: cell_id.into(),
            stage,
            cycle,
            freq_hz,
            re_z_ohm,
            im_z_ohm,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn key(&self) -> String {
        format!("({}, stage {}, cycle {})", self.cell_id, self.stage, self.cycle)
    }

    pub fn len(&self) -> usize {
        self.freq_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq_hz.is_empty()
    }

    pub fn validate(&self) -> Result<(), EisDataError> {
        let n = self.freq_hz.len();
        if self.re_z_ohm.len() != n || self.im_z_ohm.len() != n {
            return Err(EisDataError::Invalid(format!(
                "{}: channel lengths {} / {} / {}",
                self.key(),
                n,
                self.re_z_ohm.len(),
                self.im_z_ohm.len()
            )));
        }
        if stage_tag(self.stage).is_none() {
            return Err(EisDataError::Invalid(format!(
                "{}: stage must be 1..=9",
                self.key()
            )));
        }
        let finite = self
            .freq_hz
            .iter()
            .chain(&self.re_z_ohm)
            .chain(&self.im_z_ohm)
            .all(|v| v.is_finite());
        if !finite {
            return Err(EisDataError::Invalid(format!("{}: non-finite value", self.key())));
        }
        if self.freq_hz.iter().any(|&f| f <= 0.0) {
            return Err(EisDataError::Invalid(format!(
                "{}: frequencies must be positive",
                self.key()
            )));
        }
        if self.freq_hz.windows(2).any(|w| w[1] >= w[0]) {
            return Err(EisDataError::Invalid(format!(
                "{}: frequencies must be strictly descending",
                self.key()
            )));
        }
        Ok(())
    }

    /// `[2, T]` tensor: real part on row 0, imaginary part on row 1.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = self.re_z_ohm.clone();
        data.extend_from_slice(&self.im_z_ohm);
        Tensor::new(vec![CHANNELS, self.len()], data).expect("curve channels have equal length")
    }

    /// Real part followed by imaginary part.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.re_z_ohm.clone();
        v.extend_from_slice(&self.im_z_ohm);
        v
    }

    /// Builds a curve from a `[2, T]` tensor, copying metadata and grid from `template`.
    pub fn from_tensor(template: &EisCurve, values: &Tensor) -> Result<Self, EisDataError> {
        let t = template.len();
        if values.shape() != [CHANNELS, t] {
            return Err(EisDataError::Invalid(format!(
                "expected a [2, {t}] tensor, got {:?}",
                values.shape()
            )));
        }
        let (re, im) = values.data().split_at(t);
        Ok(Self {
            re_z_ohm: re.to_vec(),
            im_z_ohm: im.to_vec(),
            ..template.clone()
        })
    }
}

/// `n` log-spaced frequencies from `f_max` down to `f_min`, endpoints exact.
pub fn log_grid(f_max: f64, f_min: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && f_max > f_min && f_min > 0.0);
    let (hi, lo) = (f_max.log10(), f_min.log10());
    (0..n)
        .map(|i| {
            if i == 0 {
                f_max
            } else if i == n - 1 {
                f_min
            } else {
                10f64.powf(hi + (lo - hi) * i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// The 60-point grid spanning 20 kHz to 0.02 Hz.
pub fn default_grid() -> Vec<f64> {
    log_grid(DEFAULT_F_MAX_HZ, DEFAULT_F_MIN_HZ, CURVE_POINTS)
}

/// Linear interpolation of Re and Im in log10-frequency onto `grid`
/// (descending). Grid points outside the measured range are an error.
pub fn resample_to_grid(curve: &EisCurve, grid: &[f64]) -> Result<EisCurve, EisDataError> {
    if curve.len() < 2 {
        return Err(EisDataError::Invalid(format!(
            "{}: resampling needs at least two points",
            curve.key()
        )));
    }
    curve.validate()?;
    if grid.windows(2).any(|w| w[1] >= w[0]) || grid.iter().any(|&f| f <= 0.0) {
        return Err(EisDataError::Invalid("target grid must be positive and descending".into()));
    }
    if grid == curve.freq_hz.as_slice() {
        return Ok(curve.clone());
    }
    // Ascending log-frequency view of the measurement.
    let xs: Vec<f64> = curve.freq_hz.iter().rev().map(|f| f.log10()).collect();
    let re: Vec<f64> = curve.re_z_ohm.iter().rev().copied().collect();
    let im: Vec<f64> = curve.im_z_ohm.iter().rev().copied().collect();
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let tol = 1e-12 * (hi - lo).abs().max(1.0);

    let mut out_re = Vec::with_capacity(grid.len());
    let mut out_im = Vec::with_capacity(grid.len());
    for &f in grid {
        let x = f.log10();
        if x < lo - tol || x > hi + tol {
            return Err(EisDataError::Extrapolation(format!(
                "{}: {f} Hz lies outside [{}, {}] Hz",
                curve.key(),
                curve.freq_hz[curve.len() - 1],
                curve.freq_hz[0]
            )));
        }
        let x = x.clamp(lo, hi);
        let j = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
        let w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
        out_re.push(re[j - 1] + w * (re[j] - re[j - 1]));
        out_im.push(im[j - 1] + w * (im[j] - im[j - 1]));
    }
    EisCurve::new(
        curve.cell_id.clone(),
        curve.stage,
        curve.cycle,
        grid.to_vec(),
        out_re,
        out_im,
    )
}

/// Resamples onto `target_points` log-spaced points spanning the curve's own range.
pub fn resample_log_grid(curve: &EisCurve, target_points: usize) -> Result<EisCurve, EisDataError> {
    if curve.len() < 2 || target_points < 2 {
        return Err(EisDataError::Invalid(format!(
            "{}: resampling needs at least two points",
            curve.key()
        )));
    }
    let grid = log_grid(curve.freq_hz[0], curve.freq_hz[curve.len() - 1], target_points);
    resample_to_grid(curve, &grid)
}

/// Per-channel affine scaling: `(value - mean) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub scale: [f64; CHANNELS],
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: [0.0, 0.0],
        scale: [1.0, 1.0],
    };

    pub fn new(mean: [f64; CHANNELS], scale: [f64; CHANNELS]) -> Result<Self, EisDataError> {
        if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(EisDataError::Invalid(format!(
                "normalization scale must be positive and finite, got {scale:?}"
            )));
        }
        Ok(Self { mean, scale })
    }

    /// Z-score statistics of each channel pooled over every point of `curves`.
    /// A constant channel gets unit scale.
    pub fn fit<'a>(curves: impl IntoIterator<Item = &'a EisCurve>) -> Result<Self, EisDataError> {
        let mut n = 0usize;
        let mut sum = [0.0; CHANNELS];
        let mut sq = [0.0; CHANNELS];
        let curves: Vec<&EisCurve> = curves.into_iter().collect();
        for c in &curves {
            for (ch, values) in [&c.re_z_ohm, &c.im_z_ohm].into_iter().enumerate() {
                sum[ch] += values.iter().sum::<f64>();
            }
            n += c.len();
        }
        if n == 0 {
            return Err(EisDataError::Invalid("cannot fit normalization on no data".into()));
        }
        let mean = [sum[0] / n as f64, sum[1] / n as f64];
        for c in &curves {
            for (ch, values) in [&c.re_z_ohm, &c.im_z_ohm].into_iter().enumerate() {
                sq[ch] += values.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let scale = sq.map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        });
        Self::new(mean, scale)
    }

    pub fn normalize(&self, curve: &EisCurve) -> EisCurve {
        self.map(curve, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, curve: &EisCurve) -> EisCurve {
        self.map(curve, |v, m, s| v * s + m)
    }

    /// Denormalizes a `[2, T]` tensor in place.
    pub fn denormalize_tensor(&self, values: &mut Tensor) {
        let t = values.shape()[values.rank() - 1];
        for (i, v) in values.data_mut().iter_mut().enumerate() {
            let ch = (i / t) % CHANNELS;
            *v = *v * self.scale[ch] + self.mean[ch];
        }
    }

    fn map(&self, curve: &EisCurve, f: impl Fn(f64, f64, f64) -> f64) -> EisCurve {
        let re = curve.re_z_ohm.iter().map(|&v| f(v, self.mean[0], self.scale[0])).collect();
        let im = curve.im_z_ohm.iter().map(|&v| f(v, self.mean[1], self.scale[1])).collect();
        EisCurve {
            re_z_ohm: re,
            im_z_ohm: im,
            ..curve.clone()
        }
    }
}

pub fn normalize(curves: &[EisCurve], stats: &NormStats) -> Vec<EisCurve> {
    curves.iter().map(|c| stats.normalize(c)).collect()
}

pub fn denormalize(curves: &[EisCurve], stats: &NormStats) -> Vec<EisCurve> {
    curves.iter().map(|c| stats.denormalize(c)).collect()
}

/// Adds independent `N(0, sigma^2)` noise to every real and imaginary sample.
pub fn perturb_curve<R: Rng + ?Sized>(
    curve: &EisCurve,
    sigma: f64,
    rng: &mut R,
) -> Result<EisCurve, EisDataError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(EisDataError::Invalid(format!(
            "perturbation sigma must be a finite non-negative value, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(curve.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut out = curve.clone();
    for (re, im) in out.re_z_ohm.iter_mut().zip(out.im_z_ohm.iter_mut()) {
        *re += normal.sample(rng);
        *im += normal.sample(rng);
    }
    Ok(out)
}
