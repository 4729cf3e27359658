//! Synthetic impedance spectra with a known aging path.
//!
//! The circuit is an inductor, an ohmic resistor, two R-CPE arcs and a
//! semi-infinite Warburg element (nine parameters). Capacity follows a
//! linear fade with a quadratic knee; the circuit resistances grow with the
//! same fade so the spectrum carries the capacity signal.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::eisdata::{
    default_grid, stage_tag, CapacityRecord, Dataset, EisCurve, EisDataError, Partition,
};
use crate::seeding;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcmParams {
    pub r0_ohm: f64,
    pub r1_ohm: f64,
    pub q1: f64,
    pub phi1: f64,
    pub r2_ohm: f64,
    pub q2: f64,
    pub phi2: f64,
    /// Warburg coefficient, ohm s^-1/2.
    pub w_sigma: f64,
    /// Series inductance, henry.
    pub l_ind: f64,
}

impl EcmParams {
    /// Fresh-cell values: arcs near 150 Hz and 3 Hz, a small inductive tail
    /// at 20 kHz and a diffusion tail below 0.1 Hz.
    pub const NOMINAL: EcmParams = EcmParams {
        r0_ohm: 0.8,
        r1_ohm: 0.6,
        q1: 2e-3,
        phi1: 0.85,
        r2_ohm: 0.4,
        q2: 0.12,
        phi2: 0.8,
        w_sigma: 0.05,
        l_ind: 1e-7,
    };

    pub fn validate(&self) -> Result<(), EisDataError> {
        let non_negative = [self.r0_ohm, self.r1_ohm, self.r2_ohm, self.w_sigma, self.l_ind];
        let ok = non_negative.iter().all(|v| *v >= 0.0 && v.is_finite())
            && self.q1 > 0.0
            && self.q2 > 0.0
            && (self.phi1 > 0.0 && self.phi1 <= 1.0)
            && (self.phi2 > 0.0 && self.phi2 <= 1.0);
        if ok {
            Ok(())
        } else {
            Err(EisDataError::Invalid(format!("invalid circuit parameters {self:?}")))
        }
    }
}

fn cpe_arc(r: f64, q: f64, phi: f64, omega: f64) -> Complex64 {
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    // (j w)^phi = w^phi * e^{j pi phi / 2}
    let jw_phi = Complex64::from_polar(omega.powf(phi), std::f64::consts::FRAC_PI_2 * phi);
    r / (1.0 + jw_phi * q * r)
}

/// `Z(w) = jwL + R0 + R1/(1+(jw)^phi1 Q1 R1) + R2/(1+(jw)^phi2 Q2 R2) + sigma_W (1-j)/sqrt(w)`.
pub fn ecm_impedance(p: &EcmParams, freq_hz: f64) -> Complex64 {
    let omega = 2.0 * std::f64::consts::PI * freq_hz;
    let inductive = Complex64::new(0.0, omega * p.l_ind);
    let warburg = Complex64::new(1.0, -1.0) * (p.w_sigma / omega.sqrt());
    inductive
        + p.r0_ohm
        + cpe_arc(p.r1_ohm, p.q1, p.phi1, omega)
        + cpe_arc(p.r2_ohm, p.q2, p.phi2, omega)
        + warburg
}

/// Knobs of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub base_capacity_mah: f64,
    /// Linear fade reached at the last cycle, as a fraction of base capacity.
    pub linear_fade: f64,
    /// Extra quadratic fade reached at the last cycle, as a fraction of base capacity.
    pub knee_fade: f64,
    /// Knee position as a fraction of the trajectory length.
    pub knee_fraction: f64,
    /// Bound of the uniform capacity jitter, mAh.
    pub capacity_jitter_mah: f64,
    /// Relative spread of per-cell base circuit parameters.
    pub param_spread: f64,
    /// Relative spread of per-cell fade rates and knee position.
    pub fade_spread: f64,
    /// Standard deviation of the additive measurement noise, ohm.
    pub noise_floor_ohm: f64,
    /// Amplitude of the multiplicative low-frequency fluctuation on DC stages.
    pub dc_fluctuation: f64,
    /// Fluctuations act below this frequency.
    pub fluctuation_corner_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            base_capacity_mah: 45.0,
            linear_fade: 0.10,
            knee_fade: 0.12,
            knee_fraction: 0.8,
            capacity_jitter_mah: 0.1,
            param_spread: 0.01,
            fade_spread: 0.03,
            noise_floor_ohm: 0.002,
            dc_fluctuation: 0.003,
            fluctuation_corner_hz: 1.0,
        }
    }
}

/// Per-cycle circuit parameters and capacity of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationTrajectory {
    pub params: Vec<EcmParams>,
    /// Capacity without jitter; non-increasing.
    pub capacity_clean_mah: Vec<f64>,
    pub capacity_mah: Vec<f64>,
    pub knee_cycle: u32,
    /// Low-frequency fluctuation amplitude for stages measured under DC.
    pub dc_fluctuation: f64,
}

impl DegradationTrajectory {
    pub fn sample<R: Rng + ?Sized>(cfg: &SynthConfig, n_cycles: u32, rng: &mut R) -> Self {
        assert!(n_cycles >= 2, "a trajectory needs at least two cycles");
        let mut vary = |v: f64, spread: f64| {
            let s = spread.max(0.0);
            let e: f64 = Normal::new(0.0, s).expect("spread is finite").sample(rng);
            v * (1.0 + e.clamp(-3.0 * s, 3.0 * s))
        };
        let ps = cfg.param_spread;
        let fs = cfg.fade_spread;

        let nominal = EcmParams::NOMINAL;
        let base = EcmParams {
            r0_ohm: vary(nominal.r0_ohm, ps),
            r1_ohm: vary(nominal.r1_ohm, ps),
            q1: vary(nominal.q1, ps),
            phi1: nominal.phi1,
            r2_ohm: vary(nominal.r2_ohm, ps),
            q2: vary(nominal.q2, ps),
            phi2: nominal.phi2,
            w_sigma: vary(nominal.w_sigma, ps),
            l_ind: nominal.l_ind,
        };
        let linear = vary(cfg.linear_fade, fs);
        let knee = vary(cfg.knee_fade, fs);
        let knee_fraction = vary(cfg.knee_fraction, fs).clamp(0.05, 0.95);

        let last = (n_cycles - 1) as f64;
        let knee_cycle = (knee_fraction * last).round() as u32;
        let knee_u = knee_cycle as f64 / last;
        let knee_coef = knee / (1.0 - knee_u).powi(2);
        // Fade at the last cycle for the nominal rates; scales the impedance growth.
        let nominal_end = cfg.linear_fade + cfg.knee_fade;

        let mut params = Vec::with_capacity(n_cycles as usize);
        let mut clean = Vec::with_capacity(n_cycles as usize);
        let mut jittered = Vec::with_capacity(n_cycles as usize);
        for cycle in 0..n_cycles {
            let u = cycle as f64 / last;
            let lin_part = linear * u;
            let knee_part = knee_coef * (u - knee_u).max(0.0).powi(2);
            let fade = lin_part + knee_part;
            let cap = cfg.base_capacity_mah * (1.0 - fade);
            clean.push(cap);
            let jitter = if cfg.capacity_jitter_mah > 0.0 && cycle > 0 {
                rng.random_range(-cfg.capacity_jitter_mah..=cfg.capacity_jitter_mah)
            } else {
                0.0
            };
            jittered.push(cap + jitter);

            let h = if nominal_end > 0.0 { fade / nominal_end } else { 0.0 };
            let k = if nominal_end > 0.0 { knee_part / nominal_end } else { 0.0 };
            params.push(EcmParams {
                r0_ohm: base.r0_ohm * (1.0 + 0.35 * h),
                r1_ohm: base.r1_ohm * (1.0 + 1.2 * h),
                q1: base.q1 * (1.0 - 0.25 * h),
                phi1: base.phi1,
                r2_ohm: base.r2_ohm * (1.0 + 0.3 * h + 4.0 * k),
                q2: base.q2,
                phi2: base.phi2,
                w_sigma: base.w_sigma * (1.0 + 0.6 * h),
                l_ind: base.l_ind,
            });
        }
        Self {
            params,
            capacity_clean_mah: clean,
            capacity_mah: jittered,
            knee_cycle,
            dc_fluctuation: cfg.dc_fluctuation,
        }
    }

    pub fn n_cycles(&self) -> usize {
        self.params.len()
    }
}

/// Noise-free spectrum on `grid`.
pub fn clean_spectrum(params: &EcmParams, grid: &[f64]) -> (Vec<f64>, Vec<f64>) {
    grid.iter()
        .map(|&f| {
            let z = ecm_impedance(params, f);
            (z.re, z.im)
        })
        .unzip()
}

/// Spectra and capacities for one cell at one stage.
///
/// The trajectory and the additive noise floor are drawn first from `rng`,
/// so two stages generated from equal generator states share both and
/// differ only in the DC fluctuation below the corner frequency.
pub fn synth_cell<R: Rng + ?Sized>(
    cell_id: &str,
    n_cycles: u32,
    stage: u8,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<(Vec<EisCurve>, Vec<CapacityRecord>), EisDataError> {
    let tag = stage_tag(stage)
        .ok_or_else(|| EisDataError::Invalid(format!("stage {stage} outside 1..=9")))?;
    if n_cycles < 2 {
        return Err(EisDataError::Invalid("synth_cell needs at least two cycles".into()));
    }
    let traj = DegradationTrajectory::sample(cfg, n_cycles, rng);
    let grid = default_grid();
    let floor = Normal::new(0.0, cfg.noise_floor_ohm.max(0.0)).expect("finite noise floor");

    let mut curves = Vec::with_capacity(n_cycles as usize);
    for (cycle, p) in traj.params.iter().enumerate() {
        let (mut re, mut im) = clean_spectrum(p, &grid);
        if cfg.noise_floor_ohm > 0.0 {
            for (r, i) in re.iter_mut().zip(im.iter_mut()) {
                *r += floor.sample(rng);
                *i += floor.sample(rng);
            }
        }
        curves.push((cycle as u32, re, im));
    }

    let mut dc_rng = seeding::stream(rng.next_u64(), &[stage as u64]);
    if tag.has_dc && traj.dc_fluctuation > 0.0 {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for (_, re, im) in curves.iter_mut() {
            for (k, &f) in grid.iter().enumerate() {
                if f < cfg.fluctuation_corner_hz {
                    let w = traj.dc_fluctuation * cfg.fluctuation_corner_hz / f;
                    re[k] *= 1.0 + w * unit.sample(&mut dc_rng);
                    im[k] *= 1.0 + w * unit.sample(&mut dc_rng);
                }
            }
        }
    }

    let curves = curves
        .into_iter()
        .map(|(cycle, re, im)| EisCurve::new(cell_id, stage, cycle, grid.clone(), re, im))
        .collect::<Result<Vec<_>, _>>()?;
    let caps = traj
        .capacity_mah
        .iter()
        .enumerate()
        .map(|(cycle, &c)| CapacityRecord {
            cell_id: cell_id.to_string(),
            cycle: cycle as u32,
            capacity_mah: c,
        })
        .collect();
    Ok((curves, caps))
}

/// Cell names used by [`synth_dataset`]: `SYN01`, `SYN02`, ...
pub fn synth_cell_id(index: usize) -> String {
    format!("SYN{:02}", index + 1)
}

/// Builds a dataset with `n_train` training cells followed by `n_test` test
/// cells, each measured at every stage in `stages`.
pub fn synth_dataset(
    n_train: usize,
    n_test: usize,
    n_cycles: u32,
    stages: &[u8],
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Dataset, EisDataError> {
    if n_train == 0 || n_test == 0 || stages.is_empty() {
        return Err(EisDataError::Invalid(
            "synthetic dataset needs at least one train cell, one test cell and one stage".into(),
        ));
    }
    let mut curves = Vec::new();
    let mut capacities = Vec::new();
    let ids: Vec<String> = (0..n_train + n_test).map(synth_cell_id).collect();
    for (index, id) in ids.iter().enumerate() {
        let cell_rng = seeding::stream(seed, &[seeding::tag("synth-cell"), index as u64]);
        for (k, &stage) in stages.iter().enumerate() {
            let (c, caps) = synth_cell(id, n_cycles, stage, cfg, &mut cell_rng.clone())?;
            curves.extend(c);
            if k == 0 {
                capacities.extend(caps);
            }
        }
    }
    let partition = Partition::new(ids[..n_train].to_vec(), ids[n_train..].to_vec())?;
    Dataset::new(curves, capacities, partition)
}
