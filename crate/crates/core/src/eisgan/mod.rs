//! InfoGAN over impedance curves.
//!
//! The generator maps a latent code `c` plus noise `z` to a `[2, T]` curve in
//! normalized units. The discriminator and the auxiliary network Q share one
//! convolutional trunk; only their dense heads differ. Q's head outputs the
//! mean of a fixed-variance Gaussian over `c`, so `c* = Q(trunk(x))` is the
//! latent representation of a curve `x`.

mod select;
mod train;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eisdata::{EisDataError, NormStats, CHANNELS, CURVE_POINTS};
use crate::ndgrad::{GradError, Tape, Tensor, Var};
use crate::seeding;

pub use select::{align_and_select, pearson, Selection};
pub use train::{train, train_step, EpochStats, Optimizers, StepLosses, TrainReport};

#[derive(Debug, Error)]
pub enum EisganError {
    #[error("invalid GAN configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error(transparent)]
    Data(#[from] EisDataError),
    #[error("{0}")]
    Invalid(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub channels: usize,
    pub length: usize,
    /// Generator conv widths; the first is the width after the input dense
    /// layer and each later entry follows a 2x upsampling.
    pub g_widths: Vec<usize>,
    /// Trunk conv widths; every layer but the last is followed by 2x average pooling.
    pub d_widths: Vec<usize>,
    /// Odd kernel width, padded to keep the length.
    pub kernel_size: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub lr_q: f64,
    pub lambda_mi: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Leaky ReLU slope.
    pub alpha: f64,
    pub q_sigma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adamp_projection: bool,
    /// Global gradient-norm clip per optimizer.
    pub grad_clip: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 9,
            noise_dim: 16,
            channels: CHANNELS,
            length: CURVE_POINTS,
            g_widths: vec![64, 32, 16],
            d_widths: vec![16, 32, 64, 64],
            kernel_size: 5,
            lr_d: 4e-4,
            lr_g: 1e-4,
            lr_q: 1e-4,
            lambda_mi: 0.1,
            batch_size: 32,
            epochs: 40,
            seed: 0,
            alpha: 0.01,
            q_sigma: 1.0,
            beta1: 0.5,
            beta2: 0.999,
            adamp_projection: true,
            grad_clip: 10.0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), EisganError> {
        let bad = |m: String| Err(EisganError::Config(m));
        if self.latent_dim == 0 || self.noise_dim == 0 {
            return bad("latent_dim and noise_dim must be at least 1".into());
        }
        if self.channels == 0 || self.length == 0 {
            return bad("channels and length must be positive".into());
        }
        if self.g_widths.is_empty() || self.d_widths.is_empty() {
            return bad("g_widths and d_widths must be non-empty".into());
        }
        if self.g_widths.iter().chain(&self.d_widths).any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        let up = 1usize << (self.g_widths.len() - 1);
        if !self.length.is_multiple_of(up) {
            return bad(format!(
                "length {} is not divisible by the generator upsampling factor {up}",
                self.length
            ));
        }
        if self.feature_len() == 0 {
            return bad(format!(
                "{} pooling stages leave nothing of length {}",
                self.d_widths.len() - 1,
                self.length
            ));
        }
        let rates = [self.lr_d, self.lr_g, self.lr_q, self.q_sigma, self.grad_clip];
        if rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("learning rates, q_sigma and grad_clip must be positive".into());
        }
        if !(self.lambda_mi >= 0.0 && self.lambda_mi.is_finite()) {
            return bad(format!("lambda_mi must be non-negative, got {}", self.lambda_mi));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }

    /// Length of the trunk output after pooling.
    pub fn trunk_len(&self) -> usize {
        (0..self.d_widths.len() - 1).fold(self.length, |l, _| l / 2)
    }

    /// Size of the shared feature vector.
    pub fn feature_len(&self) -> usize {
        self.trunk_len() * self.d_widths[self.d_widths.len() - 1]
    }

    fn g_base_len(&self) -> usize {
        self.length >> (self.g_widths.len() - 1)
    }

    pub fn code_len(&self) -> usize {
        self.latent_dim + self.noise_dim
    }
}

/// A latent code and the accompanying noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub c: Vec<f64>,
    pub z: Vec<f64>,
}

impl LatentCode {
    /// `c` with zero noise.
    pub fn with_zero_noise(c: Vec<f64>, noise_dim: usize) -> Self {
        Self {
            c,
            z: vec![0.0; noise_dim],
        }
    }

    /// Standard normal `c` and `z`.
    pub fn sample<R: Rng + ?Sized>(latent_dim: usize, noise_dim: usize, rng: &mut R) -> Self {
        let mut draw = |n| (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let c = draw(latent_dim);
        let z = draw(noise_dim);
        Self { c, z }
    }
}

/// All trainable parameters. Each group is a list of `(weights, bias)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub config: GanConfig,
    pub generator: Vec<Tensor>,
    pub trunk: Vec<Tensor>,
    pub d_head: Vec<Tensor>,
    pub q_head: Vec<Tensor>,
}

fn uniform_block<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

fn layer<R: Rng + ?Sized>(weight_shape: &[usize], fan_in: usize, rng: &mut R) -> [Tensor; 2] {
    let w = uniform_block(weight_shape, fan_in, rng);
    let b = Tensor::zeros(&weight_shape[..1]);
    [w, b]
}

pub fn init_networks<R: Rng + ?Sized>(config: &GanConfig, rng: &mut R) -> Result<Networks, EisganError> {
    config.validate()?;
    let k = config.kernel_size;
    let mut generator = Vec::new();
    let g0 = config.g_widths[0];
    let code = config.code_len();
    generator.extend(layer(&[g0 * config.g_base_len(), code], code, rng));
    for pair in config.g_widths.windows(2) {
        generator.extend(layer(&[pair[1], pair[0], k], pair[0] * k, rng));
    }
    let g_last = *config.g_widths.last().unwrap();
    generator.extend(layer(&[config.channels, g_last, k], g_last * k, rng));

    let mut trunk = Vec::new();
    let mut r_in = config.channels;
    for &w in &config.d_widths {
        trunk.extend(layer(&[w, r_in, k], r_in * k, rng));
        r_in = w;
    }
    let f = config.feature_len();
    let d_head = layer(&[1, f], f, rng).to_vec();
    let q_head = layer(&[config.latent_dim, f], f, rng).to_vec();
    Ok(Networks {
        config: config.clone(),
        generator,
        trunk,
        d_head,
        q_head,
    })
}

/// Parameters registered on a tape, grouped like [`Networks`].
pub(crate) struct NetVars {
    pub generator: Vec<Var>,
    pub trunk: Vec<Var>,
    pub d_head: Vec<Var>,
    pub q_head: Vec<Var>,
}

fn leaves(tape: &mut Tape, params: &[Tensor]) -> Result<Vec<Var>, GradError> {
    params.iter().map(|p| tape.leaf(p.clone())).collect()
}

impl Networks {
    pub(crate) fn register(&self, tape: &mut Tape) -> Result<NetVars, GradError> {
        Ok(NetVars {
            generator: leaves(tape, &self.generator)?,
            trunk: leaves(tape, &self.trunk)?,
            d_head: leaves(tape, &self.d_head)?,
            q_head: leaves(tape, &self.q_head)?,
        })
    }

    pub fn parameter_count(&self) -> usize {
        [&self.generator, &self.trunk, &self.d_head, &self.q_head]
            .into_iter()
            .flatten()
            .map(Tensor::len)
            .sum()
    }

    /// Builds `[B, code_len]` generator input from codes.
    fn code_batch(&self, codes: &[LatentCode]) -> Result<Tensor, EisganError> {
        let cfg = &self.config;
        let mut data = Vec::with_capacity(codes.len() * cfg.code_len());
        for code in codes {
            if code.c.len() != cfg.latent_dim || code.z.len() != cfg.noise_dim {
                return Err(EisganError::Shape(format!(
                    "code has ({}, {}) entries, expected ({}, {})",
                    code.c.len(),
                    code.z.len(),
                    cfg.latent_dim,
                    cfg.noise_dim
                )));
            }
            data.extend_from_slice(&code.c);
            data.extend_from_slice(&code.z);
        }
        Ok(Tensor::new(vec![codes.len(), cfg.code_len()], data)?)
    }

    fn check_curves(&self, curves: &Tensor) -> Result<usize, EisganError> {
        let cfg = &self.config;
        match *curves.shape() {
            [b, r, t] if r == cfg.channels && t == cfg.length => Ok(b),
            _ => Err(EisganError::Shape(format!(
                "expected curves [B, {}, {}], got {:?}",
                cfg.channels,
                cfg.length,
                curves.shape()
            ))),
        }
    }

    /// Generated curves `[B, R, T]` for a batch of codes.
    pub fn generate_batch(&self, codes: &[LatentCode]) -> Result<Tensor, EisganError> {
        if codes.is_empty() {
            return Err(EisganError::Shape("empty code batch".into()));
        }
        let input = self.code_batch(codes)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape)?;
        let x = tape.leaf(input)?;
        let out = generator_forward(&mut tape, &self.config, &vars.generator, x)?;
        Ok(tape.value(out).clone())
    }

    /// Q-head means for a batch of curves `[B, R, T]`.
    pub fn extract_batch(&self, curves: &Tensor) -> Result<Vec<Vec<f64>>, EisganError> {
        let b = self.check_curves(curves)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape)?;
        let x = tape.leaf(curves.clone())?;
        let feat = trunk_forward(&mut tape, &self.config, &vars.trunk, x)?;
        let q = head_forward(&mut tape, &vars.q_head, feat)?;
        let d = self.config.latent_dim;
        let data = tape.value(q).data();
        Ok((0..b).map(|i| data[i * d..(i + 1) * d].to_vec()).collect())
    }

    /// Discriminator logits for a batch of curves.
    pub fn discriminate(&self, curves: &Tensor) -> Result<Vec<f64>, EisganError> {
        self.check_curves(curves)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape)?;
        let x = tape.leaf(curves.clone())?;
        let feat = trunk_forward(&mut tape, &self.config, &vars.trunk, x)?;
        let d = head_forward(&mut tape, &vars.d_head, feat)?;
        Ok(tape.value(d).data().to_vec())
    }

    /// Shared trunk features of a batch of curves.
    pub fn features(&self, curves: &Tensor) -> Result<Tensor, EisganError> {
        self.check_curves(curves)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape)?;
        let x = tape.leaf(curves.clone())?;
        let feat = trunk_forward(&mut tape, &self.config, &vars.trunk, x)?;
        Ok(tape.value(feat).clone())
    }
}

pub(crate) fn generator_forward(
    tape: &mut Tape,
    cfg: &GanConfig,
    params: &[Var],
    code: Var,
) -> Result<Var, GradError> {
    let batch = tape.value(code).shape()[0];
    let pad = cfg.padding();
    let mut h = tape.dense(code, params[0], params[1])?;
    h = tape.reshape(h, vec![batch, cfg.g_widths[0], cfg.g_base_len()])?;
    h = tape.leaky_relu(h, cfg.alpha)?;
    let n_layers = params.len() / 2;
    for i in 1..n_layers {
        let last = i == n_layers - 1;
        if !last {
            h = tape.upsample(h, 2)?;
        }
        h = tape.conv1d(h, params[2 * i], params[2 * i + 1], pad)?;
        if !last {
            h = tape.leaky_relu(h, cfg.alpha)?;
        }
    }
    Ok(h)
}

/// Shared trunk: conv + leaky ReLU per layer with 2x pooling between layers,
/// flattened to `[B, feature_len]`.
pub(crate) fn trunk_forward(
    tape: &mut Tape,
    cfg: &GanConfig,
    params: &[Var],
    curves: Var,
) -> Result<Var, GradError> {
    let batch = tape.value(curves).shape()[0];
    let pad = cfg.padding();
    let n_layers = params.len() / 2;
    let mut h = curves;
    for i in 0..n_layers {
        h = tape.conv1d(h, params[2 * i], params[2 * i + 1], pad)?;
        h = tape.leaky_relu(h, cfg.alpha)?;
        if i + 1 < n_layers {
            h = tape.avg_pool(h, 2)?;
        }
    }
    tape.reshape(h, vec![batch, cfg.feature_len()])
}

pub(crate) fn head_forward(tape: &mut Tape, params: &[Var], features: Var) -> Result<Var, GradError> {
    tape.dense(features, params[0], params[1])
}

/// `G(c, z)` as a single `[R, T]` curve in normalized units.
pub fn generate(nets: &Networks, code: &LatentCode) -> Result<Tensor, EisganError> {
    let out = nets.generate_batch(std::slice::from_ref(code))?;
    let shape = out.shape()[1..].to_vec();
    Ok(out.reshaped(shape)?)
}

/// `c* = Q(trunk(x))` for one normalized `[R, T]` curve.
pub fn extract_latents(nets: &Networks, curve: &Tensor) -> Result<Vec<f64>, EisganError> {
    let cfg = &nets.config;
    if curve.shape() != [cfg.channels, cfg.length] {
        return Err(EisganError::Shape(format!(
            "expected a [{}, {}] curve, got {:?}",
            cfg.channels,
            cfg.length,
            curve.shape()
        )));
    }
    let batch = curve.clone().reshaped(vec![1, cfg.channels, cfg.length])?;
    Ok(nets.extract_batch(&batch)?.remove(0))
}

/// Nine evenly spaced values from -2 to 2.
pub fn default_sweep_grid() -> Vec<f64> {
    sweep_grid(9)
}

/// `n` evenly spaced values from -2 to 2.
pub fn sweep_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Generates one curve per grid value with `c[dim]` set to it, every other
/// code entry and the noise at zero. Curves are denormalized with `stats`.
pub fn latent_sweep(
    nets: &Networks,
    dim: usize,
    grid: &[f64],
    stats: &NormStats,
) -> Result<Vec<Tensor>, EisganError> {
    let cfg = &nets.config;
    if dim >= cfg.latent_dim {
        return Err(EisganError::Invalid(format!(
            "sweep dimension {dim} is out of range for {} latents",
            cfg.latent_dim
        )));
    }
    grid.iter()
        .map(|&v| {
            let mut c = vec![0.0; cfg.latent_dim];
            c[dim] = v;
            let mut curve = generate(nets, &LatentCode::with_zero_noise(c, cfg.noise_dim))?;
            stats.denormalize_tensor(&mut curve);
            Ok(curve)
        })
        .collect()
}

pub const CHECKPOINT_FORMAT: &str = "eisgan-soh/gan/v1";

/// Trained networks plus the normalization they were trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub networks: Networks,
    pub norm: NormStats,
}

impl Checkpoint {
    pub fn new(networks: Networks, norm: NormStats) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            networks,
            norm,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EisganError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| EisganError::Checkpoint {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(EisganError::Checkpoint {
                path: "<memory>".into(),
                message: format!("unsupported format `{}`", ckpt.format),
            });
        }
        ckpt.networks.config.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), EisganError> {
        std::fs::write(path, self.to_json()).map_err(|e| EisganError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, EisganError> {
        let text = std::fs::read_to_string(path).map_err(|e| EisganError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            EisganError::Checkpoint { message, .. } => EisganError::Checkpoint {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// Networks initialized from the config's own seed.
pub fn init_from_seed(config: &GanConfig) -> Result<Networks, EisganError> {
    let mut rng = seeding::stream(config.seed, &[seeding::tag("gan-init")]);
    init_networks(config, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GanConfig {
        GanConfig {
            g_widths: vec![8, 4, 4],
            d_widths: vec![4, 4, 8, 8],
            ..GanConfig::default()
        }
    }

    #[test]
    fn default_shapes() {
        let nets = init_from_seed(&GanConfig::default()).unwrap();
        assert_eq!(nets.config.feature_len(), 448);
        assert!(nets.parameter_count() < 100_000);
        let code = LatentCode::with_zero_noise(vec![0.0; 9], 16);
        assert_eq!(generate(&nets, &code).unwrap().shape(), [2, 60]);
        let c = extract_latents(&nets, &Tensor::zeros(&[2, 60])).unwrap();
        assert_eq!(c.len(), 9);
        assert!(c.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(init_from_seed(&small()).unwrap(), init_from_seed(&small()).unwrap());
        let other = GanConfig { seed: 1, ..small() };
        assert_ne!(init_from_seed(&small()).unwrap().trunk, init_from_seed(&other).unwrap().trunk);
    }

    #[test]
    fn inconsistent_shapes_are_rejected() {
        let odd = GanConfig { kernel_size: 4, ..small() };
        assert!(odd.validate().is_err());
        let deep = GanConfig {
            g_widths: vec![8, 8, 8, 8],
            ..small()
        };
        assert!(deep.validate().is_err());
        let nets = init_from_seed(&small()).unwrap();
        assert!(extract_latents(&nets, &Tensor::zeros(&[2, 59])).is_err());
        assert!(generate(&nets, &LatentCode::with_zero_noise(vec![0.0; 3], 16)).is_err());
    }

    #[test]
    fn extraction_is_per_curve() {
        let nets = init_from_seed(&small()).unwrap();
        let mut rng = seeding::stream(3, &[]);
        let batch = Tensor::new(vec![3, 2, 60], (0..360).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let joint = nets.extract_batch(&batch).unwrap();
        for (i, row) in joint.iter().enumerate() {
            let single = Tensor::new(vec![2, 60], batch.data()[i * 120..(i + 1) * 120].to_vec()).unwrap();
            assert_eq!(&extract_latents(&nets, &single).unwrap(), row);
        }
    }

    #[test]
    fn sweep_grid_and_origin() {
        assert_eq!(default_sweep_grid().len(), 9);
        assert_eq!(default_sweep_grid()[0], -2.0);
        assert_eq!(default_sweep_grid()[8], 2.0);
        let nets = init_from_seed(&small()).unwrap();
        let sweep = latent_sweep(&nets, 0, &[0.0], &NormStats::IDENTITY).unwrap();
        let origin = generate(&nets, &LatentCode::with_zero_noise(vec![0.0; 9], 16)).unwrap();
        assert_eq!(sweep, vec![origin]);
        assert!(latent_sweep(&nets, 9, &[0.0], &NormStats::IDENTITY).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let nets = init_from_seed(&small()).unwrap();
        let norm = NormStats::new([1.234567890123, -0.1], [0.3, 7.0 / 3.0]).unwrap();
        let ckpt = Checkpoint::new(nets, norm);
        let back = Checkpoint::from_json(&ckpt.to_json()).unwrap();
        assert_eq!(back, ckpt);
    }
}
