use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    generator_forward, head_forward, init_networks, trunk_forward, EisganError, GanConfig, LatentCode,
    Networks,
};
use crate::ndgrad::{clip_global_norm, AdamPConfig, AdamPState, Tape, Tensor, Var};
use crate::seeding;

/// One AdamP state per update: D (trunk + D head), G, and the joint
/// mutual-information update (G + trunk + Q head).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub d: AdamPState,
    pub g: AdamPState,
    pub q: AdamPState,
}

impl Optimizers {
    pub fn new(nets: &Networks) -> Self {
        let cfg = &nets.config;
        let adam = |lr| AdamPConfig {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            projection: cfg.adamp_projection,
            ..AdamPConfig::default()
        };
        Self {
            d: AdamPState::new(adam(cfg.lr_d), &d_params(nets)),
            g: AdamPState::new(adam(cfg.lr_g), &nets.generator),
            q: AdamPState::new(adam(cfg.lr_q), &q_params(nets)),
        }
    }
}

fn d_params(nets: &Networks) -> Vec<Tensor> {
    nets.trunk.iter().chain(&nets.d_head).cloned().collect()
}

fn q_params(nets: &Networks) -> Vec<Tensor> {
    nets.generator
        .iter()
        .chain(&nets.trunk)
        .chain(&nets.q_head)
        .cloned()
        .collect()
}

/// Losses and pre-clip gradient norms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub loss_d: f64,
    pub loss_g: f64,
    /// `lambda * gaussian_nll`, the mutual-information surrogate.
    pub loss_mi: f64,
    pub grad_norm_d: f64,
    pub grad_norm_g: f64,
    pub grad_norm_q: f64,
}

/// Per-epoch averages of [`StepLosses`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_mi: f64,
    pub grad_norm_d: f64,
    pub grad_norm_g: f64,
    pub grad_norm_q: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
}

fn sample_codes<R: Rng + ?Sized>(cfg: &GanConfig, n: usize, rng: &mut R) -> Vec<LatentCode> {
    (0..n)
        .map(|_| LatentCode::sample(cfg.latent_dim, cfg.noise_dim, rng))
        .collect()
}

fn code_tensor(codes: &[LatentCode]) -> Result<(Tensor, Tensor), EisganError> {
    let n = codes.len();
    let mut input = Vec::new();
    let mut c = Vec::new();
    for code in codes {
        input.extend_from_slice(&code.c);
        input.extend_from_slice(&code.z);
        c.extend_from_slice(&code.c);
    }
    let width = input.len() / n;
    Ok((Tensor::new(vec![n, width], input)?, Tensor::new(vec![n, c.len() / n], c)?))
}

fn gather(tape_grads: &crate::ndgrad::Gradients, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| tape_grads.wrt(v)).collect()
}

fn scatter(params: Vec<Tensor>, groups: &mut [&mut Vec<Tensor>]) {
    let mut it = params.into_iter();
    for g in groups.iter_mut() {
        for p in g.iter_mut() {
            *p = it.next().expect("parameter count matches");
        }
    }
}

/// Three sub-updates on one real batch `[B, R, T]` of normalized curves:
/// the discriminator on real and fresh fake curves, the generator with the
/// non-saturating loss, and the generator plus Q on `lambda * NLL(c | Q(trunk(G(c, z))))`.
pub fn train_step<R: Rng + ?Sized>(
    nets: &mut Networks,
    opts: &mut Optimizers,
    real_batch: &Tensor,
    rng: &mut R,
) -> Result<StepLosses, EisganError> {
    let b = nets.check_curves(real_batch)?;
    let cfg = nets.config.clone();
    let mut out = StepLosses::default();

    // (1) discriminator
    {
        let codes = sample_codes(&cfg, b, rng);
        let fake = nets.generate_batch(&codes)?;
        let mut tape = Tape::new();
        let vars = nets.register(&mut tape)?;
        let real = tape.leaf(real_batch.clone())?;
        let fake = tape.leaf(fake)?;
        let fr = trunk_forward(&mut tape, &cfg, &vars.trunk, real)?;
        let lr = head_forward(&mut tape, &vars.d_head, fr)?;
        let ff = trunk_forward(&mut tape, &cfg, &vars.trunk, fake)?;
        let lf = head_forward(&mut tape, &vars.d_head, ff)?;
        let l_real = tape.bce_logit_loss(lr, true)?;
        let l_fake = tape.bce_logit_loss(lf, false)?;
        let loss = tape.add(l_real, l_fake)?;
        out.loss_d = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let keys: Vec<Var> = vars.trunk.iter().chain(&vars.d_head).copied().collect();
        let mut g = gather(&grads, &keys);
        out.grad_norm_d = clip_global_norm(&mut g, cfg.grad_clip);
        let mut params = d_params(nets);
        opts.d.step(&mut params, &g)?;
        scatter(params, &mut [&mut nets.trunk, &mut nets.d_head]);
    }

    // (2) generator, non-saturating
    {
        let codes = sample_codes(&cfg, b, rng);
        let (input, _) = code_tensor(&codes)?;
        let mut tape = Tape::new();
        let vars = nets.register(&mut tape)?;
        let x = tape.leaf(input)?;
        let fake = generator_forward(&mut tape, &cfg, &vars.generator, x)?;
        let f = trunk_forward(&mut tape, &cfg, &vars.trunk, fake)?;
        let logits = head_forward(&mut tape, &vars.d_head, f)?;
        let loss = tape.bce_logit_loss(logits, true)?;
        out.loss_g = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let mut g = gather(&grads, &vars.generator);
        out.grad_norm_g = clip_global_norm(&mut g, cfg.grad_clip);
        opts.g.step(&mut nets.generator, &g)?;
    }

    // (3) mutual information
    {
        let codes = sample_codes(&cfg, b, rng);
        let (input, c) = code_tensor(&codes)?;
        let mut tape = Tape::new();
        let vars = nets.register(&mut tape)?;
        let x = tape.leaf(input)?;
        let fake = generator_forward(&mut tape, &cfg, &vars.generator, x)?;
        let f = trunk_forward(&mut tape, &cfg, &vars.trunk, fake)?;
        let q = head_forward(&mut tape, &vars.q_head, f)?;
        let nll = tape.gaussian_nll(q, c, cfg.q_sigma)?;
        let loss = tape.scale(nll, cfg.lambda_mi)?;
        out.loss_mi = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let keys: Vec<Var> = vars
            .generator
            .iter()
            .chain(&vars.trunk)
            .chain(&vars.q_head)
            .copied()
            .collect();
        let mut g = gather(&grads, &keys);
        out.grad_norm_q = clip_global_norm(&mut g, cfg.grad_clip);
        let mut params = q_params(nets);
        opts.q.step(&mut params, &g)?;
        scatter(params, &mut [&mut nets.generator, &mut nets.trunk, &mut nets.q_head]);
    }
    Ok(out)
}

fn check_finite(l: &StepLosses, epoch: usize, step: usize) -> Result<(), EisganError> {
    let fields = [
        ("loss_D", l.loss_d),
        ("loss_G", l.loss_g),
        ("loss_MI", l.loss_mi),
        ("gradient norm", l.grad_norm_d + l.grad_norm_g + l.grad_norm_q),
    ];
    match fields.iter().find(|(_, v)| !v.is_finite()) {
        Some((what, _)) => Err(EisganError::NonFinite { what, epoch, step }),
        None => Ok(()),
    }
}

/// Trains fresh networks on normalized `[R, T]` curves for `config.epochs`
/// shuffled passes. Everything random derives from `config.seed`.
pub fn train(config: &GanConfig, curves: &[Tensor]) -> Result<(Networks, TrainReport), EisganError> {
    config.validate()?;
    if curves.is_empty() {
        return Err(EisganError::Invalid("no training curves".into()));
    }
    let (r, t) = (config.channels, config.length);
    if let Some(bad) = curves.iter().find(|c| c.shape() != [r, t]) {
        return Err(EisganError::Shape(format!(
            "training curve has shape {:?}, expected [{r}, {t}]",
            bad.shape()
        )));
    }
    let mut init_rng = seeding::stream(config.seed, &[seeding::tag("gan-init")]);
    let mut nets = init_networks(config, &mut init_rng)?;
    let mut opts = Optimizers::new(&nets);
    let mut rng = seeding::stream(config.seed, &[seeding::tag("gan-train")]);
    let mut order: Vec<usize> = (0..curves.len()).collect();
    let mut report = TrainReport::default();
    let per_curve = r * t;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = StepLosses::default();
        let mut n_steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * per_curve);
            for &i in chunk {
                data.extend_from_slice(curves[i].data());
            }
            let batch = Tensor::new(vec![chunk.len(), r, t], data)?;
            let l = train_step(&mut nets, &mut opts, &batch, &mut rng).map_err(|e| match e {
                EisganError::Grad(crate::ndgrad::GradError::NonFinite(what)) => EisganError::NonFinite {
                    what,
                    epoch,
                    step: n_steps,
                },
                other => other,
            })?;
            check_finite(&l, epoch, n_steps)?;
            sums.loss_d += l.loss_d;
            sums.loss_g += l.loss_g;
            sums.loss_mi += l.loss_mi;
            sums.grad_norm_d += l.grad_norm_d;
            sums.grad_norm_g += l.grad_norm_g;
            sums.grad_norm_q += l.grad_norm_q;
            n_steps += 1;
        }
        let k = n_steps as f64;
        let stats = EpochStats {
            epoch,
            loss_d: sums.loss_d / k,
            loss_g: sums.loss_g / k,
            loss_mi: sums.loss_mi / k,
            grad_norm_d: sums.grad_norm_d / k,
            grad_norm_g: sums.grad_norm_g / k,
            grad_norm_q: sums.grad_norm_q / k,
        };
        log::debug!(
            "epoch {epoch}: D {:.4} G {:.4} MI {:.4}",
            stats.loss_d,
            stats.loss_g,
            stats.loss_mi
        );
        report.epochs.push(stats);
        report.steps += n_steps;
    }
    Ok((nets, report))
}
