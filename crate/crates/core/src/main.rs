use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use eisgan_soh::eisgan::{align_and_select, Checkpoint, Selection};
use eisgan_soh::pipeline::{
    self, extract_all, gpr_file, load_gpr, read_json, write_json, write_latents, write_nyquist,
    write_perturbation, write_predictions, write_sweep, EstimationPath, EvalReport, Overrides, PerturbReport,
    PipelineConfig, PipelineError, Study, GAN_FILE, NYQUIST_FILE, SELECTION_FILE, SWEEP_FILE,
    TRAIN_REPORT_FILE,
};

#[derive(Parser)]
#[command(name = "eisgan-soh", version, about = "Capacity estimation from impedance spectra via InfoGAN latents and GP regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; built-in defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict the run to one stage.
    #[arg(long)]
    stage: Option<u8>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as CSV.
    Synth(Common),
    /// Train one GAN per stage.
    TrainGan(Common),
    /// Extract latent codes and select c1/c2.
    Extract(Common),
    /// Fit the GP on training latents.
    FitGpr(Common),
    /// Predict test-cell capacity on the latent path.
    Predict(Common),
    /// Write the latent-path evaluation report.
    Evaluate(Common),
    /// Fit, predict and evaluate the raw-curve GP.
    Baseline(Common),
    /// Perturbation robustness study for both paths.
    Perturb(Common),
    /// Latent sweeps of c1 and c2.
    Sweep(Common),
    /// The whole study.
    RunAll(Common),
}

fn open(common: &Common) -> Result<Study> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        stage: common.stage,
        out_dir: common.out.clone(),
    });
    let study = Study::open(cfg)?;
    pipeline::write_resolved_config(&study.config)?;
    Ok(study)
}

fn load_checkpoint(study: &Study, stage: u8) -> Result<Checkpoint> {
    let path = study.stage_dir(stage).join(GAN_FILE);
    Checkpoint::load(&path).with_context(|| format!("stage {stage}: run train-gan first"))
}

fn selection(study: &Study, stage: u8, ckpt: &Checkpoint) -> Result<(Vec<Vec<f64>>, Selection)> {
    let sd = study.stage_data(stage)?;
    let all: Vec<_> = sd.all_curves().collect();
    let latents = extract_all(ckpt, &all)?;
    let caps: Vec<f64> = sd
        .train
        .iter()
        .map(|c| study.dataset.capacity(&c.cell_id, c.cycle).expect("dataset checks capacities"))
        .collect();
    let cycles: Vec<f64> = sd.train.iter().map(|c| c.cycle as f64).collect();
    let sel = align_and_select(&cycles, &latents[..sd.train.len()], &caps)?;
    Ok((latents, sel))
}

fn eisgan_eval(study: &Study, stage: u8) -> Result<EvalReport> {
    let sd = study.stage_data(stage)?;
    let ckpt = load_checkpoint(study, stage)?;
    let model = load_gpr(&study.stage_dir(stage).join(gpr_file(EstimationPath::Eisgan)))
        .with_context(|| format!("stage {stage}: run fit-gpr first"))?;
    let x = study.path_inputs(EstimationPath::Eisgan, &sd.norm, Some(&ckpt), &sd.test)?;
    let cells = study.evaluate(&sd, &model, &x)?;
    Ok(EvalReport {
        path: EstimationPath::Eisgan,
        stages: BTreeMap::from([(stage, cells)]),
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(c) => {
            let study = open(&c)?;
            let dir = study.out_dir().join("data");
            pipeline::write_dataset(&study, &dir)?;
            for &stage in &study.config.stages {
                write_nyquist(&study, stage, &study.stage_dir(stage).join(NYQUIST_FILE))?;
            }
            println!("wrote {}", dir.display());
        }
        Command::TrainGan(c) => {
            let study = open(&c)?;
            for &stage in &study.config.stages {
                let sd = study.stage_data(stage)?;
                let (ckpt, report) = study.train_gan(&sd)?;
                let dir = study.stage_dir(stage);
                std::fs::create_dir_all(&dir)?;
                ckpt.save(&dir.join(GAN_FILE))?;
                write_json(&dir.join(TRAIN_REPORT_FILE), &report)?;
                if let Some(last) = report.epochs.last() {
                    println!(
                        "stage {stage}: loss_D {:.4} loss_G {:.4} loss_MI {:.4}",
                        last.loss_d, last.loss_g, last.loss_mi
                    );
                }
            }
        }
        Command::Extract(c) => {
            let study = open(&c)?;
            for &stage in &study.config.stages {
                let ckpt = load_checkpoint(&study, stage)?;
                let (latents, sel) = selection(&study, stage, &ckpt)?;
                write_latents(&study, stage, &latents, &sel)?;
                write_json(&study.stage_dir(stage).join(SELECTION_FILE), &sel)?;
                println!("stage {stage}: c1 = latent {}, c2 = latent {}", sel.selected[0], sel.selected.get(1).copied().unwrap_or(sel.selected[0]));
            }
        }
        Command::FitGpr(c) => {
            let study = open(&c)?;
            for &stage in &study.config.stages {
                let sd = study.stage_data(stage)?;
                let ckpt = load_checkpoint(&study, stage)?;
                let x = study.path_inputs(EstimationPath::Eisgan, &sd.norm, Some(&ckpt), &sd.train)?;
                let y: Vec<f64> = sd
                    .train
                    .iter()
                    .map(|c| study.dataset.capacity(&c.cell_id, c.cycle).expect("dataset checks capacities"))
                    .collect();
                let model = study.fit_gpr(stage, EstimationPath::Eisgan, &x, &y)?;
                write_json(&study.stage_dir(stage).join(gpr_file(EstimationPath::Eisgan)), &model.to_file())?;
                println!("stage {stage}: {:?}", model.hyperparams());
            }
        }
        Command::Predict(c) => {
            let study = open(&c)?;
            for &stage in &study.config.stages {
                let report = eisgan_eval(&study, stage)?;
                write_predictions(&study, stage, &report)?;
            }
        }
        Command::Evaluate(c) => {
            let study = open(&c)?;
            let mut report = EvalReport {
                path: EstimationPath::Eisgan,
                stages: BTreeMap::new(),
            };
            for &stage in &study.config.stages {
                report.stages.extend(eisgan_eval(&study, stage)?.stages);
            }
            print_metrics(&report);
            write_json(&study.out_dir().join(pipeline::EVAL_EISGAN_FILE), &report)?;
        }
        Command::Baseline(c) => {
            let study = open(&c)?;
            let (report, models) = study.run_baseline_path()?;
            for (stage, model) in &models {
                let dir = study.stage_dir(*stage);
                write_json(&dir.join(gpr_file(EstimationPath::Baseline)), &model.to_file())?;
                write_predictions(&study, *stage, &report)?;
            }
            print_metrics(&report);
            write_json(&study.out_dir().join(pipeline::EVAL_BASELINE_FILE), &report)?;
        }
        Command::Perturb(c) => {
            let study = open(&c)?;
            let mut report = PerturbReport::default();
            for &stage in &study.config.stages {
                let sd = study.stage_data(stage)?;
                let dir = study.stage_dir(stage);
                let ckpt = load_checkpoint(&study, stage)?;
                let eg = load_gpr(&dir.join(gpr_file(EstimationPath::Eisgan))).context("run fit-gpr first")?;
                let bg = load_gpr(&dir.join(gpr_file(EstimationPath::Baseline))).context("run baseline first")?;
                let (entries, flags) = study.perturb_stage(&sd, &ckpt, &eg, &bg)?;
                report.entries.extend(entries);
                report.robustness.extend(flags);
                write_perturbation(&study, stage, &report)?;
            }
            for f in &report.robustness {
                println!(
                    "stage {} sigma {}: median |dev| eisgan {:.5} baseline {:.5}",
                    f.stage, f.sigma, f.eisgan_mad, f.baseline_mad
                );
            }
            write_json(&study.out_dir().join(pipeline::PERTURB_FILE), &report)?;
        }
        Command::Sweep(c) => {
            let study = open(&c)?;
            for &stage in &study.config.stages {
                let ckpt = load_checkpoint(&study, stage)?;
                let sel_path = study.stage_dir(stage).join(SELECTION_FILE);
                let sel: Selection = match read_json(&sel_path) {
                    Ok(s) => s,
                    Err(_) => selection(&study, stage, &ckpt)?.1,
                };
                write_sweep(&study, stage, &ckpt, &sel, &study.stage_dir(stage).join(SWEEP_FILE))?;
            }
        }
        Command::RunAll(c) => {
            let study = open(&c)?;
            let out = pipeline::run_all(study.config)?;
            print_metrics(&out.eisgan);
            print_metrics(&out.baseline);
        }
    }
    Ok(())
}

fn print_metrics(report: &EvalReport) {
    for (stage, cells) in &report.stages {
        for (cell, r) in cells {
            let r2 = r.metrics.r2.map_or("undefined".to_string(), |v| format!("{v:.4}"));
            println!(
                "{} stage {stage} {cell}: MAE {:.4} RMSE {:.4} R2 {r2}",
                report.path.name(),
                r.metrics.mae,
                r.metrics.rmse
            );
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<PipelineError>().map_or("error", PipelineError::kind);
            let line = serde_json::json!({ "error": kind, "message": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::from(2)
        }
    }
}
