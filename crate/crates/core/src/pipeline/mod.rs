//! The end-to-end study: data, per-stage GAN training, latent extraction,
//! GP capacity estimation on latents and on raw curves, evaluation, the
//! perturbation study, and plot-data files.
//!
//! Every random draw derives from [`PipelineConfig::seed`], so a rerun with
//! the same config reproduces every report byte for byte.

mod config;
mod metrics;
mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecmoracle::synth_dataset;
use crate::eisdata::{
    log_grid, perturb_curve, read_eis_csv, resample_to_grid, CsvOptions, Dataset, EisCurve, EisDataError,
    NormStats, Partition,
};
use crate::eisgan::{self, align_and_select, Checkpoint, EisganError, Selection, TrainReport};
use crate::gpr::{self, GprError, GprFile, GprModel};
use crate::ndgrad::Tensor;
use crate::seeding::{self, tag};

pub use config::{DataConfig, GprSettings, Overrides, PerturbConfig, PipelineConfig, SynthSection};
pub use metrics::{box_stats, median, metrics, quantile_sorted, BoxStats, Metrics};
pub use output::{
    emit_plot_data, gpr_file, write_dataset, write_json, write_latents, write_nyquist, write_perturbation,
    write_predictions, write_sweep, CAPACITY_DATA_FILE, EIS_DATA_FILE, GAN_FILE, NYQUIST_FILE, SELECTION_FILE,
    SWEEP_FILE, TRAIN_REPORT_FILE,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {path}: {message}")]
    Io { path: String, message: String },
    #[error("data: {0}")]
    Data(#[from] EisDataError),
    #[error("gan: {0}")]
    Gan(#[from] EisganError),
    #[error("gpr: {0}")]
    Gpr(#[from] GprError),
    #[error("{0}")]
    Invalid(String),
}

impl PipelineError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Data(_) => "data",
            Self::Gan(_) => "gan",
            Self::Gpr(_) => "gpr",
            Self::Invalid(_) => "invalid",
        }
    }
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Which input the GP sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationPath {
    /// Nine-dimensional latent codes.
    Eisgan,
    /// Flattened normalized curves.
    Baseline,
}

impl EstimationPath {
    pub const ALL: [EstimationPath; 2] = [EstimationPath::Eisgan, EstimationPath::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Self::Eisgan => "eisgan",
            Self::Baseline => "baseline",
        }
    }
}

/// Per-cycle predictions and metrics of one test cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub metrics: Metrics,
    pub cycles: Vec<u32>,
    pub measured: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl CellReport {
    pub fn new(cycles: Vec<u32>, measured: Vec<f64>, mean: Vec<f64>, std: Vec<f64>) -> Result<Self, PipelineError> {
        Ok(Self {
            metrics: metrics(&measured, &mean)?,
            cycles,
            measured,
            mean,
            std,
        })
    }
}

/// Test-cell results of one estimation path, keyed by stage then cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub path: EstimationPath,
    pub stages: BTreeMap<u8, BTreeMap<String, CellReport>>,
}

/// Deviations of one path at one noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbEntry {
    pub stage: u8,
    pub path: EstimationPath,
    pub sigma: f64,
    pub cell: String,
    pub cycle: u32,
    pub clean_prediction: f64,
    /// Prediction on the perturbed curve minus the clean prediction, mAh.
    pub deviations: Vec<f64>,
    pub stats: BoxStats,
    /// Median of the absolute deviations.
    pub median_abs_deviation: f64,
}

/// Whether the latent path was at least as robust as the raw-curve path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessFlag {
    pub stage: u8,
    pub sigma: f64,
    pub eisgan_mad: f64,
    pub baseline_mad: f64,
    pub eisgan_at_most_baseline: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub entries: Vec<PerturbEntry>,
    pub robustness: Vec<RobustnessFlag>,
}

/// Everything trained for one stage on the latent path.
#[derive(Clone, Debug)]
pub struct EisganStage {
    pub checkpoint: Checkpoint,
    pub train_report: TrainReport,
    pub selection: Selection,
    pub gpr: GprModel,
    /// Latent code of every curve of the stage, in [`StageData::all_curves`] order.
    pub latents: Vec<Vec<f64>>,
}

/// The curves of one stage split by partition, with the training normalization.
#[derive(Clone, Debug)]
pub struct StageData<'a> {
    pub stage: u8,
    pub partition: Partition,
    pub norm: NormStats,
    pub train: Vec<&'a EisCurve>,
    pub test: Vec<&'a EisCurve>,
}

impl<'a> StageData<'a> {
    /// Training curves followed by test curves.
    pub fn all_curves(&self) -> impl Iterator<Item = &'a EisCurve> + '_ {
        self.train.iter().chain(&self.test).copied()
    }

    pub fn is_train(&self, cell: &str) -> bool {
        self.partition.train.iter().any(|c| c == cell)
    }

    pub fn test_cell_curves(&self, cell: &str) -> Vec<&'a EisCurve> {
        self.test.iter().copied().filter(|c| c.cell_id == cell).collect()
    }
}

/// A validated config together with its dataset.
#[derive(Clone, Debug)]
pub struct Study {
    pub config: PipelineConfig,
    pub dataset: Dataset,
}

/// Resamples every curve onto one shared 60-point log grid spanning the
/// frequency range common to all curves, unless they already share one.
fn harmonize(curves: Vec<EisCurve>, points: usize) -> Result<Vec<EisCurve>, PipelineError> {
    let Some(first) = curves.first() else {
        return Err(PipelineError::Invalid("the EIS file holds no curves".into()));
    };
    if curves.iter().all(|c| c.len() == points && c.freq_hz == first.freq_hz) {
        return Ok(curves);
    }
    let f_max = curves.iter().map(|c| c.freq_hz[0]).fold(f64::INFINITY, f64::min);
    let f_min = curves.iter().map(|c| c.freq_hz[c.len() - 1]).fold(0.0, f64::max);
    if !(f_max > f_min) {
        return Err(PipelineError::Invalid(format!(
            "curves share no common frequency range ({f_min} Hz .. {f_max} Hz)"
        )));
    }
    let grid = log_grid(f_max, f_min, points);
    Ok(curves
        .iter()
        .map(|c| resample_to_grid(c, &grid))
        .collect::<Result<Vec<_>, _>>()?)
}

impl Study {
    pub fn open(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut dataset = if config.uses_synthetic_data() {
            let s = &config.synth;
            let seed = seeding::derive_seed(config.seed, &[tag("synth")]);
            synth_dataset(s.n_train, s.n_test, s.n_cycles, &config.stages, seed, &s.model)?
        } else {
            let eis_path = config.data.eis_csv.as_ref().expect("validated");
            let cap_path = config.data.capacity_csv.as_ref().expect("validated");
            let file = std::fs::File::open(eis_path).map_err(|e| io_err(eis_path, e))?;
            let curves = read_eis_csv(file, CsvOptions { points_per_curve: None })?;
            let curves = harmonize(curves, config.gan.length)?;
            let caps = crate::eisdata::load_capacity_csv(cap_path)?;
            Dataset::new(curves, caps, Partition::default())?
        };
        if !config.data.train_cells.is_empty() {
            dataset.set_partition(Partition::new(
                config.data.train_cells.clone(),
                config.data.test_cells.clone(),
            )?)?;
        }
        for (key, p) in &config.data.stage_partitions {
            let stage: u8 = key.parse().expect("validated");
            dataset = dataset.with_stage_partition(stage, p.clone())?;
        }
        for &stage in &config.stages {
            dataset.check_stage(stage)?;
        }
        Ok(Self { config, dataset })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }

    pub fn stage_dir(&self, stage: u8) -> PathBuf {
        self.config.out_dir.join(format!("stage{stage}"))
    }

    pub fn stage_data(&self, stage: u8) -> Result<StageData<'_>, PipelineError> {
        self.dataset.check_stage(stage)?;
        let p = self.dataset.partition(stage);
        let train: Vec<&EisCurve> = self.dataset.stage_curves(stage, &p.train).collect();
        let test: Vec<&EisCurve> = self.dataset.stage_curves(stage, &p.test).collect();
        let partition = p.clone();
        let points = self.config.gan.length;
        if let Some(c) = train.iter().chain(&test).find(|c| c.len() != points) {
            return Err(PipelineError::Invalid(format!(
                "curve {} has {} points, the networks expect {points}",
                c.key(),
                c.len()
            )));
        }
        let norm = NormStats::fit(train.iter().copied())?;
        Ok(StageData {
            stage,
            partition,
            norm,
            train,
            test,
        })
    }

    fn capacities(&self, curves: &[&EisCurve]) -> Result<Vec<f64>, PipelineError> {
        curves
            .iter()
            .map(|c| {
                self.dataset
                    .capacity(&c.cell_id, c.cycle)
                    .ok_or_else(|| PipelineError::Invalid(format!("no capacity for {}", c.key())))
            })
            .collect()
    }

    pub fn gan_seed(&self, stage: u8) -> u64 {
        seeding::derive_seed(self.config.seed, &[tag("gan"), stage as u64])
    }

    fn gpr_seed(&self, stage: u8, path: EstimationPath) -> u64 {
        seeding::derive_seed(self.config.seed, &[tag("gpr"), stage as u64, tag(path.name())])
    }

    /// Trains the stage's GAN on its normalized training curves.
    pub fn train_gan(&self, sd: &StageData) -> Result<(Checkpoint, TrainReport), PipelineError> {
        let cfg = eisgan::GanConfig {
            seed: self.gan_seed(sd.stage),
            ..self.config.gan.clone()
        };
        let curves: Vec<Tensor> = sd.train.iter().map(|c| sd.norm.normalize(c).to_tensor()).collect();
        log::info!("stage {}: training GAN on {} curves", sd.stage, curves.len());
        let (nets, report) = eisgan::train(&cfg, &curves)?;
        Ok((Checkpoint::new(nets, sd.norm), report))
    }

    /// GP inputs for raw curves: latent codes or flattened normalized curves.
    pub fn path_inputs(
        &self,
        path: EstimationPath,
        norm: &NormStats,
        checkpoint: Option<&Checkpoint>,
        curves: &[&EisCurve],
    ) -> Result<Vec<Vec<f64>>, PipelineError> {
        match path {
            EstimationPath::Baseline => Ok(curves.iter().map(|c| norm.normalize(c).flatten()).collect()),
            EstimationPath::Eisgan => {
                let ckpt = checkpoint
                    .ok_or_else(|| PipelineError::Invalid("the latent path needs a trained GAN".into()))?;
                extract_all(ckpt, curves)
            }
        }
    }

    pub fn fit_gpr(
        &self,
        stage: u8,
        path: EstimationPath,
        inputs: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<GprModel, PipelineError> {
        let g = &self.config.gpr;
        log::info!("stage {stage}: fitting {} GP on {} points", path.name(), inputs.len());
        Ok(gpr::fit(inputs, targets, g.init, &g.fit_options(self.gpr_seed(stage, path)))?)
    }

    /// Predicts every test cell of the stage.
    pub fn evaluate(
        &self,
        sd: &StageData,
        model: &GprModel,
        test_inputs: &[Vec<f64>],
    ) -> Result<BTreeMap<String, CellReport>, PipelineError> {
        let caps = self.capacities(&sd.test)?;
        let mut grouped: BTreeMap<String, (Vec<u32>, Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for ((curve, x), &y) in sd.test.iter().zip(test_inputs).zip(&caps) {
            let p = model.predict(x)?;
            let e = grouped.entry(curve.cell_id.clone()).or_default();
            e.0.push(curve.cycle);
            e.1.push(y);
            e.2.push(p.mean);
            e.3.push(p.std());
        }
        grouped
            .into_iter()
            .map(|(cell, (cy, m, mu, sd))| Ok((cell, CellReport::new(cy, m, mu, sd)?)))
            .collect()
    }

    /// Trains the GAN, extracts latents, selects c1/c2, fits and evaluates the GP.
    pub fn run_eisgan_stage(&self, sd: &StageData) -> Result<(EisganStage, BTreeMap<String, CellReport>), PipelineError> {
        let (checkpoint, train_report) = self.train_gan(sd)?;
        self.eisgan_stage_from_checkpoint(sd, checkpoint, train_report)
    }

    pub fn eisgan_stage_from_checkpoint(
        &self,
        sd: &StageData,
        checkpoint: Checkpoint,
        train_report: TrainReport,
    ) -> Result<(EisganStage, BTreeMap<String, CellReport>), PipelineError> {
        let all: Vec<&EisCurve> = sd.all_curves().collect();
        let latents = extract_all(&checkpoint, &all)?;
        let (train_lat, test_lat) = latents.split_at(sd.train.len());
        let train_caps = self.capacities(&sd.train)?;
        let cycles: Vec<f64> = sd.train.iter().map(|c| c.cycle as f64).collect();
        let selection = align_and_select(&cycles, train_lat, &train_caps)?;
        let gpr = self.fit_gpr(sd.stage, EstimationPath::Eisgan, train_lat, &train_caps)?;
        let cells = self.evaluate(sd, &gpr, test_lat)?;
        Ok((
            EisganStage {
                checkpoint,
                train_report,
                selection,
                gpr,
                latents,
            },
            cells,
        ))
    }

    /// Fits and evaluates the GP on flattened normalized curves.
    pub fn run_baseline_stage(&self, sd: &StageData) -> Result<(GprModel, BTreeMap<String, CellReport>), PipelineError> {
        let path = EstimationPath::Baseline;
        let train_x = self.path_inputs(path, &sd.norm, None, &sd.train)?;
        let test_x = self.path_inputs(path, &sd.norm, None, &sd.test)?;
        let model = self.fit_gpr(sd.stage, path, &train_x, &self.capacities(&sd.train)?)?;
        let cells = self.evaluate(sd, &model, &test_x)?;
        Ok((model, cells))
    }

    /// Latent-path results for every configured stage.
    pub fn run_eisgan_path(&self) -> Result<(EvalReport, BTreeMap<u8, EisganStage>), PipelineError> {
        let mut report = EvalReport {
            path: EstimationPath::Eisgan,
            stages: BTreeMap::new(),
        };
        let mut stages = BTreeMap::new();
        for &stage in &self.config.stages {
            let sd = self.stage_data(stage)?;
            let (artifacts, cells) = self.run_eisgan_stage(&sd)?;
            report.stages.insert(stage, cells);
            stages.insert(stage, artifacts);
        }
        Ok((report, stages))
    }

    /// Raw-curve results for every configured stage.
    pub fn run_baseline_path(&self) -> Result<(EvalReport, BTreeMap<u8, GprModel>), PipelineError> {
        let mut report = EvalReport {
            path: EstimationPath::Baseline,
            stages: BTreeMap::new(),
        };
        let mut models = BTreeMap::new();
        for &stage in &self.config.stages {
            let sd = self.stage_data(stage)?;
            let (model, cells) = self.run_baseline_stage(&sd)?;
            report.stages.insert(stage, cells);
            models.insert(stage, model);
        }
        Ok((report, models))
    }

    /// Perturbs one curve of the stage `samples` times per noise level and
    /// records how far each path's prediction moves. Both paths see the same
    /// perturbed curves.
    pub fn perturb_stage(
        &self,
        sd: &StageData,
        checkpoint: &Checkpoint,
        eisgan_gpr: &GprModel,
        baseline_gpr: &GprModel,
    ) -> Result<(Vec<PerturbEntry>, Vec<RobustnessFlag>), PipelineError> {
        let pc = &self.config.perturb;
        let cell = match &pc.cell {
            Some(c) => c.clone(),
            None => sd.partition.test[0].clone(),
        };
        let curve = self
            .dataset
            .curves(&cell, sd.stage)
            .iter()
            .find(|c| c.cycle == pc.cycle)
            .ok_or_else(|| {
                PipelineError::Invalid(format!(
                    "stage {}: no curve for cell {cell} at cycle {}",
                    sd.stage, pc.cycle
                ))
            })?;
        let predict = |path: EstimationPath, curves: &[&EisCurve]| -> Result<Vec<f64>, PipelineError> {
            let x = self.path_inputs(path, &sd.norm, Some(checkpoint), curves)?;
            let model = match path {
                EstimationPath::Eisgan => eisgan_gpr,
                EstimationPath::Baseline => baseline_gpr,
            };
            x.iter().map(|v| Ok(model.predict(v)?.mean)).collect()
        };
        let clean: BTreeMap<EstimationPath, f64> = EstimationPath::ALL
            .iter()
            .map(|&p| Ok((p, predict(p, &[curve])?[0])))
            .collect::<Result<_, PipelineError>>()?;

        let mut entries = Vec::new();
        let mut flags = Vec::new();
        for (si, &sigma) in pc.sigmas.iter().enumerate() {
            let mut rng = seeding::stream(self.config.seed, &[tag("perturb"), sd.stage as u64, si as u64]);
            let perturbed = (0..pc.samples)
                .map(|_| perturb_curve(curve, sigma, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&EisCurve> = perturbed.iter().collect();
            let mut mads = BTreeMap::new();
            for path in EstimationPath::ALL {
                let deviations: Vec<f64> = predict(path, &refs)?.iter().map(|p| p - clean[&path]).collect();
                let abs: Vec<f64> = deviations.iter().map(|d| d.abs()).collect();
                let mad = median(&abs);
                mads.insert(path, mad);
                entries.push(PerturbEntry {
                    stage: sd.stage,
                    path,
                    sigma,
                    cell: cell.clone(),
                    cycle: pc.cycle,
                    clean_prediction: clean[&path],
                    stats: box_stats(&deviations)?,
                    deviations,
                    median_abs_deviation: mad,
                });
            }
            let (e, b) = (mads[&EstimationPath::Eisgan], mads[&EstimationPath::Baseline]);
            flags.push(RobustnessFlag {
                stage: sd.stage,
                sigma,
                eisgan_mad: e,
                baseline_mad: b,
                eisgan_at_most_baseline: e <= b,
            });
        }
        Ok((entries, flags))
    }
}

/// Latent codes of raw curves under the checkpoint's normalization.
pub fn extract_all(ckpt: &Checkpoint, curves: &[&EisCurve]) -> Result<Vec<Vec<f64>>, PipelineError> {
    let cfg = &ckpt.networks.config;
    let mut out = Vec::with_capacity(curves.len());
    for chunk in curves.chunks(256) {
        let mut data = Vec::with_capacity(chunk.len() * cfg.channels * cfg.length);
        for c in chunk {
            data.extend(ckpt.norm.normalize(c).to_tensor().into_data());
        }
        let batch = Tensor::new(vec![chunk.len(), cfg.channels, cfg.length], data)
            .map_err(|e| PipelineError::Invalid(e.to_string()))?;
        out.extend(ckpt.networks.extract_batch(&batch)?);
    }
    Ok(out)
}

/// Per-stage headline numbers for the summary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub train_cells: Vec<String>,
    pub test_cells: Vec<String>,
    /// Indices of the selected latents c1 and c2.
    pub selected_latents: Vec<usize>,
    pub flipped: Vec<bool>,
    pub gan_final_losses: Option<eisgan::EpochStats>,
    /// Metrics keyed by cell then path.
    pub cells: BTreeMap<String, BTreeMap<EstimationPath, Metrics>>,
    pub robustness: Vec<RobustnessFlag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub stages: BTreeMap<u8, StageSummary>,
}

/// Everything `run_all` produced.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub eisgan: EvalReport,
    pub baseline: EvalReport,
    pub perturb: PerturbReport,
    pub summary: Summary,
    pub stages: BTreeMap<u8, EisganStage>,
}

pub const EVAL_EISGAN_FILE: &str = "eval_eisgan.json";
pub const EVAL_BASELINE_FILE: &str = "eval_baseline.json";
pub const PERTURB_FILE: &str = "perturb_report.json";
pub const SUMMARY_FILE: &str = "report.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

pub fn write_resolved_config(config: &PipelineConfig) -> Result<(), PipelineError> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(RESOLVED_CONFIG_FILE);
    std::fs::write(&path, config.to_toml()).map_err(|e| io_err(&path, e))
}

pub fn summarize(
    study: &Study,
    eisgan: &EvalReport,
    baseline: &EvalReport,
    perturb: &PerturbReport,
    stages: &BTreeMap<u8, EisganStage>,
) -> Summary {
    let mut out = BTreeMap::new();
    for &stage in &study.config.stages {
        let p = study.dataset.partition(stage);
        let mut cells: BTreeMap<String, BTreeMap<EstimationPath, Metrics>> = BTreeMap::new();
        for report in [eisgan, baseline] {
            for (cell, r) in report.stages.get(&stage).into_iter().flatten() {
                cells.entry(cell.clone()).or_default().insert(report.path, r.metrics);
            }
        }
        let art = stages.get(&stage);
        out.insert(
            stage,
            StageSummary {
                train_cells: p.train.clone(),
                test_cells: p.test.clone(),
                selected_latents: art.map(|a| a.selection.selected.clone()).unwrap_or_default(),
                flipped: art.map(|a| a.selection.flipped.clone()).unwrap_or_default(),
                gan_final_losses: art.and_then(|a| a.train_report.epochs.last().copied()),
                cells,
                robustness: perturb.robustness.iter().filter(|f| f.stage == stage).cloned().collect(),
            },
        );
    }
    Summary {
        seed: study.config.seed,
        stages: out,
    }
}

/// Runs the full study and writes every artifact under `config.out_dir`.
pub fn run_all(config: PipelineConfig) -> Result<RunOutput, PipelineError> {
    let study = Study::open(config)?;
    write_resolved_config(&study.config)?;
    let mut eisgan_report = EvalReport {
        path: EstimationPath::Eisgan,
        stages: BTreeMap::new(),
    };
    let mut baseline_report = EvalReport {
        path: EstimationPath::Baseline,
        stages: BTreeMap::new(),
    };
    let mut perturb = PerturbReport::default();
    let mut stages = BTreeMap::new();
    for &stage in &study.config.stages {
        let sd = study.stage_data(stage)?;
        let (art, cells) = study.run_eisgan_stage(&sd)?;
        let (base, base_cells) = study.run_baseline_stage(&sd)?;
        let (entries, flags) = study.perturb_stage(&sd, &art.checkpoint, &art.gpr, &base)?;
        perturb.entries.extend(entries);
        perturb.robustness.extend(flags);
        output::write_stage_models(&study, stage, &art, &base)?;
        eisgan_report.stages.insert(stage, cells);
        baseline_report.stages.insert(stage, base_cells);
        stages.insert(stage, art);
    }
    let summary = summarize(&study, &eisgan_report, &baseline_report, &perturb, &stages);
    let out = study.out_dir();
    write_json(&out.join(EVAL_EISGAN_FILE), &eisgan_report)?;
    write_json(&out.join(EVAL_BASELINE_FILE), &baseline_report)?;
    write_json(&out.join(PERTURB_FILE), &perturb)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    emit_plot_data(&study, &eisgan_report, &baseline_report, &perturb, &stages)?;
    Ok(RunOutput {
        eisgan: eisgan_report,
        baseline: baseline_report,
        perturb,
        summary,
        stages,
    })
}

pub fn load_gpr(path: &Path) -> Result<GprModel, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: GprFile = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    Ok(GprModel::from_file(file)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}
