//! Report and plot-data files.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::Serialize;

use super::{io_err, EisganStage, EstimationPath, EvalReport, PerturbReport, PipelineError, Study};
use crate::eisgan::{default_sweep_grid, latent_sweep, Checkpoint, Selection};
use crate::eisdata::{save_capacity_csv, save_eis_csv};
use crate::gpr::GprModel;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

struct Csv {
    path: std::path::PathBuf,
    w: csv::Writer<File>,
}

impl Csv {
    fn create(path: &Path, header: &[&str]) -> Result<Self, PipelineError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header).map_err(|e| io_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            w,
        })
    }

    fn row(&mut self, fields: &[String]) -> Result<(), PipelineError> {
        self.w.write_record(fields).map_err(|e| io_err(&self.path, e))
    }

    fn finish(mut self) -> Result<(), PipelineError> {
        self.w.flush().map_err(|e| io_err(&self.path, e))
    }
}

fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

pub const GAN_FILE: &str = "gan.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const SELECTION_FILE: &str = "selection.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const NYQUIST_FILE: &str = "nyquist.csv";

pub fn gpr_file(path: EstimationPath) -> String {
    format!("gpr_{}.json", path.name())
}

/// Writes the synthetic or loaded dataset as the two input CSV files.
pub fn write_dataset(study: &Study, dir: &Path) -> Result<(), PipelineError> {
    let curves: Vec<_> = study.dataset.all_curves().cloned().collect();
    save_eis_csv(&dir.join(EIS_DATA_FILE), &curves)?;
    save_capacity_csv(&dir.join(CAPACITY_DATA_FILE), &study.dataset.capacity_records())?;
    Ok(())
}

pub const EIS_DATA_FILE: &str = "eis.csv";
pub const CAPACITY_DATA_FILE: &str = "capacity.csv";

pub(crate) fn write_stage_models(
    study: &Study,
    stage: u8,
    art: &EisganStage,
    baseline: &GprModel,
) -> Result<(), PipelineError> {
    let dir = study.stage_dir(stage);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let gan = dir.join(GAN_FILE);
    art.checkpoint.save(&gan)?;
    write_json(&dir.join(TRAIN_REPORT_FILE), &art.train_report)?;
    write_json(&dir.join(SELECTION_FILE), &art.selection)?;
    write_json(&dir.join(gpr_file(EstimationPath::Eisgan)), &art.gpr.to_file())?;
    write_json(&dir.join(gpr_file(EstimationPath::Baseline)), &baseline.to_file())?;
    Ok(())
}

/// Nyquist curves of every cell in the stage.
pub fn write_nyquist(study: &Study, stage: u8, path: &Path) -> Result<(), PipelineError> {
    let sd = study.stage_data(stage)?;
    let mut out = Csv::create(path, &["cell_id", "split", "cycle", "freq_hz", "re_z_ohm", "im_z_ohm"])?;
    for c in sd.all_curves() {
        let split = if sd.is_train(&c.cell_id) { "train" } else { "test" };
        for k in 0..c.len() {
            out.row(&[
                c.cell_id.clone(),
                s(split),
                s(c.cycle),
                s(c.freq_hz[k]),
                s(c.re_z_ohm[k]),
                s(c.im_z_ohm[k]),
            ])?;
        }
    }
    out.finish()
}

/// Latent codes of every curve, then the sign-aligned c1/c2 traces.
pub fn write_latents(
    study: &Study,
    stage: u8,
    latents: &[Vec<f64>],
    sel: &Selection,
) -> Result<(), PipelineError> {
    let sd = study.stage_data(stage)?;
    let dir = study.stage_dir(stage);
    let dim = latents.first().map_or(0, Vec::len);
    let mut header = vec![s("cell_id"), s("split"), s("cycle"), s("capacity_mah")];
    header.extend((0..dim).map(|k| format!("latent_{k}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut all = Csv::create(&dir.join("latents.csv"), &header_refs)?;
    let mut traces = Csv::create(
        &dir.join("latent_traces.csv"),
        &["cell_id", "split", "cycle", "capacity_mah", "c1", "c2"],
    )?;
    for (curve, code) in sd.all_curves().zip(latents) {
        let split = if sd.is_train(&curve.cell_id) { "train" } else { "test" };
        let cap = study.dataset.capacity(&curve.cell_id, curve.cycle).unwrap_or(f64::NAN);
        let mut row = vec![curve.cell_id.clone(), s(split), s(curve.cycle), s(cap)];
        row.extend(code.iter().map(s));
        all.row(&row)?;
        let mut row = vec![curve.cell_id.clone(), s(split), s(curve.cycle), s(cap)];
        for k in 0..2 {
            row.push(match (sel.selected.get(k), sel.flipped.get(k)) {
                (Some(&d), Some(&flip)) => s(if flip { -code[d] } else { code[d] }),
                _ => String::new(),
            });
        }
        traces.row(&row)?;
    }
    all.finish()?;
    traces.finish()
}

/// Sweeps of the selected latents over nine values in [-2, 2].
pub fn write_sweep(
    study: &Study,
    stage: u8,
    checkpoint: &Checkpoint,
    selection: &Selection,
    path: &Path,
) -> Result<(), PipelineError> {
    let grid = default_sweep_grid();
    let freqs = &study.stage_data(stage)?.train[0].freq_hz;
    let mut out = Csv::create(path, &["latent", "dim", "value", "freq_hz", "re_z_ohm", "im_z_ohm"])?;
    for (k, &dim) in selection.selected.iter().enumerate() {
        let curves = latent_sweep(&checkpoint.networks, dim, &grid, &checkpoint.norm)?;
        for (v, curve) in grid.iter().zip(&curves) {
            let t = curve.shape()[1];
            let (re, im) = curve.data().split_at(t);
            for i in 0..t {
                out.row(&[format!("c{}", k + 1), s(dim), s(v), s(freqs[i]), s(re[i]), s(im[i])])?;
            }
        }
    }
    out.finish()
}

/// Scatter of predicted against measured capacity plus one band file per
/// test cell.
pub fn write_predictions(study: &Study, stage: u8, report: &EvalReport) -> Result<(), PipelineError> {
    let dir = study.stage_dir(stage);
    let name = report.path.name();
    let mut scatter = Csv::create(
        &dir.join(format!("scatter_{name}.csv")),
        &["cell_id", "cycle", "measured", "predicted"],
    )?;
    for (cell, r) in report.stages.get(&stage).into_iter().flatten() {
        let mut band = Csv::create(
            &dir.join(format!("band_{name}_{cell}.csv")),
            &["cycle", "measured", "mean", "lower", "upper"],
        )?;
        for i in 0..r.cycles.len() {
            scatter.row(&[cell.clone(), s(r.cycles[i]), s(r.measured[i]), s(r.mean[i])])?;
            band.row(&[
                s(r.cycles[i]),
                s(r.measured[i]),
                s(r.mean[i]),
                s(r.mean[i] - r.std[i]),
                s(r.mean[i] + r.std[i]),
            ])?;
        }
        band.finish()?;
    }
    scatter.finish()
}

pub fn write_perturbation(study: &Study, stage: u8, report: &PerturbReport) -> Result<(), PipelineError> {
    let dir = study.stage_dir(stage);
    let mut samples = Csv::create(
        &dir.join("perturbation_samples.csv"),
        &["path", "sigma", "sample", "deviation_mah"],
    )?;
    let mut stats = Csv::create(
        &dir.join("perturbation_stats.csv"),
        &[
            "path",
            "sigma",
            "n",
            "median",
            "q1",
            "q3",
            "whisker_low",
            "whisker_high",
            "n_outliers",
            "median_abs_deviation",
        ],
    )?;
    for e in report.entries.iter().filter(|e| e.stage == stage) {
        for (i, d) in e.deviations.iter().enumerate() {
            samples.row(&[s(e.path.name()), s(e.sigma), s(i), s(d)])?;
        }
        let b = &e.stats;
        stats.row(&[
            s(e.path.name()),
            s(e.sigma),
            s(b.n),
            s(b.median),
            s(b.q1),
            s(b.q3),
            s(b.whisker_low),
            s(b.whisker_high),
            s(b.outliers.len()),
            s(e.median_abs_deviation),
        ])?;
    }
    samples.finish()?;
    stats.finish()
}

/// Writes all plot-data CSVs for every stage that has results.
pub fn emit_plot_data(
    study: &Study,
    eisgan: &EvalReport,
    baseline: &EvalReport,
    perturb: &PerturbReport,
    stages: &BTreeMap<u8, EisganStage>,
) -> Result<(), PipelineError> {
    for &stage in &study.config.stages {
        let dir = study.stage_dir(stage);
        write_nyquist(study, stage, &dir.join(NYQUIST_FILE))?;
        if let Some(art) = stages.get(&stage) {
            write_latents(study, stage, &art.latents, &art.selection)?;
            write_sweep(study, stage, &art.checkpoint, &art.selection, &dir.join(SWEEP_FILE))?;
        }
        write_predictions(study, stage, eisgan)?;
        write_predictions(study, stage, baseline)?;
        write_perturbation(study, stage, perturb)?;
    }
    Ok(())
}
