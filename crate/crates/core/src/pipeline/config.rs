use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ecmoracle::SynthConfig;
use crate::eisdata::{stage_tag, Partition};
use crate::eisgan::GanConfig;
use crate::gpr::{FitOptions, Hyperparams};

/// Where spectra and capacities come from. Without CSV paths the synthetic
/// generator is used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub eis_csv: Option<PathBuf>,
    pub capacity_csv: Option<PathBuf>,
    /// Training cells; the synthetic generator fills these in when empty.
    pub train_cells: Vec<String>,
    pub test_cells: Vec<String>,
    /// Per-stage partition overrides keyed by stage number.
    pub stage_partitions: BTreeMap<String, Partition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub n_train: usize,
    pub n_test: usize,
    pub n_cycles: u32,
    #[serde(flatten)]
    pub model: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_train: 4,
            n_test: 4,
            n_cycles: 120,
            model: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GprSettings {
    pub restarts: usize,
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    pub init: Hyperparams,
}

impl Default for GprSettings {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            restarts: fit.restarts,
            max_iterations: fit.max_iterations,
            grad_tolerance: fit.grad_tolerance,
            init: Hyperparams::default(),
        }
    }
}

impl GprSettings {
    pub fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            grad_tolerance: self.grad_tolerance,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Noise standard deviations in ohm.
    pub sigmas: Vec<f64>,
    pub samples: usize,
    /// Perturbed cell; the first test cell of the stage when absent.
    pub cell: Option<String>,
    pub cycle: u32,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.001, 0.003, 0.005],
            samples: 100,
            cell: None,
            cycle: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub stages: Vec<u8>,
    pub data: DataConfig,
    pub synth: SynthSection,
    pub gan: GanConfig,
    pub gpr: GprSettings,
    pub perturb: PerturbConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            stages: vec![3, 4, 5, 6, 7],
            data: DataConfig::default(),
            synth: SynthSection::default(),
            gan: GanConfig::default(),
            gpr: GprSettings::default(),
            perturb: PerturbConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub stage: Option<u8>,
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.eis_csv, &mut cfg.data.capacity_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(stage) = o.stage {
            self.stages = vec![stage];
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn uses_synthetic_data(&self) -> bool {
        self.data.eis_csv.is_none() && self.data.capacity_csv.is_none()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        if let Some(s) = self.stages.iter().find(|&&s| stage_tag(s).is_none()) {
            return bad(format!("stage {s} is outside 1..=9"));
        }
        let mut sorted = self.stages.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.stages.len() {
            return bad("stages must not repeat".into());
        }
        if self.data.eis_csv.is_some() != self.data.capacity_csv.is_some() {
            return bad("eis_csv and capacity_csv must be given together".into());
        }
        if !self.uses_synthetic_data() && (self.data.train_cells.is_empty() || self.data.test_cells.is_empty()) {
            return bad("train_cells and test_cells are required for CSV data".into());
        }
        Partition {
            train: self.data.train_cells.clone(),
            test: self.data.test_cells.clone(),
        }
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
        for (key, p) in &self.data.stage_partitions {
            let stage: u8 = key
                .parse()
                .map_err(|_| PipelineError::Config(format!("stage partition key `{key}` is not a stage")))?;
            if stage_tag(stage).is_none() {
                return bad(format!("stage partition {stage} is outside 1..=9"));
            }
            p.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if self.uses_synthetic_data() && (self.synth.n_train == 0 || self.synth.n_test == 0 || self.synth.n_cycles < 3) {
            return bad("synthetic data needs train and test cells and at least 3 cycles".into());
        }
        self.gan.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.gpr.restarts == 0 {
            return bad("gpr.restarts must be at least 1".into());
        }
        if self.perturb.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("perturbation sigmas must be finite and non-negative".into());
        }
        if self.perturb.samples == 0 {
            return bad("perturb.samples must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_and_overrides() {
        let mut cfg = PipelineConfig::from_toml(
            "seed = 5\nstages = [5]\n[gan]\nepochs = 3\n[synth]\nn_cycles = 30\nparam_spread = 0.0\n[data.stage_partitions.7]\ntrain = [\"a\"]\ntest = [\"b\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.gan.epochs, 3);
        assert_eq!(cfg.gan.latent_dim, 9);
        assert_eq!(cfg.synth.model.param_spread, 0.0);
        assert_eq!(cfg.data.stage_partitions["7"].train, vec!["a".to_string()]);
        cfg.apply(&Overrides {
            seed: Some(9),
            stage: Some(3),
            out_dir: None,
        });
        assert_eq!((cfg.seed, cfg.stages.clone()), (9, vec![3]));
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        let cfg = PipelineConfig {
            stages: vec![10],
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.data.train_cells = vec!["a".into()];
        cfg.data.test_cells = vec!["a".into()];
        assert!(cfg.validate().is_err());
    }
}
