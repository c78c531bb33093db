//! Flat experiment configuration: a TOML file of top-level keys, then
//! `--set key=value` overrides, then the dedicated flags.

use std::fs;
use std::path::{Path, PathBuf};

use actf_core::data::{SyntheticTask, TaskKind};
use actf_core::rng::derive_seed;
use actf_core::train::TrainConfig;
use actf_core::{ModelConfig, SketchMode, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub out: PathBuf,

    pub task: TaskKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,

    pub hidden_channels: usize,
    pub c_out: usize,
    pub bilinear_dim: usize,
    pub reduction_widths: Option<[usize; 2]>,
    pub variant: Variant,
    pub sketch_mode: SketchMode,
    pub frame_norm: bool,

    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub decay_all: bool,
    pub data_init_samples: usize,

    /// Variants trained by `ablate`.
    pub ablate_variants: Vec<Variant>,

    pub bench_c: usize,
    pub bench_dims: Vec<usize>,
    pub bench_trials: usize,

    /// Consecutive seeds covered by the primitive audit.
    pub gradcheck_seeds: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            task: TaskKind::Direction4,
            frames: 8,
            height: 32,
            width: 32,
            train_per_class: 50,
            test_per_class: 25,
            noise: 0.05,
            hidden_channels: 4,
            c_out: 8,
            bilinear_dim: 64,
            reduction_widths: None,
            variant: Variant::Full,
            sketch_mode: SketchMode::Pair,
            frame_norm: true,
            lr0: 0.005,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_factor: 0.1,
            decay_epochs: vec![6],
            epochs: 8,
            batch_size: 8,
            decay_all: false,
            data_init_samples: 64,
            ablate_variants: Variant::ALL.to_vec(),
            bench_c: 64,
            bench_dims: vec![256, 1024, 2048, 4096],
            bench_trials: 100,
            gradcheck_seeds: 20,
        }
    }
}

/// Seeds derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub train_data: u64,
    pub test_data: u64,
    pub sketch: u64,
    pub init: u64,
    pub shuffle: u64,
    pub bench: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl ExperimentConfig {
    pub fn seeds(&self) -> Seeds {
        let s = |k| derive_seed(self.seed, k);
        Seeds {
            train_data: s(1),
            test_data: s(2),
            sketch: s(3),
            init: s(4),
            shuffle: s(5),
            bench: s(6),
        }
    }

    pub fn task(&self, split: Split) -> SyntheticTask {
        let seeds = self.seeds();
        let (per_class, seed) = match split {
            Split::Train => (self.train_per_class, seeds.train_data),
            Split::Test => (self.test_per_class, seeds.test_data),
        };
        SyntheticTask {
            kind: self.task,
            frames: self.frames,
            height: self.height,
            width: self.width,
            per_class,
            noise: self.noise,
            seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let seeds = self.seeds();
        ModelConfig {
            frames: self.frames,
            height: self.height,
            width: self.width,
            hidden_channels: self.hidden_channels,
            c_out: self.c_out,
            bilinear_dim: self.bilinear_dim,
            reduction_widths: self.reduction_widths,
            n_classes: self.task.n_classes(),
            variant: self.variant,
            sketch_mode: self.sketch_mode,
            sketch_seed: seeds.sketch,
            init_seed: seeds.init,
            frame_norm: self.frame_norm,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            decay_factor: self.decay_factor,
            decay_epochs: self.decay_epochs.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seeds().shuffle,
            decay_all: self.decay_all,
            data_init_samples: self.data_init_samples,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.task(Split::Train).validate()?;
        self.task(Split::Test).validate()?;
        if self.ablate_variants.is_empty() {
            return Err(CliError::Usage("ablate_variants must not be empty".into()));
        }
        if self.bench_c == 0 || self.bench_trials < 2 {
            return Err(CliError::Usage("bench_c must be positive and bench_trials at least 2".into()));
        }
        if self.bench_dims.is_empty() || self.bench_dims.contains(&0) {
            return Err(CliError::Usage("bench_dims must be a non-empty list of positive sizes".into()));
        }
        if self.gradcheck_seeds == 0 {
            return Err(CliError::Usage("gradcheck_seeds must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            out: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// The effective configuration as TOML, minus `out`, so it can be replayed anywhere.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        table.remove("out");
        toml::to_string(&table).expect("config serializes")
    }
}

/// Builds the effective configuration. Later sources win.
pub fn load(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExperimentConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {o:?} is not KEY=VALUE")))?;
        let key = key.trim();
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        table.insert(key.to_string(), value);
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| CliError::Usage(format!("seed {s} exceeds the TOML integer range")))?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    if let Some(o) = out {
        table.insert("out".into(), toml::Value::String(o.display().to_string()));
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
