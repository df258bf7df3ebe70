//! Run configuration: a TOML file layered over a named preset, with
//! command-line flags applied last.
//!
//! ```toml
//! preset = "desk-occupancy"
//! out = "runs/occupancy"
//!
//! [data]
//! source = "synthetic"      # or "csv", with `path`
//! task = "occupancy"        # or "identity"
//! n_houses = 5
//!
//! [train]
//! lambda = 1.0
//! releaser_hidden = [32, 32]
//!
//! [sweep]
//! lambdas = [0.0, 0.5, 1.0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diprivacy::data::{CsvSchema, LabelSemantics, SplitSpec, SyntheticParams, SyntheticTask};
use diprivacy::harness::{ObservationMode, Preset, SyntheticSetup, TrainConfig, Window, WelchParams, PRESET_NAMES};
use diprivacy::optim::ClipMode;
use diprivacy::privmech::PrivacyPenalty;

use crate::CliError;

pub const DEFAULT_PRESET: &str = "desk-occupancy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Occupancy,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipKind {
    Value,
    GlobalNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    Consumption,
    ConsumptionAndLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    Entropy,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_houses: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub days_per_house: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_stay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub daily_amplitude: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_fraction_of_train: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversary_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_mode: Option<ClipKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub releaser_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversary_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attacker_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attacker_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attacker_patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub releaser_hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversary_hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attacker_hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub select_best: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowKind>,
}

/// The file format. Every key is optional; missing keys fall back to the
/// preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub psd: PsdSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub out: Option<PathBuf>,
    /// Training seed; for `gen-data` the generator seed.
    pub seed: Option<u64>,
    pub lambdas: Option<Vec<f64>>,
    pub workers: Option<usize>,
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSetup),
    Csv { path: PathBuf, schema: CsvSchema },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdSettings {
    pub bundle: Option<PathBuf>,
    pub realizations: usize,
    pub welch: WelchParams,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub out: PathBuf,
    pub data: DataSource,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub lambdas: Vec<f64>,
    pub workers: usize,
    pub psd: PsdSettings,
}

fn pick<T>(file: Option<T>, base: T) -> T {
    file.unwrap_or(base)
}

fn pair(v: Option<[f64; 2]>, base: (f64, f64)) -> (f64, f64) {
    v.map_or(base, |[a, b]| (a, b))
}

impl RunConfig {
    /// Preset, then file, then flags.
    pub fn resolve(file: &FileConfig, flags: &Overrides, gen_data: bool) -> Result<Self, CliError> {
        let preset_name = flags
            .preset
            .clone()
            .or_else(|| file.preset.clone())
            .unwrap_or_else(|| DEFAULT_PRESET.to_string());
        let preset = Preset::by_name(&preset_name).ok_or_else(|| {
            CliError::Config(format!("unknown preset `{preset_name}`, expected one of {}", PRESET_NAMES.join(", ")))
        })?;
        let out = flags
            .out
            .clone()
            .or_else(|| file.out.clone())
            .ok_or_else(|| CliError::Config("no output directory: pass --out or set `out` in the config".into()))?;

        let d = &file.data;
        let task = match d.task {
            Some(TaskKind::Occupancy) => SyntheticTask::Occupancy,
            Some(TaskKind::Identity) => SyntheticTask::Identity,
            None => preset.data.params.task,
        };
        let seq_len = pick(d.seq_len, preset.data.params.seq_len);
        let data = match d.source.unwrap_or(SourceKind::Synthetic) {
            SourceKind::Synthetic => {
                if d.path.is_some() {
                    return Err(CliError::Config("`data.path` is only used with source = \"csv\"".into()));
                }
                let p = &preset.data.params;
                let params = SyntheticParams {
                    task,
                    p_stay: pick(d.p_stay, p.p_stay),
                    initial_state: d.initial_state.or(p.initial_state),
                    base_range: pair(d.base_range, p.base_range),
                    gain_range: pair(d.gain_range, p.gain_range),
                    noise_sigma: pick(d.noise_sigma, p.noise_sigma),
                    daily_amplitude: pick(d.daily_amplitude, p.daily_amplitude),
                    seq_len,
                };
                params.validate().map_err(|e| CliError::Config(e.to_string()))?;
                let seed = match (gen_data, flags.seed) {
                    (true, Some(s)) => s,
                    _ => pick(d.seed, preset.data.seed),
                };
                DataSource::Synthetic(SyntheticSetup {
                    n_houses: pick(d.n_houses, preset.data.n_houses),
                    days_per_house: pick(d.days_per_house, preset.data.days_per_house),
                    params,
                    seed,
                })
            }
            SourceKind::Csv => {
                let generator_only = [
                    d.n_houses.is_some(),
                    d.days_per_house.is_some(),
                    d.seed.is_some(),
                    d.p_stay.is_some(),
                    d.initial_state.is_some(),
                    d.base_range.is_some(),
                    d.gain_range.is_some(),
                    d.noise_sigma.is_some(),
                    d.daily_amplitude.is_some(),
                ];
                if generator_only.into_iter().any(|b| b) {
                    return Err(CliError::Config("generator keys in [data] conflict with source = \"csv\"".into()));
                }
                let path = d
                    .path
                    .clone()
                    .ok_or_else(|| CliError::Config("source = \"csv\" needs `data.path`".into()))?;
                let semantics = match task {
                    SyntheticTask::Occupancy => LabelSemantics::PerStep,
                    SyntheticTask::Identity => LabelSemantics::PerSequence,
                };
                DataSource::Csv {
                    path,
                    schema: CsvSchema { semantics, seq_len },
                }
            }
        };

        let s = &file.split;
        let split = SplitSpec {
            train_ratio: pick(s.train_ratio, preset.split.train_ratio),
            val_fraction_of_train: pick(s.val_fraction_of_train, preset.split.val_fraction_of_train),
            seed: pick(s.seed, preset.split.seed),
        };

        let t = &file.train;
        let b = preset.train;
        let mut train = TrainConfig {
            batch_size: pick(t.batch_size, b.batch_size),
            adversary_steps: pick(t.adversary_steps, b.adversary_steps),
            clip: pick(t.clip, b.clip),
            clip_mode: t.clip_mode.map_or(b.clip_mode, |c| match c {
                ClipKind::Value => ClipMode::Value,
                ClipKind::GlobalNorm => ClipMode::GlobalNorm,
            }),
            beta: pick(t.beta, b.beta),
            lambda: pick(t.lambda, b.lambda),
            noise_dim: pick(t.noise_dim, b.noise_dim),
            epochs: pick(t.epochs, b.epochs),
            releaser_lr: pick(t.releaser_lr, b.releaser_lr),
            adversary_lr: pick(t.adversary_lr, b.adversary_lr),
            attacker_lr: pick(t.attacker_lr, b.attacker_lr),
            lr_decay: pick(t.lr_decay, b.lr_decay),
            attacker_epochs: pick(t.attacker_epochs, b.attacker_epochs),
            attacker_patience: pick(t.attacker_patience, b.attacker_patience),
            releaser_hidden: t.releaser_hidden.clone().unwrap_or(b.releaser_hidden),
            adversary_hidden: t.adversary_hidden.clone().unwrap_or(b.adversary_hidden),
            attacker_hidden: t.attacker_hidden.clone().unwrap_or(b.attacker_hidden),
            observation: t.observation.map_or(b.observation, |o| match o {
                ObservationKind::Consumption => ObservationMode::Consumption,
                ObservationKind::ConsumptionAndLabels => ObservationMode::ConsumptionAndLabels,
            }),
            penalty: t.penalty.map_or(b.penalty, |p| match p {
                PenaltyKind::Entropy => PrivacyPenalty::Entropy,
                PenaltyKind::CrossEntropy => PrivacyPenalty::CrossEntropy,
            }),
            select_best: pick(t.select_best, b.select_best),
            seed: pick(t.seed, b.seed),
        };
        if !gen_data {
            if let Some(seed) = flags.seed {
                train.seed = seed;
            }
        }
        let lambdas = flags
            .lambdas
            .clone()
            .or_else(|| file.sweep.lambdas.clone())
            .unwrap_or(preset.lambdas);
        if lambdas.is_empty() {
            return Err(CliError::Config("the λ list is empty".into()));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(CliError::Config(format!("λ must be non-negative, got {bad}")));
        }
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let workers = flags.workers.or(file.sweep.workers).unwrap_or(1);
        if workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }

        let p = &file.psd;
        let default_welch = WelchParams::default();
        let psd = PsdSettings {
            bundle: flags.bundle.clone().or_else(|| p.bundle.clone()),
            realizations: pick(p.realizations, 10),
            welch: WelchParams {
                segment_len: pick(p.segment_len, default_welch.segment_len),
                overlap: pick(p.overlap, default_welch.overlap),
                window: p.window.map_or(default_welch.window, |w| match w {
                    WindowKind::Hann => Window::Hann,
                    WindowKind::Rectangular => Window::Rectangular,
                }),
            },
        };
        if psd.realizations == 0 {
            return Err(CliError::Config("psd.realizations must be at least 1".into()));
        }
        if psd.welch.segment_len < 2 || !(0.0..1.0).contains(&psd.welch.overlap) {
            return Err(CliError::Config(format!(
                "Welch segment must have ≥ 2 samples and overlap in [0, 1), got {:?}",
                psd.welch
            )));
        }

        Ok(RunConfig {
            preset: preset.name.to_string(),
            out,
            data,
            split,
            train,
            lambdas,
            workers,
            psd,
        })
    }

    /// The resolved values in the file format, so that loading the echo
    /// reproduces this configuration.
    pub fn to_file_config(&self) -> FileConfig {
        let data = match &self.data {
            DataSource::Synthetic(s) => DataSection {
                source: Some(SourceKind::Synthetic),
                path: None,
                task: Some(match s.params.task {
                    SyntheticTask::Occupancy => TaskKind::Occupancy,
                    SyntheticTask::Identity => TaskKind::Identity,
                }),
                seq_len: Some(s.params.seq_len),
                n_houses: Some(s.n_houses),
                days_per_house: Some(s.days_per_house),
                seed: Some(s.seed),
                p_stay: Some(s.params.p_stay),
                initial_state: s.params.initial_state,
                base_range: Some([s.params.base_range.0, s.params.base_range.1]),
                gain_range: Some([s.params.gain_range.0, s.params.gain_range.1]),
                noise_sigma: Some(s.params.noise_sigma),
                daily_amplitude: Some(s.params.daily_amplitude),
            },
            DataSource::Csv { path, schema } => DataSection {
                source: Some(SourceKind::Csv),
                path: Some(path.clone()),
                task: Some(match schema.semantics {
                    LabelSemantics::PerStep => TaskKind::Occupancy,
                    LabelSemantics::PerSequence => TaskKind::Identity,
                }),
                seq_len: Some(schema.seq_len),
                ..DataSection::default()
            },
        };
        let t = &self.train;
        FileConfig {
            preset: Some(self.preset.clone()),
            out: Some(self.out.clone()),
            data,
            split: SplitSection {
                train_ratio: Some(self.split.train_ratio),
                val_fraction_of_train: Some(self.split.val_fraction_of_train),
                seed: Some(self.split.seed),
            },
            train: TrainSection {
                batch_size: Some(t.batch_size),
                adversary_steps: Some(t.adversary_steps),
                clip: Some(t.clip),
                clip_mode: Some(match t.clip_mode {
                    ClipMode::Value => ClipKind::Value,
                    ClipMode::GlobalNorm => ClipKind::GlobalNorm,
                }),
                beta: Some(t.beta),
                lambda: Some(t.lambda),
                noise_dim: Some(t.noise_dim),
                epochs: Some(t.epochs),
                releaser_lr: Some(t.releaser_lr),
                adversary_lr: Some(t.adversary_lr),
                attacker_lr: Some(t.attacker_lr),
                lr_decay: Some(t.lr_decay),
                attacker_epochs: Some(t.attacker_epochs),
                attacker_patience: Some(t.attacker_patience),
                releaser_hidden: Some(t.releaser_hidden.clone()),
                adversary_hidden: Some(t.adversary_hidden.clone()),
                attacker_hidden: Some(t.attacker_hidden.clone()),
                observation: Some(match t.observation {
                    ObservationMode::Consumption => ObservationKind::Consumption,
                    ObservationMode::ConsumptionAndLabels => ObservationKind::ConsumptionAndLabels,
                }),
                penalty: Some(match t.penalty {
                    PrivacyPenalty::Entropy => PenaltyKind::Entropy,
                    PrivacyPenalty::CrossEntropy => PenaltyKind::CrossEntropy,
                }),
                select_best: Some(t.select_best),
                seed: Some(t.seed),
            },
            sweep: SweepSection {
                lambdas: Some(self.lambdas.clone()),
                workers: Some(self.workers),
            },
            psd: PsdSection {
                bundle: self.psd.bundle.clone(),
                realizations: Some(self.psd.realizations),
                segment_len: Some(self.psd.welch.segment_len),
                overlap: Some(self.psd.welch.overlap),
                window: Some(match self.psd.welch.window {
                    Window::Hann => WindowKind::Hann,
                    Window::Rectangular => WindowKind::Rectangular,
                }),
            },
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(&self.to_file_config()).map_err(|e| CliError::Config(e.to_string()))
    }
}
