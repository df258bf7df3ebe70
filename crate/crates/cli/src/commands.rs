//! Subcommand implementations. Every number written here comes straight
//! from a `diprivacy` call; this module only moves data between files and
//! the library.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diprivacy::data::{
    apply_normalization, generate_synthetic, load_csv, split, write_csv, Dataset, Normalization,
};
use diprivacy::harness::{
    assess, error_psd_report, eval_seed, read_tradeoff_csv, run_point, sweep_lambda, train_attacker,
    write_history_csv, write_psd_csv, write_tradeoff_csv, HarnessError, ObservationMode, PointOutcome,
    TradeoffPoint, TrainHistory,
};
use diprivacy::privmech::MechanismBundle;

use crate::config::{DataSection, DataSource, FileConfig, RunConfig};
use crate::{Cli, CliError, Command};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const DATASET_CSV: &str = "dataset.csv";
pub const DATASET_PROVENANCE: &str = "dataset.toml";
pub const BUNDLE: &str = "mechanism.txt";
pub const HISTORY_CSV: &str = "history.csv";
pub const SUMMARY: &str = "summary.toml";
pub const EVAL_SUMMARY: &str = "eval_summary.toml";
pub const TRADEOFF_CSV: &str = "tradeoff.csv";
pub const PSD_CSV: &str = "psd.csv";

/// Test-split metrics written by `train` and `eval`. For `eval`, `lambda`
/// is the configured value; bundles do not record it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub lambda: f64,
    pub seed: u64,
    pub nrmse: f64,
    pub attacker_balanced_accuracy_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequence_accuracy_pct: Option<f64>,
    pub di_bound_mean: f64,
    pub test_sequences: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_epoch: Option<usize>,
    pub attacker_best_epoch: usize,
}

impl Summary {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn line(&self) -> String {
        let seq = self
            .sequence_accuracy_pct
            .map_or(String::new(), |a| format!(" sequence_accuracy={a:.2}%"));
        format!(
            "λ={} nrmse={:.4} attacker_accuracy={:.2}%{seq} di_bound={:.4}",
            self.lambda, self.nrmse, self.attacker_balanced_accuracy_pct, self.di_bound_mean
        )
    }
}

/// Resolves the configuration and dispatches.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let flags = cli.overrides();
    let mut cfg = RunConfig::resolve(&file, &flags, cli.command == Command::GenData)?;
    if cli.command == Command::Train {
        if let Some(l) = &flags.lambdas {
            match l.as_slice() {
                [one] => cfg.train.lambda = *one,
                _ => return Err(CliError::Config("train takes a single --lambda".into())),
            }
        }
    }
    validate_paths(cli.command, &cfg)?;
    match cli.command {
        Command::GenData => cmd_gen_data(&cfg).map(|_| ()),
        Command::Train => cmd_train(&cfg).map(|s| println!("{}", s.line())),
        Command::Sweep => cmd_sweep(&cfg).map(|_| ()),
        Command::Psd => cmd_psd(&cfg).map(|_| ()),
        Command::Eval => cmd_eval(&cfg).map(|s| println!("{}", s.line())),
    }
}

/// Checks inputs exist and the output directory is writable, then echoes
/// the effective configuration there.
pub fn validate_paths(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    match (&cfg.data, command) {
        (DataSource::Csv { .. }, Command::GenData) => {
            return Err(CliError::Config("gen-data needs a synthetic data source".into()));
        }
        (DataSource::Csv { path, .. }, _) if !path.is_file() => {
            return Err(CliError::Config(format!("data file {} does not exist", path.display())));
        }
        _ => {}
    }
    if matches!(command, Command::Psd | Command::Eval) {
        match &cfg.psd.bundle {
            None => return Err(CliError::Config("pass --bundle or set psd.bundle".into())),
            Some(b) if !b.is_file() => {
                return Err(CliError::Config(format!("bundle {} does not exist", b.display())));
            }
            _ => {}
        }
    }
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", cfg.out.display())))?;
    let echo = cfg.to_toml()?;
    fs::write(cfg.out.join(EFFECTIVE_CONFIG), echo)
        .map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", cfg.out.display())))?;
    Ok(())
}

fn write_file(path: &Path, fill: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    let mut out = BufWriter::new(File::create(&tmp)?);
    fill(&mut out)?;
    out.flush()?;
    drop(out);
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(match &cfg.data {
        DataSource::Synthetic(s) => generate_synthetic(s.n_houses, s.days_per_house, &s.params, s.seed)?,
        DataSource::Csv { path, schema } => load_csv(path, schema)?,
    })
}

/// Normalized train / validation / test splits. With `norm` the given
/// constants are applied, otherwise they are fitted on the training split.
pub fn prepare(cfg: &RunConfig, norm: Option<Normalization>) -> Result<(Dataset, Dataset, Dataset), CliError> {
    let ds = load_dataset(cfg)?;
    let (tr, va, te) = split(&ds, &cfg.split)?;
    if tr.is_empty() || va.is_empty() || te.is_empty() {
        return Err(CliError::Data(format!(
            "split of {} sequences leaves an empty part ({} / {} / {})",
            ds.len(),
            tr.len(),
            va.len(),
            te.len()
        )));
    }
    let norm = match norm {
        Some(n) => n,
        None => Normalization::fit(&tr)?,
    };
    Ok((
        apply_normalization(&tr, norm)?,
        apply_normalization(&va, norm)?,
        apply_normalization(&te, norm)?,
    ))
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let DataSource::Synthetic(_) = &cfg.data else {
        return Err(CliError::Config("gen-data needs a synthetic data source".into()));
    };
    let ds = load_dataset(cfg)?;
    let path = cfg.out.join(DATASET_CSV);
    write_file(&path, |w| Ok(write_csv(&ds, w)?))?;
    #[derive(serde::Serialize)]
    struct Provenance {
        data: DataSection,
    }
    let provenance = Provenance {
        data: cfg.to_file_config().data,
    };
    let text = toml::to_string(&provenance).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(cfg.out.join(DATASET_PROVENANCE), text)?;
    log::info!("wrote {} sequences to {}", ds.len(), path.display());
    Ok(path)
}

fn save_history(history: &TrainHistory, path: &Path) -> Result<(), CliError> {
    write_file(path, |w| Ok(write_history_csv(history, w)?))
}

fn bundle_of(outcome: &PointOutcome, train: &Dataset) -> Result<MechanismBundle, CliError> {
    let norm = train
        .normalization
        .ok_or_else(|| CliError::Other("training split is not normalized".into()))?;
    Ok(MechanismBundle {
        releaser: outcome.trained.releaser.clone(),
        alphabet_size: train.alphabet_size,
        norm_min: norm.min,
        norm_max: norm.max,
    })
}

/// Saves what a diverged run produced before failing.
fn keep_partial_history(err: HarnessError, path: &Path) -> CliError {
    if let HarnessError::Divergence { history, .. } = &err {
        match save_history(history, path) {
            Ok(()) => log::warn!("partial history saved to {}", path.display()),
            Err(e) => log::error!("could not save partial history: {e}"),
        }
    }
    err.into()
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Summary, CliError> {
    let (tr, va, te) = prepare(cfg, None)?;
    log::info!(
        "training λ={} on {} / {} / {} sequences",
        cfg.train.lambda,
        tr.len(),
        va.len(),
        te.len()
    );
    let history_path = cfg.out.join(HISTORY_CSV);
    let outcome = run_point(&cfg.train, &tr, &va, &te).map_err(|e| keep_partial_history(e, &history_path))?;
    save_history(&outcome.trained.history, &history_path)?;
    bundle_of(&outcome, &tr)?.save(&cfg.out.join(BUNDLE))?;
    let a = &outcome.assessment;
    let summary = Summary {
        lambda: cfg.train.lambda,
        seed: cfg.train.seed,
        nrmse: a.nrmse,
        attacker_balanced_accuracy_pct: a.balanced_accuracy_pct,
        sequence_accuracy_pct: a.sequence_accuracy_pct,
        di_bound_mean: a.di_bound_mean,
        test_sequences: a.sequences,
        selected_epoch: outcome.trained.history.selected_epoch,
        attacker_best_epoch: outcome.attacker_history.best_epoch,
    };
    write_summary(&summary, &cfg.out.join(SUMMARY))?;
    Ok(summary)
}

fn write_summary(summary: &Summary, path: &Path) -> Result<(), CliError> {
    let text = toml::to_string(summary).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// File-name tag of a λ value.
pub fn lambda_tag(lambda: f64) -> String {
    format!("lambda_{lambda}")
}

/// Trains the λ values not yet in `tradeoff.csv` and rewrites it sorted by
/// λ. Per-point histories and bundles go to `history/` and `mechanisms/`.
/// Failed points are logged and reported through the exit code after the
/// successful ones have been written.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<TradeoffPoint>, CliError> {
    let tradeoff_path = cfg.out.join(TRADEOFF_CSV);
    let mut done: Vec<TradeoffPoint> = if tradeoff_path.is_file() {
        read_tradeoff_csv(File::open(&tradeoff_path)?).map_err(|e| CliError::Data(e.to_string()))?
    } else {
        Vec::new()
    };
    if let Some(p) = done.iter().find(|p| p.seed != cfg.train.seed) {
        return Err(CliError::Config(format!(
            "{} holds results for seed {}, not {}; use another --out",
            tradeoff_path.display(),
            p.seed,
            cfg.train.seed
        )));
    }
    let mut todo: Vec<f64> = Vec::new();
    for &l in &cfg.lambdas {
        let present = done.iter().any(|p| p.lambda.to_bits() == l.to_bits()) || todo.iter().any(|t| t.to_bits() == l.to_bits());
        if !present {
            todo.push(l);
        }
    }
    if todo.is_empty() {
        log::info!("all {} λ values already in {}", cfg.lambdas.len(), tradeoff_path.display());
        return Ok(done);
    }
    let (tr, va, te) = prepare(cfg, None)?;
    log::info!("sweeping λ ∈ {todo:?} with {} worker(s)", cfg.workers);
    let history_dir = cfg.out.join("history");
    let bundle_dir = cfg.out.join("mechanisms");
    fs::create_dir_all(&history_dir)?;
    fs::create_dir_all(&bundle_dir)?;

    let outcomes = sweep_lambda(&cfg.train, &todo, &tr, &va, &te, cfg.workers)?;
    let mut first_failure: Option<CliError> = None;
    for (&lambda, outcome) in todo.iter().zip(outcomes) {
        let history_path = history_dir.join(format!("{}.csv", lambda_tag(lambda)));
        match outcome {
            Ok(o) => {
                save_history(&o.trained.history, &history_path)?;
                bundle_of(&o, &tr)?.save(&bundle_dir.join(format!("{}.txt", lambda_tag(lambda))))?;
                log::info!(
                    "λ={lambda}: nrmse={:.4} attacker_accuracy={:.2}%",
                    o.point.nrmse,
                    o.point.attacker_balanced_accuracy_pct
                );
                done.push(o.point);
            }
            Err(e) => {
                let e = keep_partial_history(e, &history_path);
                log::error!("λ={lambda} failed: {e}");
                first_failure.get_or_insert(e);
            }
        }
    }
    done.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    write_file(&tradeoff_path, |w| Ok(write_tradeoff_csv(&done, w)?))?;
    match first_failure {
        Some(e) => Err(e),
        None => Ok(done),
    }
}

fn load_bundle(cfg: &RunConfig) -> Result<MechanismBundle, CliError> {
    let path = cfg
        .psd
        .bundle
        .as_ref()
        .ok_or_else(|| CliError::Config("pass --bundle or set psd.bundle".into()))?;
    MechanismBundle::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Observation mode a bundle was trained with, checked against the data.
pub fn observation_of(bundle: &MechanismBundle, data: &Dataset) -> Result<ObservationMode, CliError> {
    if bundle.alphabet_size != data.alphabet_size {
        return Err(CliError::Data(format!(
            "bundle was trained on {} classes, data has {}",
            bundle.alphabet_size, data.alphabet_size
        )));
    }
    let dim = bundle.releaser.observation_dim;
    [ObservationMode::Consumption, ObservationMode::ConsumptionAndLabels]
        .into_iter()
        .find(|m| m.dim(data.alphabet_size) == dim)
        .ok_or_else(|| {
            CliError::Data(format!(
                "bundle observes {dim} channels, which fits no observation mode for {} classes",
                data.alphabet_size
            ))
        })
}

fn bundle_norm(bundle: &MechanismBundle) -> Normalization {
    Normalization {
        min: bundle.norm_min,
        max: bundle.norm_max,
    }
}

pub fn cmd_psd(cfg: &RunConfig) -> Result<diprivacy::harness::PsdReport, CliError> {
    let bundle = load_bundle(cfg)?;
    let (_, _, te) = prepare(cfg, Some(bundle_norm(&bundle)))?;
    let observation = observation_of(&bundle, &te)?;
    let report = error_psd_report(
        &bundle.releaser,
        &te,
        observation,
        cfg.psd.realizations,
        &cfg.psd.welch,
        cfg.train.seed,
    )?;
    let path = cfg.out.join(PSD_CSV);
    write_file(&path, |w| Ok(write_psd_csv(&report, w)?))?;
    log::info!(
        "wrote {} ({} houses × {} realizations)",
        path.display(),
        report.houses,
        report.realizations
    );
    Ok(report)
}

/// Fits an attacker against the bundle's releaser with the configured
/// attacker settings and scores the test split.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Summary, CliError> {
    let bundle = load_bundle(cfg)?;
    let (tr, va, te) = prepare(cfg, Some(bundle_norm(&bundle)))?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.observation = observation_of(&bundle, &tr)?;
    let (attacker, history) = train_attacker(&bundle.releaser, &tr, &va, &train_cfg)?;
    let a = assess(&bundle.releaser, &attacker, &te, train_cfg.observation, eval_seed(&train_cfg))?;
    let summary = Summary {
        lambda: cfg.train.lambda,
        seed: cfg.train.seed,
        nrmse: a.nrmse,
        attacker_balanced_accuracy_pct: a.balanced_accuracy_pct,
        sequence_accuracy_pct: a.sequence_accuracy_pct,
        di_bound_mean: a.di_bound_mean,
        test_sequences: a.sequences,
        selected_epoch: None,
        attacker_best_epoch: history.best_epoch,
    };
    write_summary(&summary, &cfg.out.join(EVAL_SUMMARY))?;
    Ok(summary)
}
