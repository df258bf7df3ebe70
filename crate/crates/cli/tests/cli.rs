use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;

use diprivacy::data::{generate_synthetic, split, write_csv, SyntheticParams};
use diprivacy::harness::{read_tradeoff_csv, run_point, write_tradeoff_csv};
use diprivacy::neural::{Gate, HeadKind, LstmLayerParams, OutputHead, StackedNet};
use diprivacy::numkit::{Matrix, SeededRng};
use diprivacy::privmech::{MechanismBundle, Releaser};
use diprivacy_cli::commands::{self, prepare, Summary};
use diprivacy_cli::{run, Cli, CliError, FileConfig, Overrides, RunConfig, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE};

const TINY: &str = r#"
[data]
n_houses = 2
days_per_house = 40

[train]
batch_size = 16
adversary_steps = 1
noise_dim = 1
epochs = 2
attacker_epochs = 2
releaser_hidden = [3]
adversary_hidden = [2]
attacker_hidden = [2]

[psd]
segment_len = 48
realizations = 3
"#;

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, format!("{TINY}\n{extra}")).unwrap();
    path
}

/// Runs a subcommand in-process.
fn cli(args: &[&str]) -> Result<(), CliError> {
    let mut full = vec!["diprivacy"];
    full.extend_from_slice(args);
    run(&Cli::try_parse_from(full).unwrap())
}

fn binary(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_diprivacy"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_writes_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        cli(&["gen-data", "--out", s(out), "--seed", "17"]).unwrap();
    }
    // default preset: 5 houses × 400 days
    let text = fs::read_to_string(a.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 400 * 24);
    assert_eq!(text, fs::read_to_string(b.join("dataset.csv")).unwrap());
    assert!(a.join("dataset.toml").is_file());
    assert!(a.join("effective_config.toml").is_file());

    let small = dir.path().join("small");
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, "[data]\nn_houses = 5\ndays_per_house = 100\n").unwrap();
    cli(&["gen-data", "--config", s(&cfg), "--out", s(&small)]).unwrap();
    let text = fs::read_to_string(small.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 12000);
    // the sidecar records the generator seed and parameters
    let prov = FileConfig::load(&small.join("dataset.toml")).unwrap();
    assert_eq!(prov.data.seed, Some(2024));
    assert_eq!(prov.data.p_stay, Some(0.9));
    assert_eq!(prov.data.n_houses, Some(5));
}

#[test]
fn invalid_generator_is_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[data]\np_stay = 1.5\n").unwrap();
    let out = dir.path().join("out");
    let res = binary(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(EXIT_CONFIG));
    assert!(!out.join("dataset.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let typo = dir.path().join("typo.toml");
    fs::write(&typo, "[train]\nlamda = 1.0\n").unwrap();
    assert_eq!(binary(&["train", "--config", s(&typo), "--out", s(&out)]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(binary(&["train", "--preset", "nope", "--out", s(&out)]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(binary(&["psd", "--out", s(&out)]).status.code(), Some(EXIT_CONFIG));

    let csv = dir.path().join("broken.csv");
    fs::write(&csv, "house_id,timestamp,consumption_kwh,label\n1,2020-01-01T00:00:00,-3,0\n").unwrap();
    let cfg = dir.path().join("csv.toml");
    fs::write(&cfg, format!("[data]\nsource = \"csv\"\npath = \"{}\"\n", s(&csv))).unwrap();
    let res = binary(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));

    let missing = dir.path().join("missing.toml");
    fs::write(&missing, "[data]\nsource = \"csv\"\npath = \"/nonexistent/x.csv\"\n").unwrap();
    assert_eq!(binary(&["train", "--config", s(&missing), "--out", s(&out)]).status.code(), Some(EXIT_CONFIG));

    // a huge learning rate sends the release to infinity within a few updates
    let run_dir = tempfile::tempdir().unwrap();
    let cfg = write_config(run_dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("\nepochs = 2\n", "\nepochs = 2\nreleaser_lr = 1e300\n");
    fs::write(&cfg, text).unwrap();
    let out = run_dir.path().join("div");
    let res = binary(&["train", "--config", s(&cfg), "--out", s(&out), "--lambda", "1"]);
    assert_eq!(res.status.code(), Some(EXIT_DIVERGENCE), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("history.csv").is_file());
    assert!(!out.join("mechanism.txt").exists());
}

#[test]
fn train_then_eval_reproduces_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    cli(&["train", "--config", s(&cfg), "--out", s(&out), "--lambda", "0.5", "--seed", "3"]).unwrap();
    for f in ["mechanism.txt", "history.csv", "summary.toml", "effective_config.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let trained = Summary::load(&out.join("summary.toml")).unwrap();
    assert_eq!((trained.lambda, trained.seed), (0.5, 3));

    // the echoed configuration replays the run
    let echo = FileConfig::load(&out.join("effective_config.toml")).unwrap();
    assert_eq!(echo.train.lambda, Some(0.5));
    assert_eq!(echo.train.seed, Some(3));

    let eval_out = dir.path().join("eval");
    let bundle = out.join("mechanism.txt");
    cli(&[
        "eval", "--config", s(&cfg), "--out", s(&eval_out), "--bundle", s(&bundle), "--lambda", "0.5", "--seed", "3",
    ])
    .unwrap();
    let evaluated = Summary::load(&eval_out.join("eval_summary.toml")).unwrap();
    assert_eq!(evaluated.nrmse.to_bits(), trained.nrmse.to_bits());
    assert_eq!(
        evaluated.attacker_balanced_accuracy_pct.to_bits(),
        trained.attacker_balanced_accuracy_pct.to_bits()
    );
    assert_eq!(evaluated.di_bound_mean.to_bits(), trained.di_bound_mean.to_bits());
    assert_eq!(evaluated.attacker_best_epoch, trained.attacker_best_epoch);

    // a bundle for another alphabet is refused
    let mismatched = dir.path().join("identity.toml");
    fs::write(&mismatched, format!("{TINY}\n").replace("[data]\n", "[data]\ntask = \"identity\"\nn_houses = 3\n").replace("n_houses = 2\n", "")).unwrap();
    let res = binary(&["eval", "--config", s(&mismatched), "--out", s(&eval_out), "--bundle", s(&bundle)]);
    assert_eq!(res.status.code(), Some(EXIT_DATA));
}

#[test]
fn sweep_matches_the_library_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "");
    let out = dir.path().join("sweep");
    cli(&["sweep", "--config", s(&cfg_path), "--out", s(&out), "--lambda", "1"]).unwrap();
    let tradeoff = out.join("tradeoff.csv");
    let first = fs::read(&tradeoff).unwrap();
    assert_eq!(read_tradeoff_csv(first.as_slice()).unwrap().len(), 1);

    // byte-equal to the direct library call
    let file = FileConfig::load(&cfg_path).unwrap();
    let flags = Overrides {
        out: Some(out.clone()),
        ..Overrides::default()
    };
    let cfg = RunConfig::resolve(&file, &flags, false).unwrap();
    let (tr, va, te) = prepare(&cfg, None).unwrap();
    let direct = run_point(&cfg.train.with_lambda(1.0), &tr, &va, &te).unwrap();
    let mut expected = Vec::new();
    write_tradeoff_csv(&[direct.point], &mut expected).unwrap();
    assert_eq!(first, expected);

    // rerun: nothing retrained
    let history = out.join("history").join("lambda_1.csv");
    fs::remove_file(&history).unwrap();
    cli(&["sweep", "--config", s(&cfg_path), "--out", s(&out), "--lambda", "1"]).unwrap();
    assert!(!history.exists());
    assert_eq!(fs::read(&tradeoff).unwrap(), first);

    // extending the list trains only the new value and keeps rows sorted
    cli(&["sweep", "--config", s(&cfg_path), "--out", s(&out), "--lambda", "1,0"]).unwrap();
    let rows = read_tradeoff_csv(fs::read(&tradeoff).unwrap().as_slice()).unwrap();
    assert_eq!(rows.iter().map(|p| p.lambda).collect::<Vec<_>>(), vec![0.0, 1.0]);
    assert_eq!(rows[1], direct.point);
    assert!(!history.exists());
    assert!(out.join("mechanisms").join("lambda_0.txt").is_file());

    // another seed in the same directory is a configuration error
    let err = cli(&["sweep", "--config", s(&cfg_path), "--out", s(&out), "--seed", "8"]).unwrap_err();
    assert!(matches!(err, CliError::Config(_)), "{err}");
}

/// One saturated cell computing `h ≈ 0.01·y`, rescaled by the head.
fn pass_through_releaser() -> Releaser {
    let mut layer = LstmLayerParams::zeros(1, 1);
    layer.bias[(Gate::Forget as usize, 0)] = -30.0;
    layer.bias[(Gate::Input as usize, 0)] = 30.0;
    layer.bias[(Gate::Output as usize, 0)] = 30.0;
    layer.input_weights[(Gate::Candidate as usize, 0)] = 0.01;
    let head = OutputHead {
        weights: Matrix::from_fn(1, 1, |_, _| 100.0),
        bias: Matrix::zeros(1, 1),
        kind: HeadKind::Linear,
    };
    Releaser::from_net(StackedNet::from_parts(vec![layer], head).unwrap(), 1, 0).unwrap()
}

fn csv_config(dir: &Path, csv: &Path) -> PathBuf {
    let path = dir.join("csv.toml");
    let text = TINY.replace("n_houses = 2\ndays_per_house = 40\n", &format!("source = \"csv\"\npath = \"{}\"\n", s(csv)));
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn pass_through_bundle_and_shuffled_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = generate_synthetic(4, 200, &SyntheticParams::default(), 5).unwrap();
    // labels drawn independently of consumption
    let mut rng = SeededRng::new(99);
    for s in &mut ds.samples {
        s.x.iter_mut().for_each(|x| *x = usize::from(rng.uniform() < 0.5));
    }
    let csv = dir.path().join("shuffled.csv");
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    fs::write(&csv, buf).unwrap();
    let cfg_path = csv_config(dir.path(), &csv);
    let cfg_path_text = fs::read_to_string(&cfg_path).unwrap().replace("attacker_epochs = 2", "attacker_epochs = 5");
    fs::write(&cfg_path, cfg_path_text).unwrap();

    let file = FileConfig::load(&cfg_path).unwrap();
    let flags = Overrides {
        out: Some(dir.path().join("eval")),
        ..Overrides::default()
    };
    let cfg = RunConfig::resolve(&file, &flags, false).unwrap();
    let raw = commands::load_dataset(&cfg).unwrap();
    let (tr, _, _) = split(&raw, &cfg.split).unwrap();
    let norm = diprivacy::data::Normalization::fit(&tr).unwrap();
    let bundle = MechanismBundle {
        releaser: pass_through_releaser(),
        alphabet_size: 2,
        norm_min: norm.min,
        norm_max: norm.max,
    };
    let bundle_path = dir.path().join("identity.txt");
    bundle.save(&bundle_path).unwrap();

    let out = dir.path().join("eval");
    cli(&["eval", "--config", s(&cfg_path), "--out", s(&out), "--bundle", s(&bundle_path)]).unwrap();
    let summary = Summary::load(&out.join("eval_summary.toml")).unwrap();
    assert!(summary.nrmse < 1e-3, "pass-through releaser NRMSE {}", summary.nrmse);
    assert!(
        (summary.attacker_balanced_accuracy_pct - 50.0).abs() < 5.0,
        "accuracy on independent labels {}",
        summary.attacker_balanced_accuracy_pct
    );

    // deterministic bundle: one realization or many give the same table
    let one = dir.path().join("psd1");
    let many = dir.path().join("psd10");
    let psd_cfg = dir.path().join("psd.toml");
    let psd_text = fs::read_to_string(&cfg_path).unwrap().replace("segment_len = 48", "segment_len = 192");
    fs::write(&psd_cfg, psd_text.replace("realizations = 3", "realizations = 1")).unwrap();
    cli(&["psd", "--config", s(&psd_cfg), "--out", s(&one), "--bundle", s(&bundle_path)]).unwrap();
    fs::write(&psd_cfg, psd_text.replace("realizations = 3", "realizations = 10")).unwrap();
    cli(&["psd", "--config", s(&psd_cfg), "--out", s(&many), "--bundle", s(&bundle_path)]).unwrap();
    let table = fs::read_to_string(one.join("psd.csv")).unwrap();
    assert_eq!(table, fs::read_to_string(many.join("psd.csv")).unwrap());

    // the planted daily cycle is the strongest input component away from
    // DC; the Hann window spreads the mean over bins 0 and 1
    let rows: Vec<Vec<f64>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(table.lines().next().unwrap(), "frequency_cph,input_psd,error_psd");
    let peak = rows[2..].iter().max_by(|a, b| a[1].total_cmp(&b[1])).unwrap();
    assert!((peak[0] - 1.0 / 24.0).abs() < 1e-12, "input peak at {}", peak[0]);
}
