use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crfwi_cli::config::parse;
use crfwi_cli::RunManifest;
use crfwi_core::model::io::{load_gather, load_velocity_grid, save_gather};
use crfwi_core::ShotGather;
use crfwi_core::ntk::{decay_comparison, sensitivity_jacobian, JacobianSampling, DECAY_MARGIN, DECAY_ORDER};
use crfwi_core::invert::frozen_config;
use crfwi_core::presets::trace_setup;
use crfwi_core::repr::ReprSpec;
use tempfile::TempDir;

fn crfwi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crfwi")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> RunManifest {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = crfwi(&args);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

const SMALL_2D: &str = r#"
seed = 5

[model]
kind = "two-layer"
nz = 16
nx = 20
spacing = 10.0
interface = 8
v_top = 1500.0
v_bottom = 1900.0

[acquisition]
pml_width = 6
n_shots = 2
freq = 15.0
dt = 0.0015
nt = 200

[initial]
kind = "smooth"
sigma = 2.0

[invert]
repr = "grid"
epochs = 3
metrics_every = 2
"#;

#[test]
fn layered_synth_is_deterministic_and_fully_listed() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = preset("layered-1d.toml");
    let ma = run_ok("synth", &cfg, &a, &["--seed", "11"]);
    let mb = run_ok("synth", &cfg, &b, &["--seed", "11"]);
    assert_eq!(ma.seed, 11);
    assert_eq!(ma.command, "synth");
    assert_eq!(ma.artifacts, mb.artifacts);
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(sorted(ma.artifacts.clone()), listing(&a));
    for f in ma.artifacts.iter().filter(|f| *f != "manifest.json") {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let truth = load_velocity_grid(a.join("truth.vgrd")).unwrap();
    assert_eq!((truth.nz(), truth.nx()), (140, 1));
    assert_eq!((truth.get(20, 0), truth.get(119, 0)), (1500.0, 2000.0));
    let g = load_gather(a.join("shot_000.sgth")).unwrap();
    assert_eq!((g.n_receivers(), g.nt()), (1, 600));
    assert!(g.sum_squares() > 0.0);
    assert!(!ma.artifacts.iter().any(|f| f.ends_with(".png")));
}

#[test]
fn dry_run_prints_the_plan_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("never");
    let cfg = write_config(tmp.path(), SMALL_2D);
    for cmd in ["synth", "invert"] {
        let o = crfwi(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dry-run"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let plan: RunManifest = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(plan.command, cmd);
        assert_eq!(plan.seed, 5);
        assert!(plan.wall_time_s.is_none());
        assert_eq!(plan.artifacts.last().map(String::as_str), Some("manifest.json"));
        assert!(!out.exists());
    }
    assert_eq!(listing(tmp.path()), ["run.toml"]);
}

#[test]
fn plan_matches_what_a_run_writes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("inv");
    let cfg = write_config(tmp.path(), SMALL_2D);
    let o = crfwi(&["invert", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dry-run"]);
    let plan: RunManifest = serde_json::from_slice(&o.stdout).unwrap();
    let done = run_ok("invert", &cfg, &out, &[]);
    assert_eq!(plan.artifacts, done.artifacts);
    assert_eq!(plan.config_hash, done.config_hash);
    assert_eq!(sorted(done.artifacts.clone()), listing(&out));
    // epochs 3, metrics every 2: snapshots at 0, 2 and the final model
    for e in [0, 2, 3] {
        assert!(done.artifacts.contains(&format!("snapshot_{e:05}.vgrd")));
    }
    let csv = fs::read_to_string(out.join("misfit.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn zero_epochs_gives_one_misfit_row_and_reruns_match() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &SMALL_2D.replace("epochs = 3", "epochs = 0"));
    let a = tmp.path().join("a");
    let m = run_ok("invert", &cfg, &a, &[]);
    let csv = fs::read_to_string(a.join("misfit.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2, "{csv}");
    assert!(rows[1].starts_with("0,"));
    assert!(m.artifacts.contains(&"snapshot_00000.vgrd".to_string()));
    let initial = load_velocity_grid(a.join("snapshot_00000.vgrd")).unwrap();
    assert_eq!(initial, load_velocity_grid(a.join("final_model.vgrd")).unwrap());

    // a network method, rerun from the same config and seed
    let cfg = write_config(tmp.path(), &SMALL_2D.replace("repr = \"grid\"", "repr = { kind = \"siren\", width = 16, depth = 2 }"));
    let (b, c) = (tmp.path().join("b"), tmp.path().join("c"));
    let mb = run_ok("invert", &cfg, &b, &[]);
    run_ok("invert", &cfg, &c, &[]);
    for f in mb.artifacts.iter().filter(|f| *f != "manifest.json") {
        assert_eq!(fs::read(b.join(f)).unwrap(), fs::read(c.join(f)).unwrap(), "{f} differs");
    }
    // the seed changes the network's initialisation
    let d = tmp.path().join("d");
    run_ok("invert", &cfg, &d, &["--seed", "6"]);
    assert_ne!(fs::read(b.join("final_model.vgrd")).unwrap(), fs::read(d.join("final_model.vgrd")).unwrap());
}

#[test]
fn invert_reads_observed_data_from_a_synth_run() {
    let tmp = TempDir::new().unwrap();
    let synth = tmp.path().join("synth");
    let cfg = write_config(tmp.path(), SMALL_2D);
    run_ok("synth", &cfg, &synth, &[]);
    let from_disk = format!("{SMALL_2D}\n[data]\nobserved_dir = {:?}\n", synth.to_str().unwrap());
    let cfg2 = tmp.path().join("disk.toml");
    fs::write(&cfg2, from_disk).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("invert", &cfg, &a, &[]);
    run_ok("invert", &cfg2, &b, &[]);
    // gathers are stored in single precision
    let misfits = |d: &Path| -> Vec<f64> {
        let csv = fs::read_to_string(d.join("misfit.csv")).unwrap();
        csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
    };
    let (ma, mb) = (misfits(&a), misfits(&b));
    assert_eq!(ma.len(), mb.len());
    for (x, y) in ma.iter().zip(&mb) {
        assert!((x - y).abs() <= 1e-4 * x.abs(), "{x} vs {y}");
    }

    fs::remove_file(synth.join("shot_001.sgth")).unwrap();
    let o = crfwi(&["invert", "--config", cfg2.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shot_001.sgth"));
}

#[test]
fn config_errors_exit_2_with_key_context() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let cases = [
        (SMALL_2D.replace("n_shots = 2", "n_shots = 2\nn_shot = 3"), "n_shot"),
        (SMALL_2D.replace("nz = 16", "nz = -16"), "model"),
        (format!("{SMALL_2D}\nextra = 1\n"), "extra"),
        (SMALL_2D.replace("[initial]", "[initial\n"), "line"),
        (SMALL_2D.replace("repr = \"grid\"", "repr = \"transformer\""), "transformer"),
        (SMALL_2D.replace("dt = 0.0015", "dt = 0.01"), "CFL"),
    ];
    for (text, needle) in cases {
        let cfg = write_config(tmp.path(), &text);
        let o = crfwi(&["invert", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(2), "{needle}: {err}");
        assert!(err.contains(needle), "expected {needle:?} in {err}");
        assert!(!out.exists());
    }
    let o = crfwi(&["synth", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_observed_data_is_a_format_error() {
    let tmp = TempDir::new().unwrap();
    let synth = tmp.path().join("synth");
    let cfg = write_config(tmp.path(), SMALL_2D);
    run_ok("synth", &cfg, &synth, &[]);
    let shot = synth.join("shot_001.sgth");
    let g = load_gather(&shot).unwrap();
    let mut data = g.data().to_vec();
    data[40] = f64::NAN;
    let bad = ShotGather::new(g.n_receivers(), g.nt(), g.dt(), data).unwrap();
    save_gather(&bad, &shot).unwrap();
    let cfg2 = write_config(tmp.path(), &format!("{SMALL_2D}\n[data]\nobserved_dir = {:?}\n", synth.to_str().unwrap()));
    let o = crfwi(&["invert", "--config", cfg2.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(2), "{err}");
    assert!(err.contains("non-finite"), "{err}");
}

#[test]
fn oversized_ntk_is_refused_with_exit_4() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(preset("marmousi.toml")).unwrap() + "\n[ntk]\n";
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("o");
    for extra in [&["--dry-run"][..], &[]] {
        let mut args = vec!["ntk", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = crfwi(&args);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(4), "{err}");
        assert!(err.contains("needs") && err.contains("limit"), "{err}");
    }
    assert!(!out.exists());
}

const SMALL_NTK: &str = r#"
[ntk]
methods = ["grid", "siren", "hash", "ig", "lowrank"]
sampling = { receiver_stride = 1, time_stride = 10 }

[ntk.stationarity]
widths = [16, 32]
seeds = 3
epochs = 2
train_widths = [32]
train_seeds = 1
"#;

#[test]
fn ntk_writes_five_spectra_and_a_consistent_verdict() {
    let tmp = TempDir::new().unwrap();
    let base = fs::read_to_string(preset("ntk.toml")).unwrap();
    let base = &base[..base.find("[ntk]").unwrap()];
    let cfg = write_config(tmp.path(), &format!("{base}{SMALL_NTK}"));
    let out = tmp.path().join("ntk");
    let m = run_ok("ntk", &cfg, &out, &["--seed", "1"]);
    for label in ["grid", "siren", "hash", "ig", "lowrank"] {
        let csv = fs::read_to_string(out.join(format!("spectrum_{label}.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("index,eigenvalue"));
        assert_eq!(csv.lines().count(), 1 + 100, "{label}");
    }
    assert_eq!(sorted(m.artifacts.clone()), listing(&out));
    assert!(!m.artifacts.iter().any(|f| f.ends_with(".png")));
    for f in ["stationarity_init.csv", "stationarity_seeds.csv", "stationarity_train_w32_s1.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let seeds = fs::read_to_string(out.join("stationarity_seeds.csv")).unwrap();
    assert_eq!(seeds.lines().count(), 1 + 6);
    let train = fs::read_to_string(out.join("stationarity_train_w32_s1.csv")).unwrap();
    assert_eq!(train.lines().count(), 1 + 3);

    // the summary row agrees with the library's verdict on the same kernels
    let s = trace_setup();
    let cfg_frozen = frozen_config(&s.cfg, &s.initial);
    let sampling = JacobianSampling { receiver_stride: 1, time_stride: 10 };
    let j = sensitivity_jacobian(&s.initial, &s.wavelet, &s.geometry, &cfg_frozen, sampling, Some(s.interior)).unwrap();
    let specs: Vec<ReprSpec> = parse(SMALL_NTK, "x").unwrap().config.ntk.unwrap().methods;
    let d = decay_comparison(&j, &s.initial, &specs, 1).unwrap();
    let summary = fs::read_to_string(out.join("decay_summary.csv")).unwrap();
    let last = summary.lines().last().unwrap();
    assert_eq!(last, format!("ordered,{}", d.ordered(&DECAY_ORDER, DECAY_MARGIN)));
    for e in &d.entries {
        let row = summary.lines().find(|l| l.starts_with(&format!("{},", e.label))).unwrap();
        let slope: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!((slope - e.slope).abs() < 1e-6, "{row} vs {}", e.slope);
    }
}

#[test]
fn plots_are_written_only_when_asked() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_2D);
    let out = tmp.path().join("p");
    let m = run_ok("invert", &cfg, &out, &["--plots"]);
    for f in ["convergence.png", "final_model.png"] {
        assert!(m.artifacts.contains(&f.to_string()), "{f}");
        let bytes = fs::read(out.join(f)).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
    assert_eq!(sorted(m.artifacts), listing(&out));
    let s = run_ok("synth", &cfg, &tmp.path().join("s"), &["--plots"]);
    assert!(s.artifacts.contains(&"truth.png".to_string()));
}

#[test]
fn metrics_command_compares_grids() {
    let tmp = TempDir::new().unwrap();
    let synth = tmp.path().join("synth");
    let cfg = write_config(tmp.path(), SMALL_2D);
    run_ok("synth", &cfg, &synth, &[]);
    let text = format!(
        "[metrics]\npredicted = {:?}\ntruth = {:?}\n",
        synth.join("truth.vgrd").to_str().unwrap(),
        synth.join("truth.vgrd").to_str().unwrap()
    );
    let mcfg = tmp.path().join("m.toml");
    fs::write(&mcfg, &text).unwrap();
    let out = tmp.path().join("m");
    run_ok("metrics", &mcfg, &out, &[]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.contains("mse,0\n") && csv.contains("ssim,1"), "{csv}");

    let text = format!(
        "[metrics]\npredicted = {:?}\ntruth = {:?}\nregion = {{ z0 = 0, z1 = 16, x0 = 6, x1 = 26 }}\n",
        synth.join("initial.vgrd").to_str().unwrap(),
        synth.join("truth.vgrd").to_str().unwrap()
    );
    fs::write(&mcfg, &text).unwrap();
    run_ok("metrics", &mcfg, &out, &[]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mse: f64 = csv.lines().find(|l| l.starts_with("mse,")).unwrap()[4..].parse().unwrap();
    assert!(mse > 0.0);
}
