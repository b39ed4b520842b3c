//! The four commands. Each one validates everything it can before doing
//! work, so a dry run catches the same configuration errors a real run would.

use std::path::{Path, PathBuf};

use crfwi_core::invert::{frozen_config, run_inversion_with, InversionMethod, InversionProblem, ShotData};
use crfwi_core::model::evaluate_metrics;
use crfwi_core::model::io::{load_gather, load_velocity_grid, write_gather, write_grid};
use crfwi_core::ntk::{
    decay_comparison, jacobian_shape, region_cells, sensitivity_jacobian, stationarity_experiment, JacobianSampling,
    DECAY_MARGIN, DECAY_ORDER, KERNEL_MAX_DIM,
};
use crfwi_core::presets::Setup;
use crfwi_core::solver::simulate_all;
use crfwi_core::{Error as CoreError, ShotGather, VelocityGrid};
use serde::Serialize;

use crate::config::{self, short_label, MetricsConfig, NtkConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{Output, RunManifest, MANIFEST_NAME};
use crate::plots;
use crate::setup::build_setup;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Invert,
    Ntk,
    Metrics,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Invert => "invert",
            Command::Ntk => "ntk",
            Command::Metrics => "metrics",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub command: Command,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub dry_run: bool,
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Dry run: what would be written. Nothing touched the disk.
    Planned(RunManifest),
    Done(RunManifest),
}

pub fn run(args: &RunArgs) -> CliResult<Outcome> {
    let loaded = config::load(&args.config)?;
    let mut cfg = loaded.config;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let manifest = RunManifest::new(args.command.name(), &loaded.hash, cfg.seed);
    let job: Box<dyn Job> = match args.command {
        Command::Synth => Box::new(Synth::prepare(&cfg)?),
        Command::Invert => Box::new(Invert::prepare(&cfg)?),
        Command::Ntk => Box::new(Ntk::prepare(&cfg)?),
        Command::Metrics => Box::new(Metrics::prepare(&cfg)?),
    };
    if args.dry_run {
        let mut plan = manifest;
        plan.artifacts = job.plan(args.plots);
        plan.artifacts.push(MANIFEST_NAME.into());
        return Ok(Outcome::Planned(plan));
    }
    let mut out = Output::create(&args.out, manifest)?;
    job.execute(&mut out, args.plots)?;
    Ok(Outcome::Done(out.finish()?))
}

trait Job {
    fn plan(&self, plots: bool) -> Vec<String>;
    fn execute(&self, out: &mut Output, plots: bool) -> CliResult<()>;
}

fn shot_name(i: usize) -> String {
    format!("shot_{i:03}.sgth")
}

fn write_grid_file(out: &mut Output, name: &str, grid: &VelocityGrid) -> CliResult<()> {
    out.write_with(name, |mut w| write_grid(&mut w, grid))
}

/// Draw into a temporary PNG and keep it only if drawing succeeded.
fn plot(out: &mut Output, name: &str, draw: impl FnOnce(&Path) -> plots::PlotResult) {
    let result = out.temp_path("png").map_err(|e| e.to_string()).and_then(|tmp| {
        draw(&tmp)?;
        out.persist_path(tmp, name).map_err(|e| e.to_string())
    });
    if let Err(e) = result {
        log::warn!("plot {name} skipped: {e}");
    }
}

#[derive(Serialize)]
struct SetupSummary<'a> {
    geometry: &'a crfwi_core::AcquisitionGeometry,
    solver: &'a crfwi_core::SolverConfig,
    interior: crfwi_core::model::Region,
    nz: usize,
    nx: usize,
    spacing: (f64, f64),
}

fn setup_json(s: &Setup) -> String {
    let summary = SetupSummary {
        geometry: &s.geometry,
        solver: &s.cfg,
        interior: s.interior,
        nz: s.truth.nz(),
        nx: s.truth.nx(),
        spacing: (s.truth.dz(), s.truth.dx()),
    };
    serde_json::to_string_pretty(&summary).expect("setup serialises") + "\n"
}

// synth -----------------------------------------------------------------

struct Synth {
    setup: Setup,
}

impl Synth {
    fn prepare(cfg: &RunConfig) -> CliResult<Self> {
        Ok(Self { setup: build_setup(cfg)? })
    }
}

impl Job for Synth {
    fn plan(&self, plots: bool) -> Vec<String> {
        let mut a = vec!["setup.json".to_string(), "truth.vgrd".into(), "initial.vgrd".into()];
        a.extend((0..self.setup.geometry.n_shots()).map(shot_name));
        if plots {
            a.extend(["truth.png".into(), "initial.png".into()]);
        }
        a
    }

    fn execute(&self, out: &mut Output, plots: bool) -> CliResult<()> {
        let s = &self.setup;
        log::info!("simulating {} shots on a {}x{} grid", s.geometry.n_shots(), s.truth.nz(), s.truth.nx());
        let gathers = simulate_all(&s.truth, &s.wavelet, &s.geometry, &s.cfg)?;
        out.write_text("setup.json", &setup_json(s))?;
        write_grid_file(out, "truth.vgrd", &s.truth)?;
        write_grid_file(out, "initial.vgrd", &s.initial)?;
        for (i, g) in gathers.iter().enumerate() {
            out.write_with(&shot_name(i), |mut w| write_gather(&mut w, g))?;
        }
        if plots {
            let (lo, hi) = (s.truth.min(), s.truth.max());
            plot(out, "truth.png", |p| plots::raster(p, &s.truth, lo, hi));
            plot(out, "initial.png", |p| plots::raster(p, &s.initial, lo, hi));
        }
        Ok(())
    }
}

// invert ----------------------------------------------------------------

struct Invert {
    setup: Setup,
    method: InversionMethod,
    observed_dir: Option<PathBuf>,
}

impl Invert {
    fn prepare(cfg: &RunConfig) -> CliResult<Self> {
        let setup = build_setup(cfg)?;
        let mut method = cfg.invert.clone().ok_or_else(|| CliError::config("missing [invert] section"))?;
        method.seed = cfg.seed;
        method.repr.validate()?;
        method.scenario.validate()?;
        if method.metrics_every == 0 {
            return Err(CliError::config("invert: metrics_every must be positive"));
        }
        let observed_dir = cfg.data.as_ref().map(|d| d.observed_dir.clone());
        if let Some(dir) = &observed_dir {
            for i in 0..setup.geometry.n_shots() {
                let p = dir.join(shot_name(i));
                if !p.is_file() {
                    return Err(CliError::config(format!("data: {} is missing", p.display())));
                }
            }
        }
        Ok(Self { setup, method, observed_dir })
    }

    /// Epochs at which a snapshot is taken.
    fn snapshot_epochs(&self) -> Vec<usize> {
        let mut e: Vec<usize> = (0..self.method.epochs).step_by(self.method.metrics_every).collect();
        e.push(self.method.epochs);
        e
    }

    fn observed(&self) -> CliResult<Vec<ShotGather>> {
        let s = &self.setup;
        let Some(dir) = &self.observed_dir else {
            log::info!("simulating observed data for {} shots", s.geometry.n_shots());
            return Ok(simulate_all(&s.truth, &s.wavelet, &s.geometry, &s.cfg)?);
        };
        (0..s.geometry.n_shots())
            .map(|i| {
                let p = dir.join(shot_name(i));
                let g = load_gather(&p)?;
                if g.n_receivers() != s.geometry.receivers.len() || g.nt() != s.cfg.nt {
                    return Err(CliError::config(format!(
                        "data: {} holds {} receivers x {} samples, the acquisition records {} x {}",
                        p.display(),
                        g.n_receivers(),
                        g.nt(),
                        s.geometry.receivers.len(),
                        s.cfg.nt
                    )));
                }
                Ok(g)
            })
            .collect()
    }
}

fn snapshot_name(epoch: usize) -> String {
    format!("snapshot_{epoch:05}.vgrd")
}

impl Job for Invert {
    fn plan(&self, plots: bool) -> Vec<String> {
        let mut a = vec!["misfit.csv".to_string(), "metrics.csv".into(), "final_model.vgrd".into()];
        a.extend(self.snapshot_epochs().into_iter().map(snapshot_name));
        if plots {
            a.extend(["convergence.png".into(), "final_model.png".into()]);
        }
        a
    }

    fn execute(&self, out: &mut Output, plots: bool) -> CliResult<()> {
        let s = &self.setup;
        let problem = InversionProblem {
            observed: ShotData::new(self.observed()?),
            m0: s.initial.clone(),
            geometry: s.geometry.clone(),
            wavelet: s.wavelet.clone(),
            cfg: s.cfg.clone(),
            truth: Some(s.truth.clone()),
        };
        log::info!("inverting with {} for {} epochs", self.method.repr.name(), self.method.epochs);
        let mut snapshots = Vec::new();
        let report = run_inversion_with(&problem, &self.method, |epoch, m| {
            snapshots.push((epoch, m.clone()));
            Ok(())
        })?;
        out.write_text("misfit.csv", &report.to_csv())?;
        let metrics = report.final_metrics().ok_or_else(|| CoreError::InvalidArgument("no metrics recorded".into()))?;
        out.write_text("metrics.csv", &metrics.to_csv())?;
        write_grid_file(out, "final_model.vgrd", &report.final_model)?;
        for (epoch, m) in &snapshots {
            write_grid_file(out, &snapshot_name(*epoch), m)?;
        }
        if plots {
            let curve: Vec<(f64, f64)> = report.misfit.iter().enumerate().map(|(e, v)| (e as f64, *v)).collect();
            plot(out, "convergence.png", |p| plots::lines(p, &[curve], false));
            let (lo, hi) = (s.truth.min(), s.truth.max());
            plot(out, "final_model.png", |p| plots::raster(p, &report.final_model, lo, hi));
        }
        Ok(())
    }
}

// ntk -------------------------------------------------------------------

struct Ntk {
    setup: Setup,
    ntk: NtkConfig,
    seed: u64,
}

/// Refuse Jacobians and kernels beyond the guards before any simulation.
fn check_budget(s: &Setup, sampling: JacobianSampling) -> CliResult<()> {
    let cells = region_cells(&s.truth, s.interior).len();
    let (rows, _) = jacobian_shape(s.geometry.n_shots(), s.geometry.receivers.len(), s.cfg.nt, sampling, cells)?;
    if rows > KERNEL_MAX_DIM {
        return Err(CoreError::ResourceGuard { what: "wave-based NTK dimension", required: rows, limit: KERNEL_MAX_DIM }.into());
    }
    Ok(())
}

impl Ntk {
    fn prepare(cfg: &RunConfig) -> CliResult<Self> {
        let setup = build_setup(cfg)?;
        let mut ntk = cfg.ntk.clone().ok_or_else(|| CliError::config("missing [ntk] section"))?;
        ntk.stationarity.seed = cfg.seed;
        if ntk.methods.is_empty() {
            return Err(CliError::config("ntk: methods is empty"));
        }
        let mut labels: Vec<&str> = ntk.methods.iter().map(short_label).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::config("ntk: each method kind may appear once"));
        }
        for m in &ntk.methods {
            m.validate()?;
        }
        check_budget(&setup, ntk.sampling)?;
        if ntk.run_stationarity {
            check_budget(&setup, ntk.stationarity.sampling)?;
        }
        Ok(Self { setup, ntk, seed: cfg.seed })
    }
}

fn spectrum_name(label: &str) -> String {
    format!("spectrum_{label}.csv")
}

fn training_name(width: usize, seed: u64) -> String {
    format!("stationarity_train_w{width}_s{seed}.csv")
}

impl Job for Ntk {
    fn plan(&self, plots: bool) -> Vec<String> {
        let mut a: Vec<String> = self.ntk.methods.iter().map(|m| spectrum_name(short_label(m))).collect();
        a.push("decay_summary.csv".into());
        let st = &self.ntk.stationarity;
        if self.ntk.run_stationarity {
            a.extend(["stationarity_init.csv".into(), "stationarity_seeds.csv".into()]);
            for &w in &st.train_widths {
                a.extend((st.seed..st.seed + st.train_seeds as u64).map(|s| training_name(w, s)));
            }
        }
        if plots {
            a.push("spectra.png".into());
            if self.ntk.run_stationarity && !st.train_widths.is_empty() && st.train_seeds > 0 {
                a.push("stationarity.png".into());
            }
        }
        a
    }

    fn execute(&self, out: &mut Output, plots: bool) -> CliResult<()> {
        let s = &self.setup;
        let cfg = frozen_config(&s.cfg, &s.initial);
        log::info!("sensitivity Jacobian at the initial model");
        let j = sensitivity_jacobian(&s.initial, &s.wavelet, &s.geometry, &cfg, self.ntk.sampling, Some(s.interior))?;
        let cmp = decay_comparison(&j, &s.initial, &self.ntk.methods, self.seed)?;
        for (spec, entry) in self.ntk.methods.iter().zip(&cmp.entries) {
            out.write_text(&spectrum_name(short_label(spec)), &entry.spectrum.to_csv())?;
        }
        let present = DECAY_ORDER.iter().all(|l| cmp.slope(l).is_some());
        let verdict = if present { cmp.ordered(&DECAY_ORDER, DECAY_MARGIN).to_string() } else { "n/a".into() };
        out.write_text("decay_summary.csv", &format!("{}ordered,{verdict}\n", cmp.summary_csv()))?;

        let mut training = Vec::new();
        if self.ntk.run_stationarity {
            log::info!("stationarity experiment");
            let trace = stationarity_experiment(s, &self.ntk.stationarity)?;
            out.write_text("stationarity_init.csv", &trace.init_csv())?;
            let mut seeds = String::from("width,seed,nuclear,frobenius\n");
            for w in &trace.widths {
                for (k, (n, f)) in w.nuclear.iter().zip(&w.frobenius).enumerate() {
                    seeds.push_str(&format!("{},{},{n:e},{f:e}\n", w.width, self.ntk.stationarity.seed + k as u64));
                }
            }
            out.write_text("stationarity_seeds.csv", &seeds)?;
            for t in &trace.training {
                out.write_text(&training_name(t.width, t.seed), &t.to_csv())?;
            }
            training = trace.training;
        }
        if plots {
            let spectra: Vec<Vec<(f64, f64)>> = cmp
                .entries
                .iter()
                .map(|e| e.spectrum.eigenvalues.iter().enumerate().map(|(i, l)| ((i + 1) as f64, *l)).collect())
                .collect();
            plot(out, "spectra.png", |p| plots::lines(p, &spectra, true));
            if !training.is_empty() {
                let curves: Vec<Vec<(f64, f64)>> = training
                    .iter()
                    .map(|t| t.nuclear.iter().enumerate().map(|(e, d)| (e as f64, *d)).collect())
                    .collect();
                plot(out, "stationarity.png", |p| plots::lines(p, &curves, false));
            }
        }
        Ok(())
    }
}

// metrics ---------------------------------------------------------------

struct Metrics {
    predicted: VelocityGrid,
    truth: VelocityGrid,
}

impl Metrics {
    fn prepare(cfg: &RunConfig) -> CliResult<Self> {
        let MetricsConfig { predicted, truth, region } =
            cfg.metrics.clone().ok_or_else(|| CliError::config("missing [metrics] section"))?;
        let (p, t) = (load_velocity_grid(&predicted)?, load_velocity_grid(&truth)?);
        if !p.same_shape(&t) {
            return Err(CliError::config(format!(
                "metrics: {} is {}x{} but {} is {}x{}",
                predicted.display(),
                p.nz(),
                p.nx(),
                truth.display(),
                t.nz(),
                t.nx()
            )));
        }
        let (predicted, truth) = match region {
            Some(r) => (p.crop(r)?, t.crop(r)?),
            None => (p, t),
        };
        Ok(Self { predicted, truth })
    }
}

impl Job for Metrics {
    fn plan(&self, _plots: bool) -> Vec<String> {
        vec!["metrics.csv".into()]
    }

    fn execute(&self, out: &mut Output, _plots: bool) -> CliResult<()> {
        let m = evaluate_metrics(&self.predicted, &self.truth)?;
        out.write_text("metrics.csv", &m.to_csv())
    }
}
