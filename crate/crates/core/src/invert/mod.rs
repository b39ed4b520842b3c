//! Data degradation, filters, Adam and the inversion loop.

mod adam;
mod filter;
mod scenario;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{model_gradient, pml_interior, tv_term, GradientOptions, ModelGradient, TV_WEIGHT_DEFAULT};
use crate::model::{evaluate_metrics, AcquisitionGeometry, Metrics, Region, ShotGather, VelocityGrid, Wavelet};
use crate::repr::{init_repr, ReprSpec, Representation};
use crate::solver::pml::default_max_damping;
use crate::solver::SolverConfig;
use crate::{Error, Result};

pub use adam::{adam_step, AdamState, LR_GRID, LR_REPR};
pub use filter::{band_schedule, filter_gather, filtfilt, highpass, lowpass, lowpass_band, lowpass_wavelet, Pass, BAND_SCHEDULE_HZ};
pub use scenario::{degrade_data, Scenario, ShotData};

/// Observed data and everything needed to model it.
#[derive(Debug, Clone)]
pub struct InversionProblem {
    /// Shot ids index `geometry.sources`.
    pub observed: ShotData,
    pub m0: VelocityGrid,
    pub geometry: AcquisitionGeometry,
    pub wavelet: Wavelet,
    pub cfg: SolverConfig,
    pub truth: Option<VelocityGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionMethod {
    pub repr: ReprSpec,
    pub epochs: usize,
    /// Defaults to 5 for `DirectGrid` and 1e-4 otherwise.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scenario: Scenario,
    /// Low-pass cutoffs run in order, each for an equal share of the epochs.
    #[serde(default)]
    pub schedule: Option<Vec<f64>>,
    /// `[α_x, α_z]`; `Some` enables the TV term.
    #[serde(default)]
    pub tv: Option<[f64; 2]>,
    #[serde(default)]
    pub gradient: GradientOptions,
    /// Shots per epoch; all when unset.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_metrics_every")]
    pub metrics_every: usize,
    /// Velocity clamp; defaults to the representation's and never exceeds
    /// the stability limit of the time step.
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub output_scale: Option<f64>,
    /// Cells compared against the truth; defaults to the non-PML interior.
    #[serde(default)]
    pub metrics_region: Option<Region>,
    /// Start every method from `m0` exactly by subtracting the network's
    /// initial output.
    #[serde(default = "default_centered")]
    pub centered: bool,
}

fn default_metrics_every() -> usize {
    10
}

fn default_centered() -> bool {
    true
}

impl InversionMethod {
    pub fn new(repr: ReprSpec, epochs: usize) -> Self {
        Self {
            repr,
            epochs,
            lr: None,
            seed: 0,
            scenario: Scenario::default(),
            schedule: None,
            tv: None,
            gradient: GradientOptions::default(),
            batch_size: None,
            metrics_every: default_metrics_every(),
            bounds: None,
            output_scale: None,
            metrics_region: None,
            centered: default_centered(),
        }
    }

    /// TV with the default weights on both axes.
    pub fn with_default_tv(mut self) -> Self {
        self.tv = Some([TV_WEIGHT_DEFAULT, TV_WEIGHT_DEFAULT]);
        self
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(if self.repr == ReprSpec::DirectGrid { LR_GRID } else { LR_REPR })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionReport {
    /// Objective before every update plus the value at the final model.
    pub misfit: Vec<f64>,
    /// `(epoch, metrics)` every `metrics_every` epochs and at the end.
    pub metrics: Vec<(usize, Metrics)>,
    pub final_model: VelocityGrid,
    pub final_params: Vec<f64>,
    pub wall_time_s: f64,
}

impl InversionReport {
    /// `epoch,misfit,mse,mae,ssim`; metric columns are empty on epochs
    /// without an evaluation.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,misfit,mse,mae,ssim\n");
        for (e, j) in self.misfit.iter().enumerate() {
            match self.metrics.iter().find(|(k, _)| *k == e) {
                Some((_, m)) => s.push_str(&format!("{e},{j:e},{:e},{:e},{}\n", m.mse, m.mae, m.ssim)),
                None => s.push_str(&format!("{e},{j:e},,,\n")),
            }
        }
        s
    }

    pub fn final_metrics(&self) -> Option<&Metrics> {
        self.metrics.last().map(|(_, m)| m)
    }
}

/// Objective, model gradient and parameter gradient at the current
/// parameters. This is the gradient the inversion loop applies.
pub fn parameter_gradient(
    repr: &Representation,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    cfg: &SolverConfig,
    obs: &[ShotGather],
    opts: &GradientOptions,
    tv: Option<[f64; 2]>,
) -> Result<(f64, ModelGradient, Vec<f64>)> {
    let (m, tape) = repr.evaluate_taped();
    let (rep, mut g) = model_gradient(&m, wavelet, geometry, cfg, obs, opts)?;
    let mut value = rep.value;
    if let Some([ax, az]) = tv {
        let (tv_value, tv_grad) = tv_term(&m, ax, az);
        value += tv_value;
        g.add_assign(&tv_grad);
        if opts.mask_pml {
            g.mask_outside(pml_interior(&m, cfg));
        }
    }
    let grad = repr.backprop_taped(&tape, &g)?;
    Ok((value, g, grad))
}

/// Solver settings used throughout an inversion: the PML damping is fixed
/// from the starting model so the objective stays smooth in the velocities.
pub fn frozen_config(cfg: &SolverConfig, m0: &VelocityGrid) -> SolverConfig {
    let mut cfg = cfg.clone();
    if cfg.pml_max_damping.is_none() && cfg.pml_width > 0 {
        let h = match (m0.nz() > 1, m0.nx() > 1) {
            (true, true) => m0.dz().min(m0.dx()),
            (false, true) => m0.dx(),
            _ => m0.dz(),
        };
        cfg.pml_max_damping = Some(default_max_damping(m0.max(), cfg.pml_width, h));
    }
    cfg
}

/// Largest velocity the time step supports on this grid.
pub fn stable_velocity(m0: &VelocityGrid, dt: f64) -> f64 {
    let h = match (m0.nz() > 1, m0.nx() > 1) {
        (true, true) => m0.dz().min(m0.dx()),
        (false, true) => m0.dx(),
        _ => m0.dz(),
    };
    h / (dt * (m0.spatial_dims().max(1) as f64).sqrt())
}

/// Representation set up as `run_inversion` would.
pub fn prepare_representation(problem: &InversionProblem, method: &InversionMethod) -> Result<Representation> {
    let mut repr = init_repr(method.repr.clone(), &problem.m0, method.seed)?;
    if let Some(s) = method.output_scale {
        repr = repr.with_output_scale(s)?;
    }
    let (lo, hi) = method.bounds.unwrap_or(repr.bounds());
    let hi = hi.min(stable_velocity(&problem.m0, problem.cfg.dt) * (1.0 - 1e-9));
    let repr = repr.with_bounds(lo, hi)?;
    Ok(if method.centered { repr.centered() } else { repr })
}

pub fn run_inversion(problem: &InversionProblem, method: &InversionMethod) -> Result<InversionReport> {
    run_inversion_with(problem, method, |_, _| Ok(()))
}

/// As [`run_inversion`], calling `on_epoch(epoch, model)` on every metrics
/// epoch and once more with the final model.
pub fn run_inversion_with(
    problem: &InversionProblem,
    method: &InversionMethod,
    mut on_epoch: impl FnMut(usize, &VelocityGrid) -> Result<()>,
) -> Result<InversionReport> {
    let start = Instant::now();
    let cfg = frozen_config(&problem.cfg, &problem.m0);
    if problem.observed.shots.len() != problem.observed.gathers.len() {
        return Err(Error::invalid("observed shot ids and gathers differ in length"));
    }
    if let Some(t) = &problem.truth {
        if !t.same_shape(&problem.m0) {
            return Err(Error::invalid("truth and initial model differ in shape"));
        }
    }
    if method.metrics_every == 0 {
        return Err(Error::invalid("metrics_every must be positive"));
    }
    let data = degrade_data(&problem.observed, &method.scenario, method.seed)?;
    let geometry = problem.geometry.with_shots(&data.shots)?;
    let mut repr = prepare_representation(problem, method)?;
    let mut adam = AdamState::new(repr.n_params(), method.learning_rate());
    let region = method.metrics_region.unwrap_or_else(|| pml_interior(&problem.m0, &cfg));
    let truth = problem.truth.as_ref().map(|t| t.crop(region)).transpose()?;
    let metrics_of = |m: &VelocityGrid| -> Result<Option<Metrics>> {
        match &truth {
            Some(t) => Ok(Some(evaluate_metrics(&m.crop(region)?, t)?)),
            None => Ok(None),
        }
    };

    // Observed data and wavelet per band.
    let bands: Vec<(Vec<ShotGather>, Wavelet)> = match &method.schedule {
        None => vec![(data.gathers.clone(), problem.wavelet.clone())],
        Some(cuts) if cuts.is_empty() => return Err(Error::invalid("empty band schedule")),
        Some(cuts) => cuts
            .iter()
            .map(|&c| Ok((lowpass_band(&data.gathers, c)?, lowpass_wavelet(&problem.wavelet, c)?)))
            .collect::<Result<_>>()?,
    };
    let band_of = |e: usize| (e * bands.len() / method.epochs.max(1)).min(bands.len() - 1);

    let n_shots = geometry.n_shots();
    let batch = method.batch_size.unwrap_or(n_shots).clamp(1, n_shots);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(method.seed ^ 0x5eed_5407);
    let mut misfit = Vec::with_capacity(method.epochs + 1);
    let mut metrics = Vec::new();

    for epoch in 0..method.epochs {
        let ctx = |e: Error| Error::Epoch { epoch, source: Box::new(e) };
        let (obs, wavelet) = &bands[band_of(epoch)];
        let (geo, obs_b): (AcquisitionGeometry, Vec<ShotGather>) = if batch < n_shots {
            let mut ids: Vec<usize> = (0..n_shots).collect();
            ids.shuffle(&mut shuffle_rng);
            let mut ids = ids[..batch].to_vec();
            ids.sort_unstable();
            (geometry.with_shots(&ids).map_err(ctx)?, ids.iter().map(|&i| obs[i].clone()).collect())
        } else {
            (geometry.clone(), obs.clone())
        };
        if epoch % method.metrics_every == 0 {
            let m = repr.evaluate();
            if let Some(mt) = metrics_of(&m).map_err(ctx)? {
                metrics.push((epoch, mt));
            }
            on_epoch(epoch, &m).map_err(ctx)?;
        }
        let (value, _, grad) =
            parameter_gradient(&repr, wavelet, &geo, &cfg, &obs_b, &method.gradient, method.tv).map_err(ctx)?;
        misfit.push(value);
        log::debug!("epoch {epoch}: objective {value:e}");
        adam_step(repr.theta_mut(), &grad, &mut adam).map_err(ctx)?;
    }

    let final_model = repr.evaluate();
    let (obs, wavelet) = &bands[band_of(method.epochs.saturating_sub(1))];
    let ctx = |e: Error| Error::Epoch { epoch: method.epochs, source: Box::new(e) };
    let syn = crate::solver::simulate_all(&final_model, wavelet, &geometry, &cfg).map_err(ctx)?;
    let mut value = crate::adjoint::l2_misfit(&syn, obs).map_err(ctx)?.value;
    if let Some([ax, az]) = method.tv {
        value += tv_term(&final_model, ax, az).0;
    }
    misfit.push(value);
    if let Some(mt) = metrics_of(&final_model).map_err(ctx)? {
        metrics.push((method.epochs, mt));
    }
    on_epoch(method.epochs, &final_model).map_err(ctx)?;
    Ok(InversionReport {
        misfit,
        metrics,
        final_model,
        final_params: repr.theta().to_vec(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
