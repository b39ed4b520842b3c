//! Does the wave-based NTK of a wide shallow network settle down?
//!
//! The network is `n^{-1/2} W1 σ(W0 x + b0) + b1` with N(0, 1) parameters.
//! Its own tangent kernel concentrates as `n` grows, but the wave-based NTK
//! also depends on the random initial model through `J(m_θ)`, so its spread
//! across seeds need not shrink, and it keeps moving during training.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sensitivity_jacobian, wave_ntk, JacobianSampling, KernelMatrix};
use crate::adjoint::GradientOptions;
use crate::invert::{adam_step, frozen_config, parameter_gradient, stable_velocity, AdamState, LR_REPR};
use crate::model::ShotGather;
use crate::presets::Setup;
use crate::repr::{init_repr, Activation, ReprSpec, Representation};
use crate::solver::simulate_all;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationarityOptions {
    pub widths: Vec<usize>,
    pub seeds: usize,
    /// Seeds run `seed, seed + 1, …`.
    pub seed: u64,
    pub epochs: usize,
    /// Widths whose kernel is tracked during training.
    pub train_widths: Vec<usize>,
    /// Seeds per tracked width.
    pub train_seeds: usize,
    pub lr: f64,
    /// m/s per unit of network output.
    pub output_scale: f64,
    pub activation: Activation,
    pub sampling: JacobianSampling,
}

impl Default for StationarityOptions {
    fn default() -> Self {
        Self {
            widths: vec![64, 256, 1024],
            seeds: 10,
            seed: 0,
            epochs: 200,
            train_widths: vec![1024],
            train_seeds: 1,
            lr: LR_REPR,
            output_scale: 100.0,
            activation: Activation::Tanh,
            sampling: JacobianSampling::default(),
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Kernel norms at initialisation, one entry per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthStats {
    pub width: usize,
    pub nuclear: Vec<f64>,
    pub frobenius: Vec<f64>,
}

impl WidthStats {
    pub fn nuclear_mean_std(&self) -> (f64, f64) {
        mean_std(&self.nuclear)
    }

    pub fn frobenius_mean_std(&self) -> (f64, f64) {
        mean_std(&self.frobenius)
    }

    /// Sample standard deviation over mean, nuclear norm.
    pub fn relative_std(&self) -> f64 {
        let (m, s) = self.nuclear_mean_std();
        s / m
    }

    pub fn relative_std_frobenius(&self) -> f64 {
        let (m, s) = self.frobenius_mean_std();
        s / m
    }
}

/// `‖Θ(τ) − Θ(0)‖ / ‖Θ(0)‖` per epoch, `τ = 0..=epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub width: usize,
    pub seed: u64,
    pub nuclear: Vec<f64>,
    pub frobenius: Vec<f64>,
    pub misfit: Vec<f64>,
}

impl TrainingTrace {
    pub fn max_delta(&self) -> f64 {
        self.nuclear.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_delta_frobenius(&self) -> f64 {
        self.frobenius.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,delta,delta_frobenius,misfit\n");
        for (e, ((n, f), m)) in self.nuclear.iter().zip(&self.frobenius).zip(&self.misfit).enumerate() {
            s.push_str(&format!("{e},{n:e},{f:e},{m:e}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityTrace {
    pub widths: Vec<WidthStats>,
    pub training: Vec<TrainingTrace>,
}

impl StationarityTrace {
    pub fn init_csv(&self) -> String {
        let mut s = String::from("width,nuclear_mean,nuclear_std,frobenius_mean,frobenius_std\n");
        for w in &self.widths {
            let (nm, ns) = w.nuclear_mean_std();
            let (fm, fs) = w.frobenius_mean_std();
            s.push_str(&format!("{},{nm:e},{ns:e},{fm:e},{fs:e}\n", w.width));
        }
        s
    }
}

struct Experiment<'a> {
    setup: &'a Setup,
    opts: &'a StationarityOptions,
    cfg: crate::solver::SolverConfig,
}

impl Experiment<'_> {
    fn repr(&self, width: usize, seed: u64) -> Result<Representation> {
        let spec = ReprSpec::shallow_ntk(width, self.opts.activation);
        let m0 = &self.setup.initial;
        let r = init_repr(spec, m0, seed)?.with_output_scale(self.opts.output_scale)?;
        let (lo, hi) = r.bounds();
        r.with_bounds(lo, hi.min(stable_velocity(m0, self.cfg.dt) * (1.0 - 1e-9)))
    }

    fn kernel(&self, repr: &Representation) -> Result<KernelMatrix> {
        let m = repr.evaluate();
        let j = sensitivity_jacobian(
            &m,
            &self.setup.wavelet,
            &self.setup.geometry,
            &self.cfg,
            self.opts.sampling,
            Some(self.setup.interior),
        )?;
        wave_ntk(&j, &repr.rep_ntk(&j.cells)?)
    }

    fn train(&self, width: usize, seed: u64, obs: &[ShotGather]) -> Result<TrainingTrace> {
        let mut repr = self.repr(width, seed)?;
        let theta0 = self.kernel(&repr)?;
        let (n0, f0) = (theta0.nuclear_norm()?, theta0.frobenius_norm());
        let mut adam = AdamState::new(repr.n_params(), self.opts.lr);
        let opts = GradientOptions::default();
        let mut trace = TrainingTrace { width, seed, nuclear: vec![0.0], frobenius: vec![0.0], misfit: Vec::new() };
        for epoch in 0..self.opts.epochs {
            let ctx = |e: Error| Error::Epoch { epoch, source: Box::new(e) };
            let (value, _, grad) =
                parameter_gradient(&repr, &self.setup.wavelet, &self.setup.geometry, &self.cfg, obs, &opts, None)
                    .map_err(ctx)?;
            trace.misfit.push(value);
            adam_step(repr.theta_mut(), &grad, &mut adam).map_err(ctx)?;
            let theta = self.kernel(&repr).map_err(ctx)?;
            let diff = KernelMatrix { label: String::new(), matrix: &theta.matrix - &theta0.matrix };
            trace.nuclear.push(diff.nuclear_norm()? / n0);
            trace.frobenius.push(diff.frobenius_norm() / f0);
        }
        let m = repr.evaluate();
        let syn = simulate_all(&m, &self.setup.wavelet, &self.setup.geometry, &self.cfg)?;
        trace.misfit.push(crate::adjoint::l2_misfit(&syn, obs)?.value);
        Ok(trace)
    }
}

/// Spread of the initial wave-based NTK over seeds at each width, and its
/// drift during inversion of the setup's observed data for the tracked
/// widths. The kernel uses the Jacobian columns of the setup's interior.
pub fn stationarity_experiment(setup: &Setup, opts: &StationarityOptions) -> Result<StationarityTrace> {
    if opts.widths.is_empty() && opts.train_widths.is_empty() {
        return Err(Error::invalid("no widths requested"));
    }
    if opts.seeds == 0 && !opts.widths.is_empty() {
        return Err(Error::invalid("at least one seed is needed"));
    }
    let exp = Experiment { setup, opts, cfg: frozen_config(&setup.cfg, &setup.initial) };
    let jobs: Vec<(usize, u64)> =
        opts.widths.iter().flat_map(|&w| (0..opts.seeds as u64).map(move |s| (w, opts.seed + s))).collect();
    let norms: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(w, s)| {
            let k = exp.kernel(&exp.repr(w, s)?)?;
            Ok((k.nuclear_norm()?, k.frobenius_norm()))
        })
        .collect::<Result<_>>()?;
    let widths = opts
        .widths
        .iter()
        .enumerate()
        .map(|(i, &width)| {
            let chunk = &norms[i * opts.seeds..(i + 1) * opts.seeds];
            WidthStats { width, nuclear: chunk.iter().map(|p| p.0).collect(), frobenius: chunk.iter().map(|p| p.1).collect() }
        })
        .collect();

    let mut training = Vec::new();
    if !opts.train_widths.is_empty() {
        let obs = simulate_all(&setup.truth, &setup.wavelet, &setup.geometry, &exp.cfg)?;
        for &w in &opts.train_widths {
            for s in opts.seed..opts.seed + opts.train_seeds as u64 {
                training.push(exp.train(w, s, &obs)?);
            }
        }
    }
    Ok(StationarityTrace { widths, training })
}
