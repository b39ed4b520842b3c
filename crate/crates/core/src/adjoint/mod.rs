//! Misfit and exact gradients with respect to cell velocities.

mod tv;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{AcquisitionGeometry, Boundary, Region, ShotGather, VelocityGrid, Wavelet};
use crate::solver::{check_inputs, Propagator, SolverConfig};
use crate::{Error, Result};

pub use tv::{tv_term, TV_SMOOTHING, TV_WEIGHT_DEFAULT};

/// Oracle guard: the finite-difference gradient costs two solves per cell.
pub const FD_ORACLE_MAX_CELLS: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct MisfitReport {
    /// `½ Σ residual² · dt`.
    pub value: f64,
    /// `syn − obs`, one gather per shot.
    pub residuals: Vec<ShotGather>,
}

/// `∂J/∂v` per cell, laid out like the velocity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub nz: usize,
    pub nx: usize,
    pub values: Vec<f64>,
}

impl ModelGradient {
    pub fn zeros(nz: usize, nx: usize) -> Self {
        Self { nz, nx, values: vec![0.0; nz * nx] }
    }

    pub fn like(grid: &VelocityGrid) -> Self {
        Self::zeros(grid.nz(), grid.nx())
    }

    pub fn add_assign(&mut self, other: &ModelGradient) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Zero every cell outside `keep`.
    pub fn mask_outside(&mut self, keep: Region) {
        for iz in 0..self.nz {
            for ix in 0..self.nx {
                if !keep.contains(iz, ix) {
                    self.values[iz * self.nx + ix] = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientOptions {
    /// Steps between stored states; the wavefield between two is recomputed
    /// during the reverse pass. `0` or `1` stores every wavefield.
    #[serde(default = "default_stride")]
    pub checkpoint_stride: usize,
    /// Zero the gradient inside the absorbing layer.
    #[serde(default = "default_true")]
    pub mask_pml: bool,
}

fn default_stride() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self { checkpoint_stride: default_stride(), mask_pml: true }
    }
}

/// Cells outside the absorbing layer.
pub fn pml_interior(grid: &VelocityGrid, cfg: &SolverConfig) -> Region {
    let w = cfg.pml_width;
    let (nz, nx) = (grid.nz(), grid.nx());
    let z0 = if cfg.boundary == Boundary::PmlAll && nz > 1 { w } else { 0 };
    let z1 = if nz > 1 { nz - w } else { nz };
    let (x0, x1) = if nx > 1 { (w, nx - w) } else { (0, nx) };
    Region { z0, z1, x0, x1 }
}

pub fn l2_misfit(syn: &[ShotGather], obs: &[ShotGather]) -> Result<MisfitReport> {
    if syn.len() != obs.len() {
        return Err(Error::invalid(format!("{} synthetic vs {} observed shots", syn.len(), obs.len())));
    }
    let residuals = syn.iter().zip(obs).map(|(s, o)| s.sub(o)).collect::<Result<Vec<_>>>()?;
    let value = residuals.iter().map(|r| 0.5 * r.sum_squares() * r.dt()).sum();
    Ok(MisfitReport { value, residuals })
}

fn shot_source(geometry: &AcquisitionGeometry, shot: usize) -> Result<(usize, usize)> {
    geometry
        .sources
        .get(shot)
        .copied()
        .ok_or_else(|| Error::invalid(format!("shot {shot} out of range ({} shots)", geometry.n_shots())))
}

/// Gradient of `⟨seed, d(v)⟩` for one shot, where `d` is the recorded gather
/// and `seed` has the gather's shape. Unmasked.
pub fn data_gradient(
    grid: &VelocityGrid,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    shot: usize,
    cfg: &SolverConfig,
    seed: &ShotGather,
) -> Result<ModelGradient> {
    check_inputs(grid, wavelet, geometry, cfg)?;
    let src = shot_source(geometry, shot)?;
    if seed.n_receivers() != geometry.receivers.len() || seed.nt() != cfg.nt {
        return Err(Error::invalid("seed shape does not match the geometry"));
    }
    let prop = Propagator::new(grid, cfg)?;
    let (_, tape) = prop
        .forward_taped(wavelet.samples(), src, &geometry.receivers, 1)
        .map_err(|e| e.with_shot(shot))?;
    let values = prop
        .adjoint(&tape, wavelet.samples(), src, &geometry.receivers, seed.data())
        .map_err(|e| e.with_shot(shot))?;
    Ok(ModelGradient { nz: grid.nz(), nx: grid.nx(), values })
}

/// Misfit contribution and unmasked gradient of a single shot.
pub fn shot_gradient(
    grid: &VelocityGrid,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    shot: usize,
    cfg: &SolverConfig,
    obs: &ShotGather,
    opts: &GradientOptions,
) -> Result<(f64, ShotGather, ModelGradient)> {
    check_inputs(grid, wavelet, geometry, cfg)?;
    let prop = Propagator::new(grid, cfg)?;
    shot_gradient_with(&prop, grid, wavelet, geometry, shot, cfg, obs, opts)
}

#[allow(clippy::too_many_arguments)]
fn shot_gradient_with(
    prop: &Propagator,
    grid: &VelocityGrid,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    shot: usize,
    cfg: &SolverConfig,
    obs: &ShotGather,
    opts: &GradientOptions,
) -> Result<(f64, ShotGather, ModelGradient)> {
    let src = shot_source(geometry, shot)?;
    let (syn, tape) = prop
        .forward_taped(wavelet.samples(), src, &geometry.receivers, opts.checkpoint_stride)
        .map_err(|e| e.with_shot(shot))?;
    let residual = syn.sub(obs)?;
    let value = 0.5 * residual.sum_squares() * cfg.dt;
    let seed: Vec<f64> = residual.data().iter().map(|r| r * cfg.dt).collect();
    let values = prop
        .adjoint(&tape, wavelet.samples(), src, &geometry.receivers, &seed)
        .map_err(|e| e.with_shot(shot))?;
    Ok((value, residual, ModelGradient { nz: grid.nz(), nx: grid.nx(), values }))
}

/// L2 misfit over all shots of `geometry` and its exact gradient. `obs[i]`
/// belongs to `geometry.sources[i]`. Shots run in parallel; the reduction is
/// sequential in shot order.
pub fn model_gradient(
    grid: &VelocityGrid,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    cfg: &SolverConfig,
    obs: &[ShotGather],
    opts: &GradientOptions,
) -> Result<(MisfitReport, ModelGradient)> {
    check_inputs(grid, wavelet, geometry, cfg)?;
    if obs.len() != geometry.n_shots() {
        return Err(Error::invalid(format!("{} observed gathers for {} shots", obs.len(), geometry.n_shots())));
    }
    if let Some(o) = obs.iter().find(|o| o.n_receivers() != geometry.receivers.len() || o.nt() != cfg.nt) {
        return Err(Error::invalid(format!(
            "observed gather is {}x{}, expected {}x{}",
            o.n_receivers(),
            o.nt(),
            geometry.receivers.len(),
            cfg.nt
        )));
    }
    let prop = Propagator::new(grid, cfg)?;
    let per_shot: Vec<_> = (0..geometry.n_shots())
        .into_par_iter()
        .map(|shot| shot_gradient_with(&prop, grid, wavelet, geometry, shot, cfg, &obs[shot], opts))
        .collect::<Result<_>>()?;
    let mut grad = ModelGradient::like(grid);
    let mut value = 0.0;
    let mut residuals = Vec::with_capacity(per_shot.len());
    for (v, r, g) in per_shot {
        value += v;
        grad.add_assign(&g);
        residuals.push(r);
    }
    if opts.mask_pml {
        grad.mask_outside(pml_interior(grid, cfg));
    }
    Ok((MisfitReport { value, residuals }, grad))
}

/// Misfit of `grid` against `obs` without the gradient.
pub fn misfit(
    grid: &VelocityGrid,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    cfg: &SolverConfig,
    obs: &[ShotGather],
) -> Result<MisfitReport> {
    let syn = crate::solver::simulate_all(grid, wavelet, geometry, cfg)?;
    l2_misfit(&syn, obs)
}

/// Central-difference gradient `(J(m + εeᵢ) − J(m − εeᵢ)) / 2ε` of an
/// arbitrary objective, one cell at a time.
pub fn fd_gradient_oracle(
    grid: &VelocityGrid,
    epsilon: f64,
    objective: impl Fn(&VelocityGrid) -> Result<f64>,
) -> Result<ModelGradient> {
    if grid.len() > FD_ORACLE_MAX_CELLS {
        return Err(Error::ResourceGuard {
            what: "finite-difference oracle cells",
            required: grid.len(),
            limit: FD_ORACLE_MAX_CELLS,
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let mut out = ModelGradient::like(grid);
    let mut values = grid.values().to_vec();
    for i in 0..values.len() {
        let v = values[i];
        values[i] = v + epsilon;
        let plus = objective(&grid.with_values(values.clone())?)?;
        values[i] = v - epsilon;
        let minus = objective(&grid.with_values(values.clone())?)?;
        values[i] = v;
        out.values[i] = (plus - minus) / (2.0 * epsilon);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::simulate_all;

    #[test]
    fn misfit_identity_and_single_sample() {
        let a = ShotGather::new(2, 3, 0.01, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = l2_misfit(&[a.clone()], &[a.clone()]).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.residuals[0].data().iter().all(|v| *v == 0.0));

        let mut b = a.clone();
        b.data_mut()[4] += 0.5;
        let r = l2_misfit(&[b], &[a.clone()]).unwrap();
        assert!((r.value - 0.5 * 0.25 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn misfit_scales_quadratically() {
        let zero = ShotGather::zeros(1, 4, 0.002);
        let r = ShotGather::new(1, 4, 0.002, vec![0.1, -0.3, 0.2, 0.7]).unwrap();
        let j1 = l2_misfit(&[r.clone()], &[zero.clone()]).unwrap().value;
        let j3 = l2_misfit(&[r.scaled(3.0)], &[zero]).unwrap().value;
        assert!((j3 - 9.0 * j1).abs() < 1e-14);
    }

    #[test]
    fn misfit_shape_mismatch() {
        let a = ShotGather::zeros(1, 4, 0.002);
        let b = ShotGather::zeros(2, 4, 0.002);
        assert!(l2_misfit(&[a.clone()], &[b]).is_err());
        assert!(l2_misfit(&[a.clone()], &[a.clone(), a]).is_err());
    }

    #[test]
    fn oracle_recovers_linear_objective() {
        let g = VelocityGrid::from_fn(3, 4, 1.0, 1.0, |iz, ix| 1000.0 + (iz * 4 + ix) as f64).unwrap();
        let c: Vec<f64> = (0..12).map(|i| (i as f64 - 5.0) * 0.25).collect();
        let fd = fd_gradient_oracle(&g, 0.5, |m| Ok(m.values().iter().zip(&c).map(|(a, b)| a * b).sum())).unwrap();
        for (got, want) in fd.values.iter().zip(&c) {
            assert!((got - want).abs() < 1e-9);
        }
        let zero = fd_gradient_oracle(&g, 0.5, |_| Ok(3.0)).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn oracle_guard() {
        let g = VelocityGrid::constant(100, 51, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(fd_gradient_oracle(&g, 0.1, |_| Ok(0.0)), Err(Error::ResourceGuard { .. })));
    }

    fn small_2d() -> (VelocityGrid, Wavelet, AcquisitionGeometry, SolverConfig) {
        let grid = VelocityGrid::from_fn(16, 18, 10.0, 10.0, |iz, ix| 1800.0 + 40.0 * iz as f64 + 5.0 * ix as f64).unwrap();
        let cfg = SolverConfig { pml_width: 4, ..SolverConfig::new(0.002, 120) };
        let wavelet = Wavelet::ricker(15.0, cfg.dt, cfg.nt).unwrap();
        let geo = AcquisitionGeometry::new(vec![(1, 5), (1, 12)], (0..18).map(|ix| (1, ix)).collect(), cfg.boundary);
        (grid, wavelet, geo, cfg)
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let (grid, wavelet, geo, cfg) = small_2d();
        let obs = simulate_all(&grid, &wavelet, &geo, &cfg).unwrap();
        let (rep, g) = model_gradient(&grid, &wavelet, &geo, &cfg, &obs, &GradientOptions::default()).unwrap();
        assert_eq!(rep.value, 0.0);
        assert!(g.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shot_gradients_sum_bitwise() {
        let (grid, wavelet, geo, cfg) = small_2d();
        let truth = VelocityGrid::from_fn(16, 18, 10.0, 10.0, |iz, _| 1900.0 + 30.0 * iz as f64).unwrap();
        let obs = simulate_all(&truth, &wavelet, &geo, &cfg).unwrap();
        let opts = GradientOptions { mask_pml: false, ..Default::default() };
        let (_, total) = model_gradient(&grid, &wavelet, &geo, &cfg, &obs, &opts).unwrap();
        let mut sum = ModelGradient::like(&grid);
        for shot in 0..2 {
            let (_, _, g) = shot_gradient(&grid, &wavelet, &geo, shot, &cfg, &obs[shot], &opts).unwrap();
            sum.add_assign(&g);
        }
        assert_eq!(sum, total);
    }

    #[test]
    fn checkpointing_matches_full_storage() {
        let (grid, wavelet, geo, cfg) = small_2d();
        let truth = grid.smoothed(2.0);
        let obs = simulate_all(&truth, &wavelet, &geo, &cfg).unwrap();
        let full = GradientOptions { checkpoint_stride: 1, mask_pml: false };
        let (_, a) = model_gradient(&grid, &wavelet, &geo, &cfg, &obs, &full).unwrap();
        for stride in [7, 10, 200] {
            let (_, b) = model_gradient(&grid, &wavelet, &geo, &cfg, &obs, &GradientOptions { checkpoint_stride: stride, mask_pml: false }).unwrap();
            assert_eq!(a, b, "stride {stride}");
        }
    }

    #[test]
    fn masking_zeroes_the_halo() {
        let (grid, wavelet, geo, cfg) = small_2d();
        let truth = grid.smoothed(2.0);
        let obs = simulate_all(&truth, &wavelet, &geo, &cfg).unwrap();
        let (_, raw) = model_gradient(&grid, &wavelet, &geo, &cfg, &obs, &GradientOptions { mask_pml: false, ..Default::default() }).unwrap();
        let (_, masked) = model_gradient(&grid, &wavelet, &geo, &cfg, &obs, &GradientOptions::default()).unwrap();
        let inner = pml_interior(&grid, &cfg);
        assert_eq!(inner, Region { z0: 0, z1: 12, x0: 4, x1: 14 });
        for iz in 0..16 {
            for ix in 0..18 {
                let i = iz * 18 + ix;
                if inner.contains(iz, ix) {
                    assert_eq!(masked.values[i], raw.values[i]);
                } else {
                    assert_eq!(masked.values[i], 0.0);
                }
            }
        }
    }
}
