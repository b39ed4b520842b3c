//! Time-domain acoustic propagation.
//!
//! Second-order leapfrog in time with the five-point Laplacian in space:
//!
//! ```text
//! u⁺ = 2u − u⁻ + dt² v² ⊙ (Σ_axis [∂²u + ∂p + z] − s·δ_src)
//! ```
//!
//! where `p`, `z` are the CPML auxiliary fields of each active axis (see
//! [`pml`]). Initial conditions are zero (`u⁰ = u⁻¹ = 0`) and gather sample
//! `k` is `uᵏ` at the receiver cells.

pub mod pml;
pub(crate) mod propagator;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AcquisitionGeometry, Boundary, ShotGather, VelocityGrid, Wavelet};
use crate::{Error, Result};

pub use pml::{pml_profiles, AxisProfile, PmlProfiles};
pub(crate) use propagator::Propagator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialOrder {
    #[default]
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub nt: usize,
    #[serde(default)]
    pub spatial_order: SpatialOrder,
    #[serde(default = "default_pml_width")]
    pub pml_width: usize,
    /// Peak damping in 1/s; `None` derives it from the velocity range.
    #[serde(default)]
    pub pml_max_damping: Option<f64>,
    #[serde(default)]
    pub boundary: Boundary,
}

fn default_pml_width() -> usize {
    20
}

impl SolverConfig {
    pub fn new(dt: f64, nt: usize) -> Self {
        Self {
            dt,
            nt,
            spatial_order: SpatialOrder::Second,
            pml_width: default_pml_width(),
            pml_max_damping: None,
            boundary: Boundary::FreeSurfaceTop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.nt == 0 {
            return Err(Error::invalid("nt must be at least 1"));
        }
        if let Some(s) = self.pml_max_damping {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("pml_max_damping must be non-negative, got {s}")));
            }
        }
        Ok(())
    }
}

/// Courant condition breach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflViolation {
    pub dt: f64,
    pub limit: f64,
    pub v_max: f64,
    pub dims: usize,
}

impl fmt::Display for CflViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dt = {:.6e} s exceeds the {}D CFL limit {:.6e} s (v_max = {} m/s)",
            self.dt, self.dims, self.limit, self.v_max
        )
    }
}

/// Largest stable time step: `min(h) / (v_max · √dims)`.
pub fn cfl_limit(grid: &VelocityGrid) -> f64 {
    let dims = grid.spatial_dims().max(1);
    let h = match (grid.nz() > 1, grid.nx() > 1) {
        (true, true) => grid.dz().min(grid.dx()),
        (false, true) => grid.dx(),
        _ => grid.dz(),
    };
    h / grid.max() / (dims as f64).sqrt()
}

pub fn stability_check(grid: &VelocityGrid, cfg: &SolverConfig) -> std::result::Result<(), CflViolation> {
    let limit = cfl_limit(grid);
    if cfg.dt <= limit {
        Ok(())
    } else {
        Err(CflViolation { dt: cfg.dt, limit, v_max: grid.max(), dims: grid.spatial_dims().max(1) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryPolicy {
    Full,
    Stride(usize),
    #[default]
    None,
}

/// Wavefield snapshots `uᵏ` for the time indices in `steps`, each stored
/// row-major over the grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WavefieldHistory {
    pub nz: usize,
    pub nx: usize,
    pub steps: Vec<usize>,
    pub snapshots: Vec<f64>,
}

impl WavefieldHistory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn snapshot(&self, i: usize) -> &[f64] {
        let n = self.nz * self.nx;
        &self.snapshots[i * n..(i + 1) * n]
    }
}

/// Everything a simulation needs to agree on: config, geometry, boundary,
/// wavelet step and the CFL limit.
pub fn check_inputs(
    grid: &VelocityGrid,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    cfg: &SolverConfig,
) -> Result<()> {
    cfg.validate()?;
    geometry.validate(grid)?;
    if geometry.boundary != cfg.boundary {
        return Err(Error::invalid(format!(
            "geometry boundary {:?} disagrees with solver boundary {:?}",
            geometry.boundary, cfg.boundary
        )));
    }
    if ((wavelet.dt() - cfg.dt) / cfg.dt).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "wavelet dt {} differs from solver dt {}",
            wavelet.dt(),
            cfg.dt
        )));
    }
    stability_check(grid, cfg).map_err(|v| Error::invalid(v.to_string()))
}

/// Propagate one shot and record its gather.
pub fn simulate_shot(
    grid: &VelocityGrid,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    shot: usize,
    cfg: &SolverConfig,
    policy: HistoryPolicy,
) -> Result<(ShotGather, WavefieldHistory)> {
    check_inputs(grid, wavelet, geometry, cfg)?;
    let src = *geometry
        .sources
        .get(shot)
        .ok_or_else(|| Error::invalid(format!("shot {shot} out of range ({} shots)", geometry.n_shots())))?;
    let prop = Propagator::new(grid, cfg)?;
    let out = prop
        .forward(wavelet.samples(), src, &geometry.receivers, policy)
        .map_err(|e| e.with_shot(shot))?;
    Ok((out.gather, out.history))
}

/// Simulate every shot of the geometry. Shots are independent and run on the
/// rayon pool; the result order follows `geometry.sources`.
pub fn simulate_all(
    grid: &VelocityGrid,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    cfg: &SolverConfig,
) -> Result<Vec<ShotGather>> {
    use rayon::prelude::*;

    check_inputs(grid, wavelet, geometry, cfg)?;
    let prop = Propagator::new(grid, cfg)?;
    geometry
        .sources
        .par_iter()
        .enumerate()
        .map(|(shot, &src)| {
            prop.forward(wavelet.samples(), src, &geometry.receivers, HistoryPolicy::None)
                .map(|o| o.gather)
                .map_err(|e| e.with_shot(shot))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cfl_2d_marmousi_spacing() {
        let g = VelocityGrid::from_fn(10, 10, 15.0, 15.0, |iz, _| 1500.0 + 300.0 * iz as f64).unwrap();
        assert_eq!(g.max(), 4200.0);
        let g = VelocityGrid::from_fn(10, 10, 15.0, 15.0, |iz, ix| if iz == 9 && ix == 9 { 4500.0 } else { 2000.0 }).unwrap();
        let limit = 15.0 / 4500.0 / 2f64.sqrt();
        assert!((cfl_limit(&g) - limit).abs() < 1e-15);
        // 1.9 ms sits below the 2.357 ms limit.
        assert!(stability_check(&g, &SolverConfig::new(0.0019, 10)).is_ok());
        let v = stability_check(&g, &SolverConfig::new(0.0024, 10)).unwrap_err();
        assert_eq!(v.dims, 2);
        assert!((v.limit - limit).abs() < 1e-15);
    }

    #[test]
    fn cfl_1d() {
        let g = VelocityGrid::constant(100, 1, 10.0, 10.0, 1000.0).unwrap();
        assert_eq!(cfl_limit(&g), 0.01);
        assert!(stability_check(&g, &SolverConfig::new(0.01, 10)).is_ok());
        assert!(stability_check(&g, &SolverConfig::new(0.0101, 10)).is_err());
    }

    #[test]
    fn tiny_dt_is_always_stable() {
        let g = VelocityGrid::constant(10, 10, 1.0, 1.0, 6000.0).unwrap();
        assert!(stability_check(&g, &SolverConfig::new(1e-9, 10)).is_ok());
    }
}
