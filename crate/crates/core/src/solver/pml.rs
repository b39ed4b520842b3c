//! Convolutional PML coefficients.
//!
//! Per axis, the auxiliary fields follow
//! `p ← a·p − b·∂u` and `z ← a·z − b·(∂²u + ∂p)` with `a = exp(−σ dt)` and
//! `b = 1 − a ≥ 0`, where `σ(d) = σ_max (d / width)²` grows quadratically
//! from the inner edge of the layer to the grid edge.

use super::SolverConfig;
use crate::model::{Boundary, VelocityGrid};
use crate::{Error, Result};

/// Reflection coefficient targeted by the default damping strength.
const TARGET_REFLECTION: f64 = 1e-3;

/// Damping along one axis, indexed by cell position on that axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisProfile {
    pub sigma: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl AxisProfile {
    fn undamped(len: usize) -> Self {
        Self { sigma: vec![0.0; len], a: vec![1.0; len], b: vec![0.0; len] }
    }

    /// Cells with non-zero damping.
    pub fn is_damped(&self, k: usize) -> bool {
        self.b[k] > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmlProfiles {
    pub z: AxisProfile,
    pub x: AxisProfile,
}

impl PmlProfiles {
    /// Combined coefficient fields on the grid: the product of the per-axis
    /// `a` and the sum of the per-axis `b`. Useful for display; the solver
    /// applies the axes separately.
    pub fn fields(&self) -> (Vec<f64>, Vec<f64>) {
        let nx = self.x.a.len();
        let mut a = Vec::with_capacity(self.z.a.len() * nx);
        let mut b = Vec::with_capacity(a.capacity());
        for iz in 0..self.z.a.len() {
            for ix in 0..nx {
                a.push(self.z.a[iz] * self.x.a[ix]);
                b.push(self.z.b[iz] + self.x.b[ix]);
            }
        }
        (a, b)
    }
}

/// Default `σ_max = 3 v_max ln(1/R) / (2 · width · h)`.
pub fn default_max_damping(v_max: f64, width: usize, spacing: f64) -> f64 {
    3.0 * v_max * (1.0 / TARGET_REFLECTION).ln() / (2.0 * width as f64 * spacing)
}

fn axis_profile(len: usize, width: usize, lo: bool, hi: bool, sigma_max: f64, dt: f64) -> AxisProfile {
    let mut p = AxisProfile::undamped(len);
    if width == 0 || len <= 1 {
        return p;
    }
    for k in 0..len {
        let depth = if lo && k < width {
            (width - k) as f64
        } else if hi && k >= len - width {
            (k + width + 1 - len) as f64
        } else {
            continue;
        };
        let sigma = sigma_max * (depth / width as f64).powi(2);
        let a = (-sigma * dt).exp();
        p.sigma[k] = sigma;
        p.a[k] = a;
        p.b[k] = 1.0 - a;
    }
    p
}

pub fn pml_profiles(grid: &VelocityGrid, cfg: &SolverConfig) -> Result<PmlProfiles> {
    let w = cfg.pml_width;
    for (len, name) in [(grid.nz(), "nz"), (grid.nx(), "nx")] {
        if len > 1 && 2 * w >= len {
            return Err(Error::invalid(format!(
                "pml width {w} must be smaller than half of {name}={len}"
            )));
        }
    }
    let v_max = grid.max();
    let sigma = |h: f64| cfg.pml_max_damping.unwrap_or_else(|| if w > 0 { default_max_damping(v_max, w, h) } else { 0.0 });
    let top = cfg.boundary == Boundary::PmlAll;
    Ok(PmlProfiles {
        z: axis_profile(grid.nz(), w, top, true, sigma(grid.dz()), cfg.dt),
        x: axis_profile(grid.nx(), w, true, true, sigma(grid.dx()), cfg.dt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> VelocityGrid {
        VelocityGrid::constant(40, 50, 10.0, 10.0, 2000.0).unwrap()
    }

    #[test]
    fn no_layer_means_no_damping() {
        let cfg = SolverConfig { pml_width: 0, ..SolverConfig::new(0.001, 10) };
        let p = pml_profiles(&grid(), &cfg).unwrap();
        let (a, b) = p.fields();
        assert!(a.iter().all(|&v| v == 1.0));
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_is_undamped_and_layer_is_graded() {
        let cfg = SolverConfig { pml_width: 8, boundary: Boundary::PmlAll, ..SolverConfig::new(0.001, 10) };
        let p = pml_profiles(&grid(), &cfg).unwrap();
        for k in 8..32 {
            assert_eq!((p.z.a[k], p.z.b[k]), (1.0, 0.0));
        }
        for k in 0..7 {
            assert!(p.z.sigma[k] > p.z.sigma[k + 1]);
            assert!(p.x.a[k] > 0.0 && p.x.a[k] <= 1.0 && p.x.b[k] >= 0.0);
        }
        let sigma_max = default_max_damping(2000.0, 8, 10.0);
        assert!((p.z.sigma[0] - sigma_max).abs() < 1e-12 * sigma_max);
        assert!((p.x.sigma[49] - sigma_max).abs() < 1e-12 * sigma_max);
        // 3·2000·ln(1000)/(2·8·10)
        assert!((sigma_max - 259.0408229).abs() < 1e-6);
    }

    #[test]
    fn free_surface_top_has_no_layer() {
        let cfg = SolverConfig { pml_width: 5, boundary: Boundary::FreeSurfaceTop, ..SolverConfig::new(0.001, 10) };
        let p = pml_profiles(&grid(), &cfg).unwrap();
        assert_eq!(p.z.b[0], 0.0);
        assert!(p.z.b[39] > 0.0);
    }

    #[test]
    fn explicit_max_damping() {
        let cfg = SolverConfig { pml_width: 4, pml_max_damping: Some(100.0), ..SolverConfig::new(0.002, 10) };
        let p = pml_profiles(&grid(), &cfg).unwrap();
        assert_eq!(p.x.sigma[0], 100.0);
        assert!((p.x.a[0] - (-0.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn oversized_layer_is_rejected() {
        let cfg = SolverConfig { pml_width: 20, ..SolverConfig::new(0.001, 10) };
        assert!(pml_profiles(&grid(), &cfg).is_err());
        // 1D grids only constrain the active axis.
        let g1 = VelocityGrid::constant(50, 1, 10.0, 10.0, 2000.0).unwrap();
        assert!(pml_profiles(&g1, &SolverConfig { pml_width: 20, ..SolverConfig::new(0.001, 10) }).is_ok());
    }
}
