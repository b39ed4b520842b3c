//! Smoothed anisotropic total variation.

use super::ModelGradient;
use crate::model::VelocityGrid;

/// Default weight on both axes.
pub const TV_WEIGHT_DEFAULT: f64 = 2e-9;
/// Smoothing constant in m/s; keeps the term differentiable at flat regions.
pub const TV_SMOOTHING: f64 = 1e-3;

/// `Σ √(αx²Δx² + αz²Δz² + (αε)²) − αε` with forward differences (zero at the
/// last row/column) and `α = max(αx, αz)`. Returns the value and its gradient.
pub fn tv_term(grid: &VelocityGrid, alpha_x: f64, alpha_z: f64) -> (f64, ModelGradient) {
    let (nz, nx) = (grid.nz(), grid.nx());
    let m = grid.values();
    let mut grad = ModelGradient::like(grid);
    let a = alpha_x.max(alpha_z);
    if a <= 0.0 {
        return (0.0, grad);
    }
    let floor = a * TV_SMOOTHING;
    let mut value = 0.0;
    for iz in 0..nz {
        for ix in 0..nx {
            let i = iz * nx + ix;
            let dx = if ix + 1 < nx { m[i + 1] - m[i] } else { 0.0 };
            let dz = if iz + 1 < nz { m[i + nx] - m[i] } else { 0.0 };
            let s = ((alpha_x * dx).powi(2) + (alpha_z * dz).powi(2) + floor * floor).sqrt();
            value += s - floor;
            let gx = alpha_x * alpha_x * dx / s;
            let gz = alpha_z * alpha_z * dz / s;
            if ix + 1 < nx {
                grad.values[i + 1] += gx;
                grad.values[i] -= gx;
            }
            if iz + 1 < nz {
                grad.values[i + nx] += gz;
                grad.values[i] -= gz;
            }
        }
    }
    (value, grad)
}
