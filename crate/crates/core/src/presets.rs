//! Deterministic synthetic models and the standard acquisition setups.
//!
//! No field data ships with the crate. [`marmousi_like`] is a procedural
//! stand-in with the traits that matter here: a water layer, dipping
//! sediments with strong layer contrasts, normal faults and an anticline,
//! roughly 1500 to 4400 m/s. Real Marmousi grids can be loaded from VGRD files and
//! passed through [`crop_setup`] instead.

use std::f64::consts::PI;

use crate::model::{AcquisitionGeometry, Boundary, Region, VelocityGrid, Wavelet};
use crate::invert::{InversionProblem, ShotData};
use crate::solver::{simulate_all, SolverConfig};
use crate::Result;

pub const MARMOUSI_NZ: usize = 94;
pub const MARMOUSI_NX: usize = 288;
pub const MARMOUSI_SPACING: f64 = 15.0;

const WATER_DEPTH: f64 = 45.0;
const V_MAX: f64 = 4700.0;

/// Layer velocity jitter, fixed so the model never depends on an RNG.
const LAYER_JITTER: [f64; 16] =
    [120.0, -260.0, 310.0, -90.0, 200.0, -340.0, 60.0, 280.0, -180.0, 150.0, -300.0, 240.0, -40.0, 330.0, -220.0, 90.0];

/// (surface x in m, dip as dx/dz, throw in m)
const FAULTS: [(f64, f64, f64); 3] = [(1300.0, 0.45, 110.0), (2350.0, 0.55, -140.0), (3300.0, 0.4, 90.0)];

/// Relative burial depth of `(z, x)` below the sea floor, in meters.
fn burial(z: f64, x: f64, width: f64) -> f64 {
    let mut t = z - WATER_DEPTH;
    // regional dip towards the right and an anticline whose amplitude grows
    // with depth
    t += 0.07 * x;
    let u = (x - 0.62 * width) / (0.13 * width);
    t += (z / 1400.0) * 260.0 * (-u * u).exp();
    t += 25.0 * (2.0 * PI * x / 900.0).sin() * (z / 1400.0);
    for &(x0, dip, throw) in &FAULTS {
        if x > x0 + dip * z {
            t += throw;
        }
    }
    t
}

/// Velocity of the Marmousi-like section at depth `z` and offset `x` (meters)
/// for a section `width` meters wide.
pub fn marmousi_velocity(z: f64, x: f64, width: f64) -> f64 {
    if z < WATER_DEPTH {
        return 1500.0;
    }
    let t = burial(z, x, width).max(0.0);
    let thickness = 75.0;
    let layer = (t / thickness).floor() as usize;
    let trend = 1650.0 + 1.35 * t;
    let v = trend + LAYER_JITTER[layer % LAYER_JITTER.len()];
    // high-velocity wedge at the base
    let wedge = z > 1150.0 + 0.08 * (x - 0.3 * width).abs();
    let v = if wedge { v.max(4300.0) } else { v };
    v.clamp(1550.0, V_MAX)
}

/// Procedural Marmousi-like section sampled on an `nz × nx` grid.
pub fn marmousi_like(nz: usize, nx: usize, spacing: f64) -> Result<VelocityGrid> {
    let width = nx as f64 * spacing;
    VelocityGrid::from_fn(nz, nx, spacing, spacing, |iz, ix| {
        marmousi_velocity(iz as f64 * spacing, ix as f64 * spacing, width)
    })
}

/// 94 × 288 at 15 m.
pub fn marmousi() -> VelocityGrid {
    marmousi_like(MARMOUSI_NZ, MARMOUSI_NX, MARMOUSI_SPACING).expect("valid preset")
}

pub const SALT_NZ: usize = 75;
pub const SALT_NX: usize = 250;
pub const SALT_SPACING: f64 = 10.0;
const SALT_VELOCITY: f64 = 4480.0;

/// Velocity of the salt-body section at `(z, x)` meters, `width` meters
/// wide: a thin water layer, compacting sediments with mild layering and a
/// salt dome whose flanks steepen towards its base.
pub fn salt_velocity(z: f64, x: f64, width: f64) -> f64 {
    if z < 30.0 {
        return 1500.0;
    }
    let t = z - 30.0 + 0.03 * x;
    let v = 1700.0 + 1.6 * t + LAYER_JITTER[(t / 60.0) as usize % LAYER_JITTER.len()] * 0.5;
    let u = (x - 0.55 * width) / (0.22 * width);
    let top = 220.0 + 260.0 * u * u;
    let base = 640.0 - 40.0 * u;
    if u.abs() < 1.0 && z >= top && z <= base {
        SALT_VELOCITY
    } else {
        v.clamp(1550.0, 4000.0)
    }
}

/// Procedural salt-body section sampled on an `nz × nx` grid.
pub fn salt_like(nz: usize, nx: usize, spacing: f64) -> Result<VelocityGrid> {
    let width = nx as f64 * spacing;
    VelocityGrid::from_fn(nz, nx, spacing, spacing, |iz, ix| salt_velocity(iz as f64 * spacing, ix as f64 * spacing, width))
}

/// 75 × 250 at 10 m.
pub fn salt() -> VelocityGrid {
    salt_like(SALT_NZ, SALT_NX, SALT_SPACING).expect("valid preset")
}

/// Two layers with a horizontal interface at cell `interface`.
pub fn two_layer(nz: usize, nx: usize, spacing: f64, interface: usize, v_top: f64, v_bottom: f64) -> Result<VelocityGrid> {
    VelocityGrid::from_fn(nz, nx, spacing, spacing, |iz, _| if iz < interface { v_top } else { v_bottom })
}

/// Everything needed to simulate and invert one problem. `interior` holds the
/// physical cells; the rest is absorbing padding.
#[derive(Debug, Clone)]
pub struct Setup {
    pub truth: VelocityGrid,
    pub initial: VelocityGrid,
    pub geometry: AcquisitionGeometry,
    pub wavelet: Wavelet,
    pub cfg: SolverConfig,
    pub interior: Region,
}

impl Setup {
    /// Observed data simulated in the true model, with the initial model as
    /// the starting point.
    pub fn problem(&self) -> Result<InversionProblem> {
        let observed = ShotData::new(simulate_all(&self.truth, &self.wavelet, &self.geometry, &self.cfg)?);
        Ok(InversionProblem {
            observed,
            m0: self.initial.clone(),
            geometry: self.geometry.clone(),
            wavelet: self.wavelet.clone(),
            cfg: self.cfg.clone(),
            truth: Some(self.truth.clone()),
        })
    }
}

/// Pad `grid` for an absorbing layer of `width` cells on the damped edges.
pub fn pad_for_pml(grid: &VelocityGrid, width: usize, boundary: Boundary) -> (VelocityGrid, Region) {
    let top = if boundary == Boundary::PmlAll { width } else { 0 };
    let side = if grid.nx() > 1 { width } else { 0 };
    if grid.nz() > 1 {
        grid.pad_edges(top, width, side, side)
    } else {
        grid.pad_edges(0, 0, side, side)
    }
}

pub const TRACE_COLUMN: usize = 160;
pub const TRACE_PML: usize = 20;
pub const TRACE_FREQ: f64 = 8.0;
pub const TRACE_DT: f64 = 0.0019;
pub const TRACE_NT: usize = 1000;
/// Smoothing (cells) of the initial trace model.
pub const TRACE_SMOOTHING: f64 = 6.0;

/// One column of the Marmousi-like section as a 1D problem: 94 cells at 15 m,
/// 20 absorbing cells on both ends, source and receiver on the first physical
/// cell, 8 Hz Ricker, 1.9 ms, 1000 samples. The initial model is the smoothed
/// trace.
pub fn trace_setup() -> Setup {
    let full = marmousi();
    let trace = full.crop(Region { z0: 0, z1: MARMOUSI_NZ, x0: TRACE_COLUMN, x1: TRACE_COLUMN + 1 }).expect("column");
    let (truth, interior) = pad_for_pml(&trace, TRACE_PML, Boundary::PmlAll);
    let (initial, _) = pad_for_pml(&trace.smoothed(TRACE_SMOOTHING), TRACE_PML, Boundary::PmlAll);
    let cell = (interior.z0, 0);
    Setup {
        truth,
        initial,
        geometry: AcquisitionGeometry::new(vec![cell], vec![cell], Boundary::PmlAll),
        wavelet: Wavelet::ricker(TRACE_FREQ, TRACE_DT, TRACE_NT).expect("valid wavelet"),
        cfg: SolverConfig {
            pml_width: TRACE_PML,
            boundary: Boundary::PmlAll,
            ..SolverConfig::new(TRACE_DT, TRACE_NT)
        },
        interior,
    }
}

/// Knobs of the down-sampled 2D crop.
#[derive(Debug, Clone, PartialEq)]
pub struct CropOptions {
    /// First column of the crop after decimation.
    pub x0: usize,
    pub nx: usize,
    pub decimation: usize,
    pub pml_width: usize,
    pub n_shots: usize,
    pub freq: f64,
    pub dt: f64,
    pub nt: usize,
    /// Smoothing (cells) of the smooth initial model.
    pub smoothing: f64,
}

impl Default for CropOptions {
    fn default() -> Self {
        Self { x0: 36, nx: 72, decimation: 2, pml_width: 10, n_shots: 4, freq: 8.0, dt: 0.0019, nt: 600, smoothing: 4.0 }
    }
}

/// How to start an inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialModel {
    /// Gaussian-smoothed truth.
    Smooth,
    /// The velocity just below the water layer everywhere below it.
    Constant,
}

/// A decimated, cropped window of `full` padded for a free surface and
/// absorbing sides. Sources sit evenly along the surface of the crop, one row
/// down; receivers on every surface cell of the crop.
pub fn crop_setup(full: &VelocityGrid, opts: &CropOptions, init: InitialModel) -> Result<Setup> {
    let dec = full.decimate(opts.decimation)?;
    let crop = dec.crop(Region { z0: 0, z1: dec.nz(), x0: opts.x0, x1: opts.x0 + opts.nx })?;
    let boundary = Boundary::FreeSurfaceTop;
    let initial_crop = match init {
        InitialModel::Smooth => crop.smoothed(opts.smoothing),
        InitialModel::Constant => constant_below_water(&crop),
    };
    let (truth, interior) = pad_for_pml(&crop, opts.pml_width, boundary);
    let (initial, _) = pad_for_pml(&initial_crop, opts.pml_width, boundary);
    let depth = 1;
    let n = opts.n_shots.max(1);
    let sources = (0..n)
        .map(|s| (depth, interior.x0 + ((2 * s + 1) * opts.nx) / (2 * n)))
        .collect();
    let receivers = (interior.x0..interior.x1).map(|ix| (depth, ix)).collect();
    Ok(Setup {
        truth,
        initial,
        geometry: AcquisitionGeometry::new(sources, receivers, boundary),
        wavelet: Wavelet::ricker(opts.freq, opts.dt, opts.nt)?,
        cfg: SolverConfig { pml_width: opts.pml_width, boundary, ..SolverConfig::new(opts.dt, opts.nt) },
        interior,
    })
}

/// Rows whose every cell holds the model's minimum velocity.
pub fn water_rows(grid: &VelocityGrid) -> Vec<bool> {
    let water = grid.min();
    (0..grid.nz()).map(|iz| (0..grid.nx()).all(|ix| grid.get(iz, ix) == water)).collect()
}

/// Keep the water rows, replace the rest by the shallowest sub-water value.
pub fn constant_below_water(grid: &VelocityGrid) -> VelocityGrid {
    let water = grid.min();
    let rows = water_rows(grid);
    let v = rows
        .iter()
        .position(|w| !w)
        .map(|iz| (0..grid.nx()).map(|ix| grid.get(iz, ix)).sum::<f64>() / grid.nx() as f64)
        .unwrap_or(water);
    VelocityGrid::from_fn(grid.nz(), grid.nx(), grid.dz(), grid.dx(), |iz, _| if rows[iz] { water } else { v })
        .expect("positive velocities")
}

/// Keep the water rows and ramp linearly in depth from `top` on the first
/// row below them to `bottom` on the last row.
pub fn linear_below_water(grid: &VelocityGrid, top: f64, bottom: f64) -> Result<VelocityGrid> {
    let water = grid.min();
    let rows = water_rows(grid);
    let first = rows.iter().position(|w| !w).unwrap_or(grid.nz());
    let span = (grid.nz() - first).saturating_sub(1).max(1) as f64;
    VelocityGrid::from_fn(grid.nz(), grid.nx(), grid.dz(), grid.dx(), |iz, _| {
        if rows[iz] {
            water
        } else {
            top + (bottom - top) * (iz - first) as f64 / span
        }
    })
}

/// The down-sampled 47 × 72 crop of [`marmousi`].
pub fn marmousi_crop(init: InitialModel) -> Setup {
    crop_setup(&marmousi(), &CropOptions::default(), init).expect("valid preset")
}
