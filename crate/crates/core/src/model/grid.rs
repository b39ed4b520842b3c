use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A depth × lateral raster of velocities in m/s, stored row-major
/// (`index = iz * nx + ix`). One-dimensional models use `nx == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    nz: usize,
    nx: usize,
    dz: f64,
    dx: f64,
    values: Vec<f64>,
}

/// Half-open window `[z0, z1) × [x0, x1)` of grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub z0: usize,
    pub z1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Region {
    pub fn full(nz: usize, nx: usize) -> Self {
        Self { z0: 0, z1: nz, x0: 0, x1: nx }
    }

    pub fn nz(&self) -> usize {
        self.z1 - self.z0
    }

    pub fn nx(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn contains(&self, iz: usize, ix: usize) -> bool {
        (self.z0..self.z1).contains(&iz) && (self.x0..self.x1).contains(&ix)
    }
}

impl VelocityGrid {
    pub fn new(nz: usize, nx: usize, dz: f64, dx: f64, values: Vec<f64>) -> Result<Self> {
        if nz == 0 || nx == 0 {
            return Err(Error::invalid(format!("grid dimensions must be positive, got {nz}x{nx}")));
        }
        if !(dz > 0.0 && dz.is_finite() && dx > 0.0 && dx.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive, got dz={dz} dx={dx}")));
        }
        if values.len() != nz * nx {
            return Err(Error::invalid(format!(
                "grid has {} values, expected {}x{}={}",
                values.len(),
                nz,
                nx,
                nz * nx
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("velocity at index {i} must be finite and positive, got {v}")));
        }
        Ok(Self { nz, nx, dz, dx, values })
    }

    pub fn constant(nz: usize, nx: usize, dz: f64, dx: f64, velocity: f64) -> Result<Self> {
        Self::new(nz, nx, dz, dx, vec![velocity; nz * nx])
    }

    pub fn from_fn(
        nz: usize,
        nx: usize,
        dz: f64,
        dx: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(nz * nx);
        for iz in 0..nz {
            for ix in 0..nx {
                values.push(f(iz, ix));
            }
        }
        Self::new(nz, nx, dz, dx, values)
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self, iz: usize, ix: usize) -> usize {
        iz * self.nx + ix
    }

    pub fn get(&self, iz: usize, ix: usize) -> f64 {
        self.values[iz * self.nx + ix]
    }

    pub fn same_shape(&self, other: &VelocityGrid) -> bool {
        self.nz == other.nz && self.nx == other.nx
    }

    /// Number of axes with more than one cell.
    pub fn spatial_dims(&self) -> usize {
        usize::from(self.nz > 1) + usize::from(self.nx > 1)
    }

    pub fn is_1d(&self) -> bool {
        self.nx == 1 || self.nz == 1
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same geometry, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.nz, self.nx, self.dz, self.dx, values)
    }

    pub fn crop(&self, region: Region) -> Result<Self> {
        if region.z1 > self.nz || region.x1 > self.nx || region.nz() == 0 || region.nx() == 0 {
            return Err(Error::invalid(format!("region {region:?} outside {}x{} grid", self.nz, self.nx)));
        }
        Self::from_fn(region.nz(), region.nx(), self.dz, self.dx, |iz, ix| {
            self.get(region.z0 + iz, region.x0 + ix)
        })
    }

    /// Extend the grid by replicating edge values. Returns the padded grid and
    /// the window holding the original cells.
    pub fn pad_edges(&self, top: usize, bottom: usize, left: usize, right: usize) -> (Self, Region) {
        let nz = self.nz + top + bottom;
        let nx = self.nx + left + right;
        let grid = Self::from_fn(nz, nx, self.dz, self.dx, |iz, ix| {
            let sz = iz.saturating_sub(top).min(self.nz - 1);
            let sx = ix.saturating_sub(left).min(self.nx - 1);
            self.get(sz, sx)
        })
        .expect("padding preserves grid invariants");
        let region = Region { z0: top, z1: top + self.nz, x0: left, x1: left + self.nx };
        (grid, region)
    }

    /// Every `factor`-th cell in both directions, spacing scaled accordingly.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("decimation factor must be positive"));
        }
        let nz = self.nz.div_ceil(factor);
        let nx = self.nx.div_ceil(factor);
        let fz = if self.nz > 1 { factor } else { 1 };
        let fx = if self.nx > 1 { factor } else { 1 };
        Self::from_fn(nz, nx, self.dz * fz as f64, self.dx * fx as f64, |iz, ix| {
            self.get(iz * fz, ix * fx)
        })
    }

    /// Separable Gaussian smoothing with standard deviation `sigma` cells and
    /// clamped edges.
    pub fn smoothed(&self, sigma: f64) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f64 = kernel.iter().sum();
        let blur = |src: &[f64], n: usize, stride: usize, count: usize, step: usize| -> Vec<f64> {
            let mut out = src.to_vec();
            for line in 0..count {
                let base = line * step;
                for i in 0..n {
                    let mut acc = 0.0;
                    for (k, w) in kernel.iter().enumerate() {
                        let j = (i as isize + k as isize - radius).clamp(0, n as isize - 1) as usize;
                        acc += w * src[base + j * stride];
                    }
                    out[base + i * stride] = acc / norm;
                }
            }
            out
        };
        let mut v = self.values.clone();
        if self.nx > 1 {
            v = blur(&v, self.nx, 1, self.nz, self.nx);
        }
        if self.nz > 1 {
            v = blur(&v, self.nz, self.nx, self.nx, 1);
        }
        Self { values: v, ..*self }
    }

    /// Normalised coordinates of a cell in `[-1, 1]` per axis. Axes with a
    /// single cell map to 0.
    pub fn normalized_coord(&self, iz: usize, ix: usize) -> [f64; 2] {
        let norm = |i: usize, n: usize| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
        [norm(iz, self.nz), norm(ix, self.nx)]
    }
}

impl std::ops::Index<usize> for VelocityGrid {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}
