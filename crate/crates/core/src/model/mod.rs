//! Domain types shared by every other module.

mod geometry;
mod grid;
pub mod io;
mod metrics;
mod wavelet;

pub use geometry::{AcquisitionGeometry, Boundary};
pub use grid::{Region, VelocityGrid};
pub use metrics::{evaluate_metrics, ssim, Metrics};
pub use wavelet::{ricker, Wavelet};

use crate::{Error, Result};

/// Receiver × time samples recorded for one source. Row-major by receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotGather {
    n_receivers: usize,
    nt: usize,
    dt: f64,
    data: Vec<f64>,
}

impl ShotGather {
    pub fn new(n_receivers: usize, nt: usize, dt: f64, data: Vec<f64>) -> Result<Self> {
        if n_receivers == 0 || nt == 0 {
            return Err(Error::invalid("gather needs at least one receiver and one sample"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("gather dt must be positive, got {dt}")));
        }
        if data.len() != n_receivers * nt {
            return Err(Error::invalid(format!(
                "gather payload has {} samples, expected {}",
                data.len(),
                n_receivers * nt
            )));
        }
        Ok(Self { n_receivers, nt, dt, data })
    }

    pub fn zeros(n_receivers: usize, nt: usize, dt: f64) -> Self {
        Self { n_receivers, nt, dt, data: vec![0.0; n_receivers * nt] }
    }

    pub fn n_receivers(&self) -> usize {
        self.n_receivers
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn trace(&self, receiver: usize) -> &[f64] {
        &self.data[receiver * self.nt..(receiver + 1) * self.nt]
    }

    pub fn trace_mut(&mut self, receiver: usize) -> &mut [f64] {
        let nt = self.nt;
        &mut self.data[receiver * nt..(receiver + 1) * nt]
    }

    pub fn get(&self, receiver: usize, k: usize) -> f64 {
        self.data[receiver * self.nt + k]
    }

    pub fn same_shape(&self, other: &ShotGather) -> bool {
        self.n_receivers == other.n_receivers && self.nt == other.nt
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ShotGather) -> Result<ShotGather> {
        if !self.same_shape(other) {
            return Err(Error::invalid(format!(
                "gather shapes differ: {}x{} vs {}x{}",
                self.n_receivers, self.nt, other.n_receivers, other.nt
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(ShotGather { data, ..*self })
    }

    pub fn scaled(&self, factor: f64) -> ShotGather {
        ShotGather {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..*self
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
