//! Wave kernels and wave-based NTKs.
//!
//! For a forward map `d(m)` with sensitivity `J = ∂d/∂m` and a representation
//! `m_θ` with parameter Jacobian `G = ∂m/∂θ`, the linearised residual flow is
//! governed by `Θ = J K Jᵀ` with `K = G Gᵀ`. A direct grid has `K = I`, which
//! leaves the wave kernel `J Jᵀ`.

mod oracle;
mod stationarity;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{AcquisitionGeometry, Region, VelocityGrid, Wavelet};
use crate::repr::{init_repr, RepNtkMatrix, ReprSpec};
use crate::solver::{check_inputs, Propagator, SolverConfig};
use crate::{Error, Result};

pub use oracle::{
    dominance_check, spectral_comparison_oracle, spectral_decay_check, ComparisonReport, Counterexample, DecayReport,
    ModeDecay, shared_head_sandwich, SandwichReport, COMPARISON_TOL, RETAIN_FLOOR,
};
pub use stationarity::{stationarity_experiment, StationarityOptions, StationarityTrace, TrainingTrace, WidthStats};

/// Entries allowed in a sensitivity Jacobian.
pub const JACOBIAN_GUARD: usize = 50_000_000;
/// Largest kernel handed to the eigensolver.
pub const KERNEL_MAX_DIM: usize = 2000;

/// Which data samples become Jacobian rows. Time samples are taken at
/// `k = time_stride − 1, 2·time_stride − 1, …` so the last sample is kept and
/// the always-zero first sample is skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobianSampling {
    pub receiver_stride: usize,
    pub time_stride: usize,
}

impl Default for JacobianSampling {
    fn default() -> Self {
        Self { receiver_stride: 1, time_stride: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSample {
    pub shot: usize,
    pub receiver: usize,
    pub time: usize,
}

/// `matrix[(j, i)] = ∂ d(samples[j]) / ∂ m(cells[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityJacobian {
    pub matrix: DMatrix<f64>,
    pub samples: Vec<DataSample>,
    pub cells: Vec<usize>,
}

/// Flat indices of the cells in `region`, row-major.
pub fn region_cells(grid: &VelocityGrid, region: Region) -> Vec<usize> {
    (region.z0..region.z1).flat_map(|iz| (region.x0..region.x1).map(move |ix| iz * grid.nx() + ix)).collect()
}

/// Rows and columns of a sampled Jacobian, refusing sizes beyond
/// [`JACOBIAN_GUARD`] entries.
pub fn jacobian_shape(n_shots: usize, n_receivers: usize, nt: usize, sampling: JacobianSampling, n_cells: usize) -> Result<(usize, usize)> {
    if sampling.receiver_stride == 0 || sampling.time_stride == 0 {
        return Err(Error::invalid("sampling strides must be positive"));
    }
    let times = (nt + 1).saturating_sub(sampling.time_stride).div_ceil(sampling.time_stride);
    let rows = n_shots * n_receivers.div_ceil(sampling.receiver_stride) * times;
    let required = rows.saturating_mul(n_cells);
    if required > JACOBIAN_GUARD {
        return Err(Error::ResourceGuard { what: "sensitivity Jacobian entries", required, limit: JACOBIAN_GUARD });
    }
    Ok((rows, n_cells))
}

/// Sensitivity of the sampled data to the cells in `columns` (every cell when
/// `None`). One forward pass per shot, one adjoint pass per row.
pub fn sensitivity_jacobian(
    grid: &VelocityGrid,
    wavelet: &Wavelet,
    geometry: &AcquisitionGeometry,
    cfg: &SolverConfig,
    sampling: JacobianSampling,
    columns: Option<Region>,
) -> Result<SensitivityJacobian> {
    check_inputs(grid, wavelet, geometry, cfg)?;
    let cells = match columns {
        Some(r) => {
            if r.z1 > grid.nz() || r.x1 > grid.nx() || r.nz() == 0 || r.nx() == 0 {
                return Err(Error::invalid(format!("column region {r:?} outside the grid")));
            }
            region_cells(grid, r)
        }
        None => (0..grid.len()).collect(),
    };
    let nt = cfg.nt;
    let n_rec = geometry.receivers.len();
    jacobian_shape(geometry.n_shots(), n_rec, nt, sampling, cells.len())?;
    let times: Vec<usize> = (sampling.time_stride - 1..nt).step_by(sampling.time_stride).collect();
    let samples: Vec<DataSample> = (0..geometry.n_shots())
        .flat_map(|shot| {
            let times = &times;
            (0..n_rec)
                .step_by(sampling.receiver_stride)
                .flat_map(move |receiver| times.iter().map(move |&time| DataSample { shot, receiver, time }))
        })
        .collect();
    let prop = Propagator::new(grid, cfg)?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    for shot in 0..geometry.n_shots() {
        let src = geometry.sources[shot];
        let (_, tape) = prop
            .forward_taped(wavelet.samples(), src, &geometry.receivers, 1)
            .map_err(|e| e.with_shot(shot))?;
        let shot_rows: Vec<Vec<f64>> = samples
            .par_iter()
            .filter(|s| s.shot == shot)
            .map(|s| {
                let mut seed = vec![0.0; n_rec * nt];
                seed[s.receiver * nt + s.time] = 1.0;
                let g = prop.adjoint(&tape, wavelet.samples(), src, &geometry.receivers, &seed)?;
                Ok(cells.iter().map(|&c| g[c]).collect())
            })
            .collect::<Result<_>>()
            .map_err(|e: Error| e.with_shot(shot))?;
        rows.extend(shot_rows);
    }
    let matrix = DMatrix::from_fn(samples.len(), cells.len(), |j, i| rows[j][i]);
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("sensitivity Jacobian is not finite"));
    }
    Ok(SensitivityJacobian { matrix, samples, cells })
}

/// A symmetric kernel over data samples.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub label: String,
    pub matrix: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Sum of singular values; for a symmetric matrix, of |eigenvalues|.
    pub fn nuclear_norm(&self) -> Result<f64> {
        Ok(symmetric_eigenvalues(&self.matrix)?.iter().map(|l| l.abs()).sum())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { label: self.label.clone(), matrix: &self.matrix * factor }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `Θ = J Jᵀ`.
pub fn wave_kernel(j: &SensitivityJacobian) -> KernelMatrix {
    KernelMatrix { label: "wave-kernel".into(), matrix: symmetrize(&j.matrix * j.matrix.transpose()) }
}

/// `Θ = J K Jᵀ` with `K` sampled on the Jacobian's columns.
pub fn wave_ntk(j: &SensitivityJacobian, k: &RepNtkMatrix) -> Result<KernelMatrix> {
    if k.points != j.cells {
        return Err(Error::invalid(format!(
            "kernel sampled on {} points, Jacobian has {} columns on different cells",
            k.points.len(),
            j.cells.len()
        )));
    }
    wave_ntk_matrix(&j.matrix, &k.kernel).map(|matrix| KernelMatrix { label: "wave-ntk".into(), matrix })
}

/// `J K Jᵀ` for plain matrices.
pub fn wave_ntk_matrix(j: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k.nrows() != j.ncols() || k.ncols() != j.ncols() {
        return Err(Error::invalid(format!(
            "kernel is {}x{}, Jacobian has {} columns",
            k.nrows(),
            k.ncols(),
            j.ncols()
        )));
    }
    let jk = j * k;
    Ok(symmetrize(&jk * j.transpose()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalize {
    #[default]
    None,
    LambdaMaxToOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub label: String,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub normalize: Normalize,
    /// What the raw eigenvalues were multiplied by.
    pub factor: f64,
}

impl SpectrumReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue\n");
        for (i, l) in self.eigenvalues.iter().enumerate() {
            s.push_str(&format!("{},{:e}\n", i + 1, l));
        }
        s
    }

    /// Least-squares slope of `log λ_j` against `log j` for `j ∈ [2, n/2]`
    /// (1-based) with `n = rank_bound`. Non-positive eigenvalues are skipped.
    pub fn decay_slope(&self, rank_bound: usize) -> Option<f64> {
        let hi = (rank_bound / 2).min(self.eigenvalues.len());
        let pts: Vec<(f64, f64)> = (2..=hi)
            .filter_map(|j| {
                let l = self.eigenvalues[j - 1];
                (l > 0.0).then(|| ((j as f64).ln(), l.ln()))
            })
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    if m.nrows() > KERNEL_MAX_DIM {
        return Err(Error::ResourceGuard { what: "eigensolver dimension", required: m.nrows(), limit: KERNEL_MAX_DIM });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix is not finite"));
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m.clone())).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Eigenvalues and eigenvectors, descending.
pub(crate) fn eigen_decomposition(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    symmetric_eigenvalues(m)?;
    let e = SymmetricEigen::new(symmetrize(m.clone()));
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    let vals = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), m.nrows(), |r, c| e.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

pub fn eigen_spectrum(m: &KernelMatrix, normalize: Normalize) -> Result<SpectrumReport> {
    let mut eigenvalues = symmetric_eigenvalues(&m.matrix)?;
    let factor = match normalize {
        Normalize::None => 1.0,
        Normalize::LambdaMaxToOne => {
            let top = eigenvalues.first().copied().unwrap_or(0.0);
            if top <= 0.0 {
                return Err(Error::invalid("cannot normalise a spectrum without a positive eigenvalue"));
            }
            1.0 / top
        }
    };
    if factor != 1.0 {
        eigenvalues.iter_mut().for_each(|l| *l *= factor);
    }
    Ok(SpectrumReport { label: m.label.clone(), eigenvalues, normalize, factor })
}

/// One method's wave-based NTK spectrum on a shared Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayEntry {
    pub label: String,
    pub spectrum: SpectrumReport,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayComparison {
    pub rank_bound: usize,
    pub entries: Vec<DecayEntry>,
}

impl DecayComparison {
    pub fn slope(&self, label: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.slope)
    }

    /// Whether the slopes of `labels` are non-increasing with every
    /// consecutive gap at least `margin`.
    pub fn ordered(&self, labels: &[&str], margin: f64) -> bool {
        let slopes: Option<Vec<f64>> = labels.iter().map(|l| self.slope(l)).collect();
        match slopes {
            Some(s) => s.windows(2).all(|w| w[0] - w[1] >= margin),
            None => false,
        }
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,slope\n");
        for e in &self.entries {
            s.push_str(&format!("{},{:.6}\n", e.label, e.slope));
        }
        s
    }
}

/// Slope order expected from slowest to fastest decay.
pub const DECAY_ORDER: [&str; 4] = ["direct-grid", "hash-grid", "hybrid-ig", "siren-inr"];
/// Minimum slope gap between consecutive methods of [`DECAY_ORDER`].
pub const DECAY_MARGIN: f64 = 0.05;

/// λ_max-normalised wave-based NTK spectra of `specs`, all sharing the
/// Jacobian `j` taken at `m0` and restricted to `j.cells`.
pub fn decay_comparison(j: &SensitivityJacobian, m0: &VelocityGrid, specs: &[ReprSpec], seed: u64) -> Result<DecayComparison> {
    let rank_bound = j.matrix.nrows().min(j.matrix.ncols());
    let entries = specs
        .iter()
        .map(|spec| {
            let theta = match spec {
                ReprSpec::DirectGrid => wave_kernel(j),
                _ => {
                    let repr = init_repr(spec.clone(), m0, seed)?;
                    wave_ntk(j, &repr.rep_ntk(&j.cells)?)?
                }
            };
            let spectrum = eigen_spectrum(&theta, Normalize::LambdaMaxToOne)?;
            let slope = spectrum
                .decay_slope(rank_bound)
                .ok_or_else(|| Error::invalid(format!("{}: too few positive eigenvalues for a slope", spec.name())))?;
            Ok(DecayEntry { label: spec.name().to_string(), spectrum: SpectrumReport { label: spec.name().into(), ..spectrum }, slope })
        })
        .collect::<Result<_>>()?;
    Ok(DecayComparison { rank_bound, entries })
}
