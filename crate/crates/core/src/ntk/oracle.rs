//! Randomisable checks of the spectral statements.

use nalgebra::{DMatrix, DVector};

use super::{eigen_decomposition, symmetric_eigenvalues, wave_ntk_matrix};
use crate::{Error, Result};

/// Relative slack on per-index eigenvalue comparisons, times `λ_1`.
pub const COMPARISON_TOL: f64 = 1e-10;
/// Modes whose predicted projection falls below this fraction of `‖e(0)‖`
/// are not compared.
pub const RETAIN_FLOOR: f64 = 1e-6;

/// Everything needed to reproduce a failed comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub j: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub bump: DMatrix<f64>,
    pub index: usize,
    pub upper: f64,
    pub lower: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// Spectrum of the dominating kernel, descending.
    pub upper: Vec<f64>,
    /// Spectrum of the dominated kernel, descending.
    pub lower: Vec<f64>,
    pub tolerance: f64,
}

impl ComparisonReport {
    /// Indices with `upper[i] < lower[i] − tolerance`.
    pub fn violations(&self) -> Vec<usize> {
        (0..self.upper.len()).filter(|&i| self.upper[i] < self.lower[i] - self.tolerance).collect()
    }

    /// Largest `lower[i] − upper[i]`.
    pub fn worst_gap(&self) -> f64 {
        self.upper.iter().zip(&self.lower).map(|(u, l)| l - u).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_psd_shape(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::invalid(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// With `K1 = K2 + bump` and `bump ⪰ 0`, check
/// `λ_i(J K1 Jᵀ) ≥ λ_i(J K2 Jᵀ) − tol·λ_1` for every `i`. A violation comes
/// back as [`Error::Counterexample`].
pub fn spectral_comparison_oracle(j: &DMatrix<f64>, k2: &DMatrix<f64>, bump: &DMatrix<f64>) -> Result<ComparisonReport> {
    let n = j.ncols();
    check_psd_shape("K2", k2, n)?;
    check_psd_shape("bump", bump, n)?;
    let k1 = k2 + bump;
    let upper = symmetric_eigenvalues(&wave_ntk_matrix(j, &k1)?)?;
    let lower = symmetric_eigenvalues(&wave_ntk_matrix(j, k2)?)?;
    let scale = upper.first().copied().unwrap_or(0.0).abs().max(lower.first().copied().unwrap_or(0.0).abs());
    let report = ComparisonReport { upper, lower, tolerance: COMPARISON_TOL * scale };
    if let Some(&index) = report.violations().first() {
        return Err(Error::Counterexample(Box::new(Counterexample {
            j: j.clone(),
            k2: k2.clone(),
            bump: bump.clone(),
            index,
            upper: report.upper[index],
            lower: report.lower[index],
        })));
    }
    Ok(report)
}

/// Scale `k` to unit spectral norm and compare `J K Jᵀ` against `J Jᵀ`. The
/// report's `upper` is the wave kernel. Violations are reported, not raised.
pub fn dominance_check(j: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<ComparisonReport> {
    let n = j.ncols();
    check_psd_shape("K", k, n)?;
    let top = symmetric_eigenvalues(k)?.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::invalid("kernel has no positive eigenvalue"));
    }
    let kn = k / top;
    let upper = symmetric_eigenvalues(&wave_ntk_matrix(j, &DMatrix::identity(n, n))?)?;
    let lower = symmetric_eigenvalues(&wave_ntk_matrix(j, &kn)?)?;
    let scale = upper.first().copied().unwrap_or(0.0).abs();
    Ok(ComparisonReport { upper, lower, tolerance: COMPARISON_TOL * scale })
}

/// One mode at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDecay {
    pub mode: usize,
    pub lambda: f64,
    pub tau: f64,
    /// `e^{−λτ} |⟨e(0), φ⟩|`.
    pub predicted: f64,
    /// `|⟨e(τ), φ⟩|` from the simulated flow.
    pub simulated: f64,
    pub retained: bool,
}

impl ModeDecay {
    pub fn relative_error(&self) -> f64 {
        (self.simulated - self.predicted).abs() / self.predicted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub modes: Vec<ModeDecay>,
}

impl DecayReport {
    pub fn max_relative_error(&self) -> f64 {
        self.modes.iter().filter(|m| m.retained).map(|m| m.relative_error()).fold(0.0, f64::max)
    }

    pub fn retained(&self) -> usize {
        self.modes.iter().filter(|m| m.retained).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,lambda,tau,predicted,simulated,retained\n");
        for m in &self.modes {
            s.push_str(&format!("{},{:e},{:e},{:e},{:e},{}\n", m.mode + 1, m.lambda, m.tau, m.predicted, m.simulated, m.retained));
        }
        s
    }
}

/// Integrate `de/dτ = −Θ e` with the matrix exponential and compare the
/// projection on every eigenvector with `e^{−λ τ}` times its initial value.
pub fn spectral_decay_check(theta: &DMatrix<f64>, residual0: &[f64], taus: &[f64]) -> Result<DecayReport> {
    let n = theta.nrows();
    if residual0.len() != n {
        return Err(Error::invalid(format!("residual has {} entries, kernel is {n}x{n}", residual0.len())));
    }
    if taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::invalid("times must be finite and non-negative"));
    }
    let (lambdas, phi) = eigen_decomposition(theta)?;
    let e0 = DVector::from_column_slice(residual0);
    let floor = RETAIN_FLOOR * e0.norm();
    let p0: Vec<f64> = (0..n).map(|k| phi.column(k).dot(&e0)).collect();
    let mut modes = Vec::with_capacity(n * taus.len());
    for &tau in taus {
        let et = (theta * -tau).exp() * &e0;
        for k in 0..n {
            let predicted = (-lambdas[k] * tau).exp() * p0[k].abs();
            let simulated = phi.column(k).dot(&et).abs();
            modes.push(ModeDecay { mode: k, lambda: lambdas[k], tau, predicted, simulated, retained: predicted >= floor });
        }
    }
    Ok(DecayReport { modes })
}

/// Both halves of the interpolation sandwich.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    /// `J K_INR Jᵀ` against `J K_IG Jᵀ`.
    pub lower: ComparisonReport,
    /// `J K_IG Jᵀ` against `J K_MPE Jᵀ`.
    pub upper: ComparisonReport,
}

/// Shared-head construction: `K_INR = K_MLP + E`, `K_MPE = K_MLP + E + P`
/// and `K_IG = K_MLP + α E + (1 − α)(E + P)`, with `P ⪰ 0` so the encodings
/// are ordered. Checks `λ_i(J K_INR Jᵀ) ≤ λ_i(J K_IG Jᵀ) ≤ λ_i(J K_MPE Jᵀ)`.
pub fn shared_head_sandwich(
    j: &DMatrix<f64>,
    k_mlp: &DMatrix<f64>,
    enc_inr: &DMatrix<f64>,
    enc_plus: &DMatrix<f64>,
    alpha: f64,
) -> Result<SandwichReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let n = j.ncols();
    check_psd_shape("K_MLP", k_mlp, n)?;
    check_psd_shape("INR encoding kernel", enc_inr, n)?;
    check_psd_shape("encoding surplus", enc_plus, n)?;
    let k_inr = k_mlp + enc_inr;
    let lower = spectral_comparison_oracle(j, &k_inr, &(enc_plus * (1.0 - alpha)))?;
    let k_ig = &k_inr + enc_plus * (1.0 - alpha);
    let upper = spectral_comparison_oracle(j, &k_ig, &(enc_plus * alpha))?;
    Ok(SandwichReport { lower, upper })
}
