use super::VelocityGrid;
use crate::{Error, Result};

/// Model-quality metrics. Velocities are compared in km/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
    /// `mse` divided by the variance of the reference model (km/s²).
    pub nmse: f64,
}

impl Metrics {
    /// `metric,value` rows, header included.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nmse,{}\nmae,{}\nssim,{}\nnmse,{}\n",
            self.mse, self.mae, self.ssim, self.nmse
        )
    }
}

const WINDOW: usize = 7;
const SIGMA: f64 = 1.5;

pub fn evaluate_metrics(predicted: &VelocityGrid, truth: &VelocityGrid) -> Result<Metrics> {
    if !predicted.same_shape(truth) {
        return Err(Error::invalid(format!(
            "metric shapes differ: {}x{} vs {}x{}",
            predicted.nz(),
            predicted.nx(),
            truth.nz(),
            truth.nx()
        )));
    }
    let n = truth.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in predicted.values().iter().zip(truth.values()) {
        let d = (p - t) / 1000.0;
        se += d * d;
        ae += d.abs();
    }
    let mse = se / n;
    let mae = ae / n;
    let mean = truth.values().iter().sum::<f64>() / n / 1000.0;
    let var = truth.values().iter().map(|t| (t / 1000.0 - mean).powi(2)).sum::<f64>() / n;
    let nmse = if var > 0.0 {
        mse / var
    } else if mse == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(Metrics { mse, mae, ssim: ssim(predicted, truth)?, nmse })
}

fn gaussian_taps(len: usize) -> Vec<f64> {
    if len < WINDOW {
        return vec![1.0];
    }
    let r = (WINDOW / 2) as f64;
    let w: Vec<f64> = (0..WINDOW).map(|k| (-((k as f64 - r).powi(2)) / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a row-major `nz × nx` field.
fn filter(field: &[f64], nz: usize, nx: usize, wz: &[f64], wx: &[f64]) -> (Vec<f64>, usize, usize) {
    let ox = nx + 1 - wx.len();
    let oz = nz + 1 - wz.len();
    let mut rows = vec![0.0; nz * ox];
    for iz in 0..nz {
        for ix in 0..ox {
            rows[iz * ox + ix] = wx.iter().enumerate().map(|(k, w)| w * field[iz * nx + ix + k]).sum();
        }
    }
    let mut out = vec![0.0; oz * ox];
    for iz in 0..oz {
        for ix in 0..ox {
            out[iz * ox + ix] = wz.iter().enumerate().map(|(k, w)| w * rows[(iz + k) * ox + ix]).sum();
        }
    }
    (out, oz, ox)
}

/// Mean SSIM with a 7×7 Gaussian window (σ = 1.5) over valid window
/// positions. Axes shorter than the window use a single tap. The dynamic
/// range is taken from `truth`.
pub fn ssim(predicted: &VelocityGrid, truth: &VelocityGrid) -> Result<f64> {
    if !predicted.same_shape(truth) {
        return Err(Error::invalid("ssim inputs must have the same shape"));
    }
    let (nz, nx) = (truth.nz(), truth.nx());
    let x: Vec<f64> = predicted.values().iter().map(|v| v / 1000.0).collect();
    let y: Vec<f64> = truth.values().iter().map(|v| v / 1000.0).collect();
    let range = ((truth.max() - truth.min()) / 1000.0).max(1e-12);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let wz = gaussian_taps(nz);
    let wx = gaussian_taps(nx);

    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mx, oz, ox) = filter(&x, nz, nx, &wz, &wx);
    let (my, _, _) = filter(&y, nz, nx, &wz, &wx);
    let (mxx, _, _) = filter(&prod(&x, &x), nz, nx, &wz, &wx);
    let (myy, _, _) = filter(&prod(&y, &y), nz, nx, &wz, &wx);
    let (mxy, _, _) = filter(&prod(&x, &y), nz, nx, &wz, &wx);

    let mut total = 0.0;
    for i in 0..oz * ox {
        let (ux, uy) = (mx[i], my[i]);
        let sx = mxx[i] - ux * ux;
        let sy = myy[i] - uy * uy;
        let sxy = mxy[i] - ux * uy;
        let num = (2.0 * ux * uy + c1) * (2.0 * sxy + c2);
        let den = (ux * ux + uy * uy + c1) * (sx + sy + c2);
        total += num / den;
    }
    Ok((total / (oz * ox) as f64).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Direct windowed SSIM with an explicit 2D weight table.
    fn ssim_reference(p: &VelocityGrid, t: &VelocityGrid) -> f64 {
        let (nz, nx) = (t.nz(), t.nx());
        let taps = |n: usize| -> Vec<f64> {
            if n < 7 {
                return vec![1.0];
            }
            let raw: Vec<f64> = (0..7).map(|k| (-((k as f64 - 3.0).powi(2)) / 4.5).exp()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        };
        let (wz, wx) = (taps(nz), taps(nx));
        let lo = t.values().iter().copied().fold(f64::INFINITY, f64::min) / 1000.0;
        let hi = t.values().iter().copied().fold(f64::NEG_INFINITY, f64::max) / 1000.0;
        let l = hi - lo;
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let mut acc = 0.0;
        let mut count = 0;
        for z0 in 0..=nz - wz.len() {
            for x0 in 0..=nx - wx.len() {
                let mut s = [0.0; 5];
                for (a, wa) in wz.iter().enumerate() {
                    for (b, wb) in wx.iter().enumerate() {
                        let w = wa * wb;
                        let xv = p.get(z0 + a, x0 + b) / 1000.0;
                        let yv = t.get(z0 + a, x0 + b) / 1000.0;
                        s[0] += w * xv;
                        s[1] += w * yv;
                        s[2] += w * xv * xv;
                        s[3] += w * yv * yv;
                        s[4] += w * xv * yv;
                    }
                }
                let vx = s[2] - s[0] * s[0];
                let vy = s[3] - s[1] * s[1];
                let cxy = s[4] - s[0] * s[1];
                acc += ((2.0 * s[0] * s[1] + c1) * (2.0 * cxy + c2))
                    / ((s[0] * s[0] + s[1] * s[1] + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    fn random_grid(rng: &mut ChaCha8Rng, nz: usize, nx: usize) -> VelocityGrid {
        VelocityGrid::from_fn(nz, nx, 1.0, 1.0, |_, _| rng.random_range(1500.0..4500.0)).unwrap()
    }

    #[test]
    fn identical_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_grid(&mut rng, 12, 15);
        let m = evaluate_metrics(&g, &g).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset() {
        let t = VelocityGrid::constant(10, 10, 1.0, 1.0, 2000.0).unwrap();
        let p = VelocityGrid::constant(10, 10, 1.0, 1.0, 2100.0).unwrap();
        let m = evaluate_metrics(&p, &t).unwrap();
        assert!((m.mse - 0.01).abs() < 1e-12);
        assert!((m.mae - 0.1).abs() < 1e-12);
    }

    #[test]
    fn matches_reference_ssim() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(nz, nx) in &[(12, 15), (9, 7), (20, 1), (3, 11)] {
            let a = random_grid(&mut rng, nz, nx);
            let b = random_grid(&mut rng, nz, nx);
            let got = ssim(&a, &b).unwrap();
            let want = ssim_reference(&a, &b);
            assert!((got - want).abs() < 1e-6, "{nz}x{nx}: {got} vs {want}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = VelocityGrid::constant(3, 3, 1.0, 1.0, 1.0).unwrap();
        let b = VelocityGrid::constant(3, 4, 1.0, 1.0, 1.0).unwrap();
        assert!(evaluate_metrics(&a, &b).is_err());
    }

    #[test]
    fn csv_rows() {
        let m = Metrics { mse: 1.0, mae: 2.0, ssim: 0.5, nmse: 0.25 };
        assert!(m.to_csv().starts_with("metric,value\nmse,1\n"));
    }

    proptest::proptest! {
        #[test]
        fn mse_and_mae_are_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_grid(&mut rng, 8, 9);
            let b = random_grid(&mut rng, 8, 9);
            let ab = evaluate_metrics(&a, &b).unwrap();
            let ba = evaluate_metrics(&b, &a).unwrap();
            proptest::prop_assert!((ab.mse - ba.mse).abs() <= 1e-15 * ab.mse.max(1.0));
            proptest::prop_assert!((ab.mae - ba.mae).abs() <= 1e-15 * ab.mae.max(1.0));
            proptest::prop_assert!((-1.0..=1.0).contains(&ab.ssim));
        }
    }
}
