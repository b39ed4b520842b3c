use crfwi_core::adjoint::{
    data_gradient, fd_gradient_oracle, misfit, model_gradient, GradientOptions, ModelGradient,
};
use crfwi_core::solver::simulate_all;
use crfwi_core::{AcquisitionGeometry, Boundary, ShotGather, SolverConfig, VelocityGrid, Wavelet};

struct Case {
    grid: VelocityGrid,
    truth: VelocityGrid,
    wavelet: Wavelet,
    geo: AcquisitionGeometry,
    cfg: SolverConfig,
}

fn case_2d(boundary: Boundary) -> Case {
    let (nz, nx) = (12, 14);
    let grid = VelocityGrid::from_fn(nz, nx, 10.0, 10.0, |iz, ix| 1900.0 + 35.0 * iz as f64 - 4.0 * ix as f64).unwrap();
    let truth = VelocityGrid::from_fn(nz, nx, 10.0, 10.0, |iz, ix| {
        let r2 = (iz as f64 - 6.0).powi(2) + (ix as f64 - 7.0).powi(2);
        2000.0 + 30.0 * iz as f64 + 150.0 * (-r2 / 6.0).exp()
    })
    .unwrap();
    let cfg = SolverConfig { pml_width: 3, pml_max_damping: Some(300.0), boundary, ..SolverConfig::new(0.0015, 110) };
    let wavelet = Wavelet::ricker(18.0, cfg.dt, cfg.nt).unwrap();
    let z = if boundary == Boundary::PmlAll { 3 } else { 1 };
    let geo = AcquisitionGeometry::new(vec![(z, 4), (z, 9)], (3..11).map(|ix| (z, ix)).collect(), boundary);
    Case { grid, truth, wavelet, geo, cfg }
}

fn case_1d() -> Case {
    let nz = 60;
    let grid = VelocityGrid::from_fn(nz, 1, 10.0, 10.0, |iz, _| 1800.0 + 5.0 * iz as f64).unwrap();
    let truth = VelocityGrid::from_fn(nz, 1, 10.0, 10.0, |iz, _| if iz < 30 { 1800.0 } else { 2300.0 }).unwrap();
    let cfg = SolverConfig {
        pml_width: 10,
        pml_max_damping: Some(150.0),
        boundary: Boundary::PmlAll,
        ..SolverConfig::new(0.002, 200)
    };
    let wavelet = Wavelet::ricker(15.0, cfg.dt, cfg.nt).unwrap();
    let geo = AcquisitionGeometry::new(vec![(10, 0)], vec![(10, 0)], Boundary::PmlAll);
    Case { grid, truth, wavelet, geo, cfg }
}

fn observed(c: &Case) -> Vec<ShotGather> {
    simulate_all(&c.truth, &c.wavelet, &c.geo, &c.cfg).unwrap()
}

fn rel_err(a: &ModelGradient, b: &ModelGradient) -> f64 {
    let num: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.values.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn check_against_fd(c: &Case, stride: usize) {
    let obs = observed(c);
    let opts = GradientOptions { checkpoint_stride: stride, mask_pml: false };
    let (_, adj) = model_gradient(&c.grid, &c.wavelet, &c.geo, &c.cfg, &obs, &opts).unwrap();
    assert!(adj.max_abs() > 0.0);
    for eps in [1.0, 0.1, 0.01] {
        let fd = fd_gradient_oracle(&c.grid, eps, |m| Ok(misfit(m, &c.wavelet, &c.geo, &c.cfg, &obs)?.value)).unwrap();
        let e = rel_err(&adj, &fd);
        assert!(e < 1e-4, "eps {eps}: relative error {e:e}");
    }
}

#[test]
fn adjoint_matches_finite_differences_free_surface() {
    check_against_fd(&case_2d(Boundary::FreeSurfaceTop), 1);
}

#[test]
fn adjoint_matches_finite_differences_absorbing_top() {
    check_against_fd(&case_2d(Boundary::PmlAll), 10);
}

#[test]
fn adjoint_matches_finite_differences_1d() {
    check_against_fd(&case_1d(), 7);
}

#[test]
fn directional_derivative_converges_quadratically() {
    let c = case_2d(Boundary::FreeSurfaceTop);
    let obs = observed(&c);
    let (_, g) = model_gradient(&c.grid, &c.wavelet, &c.geo, &c.cfg, &obs, &GradientOptions { mask_pml: false, ..Default::default() }).unwrap();
    let dir: Vec<f64> = (0..c.grid.len()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
    let exact = g.dot(&dir);
    let j = |s: f64| {
        let v: Vec<f64> = c.grid.values().iter().zip(&dir).map(|(m, d)| m + s * d).collect();
        misfit(&c.grid.with_values(v).unwrap(), &c.wavelet, &c.geo, &c.cfg, &obs).unwrap().value
    };
    let mut errs = vec![];
    for eps in [20.0, 10.0, 5.0] {
        let fd = (j(eps) - j(-eps)) / (2.0 * eps);
        errs.push((fd - exact).abs() / exact.abs());
    }
    assert!(errs[0] > 0.0);
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.0..5.0).contains(&ratio), "errors {errs:?}");
    }
}

#[test]
fn data_gradient_is_a_jacobian_row() {
    let c = case_2d(Boundary::FreeSurfaceTop);
    let n_rec = c.geo.receivers.len();
    let (r, k) = (3, 70);
    let mut seed = ShotGather::zeros(n_rec, c.cfg.nt, c.cfg.dt);
    seed.data_mut()[r * c.cfg.nt + k] = 1.0;
    let row = data_gradient(&c.grid, &c.wavelet, &c.geo, 1, &c.cfg, &seed).unwrap();
    let shot1 = AcquisitionGeometry::new(vec![c.geo.sources[1]], c.geo.receivers.clone(), c.geo.boundary);
    let fd = fd_gradient_oracle(&c.grid, 0.1, |m| Ok(simulate_all(m, &c.wavelet, &shot1, &c.cfg)?[0].get(r, k))).unwrap();
    assert!(rel_err(&row, &fd) < 1e-5);
}
