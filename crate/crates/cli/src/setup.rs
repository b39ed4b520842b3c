//! Turning the model, window, acquisition and initial sections into a
//! simulation setup.

use crfwi_core::model::io::load_velocity_grid;
use crfwi_core::model::Region;
use crfwi_core::presets::{
    constant_below_water, linear_below_water, marmousi_like, pad_for_pml, salt_like, two_layer, Setup,
};
use crfwi_core::solver::check_inputs;
use crfwi_core::{AcquisitionGeometry, SolverConfig, VelocityGrid, Wavelet};

use crate::config::{Acquisition, InitialSpec, ModelSource, RunConfig, Window};
use crate::error::{CliError, CliResult};

/// The physical true model after windowing.
pub fn physical_model(source: &ModelSource, window: Option<&Window>) -> CliResult<VelocityGrid> {
    let grid = match source {
        ModelSource::Layered { nz, nx, spacing, velocities, interfaces } => {
            if velocities.len() != interfaces.len() + 1 {
                return Err(CliError::config(format!(
                    "model: {} velocities need {} interfaces, got {}",
                    velocities.len(),
                    velocities.len().saturating_sub(1),
                    interfaces.len()
                )));
            }
            if interfaces.windows(2).any(|w| w[0] >= w[1]) || interfaces.iter().any(|&i| i == 0 || i >= *nz) {
                return Err(CliError::config("model: interfaces must increase strictly and lie inside the grid"));
            }
            VelocityGrid::from_fn(*nz, *nx, *spacing, *spacing, |iz, _| velocities[interfaces.iter().filter(|&&i| iz >= i).count()])?
        }
        ModelSource::TwoLayer { nz, nx, spacing, interface, v_top, v_bottom } => {
            two_layer(*nz, *nx, *spacing, *interface, *v_top, *v_bottom)?
        }
        ModelSource::Marmousi { nz, nx, spacing } => marmousi_like(*nz, *nx, *spacing)?,
        ModelSource::Salt { nz, nx, spacing } => salt_like(*nz, *nx, *spacing)?,
        ModelSource::Vgrd { path } => load_velocity_grid(path)?,
    };
    let Some(w) = window else { return Ok(grid) };
    let dec = grid.decimate(w.decimate)?;
    let nx = w.nx.unwrap_or(dec.nx().saturating_sub(w.x0));
    if nx == 0 || w.x0 + nx > dec.nx() {
        return Err(CliError::config(format!(
            "window: columns {}..{} fall outside the {}-column model",
            w.x0,
            w.x0 + nx,
            dec.nx()
        )));
    }
    Ok(dec.crop(Region { z0: 0, z1: dec.nz(), x0: w.x0, x1: w.x0 + nx })?)
}

/// The initial model, either physical-shaped or already padded.
fn initial_model(spec: &InitialSpec, physical: &VelocityGrid, padded: &VelocityGrid) -> CliResult<VelocityGrid> {
    Ok(match spec {
        InitialSpec::Smooth { sigma } => {
            if !(sigma.is_finite() && *sigma >= 0.0) {
                return Err(CliError::config(format!("initial: sigma must be ≥ 0, got {sigma}")));
            }
            physical.smoothed(*sigma)
        }
        InitialSpec::Constant => constant_below_water(physical),
        InitialSpec::Linear { top, bottom } => linear_below_water(physical, *top, *bottom)?,
        InitialSpec::Vgrd { path } => {
            let g = load_velocity_grid(path)?;
            if !g.same_shape(physical) && !g.same_shape(padded) {
                return Err(CliError::config(format!(
                    "initial: {} is {}x{}, expected {}x{} or the padded {}x{}",
                    path.display(),
                    g.nz(),
                    g.nx(),
                    physical.nz(),
                    physical.nx(),
                    padded.nz(),
                    padded.nx()
                )));
            }
            g
        }
    })
}

/// Columns `count` shots occupy: `spacing` cells apart and centred when
/// given, otherwise spread evenly.
fn shot_columns(nx: usize, count: usize, spacing: Option<usize>) -> CliResult<Vec<usize>> {
    match spacing {
        None => Ok((0..count).map(|s| ((2 * s + 1) * nx) / (2 * count)).collect()),
        Some(step) => {
            let span = step * (count - 1);
            if span >= nx {
                return Err(CliError::config(format!(
                    "acquisition: {count} shots {step} cells apart span {span} cells, the model has {nx}"
                )));
            }
            let start = (nx - 1 - span) / 2;
            Ok((0..count).map(|s| start + s * step).collect())
        }
    }
}

fn cells(meters: f64, spacing: f64, what: &str) -> CliResult<usize> {
    let n = (meters / spacing).round();
    if !(meters.is_finite() && n >= 1.0) {
        return Err(CliError::config(format!("acquisition: {what} of {meters} m is less than one {spacing} m cell")));
    }
    Ok(n as usize)
}

fn geometry(acq: &Acquisition, physical: &VelocityGrid, interior: Region) -> CliResult<AcquisitionGeometry> {
    if acq.n_shots == 0 {
        return Err(CliError::config("acquisition: n_shots must be positive"));
    }
    let sz = interior.z0 + acq.source_depth;
    let rz = interior.z0 + acq.receiver_depth;
    if acq.source_depth >= physical.nz() || acq.receiver_depth >= physical.nz() {
        return Err(CliError::config("acquisition: source or receiver depth below the model"));
    }
    if physical.nx() == 1 {
        if acq.n_shots != 1 {
            return Err(CliError::config("acquisition: a 1D model has room for a single shot"));
        }
        return Ok(AcquisitionGeometry::new(vec![(sz, interior.x0)], vec![(rz, interior.x0)], acq.boundary));
    }
    let step = acq.shot_spacing.map(|m| cells(m, physical.dx(), "shot spacing")).transpose()?;
    let sources = shot_columns(physical.nx(), acq.n_shots, step)?.into_iter().map(|c| (sz, interior.x0 + c)).collect();
    let rstep = acq.receiver_spacing.map(|m| cells(m, physical.dx(), "receiver spacing")).transpose()?.unwrap_or(1);
    let receivers = (interior.x0..interior.x1).step_by(rstep).map(|c| (rz, c)).collect();
    Ok(AcquisitionGeometry::new(sources, receivers, acq.boundary))
}

/// Build and validate the setup. Nothing is simulated.
pub fn build_setup(cfg: &RunConfig) -> CliResult<Setup> {
    let source = cfg.model.as_ref().ok_or_else(|| CliError::config("missing [model] section"))?;
    let acq = cfg.acquisition.as_ref().ok_or_else(|| CliError::config("missing [acquisition] section"))?;
    let physical = physical_model(source, cfg.window.as_ref())?;
    let (truth, interior) = pad_for_pml(&physical, acq.pml_width, acq.boundary);
    let initial = initial_model(&cfg.initial, &physical, &truth)?;
    let initial = if initial.same_shape(&truth) { initial } else { pad_for_pml(&initial, acq.pml_width, acq.boundary).0 };
    let geometry = geometry(acq, &physical, interior)?;
    let wavelet = Wavelet::ricker(acq.freq, acq.dt, acq.nt)?;
    let solver = SolverConfig {
        pml_width: acq.pml_width,
        pml_max_damping: acq.pml_max_damping,
        boundary: acq.boundary,
        ..SolverConfig::new(acq.dt, acq.nt)
    };
    check_inputs(&truth, &wavelet, &geometry, &solver)?;
    check_inputs(&initial, &wavelet, &geometry, &solver)?;
    Ok(Setup { truth, initial, geometry, wavelet, cfg: solver, interior })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse;
    use crfwi_core::presets::{marmousi_crop, trace_setup, InitialModel};

    #[test]
    fn even_and_spaced_shots() {
        assert_eq!(shot_columns(72, 4, None).unwrap(), vec![9, 27, 45, 63]);
        assert_eq!(shot_columns(288, 13, Some(20)).unwrap(), (0..13).map(|s| 23 + 20 * s).collect::<Vec<_>>());
        assert!(shot_columns(50, 6, Some(10)).is_err());
    }

    #[test]
    fn layered_model_follows_interfaces() {
        let m = ModelSource::Layered { nz: 10, nx: 1, spacing: 5.0, velocities: vec![1500.0, 1800.0, 2000.0], interfaces: vec![3, 7] };
        let g = physical_model(&m, None).unwrap();
        let col: Vec<f64> = (0..10).map(|iz| g.get(iz, 0)).collect();
        assert_eq!(col, [1500.0, 1500.0, 1500.0, 1800.0, 1800.0, 1800.0, 1800.0, 2000.0, 2000.0, 2000.0]);
        let bad = ModelSource::Layered { nz: 10, nx: 1, spacing: 5.0, velocities: vec![1500.0], interfaces: vec![3] };
        assert!(physical_model(&bad, None).is_err());
    }

    fn preset(name: &str) -> RunConfig {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name);
        crate::config::load(&path).unwrap().config
    }

    #[test]
    fn ntk_preset_is_the_trace_setup() {
        let s = build_setup(&preset("ntk.toml")).unwrap();
        let t = trace_setup();
        assert_eq!(s.truth, t.truth);
        assert_eq!(s.initial, t.initial);
        assert_eq!(s.geometry, t.geometry);
        assert_eq!(s.wavelet, t.wavelet);
        assert_eq!(s.cfg, t.cfg);
        assert_eq!(s.interior, t.interior);
    }

    #[test]
    fn crop_preset_is_the_crop_setup() {
        let mut cfg = preset("crop.toml");
        let s = build_setup(&cfg).unwrap();
        let t = marmousi_crop(InitialModel::Constant);
        assert_eq!((s.truth.clone(), s.initial.clone(), s.geometry.clone()), (t.truth, t.initial, t.geometry));
        assert_eq!((s.wavelet, s.cfg, s.interior), (t.wavelet, t.cfg, t.interior));
        cfg.initial = InitialSpec::Smooth { sigma: 4.0 };
        assert_eq!(build_setup(&cfg).unwrap().initial, marmousi_crop(InitialModel::Smooth).initial);
    }

    #[test]
    fn marmousi_preset_acquisition() {
        let cfg = preset("marmousi.toml");
        let acq = cfg.acquisition.clone().unwrap();
        assert_eq!((acq.n_shots, acq.freq, acq.dt, acq.nt), (13, 8.0, 0.0019, 1000));
        assert_eq!(acq.shot_spacing, Some(300.0));
        let s = build_setup(&cfg).unwrap();
        assert_eq!((s.interior.nz(), s.interior.nx()), (94, 288));
        assert_eq!(s.truth.dx(), 15.0);
        assert_eq!(s.geometry.n_shots(), 13);
        let xs: Vec<usize> = s.geometry.sources.iter().map(|p| p.1).collect();
        assert!(xs.windows(2).all(|w| (w[1] - w[0]) as f64 * 15.0 == 300.0));
        assert_eq!(s.geometry.receivers.len(), 288);
        assert_eq!((s.wavelet.dt(), s.wavelet.nt()), (0.0019, 1000));
    }

    #[test]
    fn salt_preset_acquisition() {
        let cfg = preset("salt.toml");
        let acq = cfg.acquisition.clone().unwrap();
        assert_eq!((acq.n_shots, acq.freq, acq.dt, acq.nt), (24, 10.0, 0.0015, 2500));
        let s = build_setup(&cfg).unwrap();
        assert_eq!((s.interior.nz(), s.interior.nx(), s.truth.dx()), (75, 250, 10.0));
        let xs: Vec<usize> = s.geometry.sources.iter().map(|p| p.1).collect();
        assert_eq!(xs.len(), 24);
        assert!(xs.windows(2).all(|w| (w[1] - w[0]) as f64 * 10.0 == 100.0));
        assert_eq!(s.geometry.receivers.len(), 250);
    }

    #[test]
    fn every_preset_builds() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let cfg = crate::config::load(&path).unwrap().config;
            build_setup(&cfg).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }

    #[test]
    fn unstable_time_step_is_a_config_error() {
        let doc = r#"
[model]
kind = "two-layer"
nz = 20
nx = 30
spacing = 10.0
interface = 10
v_top = 1500.0
v_bottom = 4000.0
[acquisition]
freq = 10.0
dt = 0.004
nt = 100
"#;
        let e = build_setup(&parse(doc, "x").unwrap().config).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{e}");
        assert!(e.to_string().contains("CFL"), "{e}");
    }
}
