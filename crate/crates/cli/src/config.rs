//! One TOML document describes a run. Paths are taken relative to the
//! working directory.
//!
//! Representation entries (`invert.repr`, `ntk.methods`) may be a bare name
//! such as `"ig"` or a table with a `kind` key; keys left out of a table take
//! that kind's defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crfwi_core::invert::InversionMethod;
use crfwi_core::model::Region;
use crfwi_core::ntk::{JacobianSampling, StationarityOptions};
use crfwi_core::repr::ReprSpec;
use crfwi_core::Boundary;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Every random stream derives from this; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    pub model: Option<ModelSource>,
    pub window: Option<Window>,
    pub acquisition: Option<Acquisition>,
    #[serde(default)]
    pub initial: InitialSpec,
    pub data: Option<DataSource>,
    pub invert: Option<InversionMethod>,
    pub ntk: Option<NtkConfig>,
    pub metrics: Option<MetricsConfig>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// The physical (unpadded) true model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSource {
    /// Horizontal layers; `interfaces[i]` is the first cell of layer `i + 1`.
    Layered {
        nz: usize,
        #[serde(default = "one")]
        nx: usize,
        spacing: f64,
        velocities: Vec<f64>,
        #[serde(default)]
        interfaces: Vec<usize>,
    },
    TwoLayer { nz: usize, nx: usize, spacing: f64, interface: usize, v_top: f64, v_bottom: f64 },
    /// The procedural Marmousi-like section.
    Marmousi {
        #[serde(default = "marmousi_nz")]
        nz: usize,
        #[serde(default = "marmousi_nx")]
        nx: usize,
        #[serde(default = "marmousi_spacing")]
        spacing: f64,
    },
    /// The procedural salt-body section.
    Salt {
        #[serde(default = "salt_nz")]
        nz: usize,
        #[serde(default = "salt_nx")]
        nx: usize,
        #[serde(default = "salt_spacing")]
        spacing: f64,
    },
    /// A user-supplied VGRD grid, e.g. the real Marmousi model.
    Vgrd { path: PathBuf },
}

fn marmousi_nz() -> usize {
    crfwi_core::presets::MARMOUSI_NZ
}
fn marmousi_nx() -> usize {
    crfwi_core::presets::MARMOUSI_NX
}
fn marmousi_spacing() -> f64 {
    crfwi_core::presets::MARMOUSI_SPACING
}
fn salt_nz() -> usize {
    crfwi_core::presets::SALT_NZ
}
fn salt_nx() -> usize {
    crfwi_core::presets::SALT_NX
}
fn salt_spacing() -> f64 {
    crfwi_core::presets::SALT_SPACING
}

/// Decimate, then keep columns `x0..x0 + nx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    #[serde(default = "one")]
    pub decimate: usize,
    #[serde(default)]
    pub x0: usize,
    pub nx: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acquisition {
    #[serde(default)]
    pub boundary: Boundary,
    /// Absorbing cells added around the physical model.
    #[serde(default = "default_pml")]
    pub pml_width: usize,
    #[serde(default)]
    pub pml_max_damping: Option<f64>,
    #[serde(default = "one")]
    pub n_shots: usize,
    /// Meters between shots, centred on the model. Shots are spread evenly
    /// when unset.
    pub shot_spacing: Option<f64>,
    /// Cells below the top of the physical model.
    #[serde(default = "one")]
    pub source_depth: usize,
    #[serde(default = "one")]
    pub receiver_depth: usize,
    /// Meters between receivers; every cell when unset.
    pub receiver_spacing: Option<f64>,
    /// Ricker peak frequency in Hz.
    pub freq: f64,
    pub dt: f64,
    pub nt: usize,
}

fn default_pml() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Gaussian-smoothed truth, `sigma` in cells.
    Smooth { sigma: f64 },
    /// Water kept, the first sub-water velocity everywhere below.
    Constant,
    /// Water kept, linear in depth below it.
    Linear { top: f64, bottom: f64 },
    /// Either the physical shape (padded like the truth) or the padded one.
    Vgrd { path: PathBuf },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Smooth { sigma: 4.0 }
    }
}

/// Observed gathers from an earlier `synth` run instead of simulating them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub observed_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtkConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<ReprSpec>,
    #[serde(default)]
    pub sampling: JacobianSampling,
    #[serde(default = "yes")]
    pub run_stationarity: bool,
    #[serde(default)]
    pub stationarity: StationarityOptions,
}

pub const DEFAULT_NTK_METHODS: [&str; 5] = ["grid", "siren", "hash", "ig", "lowrank"];

fn default_methods() -> Vec<ReprSpec> {
    DEFAULT_NTK_METHODS.iter().map(|m| ReprSpec::default_for(canonical_kind(m).unwrap()).unwrap()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub predicted: PathBuf,
    pub truth: PathBuf,
    /// Cells compared; the whole grid when unset.
    pub region: Option<Region>,
}

/// Kind label for a representation name or alias.
pub fn canonical_kind(name: &str) -> Option<&'static str> {
    Some(match name {
        "grid" | "direct" | "direct-grid" => "direct-grid",
        "siren" | "siren-inr" => "siren-inr",
        "gabor" | "gabor-inr" => "gabor-inr",
        "lowrank" | "low-rank" => "low-rank",
        "hash" | "hash-grid" => "hash-grid",
        "ig" | "hybrid" | "hybrid-ig" => "hybrid-ig",
        "shallow-ntk" => "shallow-ntk",
        _ => return None,
    })
}

/// Short name used in file names.
pub fn short_label(spec: &ReprSpec) -> &'static str {
    match spec {
        ReprSpec::DirectGrid => "grid",
        ReprSpec::SirenInr { .. } => "siren",
        ReprSpec::GaborInr { .. } => "gabor",
        ReprSpec::LowRank { .. } => "lowrank",
        ReprSpec::HashGrid { .. } => "hash",
        ReprSpec::HybridIg { .. } => "ig",
        ReprSpec::ShallowNtk { .. } => "shallow",
    }
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// SHA-256 of the document with its keys sorted.
    pub hash: String,
}

pub fn load(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

pub fn parse(text: &str, origin: &str) -> CliResult<LoadedConfig> {
    let table: toml::Table = text.parse().map_err(|e| CliError::config(format!("{origin}: {e}")))?;
    let hash = config_hash(&table);
    let mut normalized = table;
    normalize(&mut normalized).map_err(|e| CliError::config(format!("{origin}: {e}")))?;
    let config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(normalized))
        .map_err(|e| CliError::config(format!("{origin}: key `{}`: {}", e.path(), e.inner())))?;
    Ok(LoadedConfig { config, hash })
}

fn normalize(doc: &mut toml::Table) -> Result<(), String> {
    const SEED_HINT: &str = "seeds come from the top-level `seed` key or --seed";
    if let Some(toml::Value::Table(inv)) = doc.get_mut("invert") {
        if inv.contains_key("seed") {
            return Err(format!("key `invert.seed`: {SEED_HINT}"));
        }
        if let Some(r) = inv.get_mut("repr") {
            normalize_repr(r, "invert.repr")?;
        }
    }
    if let Some(toml::Value::Table(ntk)) = doc.get_mut("ntk") {
        if let Some(toml::Value::Table(st)) = ntk.get("stationarity") {
            if st.contains_key("seed") {
                return Err(format!("key `ntk.stationarity.seed`: {SEED_HINT}"));
            }
        }
        if let Some(toml::Value::Array(methods)) = ntk.get_mut("methods") {
            for (i, m) in methods.iter_mut().enumerate() {
                normalize_repr(m, &format!("ntk.methods[{i}]"))?;
            }
        }
    }
    Ok(())
}

fn normalize_repr(v: &mut toml::Value, key: &str) -> Result<(), String> {
    let unknown = |name: &str| format!("key `{key}`: unknown representation `{name}`");
    match v {
        toml::Value::String(name) => {
            let spec = canonical_kind(name).and_then(ReprSpec::default_for).ok_or_else(|| unknown(name))?;
            *v = toml::Value::try_from(spec).map_err(|e| e.to_string())?;
        }
        toml::Value::Table(t) => {
            let Some(toml::Value::String(name)) = t.get("kind") else { return Ok(()) };
            let kind = canonical_kind(name).ok_or_else(|| unknown(name))?;
            t.insert("kind".into(), kind.into());
            if let Some(spec) = ReprSpec::default_for(kind) {
                if let toml::Value::Table(defaults) = toml::Value::try_from(spec).map_err(|e| e.to_string())? {
                    fill_missing(t, &defaults);
                }
            }
        }
        _ => {}
    }
    Ok(())
}

fn fill_missing(t: &mut toml::Table, defaults: &toml::Table) {
    for (k, d) in defaults {
        match (t.get_mut(k), d) {
            (None, _) => {
                t.insert(k.clone(), d.clone());
            }
            (Some(toml::Value::Table(sub)), toml::Value::Table(dsub)) => fill_missing(sub, dsub),
            _ => {}
        }
    }
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(v: &serde_json::Value) -> String {
    fn go(v: &serde_json::Value, out: &mut String) {
        match v {
            serde_json::Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::Value::String((*k).clone()).to_string());
                    out.push(':');
                    go(&m[*k], out);
                }
                out.push('}');
            }
            serde_json::Value::Array(a) => {
                out.push('[');
                for (i, x) in a.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    go(x, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut s = String::new();
    go(v, &mut s);
    s
}

pub fn config_hash(doc: &toml::Table) -> String {
    let json = serde_json::to_value(doc).expect("TOML maps onto JSON");
    let digest = Sha256::digest(canonical_json(&json).as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
