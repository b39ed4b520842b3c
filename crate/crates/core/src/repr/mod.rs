//! Model parameterisations `m_θ(x) = clamp(m0(x) + s·F_θ(x))`.
//!
//! Every network outputs a perturbation in km/s, scaled by `s = 1000` to m/s.
//! `DirectGrid` stores the perturbation per cell in m/s.

mod checkpoint;
mod hash;
mod nn;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::ModelGradient;
use crate::model::VelocityGrid;
use crate::{Error, Result};

pub use hash::{HashSpec, HASH_PRIMES};
pub use nn::{Activation, Segment};

use hash::{HashEncoding, HashTape};
use nn::{Init, InitRule, Layout, Mlp, MlpTape};

/// Entries allowed in a parameter Jacobian.
pub const JACOBIAN_MAX_ENTRIES: usize = 50_000_000;
/// km/s network output to m/s.
pub const DEFAULT_OUTPUT_SCALE: f64 = 1000.0;

/// Maps cell indices to `[−1, 1]^d` over the axes with more than one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoordinateBox {
    pub nz: usize,
    pub nx: usize,
}

impl CoordinateBox {
    pub fn of(grid: &VelocityGrid) -> Self {
        Self { nz: grid.nz(), nx: grid.nx() }
    }

    /// Input dimension of coordinate networks (at least one).
    pub fn dims(&self) -> usize {
        (usize::from(self.nz > 1) + usize::from(self.nx > 1)).max(1)
    }

    fn norm(i: usize, n: usize) -> f64 {
        if n > 1 {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn z(&self, iz: usize) -> f64 {
        Self::norm(iz, self.nz)
    }

    pub fn x(&self, ix: usize) -> f64 {
        Self::norm(ix, self.nx)
    }

    /// Coordinates of flat cell `cell` over the active axes.
    pub fn coord(&self, cell: usize) -> Vec<f64> {
        let (iz, ix) = (cell / self.nx, cell % self.nx);
        match (self.nz > 1, self.nx > 1) {
            (true, true) => vec![self.z(iz), self.x(ix)],
            (false, true) => vec![self.x(ix)],
            _ => vec![self.z(iz)],
        }
    }

    /// Rows of coordinates for a list of cells.
    pub fn matrix(&self, cells: &[usize]) -> DMatrix<f64> {
        let d = self.dims();
        let mut m = DMatrix::zeros(cells.len(), d);
        for (r, &c) in cells.iter().enumerate() {
            for (a, v) in self.coord(c).into_iter().enumerate() {
                m[(r, a)] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReprSpec {
    DirectGrid,
    SirenInr {
        depth: usize,
        width: usize,
        omega0: f64,
    },
    GaborInr {
        depth: usize,
        width: usize,
        omega0: f64,
        s0: f64,
    },
    /// `F(z, x) = f1(z) C f2(x)ᵀ`. Ranks default to half the axis length.
    LowRank {
        r1: Option<usize>,
        r2: Option<usize>,
        depth: usize,
        width: usize,
        omega0: f64,
    },
    HashGrid {
        hash: HashSpec,
        head_depth: usize,
        head_width: usize,
    },
    /// Fused MLP over `[√α g h(x), √(1−α) I(x)]`. `n_r` defaults to the hash
    /// feature count. With `balance`, the fixed gain `g` makes the hash
    /// block's parameter gradient as large as the INR block's at
    /// initialisation (root mean square over the grid); otherwise `g = 1`.
    HybridIg {
        hash: HashSpec,
        inr_depth: usize,
        inr_width: usize,
        omega0: f64,
        n_r: Option<usize>,
        alpha: f64,
        fused_depth: usize,
        fused_width: usize,
        #[serde(default = "default_true")]
        balance: bool,
    },
    /// One hidden layer, `n^{-1/2} W1 σ(W0 x + b0) + b1`, every parameter
    /// drawn from N(0, 1).
    ShallowNtk { width: usize, activation: Activation },
}

fn default_true() -> bool {
    true
}

impl ReprSpec {
    pub fn direct_grid() -> Self {
        ReprSpec::DirectGrid
    }

    pub fn siren() -> Self {
        ReprSpec::SirenInr { depth: 4, width: 128, omega0: 30.0 }
    }

    pub fn gabor() -> Self {
        ReprSpec::GaborInr { depth: 4, width: 200, omega0: 5.0, s0: 5.0 }
    }

    pub fn low_rank() -> Self {
        ReprSpec::LowRank { r1: None, r2: None, depth: 3, width: 128, omega0: 30.0 }
    }

    pub fn hash_grid() -> Self {
        ReprSpec::HashGrid { hash: HashSpec::default(), head_depth: 2, head_width: 64 }
    }

    pub fn hybrid_ig() -> Self {
        ReprSpec::HybridIg {
            hash: HashSpec::default(),
            inr_depth: 2,
            inr_width: 128,
            omega0: 30.0,
            n_r: None,
            alpha: 0.5,
            fused_depth: 2,
            fused_width: 64,
            balance: true,
        }
    }

    pub fn shallow_ntk(width: usize, activation: Activation) -> Self {
        ReprSpec::ShallowNtk { width, activation }
    }

    /// Default spec for a kind label such as `"hybrid-ig"`. The shallow
    /// network has no default.
    pub fn default_for(kind: &str) -> Option<Self> {
        match kind {
            "direct-grid" => Some(Self::direct_grid()),
            "siren-inr" => Some(Self::siren()),
            "gabor-inr" => Some(Self::gabor()),
            "low-rank" => Some(Self::low_rank()),
            "hash-grid" => Some(Self::hash_grid()),
            "hybrid-ig" => Some(Self::hybrid_ig()),
            _ => None,
        }
    }

    /// Short stable label, e.g. for file names.
    pub fn name(&self) -> &'static str {
        match self {
            ReprSpec::DirectGrid => "direct-grid",
            ReprSpec::SirenInr { .. } => "siren-inr",
            ReprSpec::GaborInr { .. } => "gabor-inr",
            ReprSpec::LowRank { .. } => "low-rank",
            ReprSpec::HashGrid { .. } => "hash-grid",
            ReprSpec::HybridIg { .. } => "hybrid-ig",
            ReprSpec::ShallowNtk { .. } => "shallow-ntk",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: usize, what: &str| if v == 0 { Err(Error::invalid(format!("{what} must be positive"))) } else { Ok(()) };
        let freq = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be positive and finite, got {v}")))
            }
        };
        let hash_ok = |h: &HashSpec| -> Result<()> {
            pos(h.levels, "hash levels")?;
            pos(h.features, "hash features")?;
            if !(h.per_level_scale.is_finite() && h.per_level_scale >= 1.0) {
                return Err(Error::invalid("hash per-level scale must be at least 1"));
            }
            if h.base_resolution < 2 {
                return Err(Error::invalid("hash base resolution must be at least 2"));
            }
            if !(1..=30).contains(&h.log2_table_size) {
                return Err(Error::invalid("hash table size must be 2^1..2^30"));
            }
            Ok(())
        };
        match self {
            ReprSpec::DirectGrid => Ok(()),
            ReprSpec::SirenInr { depth, width, omega0 } => {
                pos(*depth, "depth")?;
                pos(*width, "width")?;
                freq(*omega0, "omega0")
            }
            ReprSpec::GaborInr { depth, width, omega0, s0 } => {
                pos(*depth, "depth")?;
                pos(*width, "width")?;
                freq(*omega0, "omega0")?;
                freq(*s0, "s0")
            }
            ReprSpec::LowRank { r1, r2, depth, width, omega0 } => {
                if *r1 == Some(0) || *r2 == Some(0) {
                    return Err(Error::invalid("ranks must be positive"));
                }
                pos(*depth, "depth")?;
                pos(*width, "width")?;
                freq(*omega0, "omega0")
            }
            ReprSpec::HashGrid { hash, head_depth, head_width } => {
                hash_ok(hash)?;
                pos(*head_depth, "head depth")?;
                pos(*head_width, "head width")
            }
            ReprSpec::HybridIg { hash, inr_depth, inr_width, omega0, n_r, alpha, fused_depth, fused_width, .. } => {
                hash_ok(hash)?;
                pos(*inr_depth, "INR depth")?;
                pos(*inr_width, "INR width")?;
                freq(*omega0, "omega0")?;
                if *n_r == Some(0) {
                    return Err(Error::invalid("n_r must be positive"));
                }
                if !(0.0..=1.0).contains(alpha) {
                    return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
                }
                pos(*fused_depth, "fused depth")?;
                pos(*fused_width, "fused width")
            }
            ReprSpec::ShallowNtk { width, .. } => pos(*width, "width"),
        }
    }
}

/// Flat parameter vector with its named segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprParams {
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ReprParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments.iter().find(|s| s.name == name).map(|s| &self.values[s.offset..s.offset + s.len])
    }
}

#[derive(Debug, Clone)]
enum Arch {
    Direct,
    Mlp(Mlp),
    LowRank { f1: Mlp, f2: Mlp, core: usize, r1: usize, r2: usize },
    Hash { enc: HashEncoding, head: Mlp },
    Hybrid { enc: HashEncoding, inr: Mlp, fused: Mlp, alpha: f64, gain: f64 },
}

enum ArchTape {
    Direct,
    Mlp(MlpTape),
    LowRank {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        ac: DMatrix<f64>,
        zi: Vec<usize>,
        xi: Vec<usize>,
        t1: MlpTape,
        t2: MlpTape,
    },
    Hash(HashTape, MlpTape),
    Hybrid(HashTape, MlpTape, MlpTape),
}

/// What [`Representation::backprop_taped`] needs from a forward pass.
pub struct ReprTape {
    cells: Vec<usize>,
    inside: Vec<bool>,
    arch: ArchTape,
}

/// Symmetric representation kernel over a list of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RepNtkMatrix {
    pub points: Vec<usize>,
    pub kernel: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Representation {
    spec: ReprSpec,
    m0: VelocityGrid,
    coords: CoordinateBox,
    arch: Arch,
    params: ReprParams,
    output_scale: f64,
    bounds: (f64, f64),
    /// Raw output at the parameters the representation was centred on.
    offset: Option<Vec<f64>>,
}

fn siren_rule(omega0: f64) -> impl Fn(usize, usize, usize) -> (Init, Init) {
    move |l, fi, _| {
        let fi = fi as f64;
        let w = if l == 0 { 1.0 / fi } else { (6.0 / fi).sqrt() / omega0 };
        (Init::Uniform(w), Init::Uniform(1.0 / fi.sqrt()))
    }
}

fn default_rule(_: usize, fi: usize, _: usize) -> (Init, Init) {
    let a = 1.0 / (fi as f64).sqrt();
    (Init::Uniform(a), Init::Uniform(a))
}

fn dims(input: usize, depth: usize, width: usize, output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend(std::iter::repeat_n(width, depth));
    d.push(output);
    d
}

/// Build a representation around `m0` with parameters drawn from `seed`.
/// Velocity bounds default to `[0.5 min m0, 1.5 max m0]`.
pub fn init_repr(spec: ReprSpec, m0: &VelocityGrid, seed: u64) -> Result<Representation> {
    spec.validate()?;
    let coords = CoordinateBox::of(m0);
    let d = coords.dims();
    let mut layout = Layout::default();
    let mut output_scale = DEFAULT_OUTPUT_SCALE;
    let mut arch = match &spec {
        ReprSpec::DirectGrid => {
            layout.push("cells", m0.len(), Init::Zeros);
            output_scale = 1.0;
            Arch::Direct
        }
        ReprSpec::SirenInr { depth, width, omega0 } => {
            let rule = siren_rule(*omega0);
            Arch::Mlp(Mlp::new(&mut layout, "net", &dims(d, *depth, *width, 1), Activation::Sine { omega0: *omega0 }, &rule))
        }
        ReprSpec::GaborInr { depth, width, omega0, s0 } => Arch::Mlp(Mlp::new(
            &mut layout,
            "net",
            &dims(d, *depth, *width, 1),
            Activation::Gabor { omega0: *omega0, s0: *s0 },
            &default_rule,
        )),
        ReprSpec::LowRank { r1, r2, depth, width, omega0 } => {
            let r1 = r1.unwrap_or(m0.nz().div_ceil(2));
            let r2 = r2.unwrap_or(m0.nx().div_ceil(2));
            let rule = siren_rule(*omega0);
            let act = Activation::Sine { omega0: *omega0 };
            let f1 = Mlp::new(&mut layout, "f1", &dims(1, *depth, *width, r1), act, &rule);
            let f2 = Mlp::new(&mut layout, "f2", &dims(1, *depth, *width, r2), act, &rule);
            let core = layout.push("core", r1 * r2, Init::Zeros);
            Arch::LowRank { f1, f2, core, r1, r2 }
        }
        ReprSpec::HashGrid { hash, head_depth, head_width } => {
            let enc = HashEncoding::new(&mut layout, "hash", hash, d);
            let head = Mlp::new(&mut layout, "head", &dims(enc.output_dim(), *head_depth, *head_width, 1), Activation::Relu, &default_rule);
            Arch::Hash { enc, head }
        }
        ReprSpec::HybridIg { hash, inr_depth, inr_width, omega0, n_r, alpha, fused_depth, fused_width, .. } => {
            let enc = HashEncoding::new(&mut layout, "hash", hash, d);
            let n_r = n_r.unwrap_or(hash.output_dim());
            let rule = siren_rule(*omega0);
            let inr = Mlp::new(&mut layout, "inr", &dims(d, *inr_depth, *inr_width, n_r), Activation::Sine { omega0: *omega0 }, &rule);
            let fused = Mlp::new(
                &mut layout,
                "fused",
                &dims(enc.output_dim() + n_r, *fused_depth, *fused_width, 1),
                Activation::Relu,
                &default_rule,
            );
            Arch::Hybrid { enc, inr, fused, alpha: *alpha, gain: 1.0 }
        }
        ReprSpec::ShallowNtk { width, activation } => {
            let rule: InitRule = &|_, _, _| (Init::Normal(1.0), Init::Normal(1.0));
            let mut net = Mlp::new(&mut layout, "net", &[d, *width, 1], *activation, rule);
            net.layers[1].scale = 1.0 / (*width as f64).sqrt();
            Arch::Mlp(net)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = layout.sample(&mut rng);
    if let Arch::LowRank { core, r1, r2, .. } = &arch {
        for k in 0..(*r1).min(*r2) {
            values[core + k * r2 + k] = 1e-2;
        }
    }
    if let (Arch::Hybrid { enc, inr, gain, .. }, ReprSpec::HybridIg { balance: true, .. }) = (&mut arch, &spec) {
        *gain = balancing_gain(enc, inr, &coords, m0.len(), &values);
    }
    let bounds = (0.5 * m0.min(), 1.5 * m0.max());
    Ok(Representation {
        spec,
        m0: m0.clone(),
        coords,
        arch,
        params: ReprParams { values, segments: layout.segments },
        output_scale,
        bounds,
        offset: None,
    })
}

impl Representation {
    pub fn spec(&self) -> &ReprSpec {
        &self.spec
    }

    pub fn m0(&self) -> &VelocityGrid {
        &self.m0
    }

    pub fn coords(&self) -> CoordinateBox {
        self.coords
    }

    pub fn params(&self) -> &ReprParams {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.params.values
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.params.values
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.params.len() {
            return Err(Error::invalid(format!("expected {} parameters, got {}", self.params.len(), theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        self.params.values = theta;
        Ok(())
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn with_output_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid("output scale must be positive"));
        }
        self.output_scale = scale;
        Ok(self)
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return Err(Error::invalid(format!("invalid velocity bounds [{lo}, {hi}]")));
        }
        self.bounds = (lo, hi);
        Ok(self)
    }

    /// Subtract the current network output, so that `m_θ = m0` at the
    /// current parameters. Gradients and kernels do not change.
    pub fn centered(mut self) -> Self {
        self.offset = None;
        let (raw, _) = self.raw_forward(&self.all_cells());
        self.offset = Some(raw);
        self
    }

    pub fn is_centered(&self) -> bool {
        self.offset.is_some()
    }

    fn shifted(&self, cell: usize, raw: f64) -> f64 {
        match &self.offset {
            Some(o) => raw - o[cell],
            None => raw,
        }
    }

    fn all_cells(&self) -> Vec<usize> {
        (0..self.m0.len()).collect()
    }

    /// Raw network output (before scaling) at `cells`.
    fn raw_forward(&self, cells: &[usize]) -> (Vec<f64>, ArchTape) {
        let theta = &self.params.values;
        match &self.arch {
            Arch::Direct => (cells.iter().map(|&c| theta[c]).collect(), ArchTape::Direct),
            Arch::Mlp(net) => {
                let (y, t) = net.forward(theta, self.coords.matrix(cells));
                (y.column(0).iter().copied().collect(), ArchTape::Mlp(t))
            }
            Arch::LowRank { f1, f2, core, r1, r2 } => {
                let nx = self.m0.nx();
                let (zs, zi) = unique(cells.iter().map(|&c| c / nx));
                let (xs, xi) = unique(cells.iter().map(|&c| c % nx));
                let zc = DMatrix::from_iterator(zs.len(), 1, zs.iter().map(|&i| self.coords.z(i)));
                let xc = DMatrix::from_iterator(xs.len(), 1, xs.iter().map(|&i| self.coords.x(i)));
                let (a, t1) = f1.forward(theta, zc);
                let (b, t2) = f2.forward(theta, xc);
                let c = DMatrix::from_row_slice(*r1, *r2, &theta[*core..core + r1 * r2]);
                let ac = &a * &c;
                let y = (0..cells.len()).map(|i| ac.row(zi[i]).dot(&b.row(xi[i]))).collect();
                (y, ArchTape::LowRank { a, b, ac, zi, xi, t1, t2 })
            }
            Arch::Hash { enc, head } => {
                let (h, ht) = enc.forward(theta, &self.coords.matrix(cells));
                let (y, t) = head.forward(theta, h);
                (y.column(0).iter().copied().collect(), ArchTape::Hash(ht, t))
            }
            Arch::Hybrid { enc, inr, fused, alpha, gain } => {
                let x = self.coords.matrix(cells);
                let (h, ht) = enc.forward(theta, &x);
                let (g, it) = inr.forward(theta, x);
                let (nh, ng) = (h.ncols(), g.ncols());
                let (sa, sb) = (gain * alpha.sqrt(), (1.0 - alpha).sqrt());
                let mut feat = DMatrix::zeros(cells.len(), nh + ng);
                feat.columns_mut(0, nh).copy_from(&(h * sa));
                feat.columns_mut(nh, ng).copy_from(&(g * sb));
                let (y, ft) = fused.forward(theta, feat);
                (y.column(0).iter().copied().collect(), ArchTape::Hybrid(ht, it, ft))
            }
        }
    }

    /// Accumulate `Σ dy · raw` into `grad`.
    fn raw_backward(&self, tape: &ArchTape, cells: &[usize], dy: &[f64], grad: &mut [f64]) {
        let theta = &self.params.values;
        let col = |v: &[f64]| DMatrix::from_column_slice(v.len(), 1, v);
        match (&self.arch, tape) {
            (Arch::Direct, ArchTape::Direct) => {
                for (&c, g) in cells.iter().zip(dy) {
                    grad[c] += g;
                }
            }
            (Arch::Mlp(net), ArchTape::Mlp(t)) => {
                net.backward(theta, t, col(dy), grad, false);
            }
            (Arch::LowRank { f1, f2, core, r1, r2 }, ArchTape::LowRank { a, b, ac, zi, xi, t1, t2 }) => {
                let mut dac = DMatrix::zeros(ac.nrows(), ac.ncols());
                let mut db = DMatrix::zeros(b.nrows(), b.ncols());
                for (i, &g) in dy.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for k in 0..*r2 {
                        dac[(zi[i], k)] += g * b[(xi[i], k)];
                        db[(xi[i], k)] += g * ac[(zi[i], k)];
                    }
                }
                let c = DMatrix::from_row_slice(*r1, *r2, &theta[*core..core + r1 * r2]);
                let dc = a.tr_mul(&dac);
                for j in 0..*r1 {
                    for k in 0..*r2 {
                        grad[core + j * r2 + k] += dc[(j, k)];
                    }
                }
                let da = dac * c.transpose();
                f1.backward(theta, t1, da, grad, false);
                f2.backward(theta, t2, db, grad, false);
            }
            (Arch::Hash { enc, head }, ArchTape::Hash(ht, t)) => {
                let dh = head.backward(theta, t, col(dy), grad, true).expect("input gradient");
                enc.backward(ht, &dh, grad);
            }
            (Arch::Hybrid { enc, inr, fused, alpha, gain }, ArchTape::Hybrid(ht, it, ft)) => {
                let df = fused.backward(theta, ft, col(dy), grad, true).expect("input gradient");
                let nh = enc.output_dim();
                let ng = df.ncols() - nh;
                let dh = df.columns(0, nh) * (gain * alpha.sqrt());
                let dg = df.columns(nh, ng) * (1.0 - alpha).sqrt();
                enc.backward(ht, &dh, grad);
                inr.backward(theta, it, dg, grad, false);
            }
            _ => unreachable!("tape does not match architecture"),
        }
    }

    fn assemble(&self, cells: &[usize], raw: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let (lo, hi) = self.bounds;
        cells
            .iter()
            .zip(raw)
            .map(|(&c, r)| {
                let m = self.m0[c] + self.output_scale * self.shifted(c, *r);
                if m < lo {
                    (lo, false)
                } else if m > hi {
                    (hi, false)
                } else {
                    (m, true)
                }
            })
            .unzip()
    }

    /// Unclamped perturbation `s·F_θ` in m/s at every cell.
    pub fn perturbation(&self) -> Vec<f64> {
        let (raw, _) = self.raw_forward(&self.all_cells());
        raw.into_iter().enumerate().map(|(c, r)| self.output_scale * self.shifted(c, r)).collect()
    }

    pub fn evaluate(&self) -> VelocityGrid {
        self.evaluate_taped().0
    }

    /// Evaluate and keep what the parameter gradient needs.
    pub fn evaluate_taped(&self) -> (VelocityGrid, ReprTape) {
        let cells = self.all_cells();
        let (raw, arch) = self.raw_forward(&cells);
        let (values, inside) = self.assemble(&cells, &raw);
        let grid = self.m0.with_values(values).expect("bounded velocities");
        (grid, ReprTape { cells, inside, arch })
    }

    /// `∂/∂θ Σ_cells upstream · m_θ` from a tape of the current parameters.
    pub fn backprop_taped(&self, tape: &ReprTape, upstream: &ModelGradient) -> Result<Vec<f64>> {
        if upstream.nz != self.m0.nz() || upstream.nx != self.m0.nx() {
            return Err(Error::invalid(format!(
                "upstream gradient is {}x{}, model is {}x{}",
                upstream.nz,
                upstream.nx,
                self.m0.nz(),
                self.m0.nx()
            )));
        }
        let dy: Vec<f64> = tape
            .cells
            .iter()
            .zip(&tape.inside)
            .map(|(&c, &inside)| if inside { self.output_scale * upstream.values[c] } else { 0.0 })
            .collect();
        let mut grad = vec![0.0; self.n_params()];
        self.raw_backward(&tape.arch, &tape.cells, &dy, &mut grad);
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        Ok(grad)
    }

    pub fn backprop_params(&self, upstream: &ModelGradient) -> Result<Vec<f64>> {
        let (_, tape) = self.evaluate_taped();
        self.backprop_taped(&tape, upstream)
    }

    /// `G[j, i] = ∂m_θ(points[j]) / ∂θ_i`.
    pub fn param_jacobian(&self, points: &[usize]) -> Result<DMatrix<f64>> {
        let p = self.n_params();
        let required = points.len().saturating_mul(p);
        if required > JACOBIAN_MAX_ENTRIES {
            return Err(Error::ResourceGuard { what: "parameter Jacobian entries", required, limit: JACOBIAN_MAX_ENTRIES });
        }
        if let Some(&bad) = points.iter().find(|&&c| c >= self.m0.len()) {
            return Err(Error::invalid(format!("sample point {bad} outside a grid of {} cells", self.m0.len())));
        }
        let rows: Vec<Vec<f64>> = points
            .par_iter()
            .map(|&c| {
                let cell = [c];
                let (raw, tape) = self.raw_forward(&cell);
                let (_, inside) = self.assemble(&cell, &raw);
                let mut row = vec![0.0; p];
                if inside[0] {
                    self.raw_backward(&tape, &cell, &[self.output_scale], &mut row);
                }
                row
            })
            .collect();
        Ok(DMatrix::from_fn(points.len(), p, |j, i| rows[j][i]))
    }

    /// `K = G Gᵀ` over `points`.
    pub fn rep_ntk(&self, points: &[usize]) -> Result<RepNtkMatrix> {
        let g = self.param_jacobian(points)?;
        let k = &g * g.transpose();
        let kernel = (&k + k.transpose()) * 0.5;
        Ok(RepNtkMatrix { points: points.to_vec(), kernel })
    }
}

/// Points used to estimate the balancing gain.
const BALANCE_POINTS: usize = 64;

/// `rms ‖∂I/∂θ_I‖_F / rms ‖∂h/∂θ_h‖_F` over evenly spaced cells.
fn balancing_gain(enc: &HashEncoding, inr: &Mlp, coords: &CoordinateBox, n_cells: usize, theta: &[f64]) -> f64 {
    let n = n_cells.min(BALANCE_POINTS);
    let cells: Vec<usize> = (0..n).map(|i| i * n_cells / n).collect();
    let first = inr.layers[0].w;
    let last = inr.layers.last().expect("at least one layer");
    let range = first..last.b + last.out_dim;
    let mut grad = vec![0.0; theta.len()];
    let (mut hash_sq, mut inr_sq) = (0.0, 0.0);
    for &c in &cells {
        let x = coords.matrix(&[c]);
        let (h, ht) = enc.forward(theta, &x);
        // every table entry feeds a single output, so one pass with unit
        // upstream gives the row norms
        enc.backward(&ht, &DMatrix::from_element(1, h.ncols(), 1.0), &mut grad);
        hash_sq += grad.iter().map(|g| g * g).sum::<f64>();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (y, it) = inr.forward(theta, x);
        for o in 0..y.ncols() {
            let mut dy = DMatrix::zeros(1, y.ncols());
            dy[(0, o)] = 1.0;
            inr.backward(theta, &it, dy, &mut grad, false);
            inr_sq += grad[range.clone()].iter().map(|g| g * g).sum::<f64>();
            grad[range.clone()].iter_mut().for_each(|g| *g = 0.0);
        }
    }
    if hash_sq > 0.0 { (inr_sq / hash_sq).sqrt() } else { 1.0 }
}

/// Distinct values in first-seen order and the position of each input in them.
fn unique(it: impl Iterator<Item = usize>) -> (Vec<usize>, Vec<usize>) {
    let mut seen = std::collections::HashMap::new();
    let mut vals = Vec::new();
    let idx = it
        .map(|v| {
            *seen.entry(v).or_insert_with(|| {
                vals.push(v);
                vals.len() - 1
            })
        })
        .collect();
    (vals, idx)
}

pub fn evaluate(repr: &Representation) -> VelocityGrid {
    repr.evaluate()
}

pub fn backprop_params(repr: &Representation, upstream: &ModelGradient) -> Result<Vec<f64>> {
    repr.backprop_params(upstream)
}

pub fn param_jacobian(repr: &Representation, points: &[usize]) -> Result<DMatrix<f64>> {
    repr.param_jacobian(points)
}

pub fn rep_ntk(repr: &Representation, points: &[usize]) -> Result<RepNtkMatrix> {
    repr.rep_ntk(points)
}
