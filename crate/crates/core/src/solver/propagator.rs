//! Forward stepping and its exact discrete adjoint.
//!
//! Fields live on a grid padded with one ghost cell per side; ghosts are
//! never written and stay zero, which gives the stencils Dirichlet closure
//! without bounds checks. CPML auxiliaries are only touched on the damped
//! bands of each axis (and one cell beyond, for their derivative).

use super::pml::pml_profiles;
use super::{HistoryPolicy, SolverConfig, WavefieldHistory};
use crate::model::{Boundary, ShotGather, VelocityGrid};
use crate::{Error, Result};

/// How often the forward loop checks the field for non-finite values.
const BLOWUP_CHECK_INTERVAL: usize = 16;

struct Axis {
    stride: usize,
    other_len: usize,
    other_stride: usize,
    inv_h2: f64,
    inv_2h: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    band: Vec<(usize, usize)>,
    band1: Vec<(usize, usize)>,
}

impl Axis {
    fn new(len: usize, stride: usize, other_len: usize, other_stride: usize, h: f64, a: Vec<f64>, b: Vec<f64>) -> Self {
        let mut band: Vec<(usize, usize)> = Vec::new();
        for k in 0..len {
            if b[k] > 0.0 {
                match band.last_mut() {
                    Some(r) if r.1 == k => r.1 = k + 1,
                    _ => band.push((k, k + 1)),
                }
            }
        }
        let mut band1: Vec<(usize, usize)> = Vec::new();
        for &(lo, hi) in &band {
            let (lo, hi) = (lo.saturating_sub(1), (hi + 1).min(len));
            match band1.last_mut() {
                Some(r) if r.1 >= lo => r.1 = r.1.max(hi),
                _ => band1.push((lo, hi)),
            }
        }
        Self {
            stride,
            other_len,
            other_stride,
            inv_h2: 1.0 / (h * h),
            inv_2h: 0.5 / h,
            a,
            b,
            band,
            band1,
        }
    }

    /// Visit `(position along axis, padded index)` for every cell whose axis
    /// coordinate lies in `ranges`.
    #[inline]
    fn for_each(&self, base: usize, ranges: &[(usize, usize)], mut f: impl FnMut(usize, usize)) {
        for &(lo, hi) in ranges {
            for k in lo..hi {
                let start = base + k * self.stride;
                for j in 0..self.other_len {
                    f(k, start + j * self.other_stride);
                }
            }
        }
    }
}

/// Full propagation state before a step: `uⁿ`, `uⁿ⁻¹` and the auxiliaries.
#[derive(Clone)]
pub(crate) struct State {
    cur: Vec<f64>,
    prev: Vec<f64>,
    psi: Vec<Vec<f64>>,
    zeta: Vec<Vec<f64>>,
}

pub(crate) struct ForwardOutput {
    pub gather: ShotGather,
    pub history: WavefieldHistory,
}

/// What the forward pass keeps for a later adjoint pass.
pub(crate) enum Tape {
    /// `uᵏ` for every `k`, unpadded.
    Full(Vec<f64>),
    /// Complete state before every `stride`-th step.
    Checkpoints { stride: usize, states: Vec<State> },
}

pub(crate) struct Propagator {
    nz: usize,
    nx: usize,
    pnx: usize,
    plen: usize,
    nt: usize,
    dt: f64,
    /// `2 / v` per unpadded cell, the derivative factor of `dt² v²`.
    two_over_v: Vec<f64>,
    /// `dt² v²` on the padded grid.
    c: Vec<f64>,
    axes: Vec<Axis>,
    free_surface: bool,
}

impl Propagator {
    pub fn new(grid: &VelocityGrid, cfg: &SolverConfig) -> Result<Self> {
        let profiles = pml_profiles(grid, cfg)?;
        let (nz, nx) = (grid.nz(), grid.nx());
        let pnx = nx + 2;
        let plen = (nz + 2) * pnx;
        let mut c = vec![0.0; plen];
        for iz in 0..nz {
            for ix in 0..nx {
                let v = grid.get(iz, ix);
                c[(iz + 1) * pnx + ix + 1] = cfg.dt * cfg.dt * v * v;
            }
        }
        let mut axes = Vec::new();
        if nz > 1 {
            axes.push(Axis::new(nz, pnx, nx, 1, grid.dz(), profiles.z.a, profiles.z.b));
        }
        if nx > 1 {
            axes.push(Axis::new(nx, 1, nz, pnx, grid.dx(), profiles.x.a, profiles.x.b));
        }
        Ok(Self {
            nz,
            nx,
            pnx,
            plen,
            nt: cfg.nt,
            dt: cfg.dt,
            two_over_v: grid.values().iter().map(|v| 2.0 / v).collect(),
            c,
            axes,
            free_surface: cfg.boundary == Boundary::FreeSurfaceTop && nz > 1,
        })
    }

    #[inline]
    fn base(&self) -> usize {
        self.pnx + 1
    }

    #[inline]
    fn pidx(&self, (iz, ix): (usize, usize)) -> usize {
        (iz + 1) * self.pnx + ix + 1
    }

    fn n(&self) -> usize {
        self.nz * self.nx
    }

    fn zero_state(&self) -> State {
        State {
            cur: vec![0.0; self.plen],
            prev: vec![0.0; self.plen],
            psi: vec![vec![0.0; self.plen]; self.axes.len()],
            zeta: vec![vec![0.0; self.plen]; self.axes.len()],
        }
    }

    /// `out = Σ_axis ∂²u` on the interior.
    fn laplacian(&self, u: &[f64], out: &mut [f64]) {
        let pnx = self.pnx;
        match self.axes.as_slice() {
            [z, x] => {
                let (cz, cx) = (z.inv_h2, x.inv_h2);
                for iz in 0..self.nz {
                    let row = (iz + 1) * pnx + 1;
                    for i in row..row + self.nx {
                        let uc = u[i];
                        out[i] = (u[i - pnx] + u[i + pnx] - 2.0 * uc) * cz + (u[i - 1] + u[i + 1] - 2.0 * uc) * cx;
                    }
                }
            }
            [ax] => {
                let s = ax.stride;
                let ch = ax.inv_h2;
                ax.for_each(self.base(), &[(0, self.nz.max(self.nx))], |_, i| {
                    out[i] = (u[i - s] + u[i + s] - 2.0 * u[i]) * ch;
                });
            }
            _ => {
                for v in out.iter_mut() {
                    *v = 0.0;
                }
            }
        }
    }

    fn project_free_surface(&self, u: &mut [f64]) {
        if self.free_surface {
            let row = self.pnx + 1;
            u[row..row + self.nx].fill(0.0);
        }
    }

    /// One leapfrog step: consumes `st` at time `n`, leaves it at `n + 1`.
    fn step(&self, st: &mut State, src: usize, amp: f64, w: &mut [f64], next: &mut Vec<f64>) {
        self.laplacian(&st.cur, w);
        let base = self.base();
        for (ax, (psi, zeta)) in self.axes.iter().zip(st.psi.iter_mut().zip(st.zeta.iter_mut())) {
            let s = ax.stride;
            let u = &st.cur;
            ax.for_each(base, &ax.band, |k, i| {
                psi[i] = ax.a[k] * psi[i] - ax.b[k] * (u[i + s] - u[i - s]) * ax.inv_2h;
            });
            ax.for_each(base, &ax.band1, |k, i| {
                let h = (psi[i + s] - psi[i - s]) * ax.inv_2h;
                let mut add = h;
                if ax.b[k] > 0.0 {
                    let l = (u[i + s] - 2.0 * u[i] + u[i - s]) * ax.inv_h2;
                    zeta[i] = ax.a[k] * zeta[i] - ax.b[k] * (l + h);
                    add += zeta[i];
                }
                w[i] += add;
            });
        }
        w[src] -= amp;
        for iz in 0..self.nz {
            let row = (iz + 1) * self.pnx + 1;
            for i in row..row + self.nx {
                next[i] = 2.0 * st.cur[i] - st.prev[i] + self.c[i] * w[i];
            }
        }
        self.project_free_surface(next);
        std::mem::swap(&mut st.prev, &mut st.cur);
        std::mem::swap(&mut st.cur, next);
    }

    fn copy_interior(&self, src: &[f64], dst: &mut Vec<f64>) {
        for iz in 0..self.nz {
            let row = (iz + 1) * self.pnx + 1;
            dst.extend_from_slice(&src[row..row + self.nx]);
        }
    }

    fn check_finite(&self, u: &[f64], step: usize) -> Result<()> {
        if u.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericBlowup { step, shot: None })
        }
    }

    /// Run all `nt` samples, optionally keeping snapshots or an adjoint tape.
    fn run(
        &self,
        wavelet: &[f64],
        src: (usize, usize),
        receivers: &[(usize, usize)],
        policy: HistoryPolicy,
        tape_stride: Option<usize>,
    ) -> Result<(ShotGather, WavefieldHistory, Option<Tape>)> {
        let nt = self.nt;
        let src = self.pidx(src);
        let rec: Vec<usize> = receivers.iter().map(|&r| self.pidx(r)).collect();
        let mut data = vec![0.0; rec.len() * nt];
        let mut history = WavefieldHistory { nz: self.nz, nx: self.nx, ..Default::default() };
        let mut tape = match tape_stride {
            None => None,
            Some(0) | Some(1) => Some(Tape::Full(Vec::with_capacity(nt * self.n()))),
            Some(stride) => Some(Tape::Checkpoints { stride, states: Vec::new() }),
        };
        let mut st = self.zero_state();
        let mut w = vec![0.0; self.plen];
        let mut next = vec![0.0; self.plen];
        for k in 0..nt {
            for (r, &i) in rec.iter().enumerate() {
                data[r * nt + k] = st.cur[i];
            }
            let keep = match policy {
                HistoryPolicy::Full => true,
                HistoryPolicy::Stride(s) => s > 0 && k % s == 0,
                HistoryPolicy::None => false,
            };
            if keep {
                history.steps.push(k);
                self.copy_interior(&st.cur, &mut history.snapshots);
            }
            match &mut tape {
                Some(Tape::Full(buf)) => self.copy_interior(&st.cur, buf),
                Some(Tape::Checkpoints { stride, states }) if k % *stride == 0 && k + 1 < nt => states.push(st.clone()),
                _ => {}
            }
            if k + 1 < nt {
                let amp = wavelet.get(k).copied().unwrap_or(0.0);
                self.step(&mut st, src, amp, &mut w, &mut next);
                if (k + 1) % BLOWUP_CHECK_INTERVAL == 0 || k + 2 == nt {
                    self.check_finite(&st.cur, k + 1)?;
                }
            }
        }
        let gather = ShotGather::new(rec.len(), nt, self.dt, data)?;
        Ok((gather, history, tape))
    }

    pub fn forward(
        &self,
        wavelet: &[f64],
        src: (usize, usize),
        receivers: &[(usize, usize)],
        policy: HistoryPolicy,
    ) -> Result<ForwardOutput> {
        let (gather, history, _) = self.run(wavelet, src, receivers, policy, None)?;
        Ok(ForwardOutput { gather, history })
    }

    /// Forward pass that also records what [`Propagator::adjoint`] needs.
    /// `stride <= 1` stores every wavefield; larger values checkpoint.
    pub fn forward_taped(
        &self,
        wavelet: &[f64],
        src: (usize, usize),
        receivers: &[(usize, usize)],
        stride: usize,
    ) -> Result<(ShotGather, Tape)> {
        let (gather, _, tape) = self.run(wavelet, src, receivers, HistoryPolicy::None, Some(stride))?;
        Ok((gather, tape.expect("tape requested")))
    }

    /// Gradient of `Σ_{r,k} seed[r][k] · uᵏ(receiver r)` with respect to every
    /// cell velocity, by reverse-mode differentiation of [`Propagator::step`].
    pub fn adjoint(
        &self,
        tape: &Tape,
        wavelet: &[f64],
        src: (usize, usize),
        receivers: &[(usize, usize)],
        seed: &[f64],
    ) -> Result<Vec<f64>> {
        let nt = self.nt;
        let n = self.n();
        let mut grad = vec![0.0; n];
        assert_eq!(seed.len(), receivers.len() * nt, "seed shape");
        let last = (0..nt).rev().find(|&k| (0..receivers.len()).any(|r| seed[r * nt + k] != 0.0));
        let Some(last) = last else { return Ok(grad) };
        if last == 0 {
            return Ok(grad);
        }
        let rec: Vec<usize> = receivers.iter().map(|&r| self.pidx(r)).collect();
        let src_p = self.pidx(src);
        let inject = |buf: &mut [f64], k: usize| {
            for (r, &i) in rec.iter().enumerate() {
                buf[i] += seed[r * nt + k];
            }
        };

        let mut adj = AdjointState {
            hi: vec![0.0; self.plen],
            mid: vec![0.0; self.plen],
            lo: vec![0.0; self.plen],
            wbar: vec![0.0; self.plen],
            lap: vec![0.0; self.plen],
            pc: vec![vec![0.0; self.plen]; self.axes.len()],
            zc: vec![vec![0.0; self.plen]; self.axes.len()],
            r: vec![vec![0.0; self.plen]; self.axes.len()],
            sf: vec![vec![0.0; self.plen]; self.axes.len()],
        };
        inject(&mut adj.hi, last);

        // Second time difference of the forward field for step n, written into
        // `d2` (unpadded): u^{n+1} - 2u^n + u^{n-1}.
        let mut d2 = vec![0.0; n];
        match tape {
            Tape::Full(us) => {
                let field = |k: isize| -> Option<&[f64]> {
                    (k >= 0).then(|| &us[k as usize * n..(k as usize + 1) * n])
                };
                for step in (0..last).rev() {
                    inject(&mut adj.mid, step);
                    let up = field(step as isize + 1).unwrap();
                    let uc = field(step as isize).unwrap();
                    match field(step as isize - 1) {
                        Some(um) => {
                            for i in 0..n {
                                d2[i] = up[i] - 2.0 * uc[i] + um[i];
                            }
                        }
                        None => {
                            for i in 0..n {
                                d2[i] = up[i] - 2.0 * uc[i];
                            }
                        }
                    }
                    self.reverse_step(&mut adj, &d2, &mut grad);
                }
            }
            Tape::Checkpoints { stride, states } => {
                let mut st_w = vec![0.0; self.plen];
                let mut next = vec![0.0; self.plen];
                let mut seg: Vec<f64> = Vec::new();
                let n_segments = last.div_ceil(*stride);
                for s in (0..n_segments).rev() {
                    let n0 = s * stride;
                    let n1 = ((s + 1) * stride).min(last);
                    // Recompute u^{n0-1} ..= u^{n1}.
                    let mut st = states[s].clone();
                    seg.clear();
                    self.copy_interior(&st.prev, &mut seg);
                    self.copy_interior(&st.cur, &mut seg);
                    for k in n0..n1 {
                        let amp = wavelet.get(k).copied().unwrap_or(0.0);
                        self.step(&mut st, src_p, amp, &mut st_w, &mut next);
                        self.copy_interior(&st.cur, &mut seg);
                    }
                    for step in (n0..n1).rev() {
                        inject(&mut adj.mid, step);
                        let j = step - n0;
                        let (um, uc, up) = (&seg[j * n..(j + 1) * n], &seg[(j + 1) * n..(j + 2) * n], &seg[(j + 2) * n..(j + 3) * n]);
                        for i in 0..n {
                            d2[i] = up[i] - 2.0 * uc[i] + um[i];
                        }
                        self.reverse_step(&mut adj, &d2, &mut grad);
                    }
                }
            }
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericBlowup { step: i / n.max(1), shot: None });
        }
        Ok(grad)
    }

    /// Reverse of one step. On entry `adj.hi` is the complete adjoint of
    /// `u^{n+1}`; on exit the buffers are rotated so `adj.hi` holds `uⁿ`.
    fn reverse_step(&self, adj: &mut AdjointState, d2: &[f64], grad: &mut [f64]) {
        let pnx = self.pnx;
        self.project_free_surface(&mut adj.hi);
        for iz in 0..self.nz {
            let row = (iz + 1) * pnx + 1;
            let urow = iz * self.nx;
            for ix in 0..self.nx {
                let i = row + ix;
                let h = adj.hi[i];
                adj.wbar[i] = self.c[i] * h;
                grad[urow + ix] += h * d2[urow + ix] * self.two_over_v[urow + ix];
            }
        }
        // The Laplacian is symmetric, so its adjoint is itself.
        self.laplacian(&adj.wbar, &mut adj.lap);
        for iz in 0..self.nz {
            let row = (iz + 1) * pnx + 1;
            for i in row..row + self.nx {
                adj.mid[i] += 2.0 * adj.hi[i] + adj.lap[i];
                adj.lo[i] -= adj.hi[i];
            }
        }
        let base = self.base();
        for (a, ax) in self.axes.iter().enumerate() {
            let s = ax.stride;
            let wbar = &adj.wbar;
            let (zc, pc, r, sf) = (&mut adj.zc[a], &mut adj.pc[a], &mut adj.r[a], &mut adj.sf[a]);
            ax.for_each(base, &ax.band, |k, i| {
                let zb = zc[i] + wbar[i];
                r[i] = -ax.b[k] * zb;
                zc[i] = ax.a[k] * zb;
            });
            ax.for_each(base, &ax.band, |k, i| {
                let qm = wbar[i - s] + r[i - s];
                let qp = wbar[i + s] + r[i + s];
                let pb = pc[i] + (qm - qp) * ax.inv_2h;
                pc[i] = ax.a[k] * pb;
                sf[i] = -ax.b[k] * pb;
            });
            let mid = &mut adj.mid;
            ax.for_each(base, &ax.band1, |_, i| {
                mid[i] += (r[i + s] - 2.0 * r[i] + r[i - s]) * ax.inv_h2 + (sf[i - s] - sf[i + s]) * ax.inv_2h;
            });
        }
        // Rotate: hi <- mid, mid <- lo, lo <- 0.
        std::mem::swap(&mut adj.hi, &mut adj.mid);
        std::mem::swap(&mut adj.mid, &mut adj.lo);
        adj.lo.fill(0.0);
    }
}

struct AdjointState {
    hi: Vec<f64>,
    mid: Vec<f64>,
    lo: Vec<f64>,
    wbar: Vec<f64>,
    lap: Vec<f64>,
    pc: Vec<Vec<f64>>,
    zc: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    sf: Vec<Vec<f64>>,
}
