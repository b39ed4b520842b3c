//! Multiresolution hash encoding.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::nn::{Init, Layout};

/// Spatial hash primes; the first `d` are used.
pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashSpec {
    pub levels: usize,
    pub features: usize,
    pub base_resolution: usize,
    pub per_level_scale: f64,
    pub log2_table_size: u32,
}

impl Default for HashSpec {
    fn default() -> Self {
        Self { levels: 16, features: 2, base_resolution: 50, per_level_scale: 1.05, log2_table_size: 14 }
    }
}

impl HashSpec {
    /// Vertices per axis on level `l`: `⌊base · scale^l⌋`.
    pub fn resolution(&self, l: usize) -> usize {
        (self.base_resolution as f64 * self.per_level_scale.powi(l as i32)).floor() as usize
    }

    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features
    }
}

#[derive(Debug, Clone)]
pub(crate) struct HashLevel {
    pub res: usize,
    pub entries: usize,
    pub offset: usize,
    /// The whole lattice fits the table, so vertices are indexed directly.
    pub dense: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct HashEncoding {
    pub dims: usize,
    pub features: usize,
    pub levels: Vec<HashLevel>,
}

/// Table offsets and interpolation weights of every touched vertex.
pub(crate) struct HashTape {
    corners: usize,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl HashEncoding {
    pub fn new(layout: &mut Layout, prefix: &str, spec: &HashSpec, dims: usize) -> Self {
        let t = spec.table_size();
        let levels = (0..spec.levels)
            .map(|l| {
                let res = spec.resolution(l);
                let full = res.checked_pow(dims as u32).unwrap_or(usize::MAX);
                let entries = full.min(t);
                let offset = layout.push(format!("{prefix}.level{l}"), entries * spec.features, Init::Uniform(1e-4));
                HashLevel { res, entries, offset, dense: full <= t }
            })
            .collect();
        Self { dims, features: spec.features, levels }
    }

    pub fn output_dim(&self) -> usize {
        self.levels.len() * self.features
    }

    /// Table slot of integer vertex `v` on level `l`.
    pub fn slot(&self, l: usize, v: &[usize]) -> usize {
        let lv = &self.levels[l];
        if lv.dense {
            v.iter().rev().fold(0, |acc, &c| acc * lv.res + c)
        } else {
            let h = v.iter().zip(HASH_PRIMES).fold(0u32, |acc, (&c, p)| acc ^ (c as u32).wrapping_mul(p));
            h as usize % lv.entries
        }
    }

    /// Encode points given as rows of `x` with coordinates in `[−1, 1]`.
    pub fn forward(&self, theta: &[f64], x: &DMatrix<f64>) -> (DMatrix<f64>, HashTape) {
        let n = x.nrows();
        let d = self.dims;
        let corners = 1usize << d;
        let nl = self.levels.len();
        let nf = self.features;
        let mut out = DMatrix::zeros(n, nl * nf);
        let mut tape = HashTape { corners, index: vec![0; n * nl * corners], weight: vec![0.0; n * nl * corners] };
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut v = [0usize; 3];
        for i in 0..n {
            for (l, lv) in self.levels.iter().enumerate() {
                for a in 0..d {
                    let p = ((x[(i, a)] + 1.0) * 0.5).clamp(0.0, 1.0);
                    let s = p * (lv.res - 1) as f64;
                    let c = (s.floor() as usize).min(lv.res - 2);
                    base[a] = c;
                    frac[a] = s - c as f64;
                }
                for k in 0..corners {
                    let mut w = 1.0;
                    for a in 0..d {
                        let bit = (k >> a) & 1;
                        v[a] = base[a] + bit;
                        w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                    }
                    let at = lv.offset + self.slot(l, &v[..d]) * nf;
                    let t = (i * nl + l) * corners + k;
                    tape.index[t] = at;
                    tape.weight[t] = w;
                    for f in 0..nf {
                        out[(i, l * nf + f)] += w * theta[at + f];
                    }
                }
            }
        }
        (out, tape)
    }

    pub fn backward(&self, tape: &HashTape, dy: &DMatrix<f64>, grad: &mut [f64]) {
        let nl = self.levels.len();
        let nf = self.features;
        for i in 0..dy.nrows() {
            for l in 0..nl {
                for k in 0..tape.corners {
                    let t = (i * nl + l) * tape.corners + k;
                    let (at, w) = (tape.index[t], tape.weight[t]);
                    for f in 0..nf {
                        grad[at + f] += w * dy[(i, l * nf + f)];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn resolutions_follow_geometric_growth() {
        let s = HashSpec::default();
        assert_eq!(s.resolution(0), 50);
        assert_eq!(s.resolution(1), 52);
        assert_eq!(s.resolution(15), 103);
        assert_eq!(s.output_dim(), 32);
    }

    #[test]
    fn dense_levels_are_collision_free() {
        for (dims, spec) in [
            (2, HashSpec::default()),
            (1, HashSpec::default()),
            (2, HashSpec { log2_table_size: 12, ..HashSpec::default() }),
        ] {
            let mut layout = Layout::default();
            let enc = HashEncoding::new(&mut layout, "h", &spec, dims);
            for (l, lv) in enc.levels.iter().enumerate() {
                if lv.res.pow(dims as u32) > spec.table_size() {
                    assert!(!lv.dense);
                    continue;
                }
                assert!(lv.dense);
                let mut seen = HashSet::new();
                let total = lv.res.pow(dims as u32);
                for flat in 0..total {
                    let v: Vec<usize> = (0..dims).map(|a| flat / lv.res.pow(a as u32) % lv.res).collect();
                    let s = enc.slot(l, &v);
                    assert!(s < lv.entries);
                    assert!(seen.insert(s), "collision on level {l}");
                }
            }
        }
    }

    #[test]
    fn hashed_level_uses_xor_of_primes() {
        let spec = HashSpec { levels: 1, base_resolution: 200, log2_table_size: 10, ..HashSpec::default() };
        let mut layout = Layout::default();
        let enc = HashEncoding::new(&mut layout, "h", &spec, 2);
        assert!(!enc.levels[0].dense);
        assert_eq!(enc.levels[0].entries, 1024);
        let want = ((7u32 ^ 11u32.wrapping_mul(2_654_435_761)) % 1024) as usize;
        assert_eq!(enc.slot(0, &[7, 11]), want);
    }

    #[test]
    fn vertex_query_returns_table_entry() {
        let spec = HashSpec { levels: 3, base_resolution: 5, per_level_scale: 2.0, ..HashSpec::default() };
        let mut layout = Layout::default();
        let enc = HashEncoding::new(&mut layout, "h", &spec, 2);
        let theta = layout.sample(&mut ChaCha8Rng::seed_from_u64(1));
        // Level 0 has 5 vertices per axis; vertex (1, 3) sits at p = (0.25, 0.75).
        let x = DMatrix::from_row_slice(1, 2, &[-0.5, 0.5]);
        let (feat, _) = enc.forward(&theta, &x);
        let at = enc.levels[0].offset + enc.slot(0, &[1, 3]) * 2;
        assert_eq!(feat[(0, 0)], theta[at]);
        assert_eq!(feat[(0, 1)], theta[at + 1]);
        // The upper corner of the domain is a vertex on every level.
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let (feat, _) = enc.forward(&theta, &x);
        for l in 0..3 {
            let r = enc.levels[l].res - 1;
            let at = enc.levels[l].offset + enc.slot(l, &[r, r]) * 2;
            assert_eq!(feat[(0, 2 * l)], theta[at]);
        }
    }

    #[test]
    fn interpolation_is_linear_between_vertices() {
        let spec = HashSpec { levels: 1, base_resolution: 3, ..HashSpec::default() };
        let mut layout = Layout::default();
        let enc = HashEncoding::new(&mut layout, "h", &spec, 1);
        let theta: Vec<f64> = vec![1.0, 10.0, 2.0, 20.0, 4.0, 40.0];
        // Vertices at −1, 0, 1; x = 0.25 is a quarter of the way from 0 to 1.
        let (feat, _) = enc.forward(&theta, &DMatrix::from_row_slice(1, 1, &[0.25]));
        assert!((feat[(0, 0)] - 2.5).abs() < 1e-12);
        assert!((feat[(0, 1)] - 25.0).abs() < 1e-12);
    }
}
