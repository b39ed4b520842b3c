//! Dense layers with a hand-written backward pass.
//!
//! Parameters live in one flat vector; layers only hold offsets into it.
//! Batches are `n × features` matrices.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// `sin(ω0 z)`.
    Sine { omega0: f64 },
    /// `exp(−(s0 z)²) cos(ω0 z)`.
    Gabor { omega0: f64, s0: f64 },
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sine { omega0 } => (omega0 * z).sin(),
            Activation::Gabor { omega0, s0 } => (-(s0 * z).powi(2)).exp() * (omega0 * z).cos(),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Sine { omega0 } => omega0 * (omega0 * z).cos(),
            Activation::Gabor { omega0, s0 } => {
                let e = (-(s0 * z).powi(2)).exp();
                -e * (2.0 * s0 * s0 * z * (omega0 * z).cos() + omega0 * (omega0 * z).sin())
            }
        }
    }
}

/// Distribution of freshly initialised parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Uniform(f64),
    Normal(f64),
}

impl Init {
    fn sample(self, rng: &mut impl Rng, out: &mut [f64]) {
        match self {
            Init::Zeros => out.fill(0.0),
            Init::Uniform(a) => {
                for v in out {
                    *v = rng.random_range(-a..=a);
                }
            }
            Init::Normal(s) => {
                let d = Normal::new(0.0, s).expect("finite std");
                for v in out {
                    *v = d.sample(rng);
                }
            }
        }
    }
}

/// A named slice of the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Allocates parameter segments and remembers how to initialise them.
#[derive(Debug, Default)]
pub(crate) struct Layout {
    pub segments: Vec<Segment>,
    inits: Vec<Init>,
    len: usize,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, len: usize, init: Init) -> usize {
        let offset = self.len;
        self.segments.push(Segment { name: name.into(), offset, len });
        self.inits.push(init);
        self.len += len;
        offset
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut theta = vec![0.0; self.len];
        for (seg, init) in self.segments.iter().zip(&self.inits) {
            init.sample(rng, &mut theta[seg.offset..seg.offset + seg.len]);
        }
        theta
    }
}

/// `act(scale · x Wᵀ + b)`, `W` stored row-major (`out × in`).
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: usize,
    pub b: usize,
    pub scale: f64,
    pub act: Activation,
}

impl Dense {
    pub fn weight(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.out_dim, self.in_dim, &theta[self.w..self.w + self.out_dim * self.in_dim])
    }
}

/// Per-layer initialisation: `(layer, fan_in, fan_out) -> (weight, bias)`.
pub(crate) type InitRule<'a> = &'a dyn Fn(usize, usize, usize) -> (Init, Init);

#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
}

pub(crate) struct MlpTape {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; every layer but the last uses `hidden`.
    pub fn new(layout: &mut Layout, prefix: &str, dims: &[usize], hidden: Activation, init: InitRule) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fi, fo) = (dims[l], dims[l + 1]);
                let (wi, bi) = init(l, fi, fo);
                let w = layout.push(format!("{prefix}.{l}.weight"), fi * fo, wi);
                let b = layout.push(format!("{prefix}.{l}.bias"), fo, bi);
                let act = if l + 1 == n { Activation::Identity } else { hidden };
                Dense { in_dim: fi, out_dim: fo, w, b, scale: 1.0, act }
            })
            .collect();
        Self { layers }
    }


    pub fn forward(&self, theta: &[f64], x: DMatrix<f64>) -> (DMatrix<f64>, MlpTape) {
        let mut tape = MlpTape { inputs: Vec::with_capacity(self.layers.len()), pre: Vec::with_capacity(self.layers.len()) };
        let mut a = x;
        for layer in &self.layers {
            let w = layer.weight(theta);
            let mut z = &a * w.transpose();
            if layer.scale != 1.0 {
                z *= layer.scale;
            }
            for (j, mut col) in z.column_iter_mut().enumerate() {
                let b = theta[layer.b + j];
                col.add_scalar_mut(b);
            }
            let next = z.map(|v| layer.act.apply(v));
            tape.inputs.push(a);
            tape.pre.push(z);
            a = next;
        }
        (a, tape)
    }

    /// Accumulate `∂/∂θ` of `Σ dy ⊙ y` into `grad`; returns `∂/∂x` if asked.
    pub fn backward(&self, theta: &[f64], tape: &MlpTape, dy: DMatrix<f64>, grad: &mut [f64], want_dx: bool) -> Option<DMatrix<f64>> {
        let mut d = dy;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &tape.pre[l];
            let dz = if layer.act == Activation::Identity { d } else { d.zip_map(z, |g, z| g * layer.act.derivative(z)) };
            let x = &tape.inputs[l];
            let dw = dz.tr_mul(x);
            for o in 0..layer.out_dim {
                let row = layer.w + o * layer.in_dim;
                for i in 0..layer.in_dim {
                    grad[row + i] += layer.scale * dw[(o, i)];
                }
                grad[layer.b + o] += dz.column(o).sum();
            }
            if l == 0 && !want_dx {
                return None;
            }
            let mut dx = dz * layer.weight(theta);
            if layer.scale != 1.0 {
                dx *= layer.scale;
            }
            d = dx;
        }
        Some(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activation_derivatives() {
        let acts = [
            Activation::Identity,
            Activation::Tanh,
            Activation::Sine { omega0: 30.0 },
            Activation::Gabor { omega0: 5.0, s0: 5.0 },
        ];
        for act in acts {
            for z in [-0.7, -0.1, 0.05, 0.3, 1.2] {
                let h = 1e-6;
                let fd = (act.apply(z + h) - act.apply(z - h)) / (2.0 * h);
                let d = act.derivative(z);
                assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "{act:?} at {z}: {fd} vs {d}");
            }
        }
        assert_eq!(Activation::Relu.derivative(0.5), 1.0);
        assert_eq!(Activation::Relu.derivative(-0.5), 0.0);
    }

    #[test]
    fn mlp_backward_matches_differences() {
        let mut layout = Layout::default();
        let net = Mlp::new(&mut layout, "net", &[2, 5, 4, 3], Activation::Tanh, &|_, fi, _| {
            (Init::Uniform(1.0 / (fi as f64).sqrt()), Init::Uniform(0.5))
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = layout.sample(&mut rng);
        let x = DMatrix::from_fn(6, 2, |i, j| (i as f64 * 0.3 - 0.8) * (j as f64 + 1.0));
        let dy = DMatrix::from_fn(6, 3, |i, j| ((i * 3 + j) % 5) as f64 - 2.0);
        let obj = |t: &[f64]| net.forward(t, x.clone()).0.component_mul(&dy).sum();
        let (_, tape) = net.forward(&theta, x.clone());
        let mut g = vec![0.0; layout.len];
        net.backward(&theta, &tape, dy.clone(), &mut g, false);
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += 1e-6;
            let mut m = theta.clone();
            m[i] -= 1e-6;
            let fd = (obj(&p) - obj(&m)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        let mut layout = Layout::default();
        let net = Mlp::new(&mut layout, "f", &[1, 3, 2], Activation::Relu, &|_, _, _| (Init::Zeros, Init::Zeros));
        assert_eq!(layout.len, 3 + 3 + 6 + 2);
        assert_eq!(net.layers[1].w, 6);
        let names: Vec<_> = layout.segments.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["f.0.weight", "f.0.bias", "f.1.weight", "f.1.bias"]);
    }
}
