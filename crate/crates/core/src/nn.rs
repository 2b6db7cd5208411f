//! Neural building blocks on top of the autodiff tape: a named parameter
//! store, linear / layer-norm / multi-head-attention layers, a pre-norm
//! transformer encoder, and Adam.
//!
//! Layers are lightweight descriptions (names + dimensions). At forward
//! time a [`Binder`] lazily turns named parameters into tape leaves, so a
//! backward pass can map gradients back to parameter names; parameters a
//! variant never binds are left untouched by the optimizer.

use std::cell::RefCell;
use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::LrSchedule;

/// Named f64 tensors, ordered deterministically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub map: BTreeMap<String, ArrayD<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>) {
        self.map.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
    }

    pub fn n_scalars(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }
}

/// Binds named parameters onto a tape once per forward pass.
pub struct Binder<'a> {
    pub tape: &'a Tape,
    params: &'a ParamSet,
    bound: RefCell<BTreeMap<String, Var>>,
}

impl<'a> Binder<'a> {
    pub fn new(tape: &'a Tape, params: &'a ParamSet) -> Self {
        Self {
            tape,
            params,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    /// Tape leaf for a named parameter (bound at most once).
    pub fn p(&self, name: &str) -> Var {
        if let Some(&v) = self.bound.borrow().get(name) {
            return v;
        }
        let v = self.tape.leaf(self.params.get(name).clone());
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    /// Collect gradients for every bound parameter.
    pub fn bound_gradients(
        &self,
        grads: &crate::autodiff::Gradients,
    ) -> BTreeMap<String, ArrayD<f64>> {
        self.bound
            .borrow()
            .iter()
            .filter_map(|(name, &v)| grads.wrt(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

/// Xavier-uniform init for a (fan_in, fan_out) matrix.
fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> ArrayD<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(&[fan_in, fan_out]), |_| {
        rng.random_range(-bound..bound)
    })
}

/// Affine layer `x·W + b`; weight shape (in, out).
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        params.insert(&format!("{}.w", self.name), xavier(rng, self.in_dim, self.out_dim));
        params.insert(
            &format!("{}.b", self.name),
            ArrayD::zeros(IxDyn(&[self.out_dim])),
        );
    }

    /// Input (S, in) → output (S, out).
    pub fn forward(&self, b: &Binder, x: Var) -> Var {
        let w = b.p(&format!("{}.w", self.name));
        let bias = b.p(&format!("{}.b", self.name));
        let y = b.tape.matmul(x, w);
        b.tape.add(y, bias)
    }
}

/// Layer normalization over the last dimension with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }

    pub fn init(&self, params: &mut ParamSet, _rng: &mut ChaCha8Rng) {
        params.insert(
            &format!("{}.g", self.name),
            ArrayD::from_elem(IxDyn(&[self.dim]), 1.0),
        );
        params.insert(&format!("{}.b", self.name), ArrayD::zeros(IxDyn(&[self.dim])));
    }

    pub fn forward(&self, b: &Binder, x: Var) -> Var {
        let t = b.tape;
        let nd = t.shape(x).len();
        let d = self.dim as f64;
        let mean = t.mul_scalar(t.sum_axis_keep(x, nd - 1), 1.0 / d);
        let centered = t.sub(x, mean);
        let sq = t.mul(centered, centered);
        let var = t.mul_scalar(t.sum_axis_keep(sq, nd - 1), 1.0 / d);
        let std = t.sqrt(t.add_scalar(var, LN_EPS));
        let normed = t.div(centered, std);
        let g = b.p(&format!("{}.g", self.name));
        let bias = b.p(&format!("{}.b", self.name));
        t.add(t.mul(normed, g), bias)
    }
}

/// Multi-head self-attention over a token matrix (S, D).
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize) -> Self {
        assert!(dim % heads == 0, "dim must divide into heads");
        Self {
            name: name.into(),
            dim,
            heads,
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        for proj in ["wq", "wk", "wv", "wo"] {
            params.insert(
                &format!("{}.{proj}", self.name),
                xavier(rng, self.dim, self.dim),
            );
        }
    }

    pub fn forward(&self, b: &Binder, x: Var) -> Var {
        let t = b.tape;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = t.matmul(x, b.p(&format!("{}.wq", self.name)));
        let k = t.matmul(x, b.p(&format!("{}.wk", self.name)));
        let v = t.matmul(x, b.p(&format!("{}.wv", self.name)));
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_axis(q, 1, h * dh, dh);
            let kh = t.slice_axis(k, 1, h * dh, dh);
            let vh = t.slice_axis(v, 1, h * dh, dh);
            let scores = t.mul_scalar(t.matmul(qh, t.transpose2(kh)), scale);
            let att = t.softmax_lastdim(scores);
            heads.push(t.matmul(att, vh));
        }
        let cat = t.concat(1, &heads);
        t.matmul(cat, b.p(&format!("{}.wo", self.name)))
    }
}

/// Feed-forward hidden width multiplier.
const FF_MULT: usize = 2;

/// One pre-norm encoder layer: `x + MHA(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub mha: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl EncoderLayer {
    pub fn new(name: &str, dim: usize, heads: usize) -> Self {
        Self {
            mha: MultiHeadAttention::new(format!("{name}.mha"), dim, heads),
            ln1: LayerNorm::new(format!("{name}.ln1"), dim),
            ln2: LayerNorm::new(format!("{name}.ln2"), dim),
            ff1: Linear::new(format!("{name}.ff1"), dim, FF_MULT * dim),
            ff2: Linear::new(format!("{name}.ff2"), FF_MULT * dim, dim),
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        self.mha.init(params, rng);
        self.ln1.init(params, rng);
        self.ln2.init(params, rng);
        self.ff1.init(params, rng);
        self.ff2.init(params, rng);
    }

    pub fn forward(&self, b: &Binder, x: Var) -> Var {
        let t = b.tape;
        let a = self.mha.forward(b, self.ln1.forward(b, x));
        let x = t.add(x, a);
        let h = self.ff1.forward(b, self.ln2.forward(b, x));
        let h = t.gelu(h);
        let h = self.ff2.forward(b, h);
        t.add(x, h)
    }
}

/// Stack of encoder layers with a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
    pub final_ln: LayerNorm,
}

impl TransformerEncoder {
    pub fn new(name: &str, dim: usize, heads: usize, n_layers: usize) -> Self {
        Self {
            layers: (0..n_layers)
                .map(|l| EncoderLayer::new(&format!("{name}.l{l}"), dim, heads))
                .collect(),
            final_ln: LayerNorm::new(format!("{name}.ln_out"), dim),
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        for l in &self.layers {
            l.init(params, rng);
        }
        self.final_ln.init(params, rng);
    }

    pub fn forward(&self, b: &Binder, mut x: Var) -> Var {
        for l in &self.layers {
            x = l.forward(b, x);
        }
        self.final_ln.forward(b, x)
    }
}

/// Learning rate at a given step under a schedule.
pub fn lr_at(schedule: LrSchedule, base_lr: f64, step: u64, total_steps: u64) -> f64 {
    match schedule {
        LrSchedule::Constant => base_lr,
        LrSchedule::Cosine {
            warmup_steps,
            floor,
        } => {
            if step < warmup_steps {
                base_lr * (step + 1) as f64 / warmup_steps.max(1) as f64
            } else {
                let span = total_steps.saturating_sub(warmup_steps).max(1) as f64;
                let t = (step - warmup_steps) as f64 / span;
                let cosine = 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos());
                base_lr * (floor + (1.0 - floor) * cosine)
            }
        }
    }
}

/// Adam optimizer. First/second-moment state is kept per parameter name.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update. Only names present in `grads` move.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, ArrayD<f64>>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params
                .map
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter '{name}'"));
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic RNG for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5e3d_c0de)
}
