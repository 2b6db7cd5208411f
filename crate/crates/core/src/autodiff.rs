//! Reverse-mode automatic differentiation on f64 tensors.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] walks it in
//! reverse and accumulates gradients. Everything is f64 and single-threaded,
//! so a fixed seed reproduces losses and gradients bitwise. Complex-valued
//! parts of the signal chain are carried as real/imaginary pairs ([`CVar`]).
//!
//! Elementwise binary ops broadcast like NumPy (trailing-dimension
//! alignment); the backward pass sum-reduces gradients over broadcast axes.

use std::cell::RefCell;

use ndarray::{ArrayD, Axis, Ix2, IxDyn};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&ArrayD<f64>, &mut dyn FnMut(usize, ArrayD<f64>))>;

struct Node {
    value: ArrayD<f64>,
    backward: Option<BackwardFn>,
}

/// Gradient store produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v` (zero-shaped `None` if `v`
    /// never influenced the root).
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Sum `grad` down to `shape` by collapsing broadcast axes.
fn reduce_to_shape(grad: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let mut g = grad;
    // collapse extra leading axes
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    // collapse axes that were 1 in the target
    for (ax, (&gs, &ts)) in g
        .shape()
        .to_vec()
        .iter()
        .zip(shape.iter())
        .enumerate()
        .map(|(i, p)| (i, p))
        .collect::<Vec<_>>()
    {
        if ts == 1 && gs != 1 {
            let collapsed = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
            g = collapsed;
        }
    }
    g
}

fn broadcast_binary(
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> ArrayD<f64> {
    // resolve the broadcast shape (NumPy trailing alignment)
    let nd = a.ndim().max(b.ndim());
    let mut shape = vec![0usize; nd];
    for i in 0..nd {
        let sa = if i < nd - a.ndim() { 1 } else { a.shape()[i - (nd - a.ndim())] };
        let sb = if i < nd - b.ndim() { 1 } else { b.shape()[i - (nd - b.ndim())] };
        assert!(
            sa == sb || sa == 1 || sb == 1,
            "incompatible broadcast {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        shape[i] = sa.max(sb);
    }
    let av = a.broadcast(IxDyn(&shape)).expect("broadcast a");
    let bv = b.broadcast(IxDyn(&shape)).expect("broadcast b");
    let mut out = ArrayD::<f64>::zeros(IxDyn(&shape));
    ndarray::Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: ArrayD<f64>, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, backward });
        Var(nodes.len() - 1)
    }

    /// A leaf node (parameter or constant).
    pub fn leaf(&self, value: ArrayD<f64>) -> Var {
        self.push(value, None)
    }

    pub fn value(&self, v: Var) -> ArrayD<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let val = &nodes[v.0].value;
        assert_eq!(val.len(), 1, "scalar() on node of shape {:?}", val.shape());
        *val.iter().next().unwrap()
    }

    fn with_value<R>(&self, v: Var, f: impl FnOnce(&ArrayD<f64>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    // ── elementwise binary ─────────────────────────────────────────────

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let out = broadcast_binary(&va, &vb, |x, y| x + y);
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                acc(a.0, reduce_to_shape(g.clone(), &sa));
                acc(b.0, reduce_to_shape(g.clone(), &sb));
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let out = broadcast_binary(&va, &vb, |x, y| x - y);
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                acc(a.0, reduce_to_shape(g.clone(), &sa));
                acc(b.0, reduce_to_shape(-g.clone(), &sb));
            })),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let out = broadcast_binary(&va, &vb, |x, y| x * y);
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                acc(a.0, reduce_to_shape(broadcast_binary(g, &vb, |x, y| x * y), &sa));
                acc(b.0, reduce_to_shape(broadcast_binary(g, &va, |x, y| x * y), &sb));
            })),
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let out = broadcast_binary(&va, &vb, |x, y| x / y);
        let out_c = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                acc(a.0, reduce_to_shape(broadcast_binary(g, &vb, |x, y| x / y), &sa));
                // d/db (a/b) = -(a/b)/b
                let gb = broadcast_binary(
                    &broadcast_binary(g, &out_c, |x, y| x * y),
                    &vb,
                    |x, y| -x / y,
                );
                acc(b.0, reduce_to_shape(gb, &sb));
            })),
        )
    }

    // ── scalar ops ─────────────────────────────────────────────────────

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        let out = self.with_value(a, |v| v.mapv(|x| x + s));
        self.push(out, Some(Box::new(move |g, acc| acc(a.0, g.clone()))))
    }

    pub fn mul_scalar(&self, a: Var, s: f64) -> Var {
        let out = self.with_value(a, |v| v.mapv(|x| x * s));
        self.push(out, Some(Box::new(move |g, acc| acc(a.0, g.mapv(|x| x * s)))))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    // ── elementwise unary ──────────────────────────────────────────────

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Var {
        let va = self.value(a);
        let out = va.mapv(&f);
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                let mut gx = va.mapv(&df);
                gx.zip_mut_with(g, |d, &go| *d *= go);
                acc(a.0, gx);
            })),
        )
    }

    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, f64::sin, f64::cos)
    }

    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, f64::cos, |x| -x.sin())
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, f64::exp)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, f64::ln, |x| 1.0 / x)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, f64::sqrt, |x| 0.5 / x.sqrt())
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, |x| 1.0 - x.tanh() * x.tanh())
    }

    /// GELU in its tanh form, with the exact derivative of that form.
    pub fn gelu(&self, a: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
        const A: f64 = 0.044_715;
        self.unary(
            a,
            |x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()),
            |x| {
                let u = C * (x + A * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
            },
        )
    }

    /// Sign quantizer with straight-through backward (identity gradient).
    /// `sign(0)` is defined as +1.
    pub fn ste_sign(&self, a: Var) -> Var {
        let out = self.with_value(a, |v| v.mapv(|x| if x >= 0.0 { 1.0 } else { -1.0 }));
        self.push(out, Some(Box::new(move |g, acc| acc(a.0, g.clone()))))
    }

    // ── reductions ─────────────────────────────────────────────────────

    pub fn sum_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let s = va.sum();
        self.push(
            ArrayD::from_elem(IxDyn(&[]), s),
            Some(Box::new(move |g, acc| {
                let go = *g.iter().next().unwrap();
                acc(a.0, ArrayD::from_elem(IxDyn(&shape), go));
            })),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n)
    }

    /// Sum over one axis, keeping it as a length-1 dimension.
    pub fn sum_axis_keep(&self, a: Var, axis: usize) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let out = va.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                let gb = g
                    .broadcast(IxDyn(&shape))
                    .expect("sum_axis backward broadcast")
                    .to_owned();
                acc(a.0, gb);
            })),
        )
    }

    // ── shape ops ──────────────────────────────────────────────────────

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let va = self.value(a);
        let old = va.shape().to_vec();
        let out = va
            .to_shape(IxDyn(shape))
            .expect("reshape: element count mismatch")
            .to_owned();
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                acc(a.0, g.to_shape(IxDyn(&old)).expect("reshape backward").to_owned());
            })),
        )
    }

    pub fn slice_axis(&self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let out = va
            .slice_axis(Axis(axis), ndarray::Slice::from(start..start + len))
            .to_owned();
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                let mut full = ArrayD::<f64>::zeros(IxDyn(&shape));
                full.slice_axis_mut(Axis(axis), ndarray::Slice::from(start..start + len))
                    .assign(g);
                acc(a.0, full);
            })),
        )
    }

    pub fn concat(&self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<ArrayD<f64>> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).expect("concat shapes");
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                let mut offset = 0;
                for (i, &len) in lens.iter().enumerate() {
                    let part = g
                        .slice_axis(Axis(axis), ndarray::Slice::from(offset..offset + len))
                        .to_owned();
                    acc(ids[i], part);
                    offset += len;
                }
            })),
        )
    }

    /// Swap the first two axes of a 3-D tensor.
    pub fn swap01(&self, a: Var) -> Var {
        let va = self.value(a);
        assert_eq!(va.ndim(), 3, "swap01 expects a 3-D tensor");
        let out = va.view().permuted_axes(vec![1, 0, 2]).to_owned();
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                acc(a.0, g.view().permuted_axes(vec![1, 0, 2]).to_owned());
            })),
        )
    }

    /// Stack a tensor `n` times along a new leading axis.
    pub fn repeat0(&self, a: Var, n: usize) -> Var {
        let va = self.value(a);
        let mut shape = vec![n];
        shape.extend_from_slice(va.shape());
        let out = va
            .broadcast(IxDyn(&shape))
            .expect("repeat0 broadcast")
            .to_owned();
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                acc(a.0, g.sum_axis(Axis(0)));
            })),
        )
    }

    // ── linear algebra ─────────────────────────────────────────────────

    /// 2-D matrix product.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let va = self.value(a).into_dimensionality::<Ix2>().expect("matmul lhs 2-D");
        let vb = self.value(b).into_dimensionality::<Ix2>().expect("matmul rhs 2-D");
        let out = va.dot(&vb).into_dyn();
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("grad 2-D");
                acc(a.0, g2.dot(&vb.t()).into_dyn());
                acc(b.0, va.t().dot(&g2).into_dyn());
            })),
        )
    }

    /// 2-D transpose.
    pub fn transpose2(&self, a: Var) -> Var {
        let va = self.value(a).into_dimensionality::<Ix2>().expect("transpose 2-D");
        let out = va.t().to_owned().into_dyn();
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("grad 2-D");
                acc(a.0, g2.t().to_owned().into_dyn());
            })),
        )
    }

    /// Batched matrix product over a shared leading axis:
    /// (B, m, k) × (B, k, n) → (B, m, n).
    pub fn bmm(&self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let (ba, m, ka) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let (bb, kb, n) = (vb.shape()[0], vb.shape()[1], vb.shape()[2]);
        assert_eq!(ba, bb, "bmm batch mismatch");
        assert_eq!(ka, kb, "bmm inner-dim mismatch");
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[ba, m, n]));
        for i in 0..ba {
            let ai = va
                .index_axis(Axis(0), i)
                .into_dimensionality::<Ix2>()
                .unwrap();
            let bi = vb
                .index_axis(Axis(0), i)
                .into_dimensionality::<Ix2>()
                .unwrap();
            out.index_axis_mut(Axis(0), i).assign(&ai.dot(&bi).into_dyn());
        }
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                let mut ga = ArrayD::<f64>::zeros(va.raw_dim());
                let mut gb = ArrayD::<f64>::zeros(vb.raw_dim());
                for i in 0..ba {
                    let gi = g
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    let ai = va
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    let bi = vb
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    ga.index_axis_mut(Axis(0), i)
                        .assign(&gi.dot(&bi.t()).into_dyn());
                    gb.index_axis_mut(Axis(0), i)
                        .assign(&ai.t().dot(&gi).into_dyn());
                }
                acc(a.0, ga);
                acc(b.0, gb);
            })),
        )
    }

    /// Row softmax over the last dimension, numerically stabilized.
    pub fn softmax_lastdim(&self, a: Var) -> Var {
        let va = self.value(a);
        let last = va.ndim() - 1;
        let mut out = va.clone();
        for mut row in out.rows_mut() {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - mx).exp());
            let s: f64 = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let y = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, acc| {
                // dx = (g - Σ_j g_j y_j) * y, rowwise over the last axis
                let mut gx = g.clone();
                let dots = (&gx * &y).sum_axis(Axis(last)).insert_axis(Axis(last));
                let dotb = dots.broadcast(y.raw_dim()).unwrap().to_owned();
                gx.zip_mut_with(&dotb, |a, &b| *a -= b);
                gx.zip_mut_with(&y, |a, &b| *a *= b);
                acc(a.0, gx);
            })),
        )
    }

    /// Backpropagate from a single-element root.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.0].value.len(),
            1,
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(nodes[root.0].value.raw_dim(), 1.0));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &nodes[id].backward {
                back(&g, &mut |pid, contribution| {
                    match &mut grads[pid] {
                        Some(existing) => *existing += &contribution,
                        slot => *slot = Some(contribution),
                    }
                });
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

/// Real/imaginary pair representing a complex tensor on the tape.
#[derive(Debug, Clone, Copy)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl Tape {
    pub fn cleaf(&self, re: ArrayD<f64>, im: ArrayD<f64>) -> CVar {
        CVar {
            re: self.leaf(re),
            im: self.leaf(im),
        }
    }

    pub fn cadd(&self, a: CVar, b: CVar) -> CVar {
        CVar {
            re: self.add(a.re, b.re),
            im: self.add(a.im, b.im),
        }
    }

    /// Elementwise complex product (with broadcasting).
    pub fn cmul(&self, a: CVar, b: CVar) -> CVar {
        let rr = self.mul(a.re, b.re);
        let ii = self.mul(a.im, b.im);
        let ri = self.mul(a.re, b.im);
        let ir = self.mul(a.im, b.re);
        CVar {
            re: self.sub(rr, ii),
            im: self.add(ri, ir),
        }
    }

    /// Elementwise `conj(a) * b`.
    pub fn cmul_conj(&self, a: CVar, b: CVar) -> CVar {
        let rr = self.mul(a.re, b.re);
        let ii = self.mul(a.im, b.im);
        let ri = self.mul(a.re, b.im);
        let ir = self.mul(a.im, b.re);
        CVar {
            re: self.add(rr, ii),
            im: self.sub(ri, ir),
        }
    }

    /// Squared modulus, elementwise.
    pub fn cabs2(&self, a: CVar) -> Var {
        let rr = self.mul(a.re, a.re);
        let ii = self.mul(a.im, a.im);
        self.add(rr, ii)
    }

    pub fn csum_axis_keep(&self, a: CVar, axis: usize) -> CVar {
        CVar {
            re: self.sum_axis_keep(a.re, axis),
            im: self.sum_axis_keep(a.im, axis),
        }
    }

    /// Complex 2-D matmul via four real products.
    pub fn cmatmul(&self, a: CVar, b: CVar) -> CVar {
        let rr = self.matmul(a.re, b.re);
        let ii = self.matmul(a.im, b.im);
        let ri = self.matmul(a.re, b.im);
        let ir = self.matmul(a.im, b.re);
        CVar {
            re: self.sub(rr, ii),
            im: self.add(ri, ir),
        }
    }

    /// Complex batched matmul.
    pub fn cbmm(&self, a: CVar, b: CVar) -> CVar {
        let rr = self.bmm(a.re, b.re);
        let ii = self.bmm(a.im, b.im);
        let ri = self.bmm(a.re, b.im);
        let ir = self.bmm(a.im, b.re);
        CVar {
            re: self.sub(rr, ii),
            im: self.add(ri, ir),
        }
    }

    /// Unit-modulus tensor from a phase field, scaled by `scale`:
    /// entries `scale·exp(j·phase)`.
    pub fn phases_to_complex(&self, phases: Var, scale: f64) -> CVar {
        let c = self.cos(phases);
        let s = self.sin(phases);
        CVar {
            re: self.mul_scalar(c, scale),
            im: self.mul_scalar(s, scale),
        }
    }
}

/// Finite-difference utilities shared by unit tests and the acceptance
/// gradient checks.
pub mod check {
    use ndarray::ArrayD;

    /// Central finite difference of `f` with respect to every entry of
    /// `theta`, with step `h`.
    pub fn finite_difference(
        f: &mut dyn FnMut(&ArrayD<f64>) -> f64,
        theta: &ArrayD<f64>,
        h: f64,
    ) -> ArrayD<f64> {
        let mut grad = ArrayD::<f64>::zeros(theta.raw_dim());
        let mut work = theta.clone();
        let flat_len = theta.len();
        for i in 0..flat_len {
            let orig = work.as_slice_mut().unwrap()[i];
            work.as_slice_mut().unwrap()[i] = orig + h;
            let up = f(&work);
            work.as_slice_mut().unwrap()[i] = orig - h;
            let down = f(&work);
            work.as_slice_mut().unwrap()[i] = orig;
            grad.as_slice_mut().unwrap()[i] = (up - down) / (2.0 * h);
        }
        grad
    }

    /// Relative L2 error between an analytic gradient and its
    /// finite-difference estimate.
    pub fn rel_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
        let diff: f64 = analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / norm.max(1e-300)
    }
}

#[cfg(test)]
mod tests {
    use super::check::{finite_difference, rel_error};
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    /// Gradient-check a scalar-valued graph builder against central
    /// differences on its first input.
    fn grad_check(
        shapes: &[&[usize]],
        build: impl Fn(&Tape, &[Var]) -> Var,
        seed: u64,
        tol: f64,
    ) {
        let inits: Vec<ArrayD<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| randn(s, seed + i as u64))
            .collect();
        for target in 0..shapes.len() {
            let tape = Tape::new();
            let vars: Vec<Var> = inits.iter().map(|v| tape.leaf(v.clone())).collect();
            let root = build(&tape, &vars);
            let grads = tape.backward(root);
            let analytic = grads
                .wrt(vars[target])
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(inits[target].raw_dim()));

            let mut eval = |theta: &ArrayD<f64>| -> f64 {
                let t = Tape::new();
                let vs: Vec<Var> = inits
                    .iter()
                    .enumerate()
                    .map(|(i, v)| t.leaf(if i == target { theta.clone() } else { v.clone() }))
                    .collect();
                t.scalar(build(&t, &vs))
            };
            let numeric = finite_difference(&mut eval, &inits[target], 1e-6);
            let err = rel_error(&analytic, &numeric);
            assert!(
                err < tol,
                "gradient mismatch on input {target}: rel err {err:.3e}"
            );
        }
    }

    #[test]
    fn grad_elementwise_chain() {
        grad_check(
            &[&[3, 4], &[3, 4]],
            |t, v| {
                let x = t.mul(v[0], v[1]);
                let y = t.add(x, v[0]);
                let z = t.tanh(y);
                let w = t.mul(z, z);
                t.sum_all(w)
            },
            1,
            1e-7,
        );
    }

    #[test]
    fn grad_broadcasting() {
        grad_check(
            &[&[4, 5], &[5], &[4, 1]],
            |t, v| {
                let x = t.add(v[0], v[1]); // (4,5)+(5)
                let y = t.mul(x, v[2]); // (4,5)*(4,1)
                let z = t.gelu(y);
                t.mean_all(z)
            },
            2,
            1e-7,
        );
    }

    #[test]
    fn grad_matmul_transpose() {
        grad_check(
            &[&[3, 4], &[4, 2]],
            |t, v| {
                let x = t.matmul(v[0], v[1]);
                let xt = t.transpose2(x);
                let y = t.matmul(xt, x); // (2,2)
                t.sum_all(y)
            },
            3,
            1e-6,
        );
    }

    #[test]
    fn grad_bmm() {
        grad_check(
            &[&[3, 2, 4], &[3, 4, 2]],
            |t, v| {
                let x = t.bmm(v[0], v[1]);
                let s = t.mul(x, x);
                t.sum_all(s)
            },
            4,
            1e-6,
        );
    }

    #[test]
    fn grad_softmax() {
        grad_check(
            &[&[5, 7]],
            |t, v| {
                let y = t.softmax_lastdim(v[0]);
                let w = t.mul(y, y);
                t.sum_all(w)
            },
            5,
            1e-6,
        );
    }

    #[test]
    fn grad_shape_ops() {
        grad_check(
            &[&[4, 6]],
            |t, v| {
                let a = t.slice_axis(v[0], 1, 1, 3); // (4,3)
                let b = t.slice_axis(v[0], 1, 3, 3); // (4,3)
                let c = t.concat(1, &[a, b]); // (4,6)
                let d = t.reshape(c, &[2, 12]);
                let e = t.repeat0(d, 3); // (3,2,12)
                let e = t.swap01(e); // (2,3,12)
                let f = t.sum_axis_keep(e, 2); // (2,3,1)
                let g = t.mul(f, f);
                t.sum_all(g)
            },
            6,
            1e-7,
        );
    }

    #[test]
    fn grad_unary_functions() {
        grad_check(
            &[&[3, 3]],
            |t, v| {
                let s = t.sin(v[0]);
                let c = t.cos(v[0]);
                let sc = t.mul(s, c);
                let e = t.exp(sc);
                // keep ln/sqrt arguments positive
                let e1 = t.add_scalar(e, 1.0);
                let l = t.ln(e1);
                let q = t.sqrt(e1);
                let sum = t.add(l, q);
                t.sum_all(sum)
            },
            7,
            1e-7,
        );
    }

    #[test]
    fn grad_division() {
        grad_check(
            &[&[4], &[4]],
            |t, v| {
                let num = t.mul(v[0], v[0]);
                let den = t.mul(v[1], v[1]);
                let den = t.add_scalar(den, 1.5);
                let q = t.div(num, den);
                t.sum_all(q)
            },
            8,
            1e-7,
        );
    }

    #[test]
    fn grad_complex_ops() {
        grad_check(
            &[&[3, 4], &[3, 4], &[3, 4], &[3, 4]],
            |t, v| {
                let a = CVar { re: v[0], im: v[1] };
                let b = CVar { re: v[2], im: v[3] };
                let p = t.cmul(a, b);
                let q = t.cmul_conj(a, p);
                let m = t.cabs2(q);
                t.sum_all(m)
            },
            9,
            1e-6,
        );
    }

    #[test]
    fn grad_phases_to_complex() {
        grad_check(
            &[&[2, 5], &[2, 5], &[2, 5]],
            |t, v| {
                let x = t.phases_to_complex(v[0], 0.5);
                let h = CVar { re: v[1], im: v[2] };
                let y = t.cmul(h, x);
                let s = t.csum_axis_keep(y, 1);
                let p = t.cabs2(s);
                t.sum_all(p)
            },
            10,
            1e-6,
        );
    }

    #[test]
    fn ste_sign_forward_hard_backward_identity() {
        let tape = Tape::new();
        let x = tape.leaf(randn(&[6], 11));
        let b = tape.ste_sign(x);
        for (v, o) in tape.value(x).iter().zip(tape.value(b).iter()) {
            assert_eq!(*o, if *v >= 0.0 { 1.0 } else { -1.0 });
        }
        let w = tape.leaf(randn(&[6], 12));
        let y = tape.mul(b, w);
        let root = tape.sum_all(y);
        let grads = tape.backward(root);
        // straight-through: grad wrt x equals w (identity through sign)
        let gx = grads.wrt(x).unwrap();
        for (g, wv) in gx.iter().zip(tape.value(w).iter()) {
            assert!((g - wv).abs() < 1e-15);
        }
    }

    #[test]
    fn diamond_graph_accumulates() {
        // f(x) = sum(x*x + x*x) -> grad = 4x
        let tape = Tape::new();
        let init = randn(&[5], 13);
        let x = tape.leaf(init.clone());
        let a = tape.mul(x, x);
        let b = tape.mul(x, x);
        let c = tape.add(a, b);
        let root = tape.sum_all(c);
        let grads = tape.backward(root);
        let gx = grads.wrt(x).unwrap();
        for (g, v) in gx.iter().zip(init.iter()) {
            assert!((g - 4.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(randn(&[3], 14));
        let y = tape.leaf(randn(&[3], 15));
        let root = tape.sum_all(x);
        let grads = tape.backward(root);
        assert!(grads.wrt(y).is_none());
        assert!(grads.wrt(x).is_some());
    }
}
