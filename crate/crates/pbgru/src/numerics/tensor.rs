//! The tensor type and its differentiable operations.
//!
//! A [`Tensor`] is a dense row-major `f64` array. Operations build a DAG of
//! parent links; calling [`Tensor::backward`] on a scalar walks the graph in
//! reverse topological order and accumulates `d loss / d tensor` into the
//! `grad` buffer of every tracked ancestor. Gradients accumulate across
//! repeated backward calls until [`Tensor::zero_grad`] resets them.
//!
//! All values are checked for finiteness as they are produced: an operation
//! that would emit NaN or infinity from finite inputs is an error, never a
//! silent propagation.

use std::collections::HashSet;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;

type BackFn = Box<dyn Fn(&[f64]) + Send + Sync>;

struct Inner {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    parents: Vec<Tensor>,
    back: Option<BackFn>,
}

/// Dense real-valued n-dimensional array with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<RwLock<Inner>>,
}

fn check_finite(op: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("{op} produced a non-finite value")))
    }
}

impl Tensor {
    fn build(
        op: &str,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        back: BackFn,
    ) -> Result<Tensor> {
        check_finite(op, &values)?;
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        // Constant subgraphs keep no parent links, so their buffers free early
        // and backward never visits them.
        let (parents, back) = if requires_grad {
            (parents, Some(back))
        } else {
            (Vec::new(), None)
        };
        Ok(Tensor {
            inner: Arc::new(RwLock::new(Inner {
                shape,
                values,
                requires_grad,
                grad: None,
                parents,
                back,
            })),
        })
    }

    /// Untracked tensor from row-major values.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::numeric(format!(
                "shape {:?} wants {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        check_finite("tensor construction", &values)?;
        Ok(Tensor {
            inner: Arc::new(RwLock::new(Inner {
                shape: shape.to_vec(),
                values,
                requires_grad: false,
                grad: None,
                parents: Vec::new(),
                back: None,
            })),
        })
    }

    /// Tracked leaf tensor; `backward` will leave a gradient here.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, values)?;
        t.write().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("zeros")
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel])
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Tensor::new(&[1], vec![value])
    }

    fn read(&self) -> RwLockReadGuard<'_, Inner> {
        self.inner.read().expect("tensor lock poisoned")
    }

    fn write(&self) -> RwLockWriteGuard<'_, Inner> {
        self.inner.write().expect("tensor lock poisoned")
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }

    pub fn shape(&self) -> Vec<usize> {
        self.read().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.read().values.len()
    }

    pub fn values(&self) -> Vec<f64> {
        self.read().values.clone()
    }

    /// The scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        let inner = self.read();
        if inner.values.len() != 1 {
            return Err(Error::numeric(format!(
                "item() on tensor of shape {:?}",
                inner.shape
            )));
        }
        Ok(inner.values[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.read().requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.read().grad.clone()
    }

    /// Drops the accumulated gradient. The training loop owns resets;
    /// nothing clears gradients implicitly.
    pub fn zero_grad(&self) {
        self.write().grad = None;
    }

    /// Untracked copy of the values.
    pub fn detach(&self) -> Tensor {
        let inner = self.read();
        Tensor::new(&inner.shape, inner.values.clone()).expect("detach")
    }

    /// Replaces the stored values in place. Used by the optimizer and by the
    /// finite-difference checker on leaf tensors; recorded graphs are never
    /// mutated.
    pub fn set_values(&self, values: Vec<f64>) -> Result<()> {
        check_finite("set_values", &values)?;
        let mut inner = self.write();
        if inner.values.len() != values.len() {
            return Err(Error::numeric(format!(
                "set_values length {} does not match shape {:?}",
                values.len(),
                inner.shape
            )));
        }
        inner.values = values;
        Ok(())
    }

    pub(crate) fn get_element(&self, idx: usize) -> f64 {
        self.read().values[idx]
    }

    #[cfg(test)]
    pub(crate) fn poison_grad_for_test(&self) {
        if let Some(g) = self.write().grad.as_mut() {
            g[0] = f64::NAN;
        }
    }

    pub(crate) fn set_element(&self, idx: usize, value: f64) {
        self.write().values[idx] = value;
    }

    fn accumulate(&self, delta: &[f64]) {
        let mut inner = self.write();
        if !inner.requires_grad {
            return;
        }
        let n = inner.values.len();
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    // ── shape bookkeeping ────────────────────────────────────────────

    fn dims2(&self, op: &str) -> Result<(usize, usize)> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::numeric(format!(
                "{op} needs a 2-d tensor, got shape {shape:?}"
            )));
        }
        Ok((shape[0], shape[1]))
    }

    fn last_dim(&self) -> Result<usize> {
        match self.shape().last() {
            Some(&d) => Ok(d),
            None => Err(Error::numeric("0-d tensor has no last axis")),
        }
    }

    // ── differentiable operations ────────────────────────────────────

    /// Matrix product of two 2-d tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::numeric(format!(
                "matmul: incompatible shapes {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let out = {
            let a = self.read();
            let b = rhs.read();
            matmul_raw(&a.values, &b.values, m, k, n)
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        Tensor::build(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                {
                    // d/da = g · bᵀ
                    let bv = pb.read().values.clone();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    pa.accumulate(&da);
                }
                {
                    // d/db = aᵀ · g
                    let av = pa.read().values.clone();
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += av[i * k + p] * g[i * n + j];
                            }
                            db[p * n + j] = s;
                        }
                    }
                    pb.accumulate(&db);
                }
            }),
        )
    }

    /// Transpose of a 2-d tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let out = {
            let a = self.read();
            let mut t = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    t[j * m + i] = a.values[i * n + j];
                }
            }
            t
        };
        let pa = self.clone();
        Tensor::build(
            "transpose",
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                pa.accumulate(&da);
            }),
        )
    }

    fn binary_same_shape(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::numeric(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(rhs, "add")?;
        let out: Vec<f64> = {
            let a = self.read();
            let b = rhs.read();
            a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect()
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        Tensor::build(
            "add",
            self.shape(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                pa.accumulate(g);
                pb.accumulate(g);
            }),
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(rhs, "sub")?;
        let out: Vec<f64> = {
            let a = self.read();
            let b = rhs.read();
            a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect()
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        Tensor::build(
            "sub",
            self.shape(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                pa.accumulate(g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                pb.accumulate(&neg);
            }),
        )
    }

    /// Hadamard (element-wise) product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(rhs, "mul")?;
        let out: Vec<f64> = {
            let a = self.read();
            let b = rhs.read();
            a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect()
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        Tensor::build(
            "mul",
            self.shape(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                {
                    let bv = pb.read().values.clone();
                    let da: Vec<f64> = g.iter().zip(&bv).map(|(gi, bi)| gi * bi).collect();
                    pa.accumulate(&da);
                }
                {
                    let av = pa.read().values.clone();
                    let db: Vec<f64> = g.iter().zip(&av).map(|(gi, ai)| gi * ai).collect();
                    pb.accumulate(&db);
                }
            }),
        )
    }

    /// Adds a 1-d bias along the last axis. This is the only broadcast the
    /// engine supports.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let d = self.last_dim()?;
        let bias_shape = bias.shape();
        if bias_shape != [d] {
            return Err(Error::numeric(format!(
                "add_bias: bias shape {:?} does not match last axis of {:?}",
                bias_shape,
                self.shape()
            )));
        }
        let rows = self.numel() / d;
        let out: Vec<f64> = {
            let a = self.read();
            let b = bias.read();
            let mut o = a.values.clone();
            for r in 0..rows {
                for j in 0..d {
                    o[r * d + j] += b.values[j];
                }
            }
            o
        };
        let (pa, pb) = (self.clone(), bias.clone());
        Tensor::build(
            "add_bias",
            self.shape(),
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                pa.accumulate(g);
                let mut db = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        db[j] += g[r * d + j];
                    }
                }
                pb.accumulate(&db);
            }),
        )
    }

    /// Element-wise map with derivative `dfdx(x, y)` given input and output.
    fn unary<F, D>(&self, op: &'static str, f: F, dfdx: D) -> Result<Tensor>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        let (out, xs): (Vec<f64>, Vec<f64>) = {
            let a = self.read();
            (a.values.iter().map(|&x| f(x)).collect(), a.values.clone())
        };
        let ys = out.clone();
        let pa = self.clone();
        Tensor::build(
            op,
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let da: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * dfdx(xs[i], ys[i]))
                    .collect();
                pa.accumulate(&da);
            }),
        )
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary("sigmoid", |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    /// Absolute value with subgradient 0 at the kink.
    pub fn abs(&self) -> Result<Tensor> {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::numeric("scale by a non-finite constant"));
        }
        self.unary("scale", |x| c * x, move |_, _| c)
    }

    /// Concatenates along the last axis; gradients split back.
    pub fn concat_last(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::numeric("concat_last of zero tensors"));
        }
        let first_shape = parts[0].shape();
        let lead = &first_shape[..first_shape.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != first_shape.len() || &s[..s.len() - 1] != lead {
                return Err(Error::numeric(format!(
                    "concat_last: leading dims differ, {:?} vs {:?}",
                    first_shape, s
                )));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        for r in 0..rows {
            let mut off = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                let pv = p.read();
                out[r * total + off..r * total + off + w]
                    .copy_from_slice(&pv.values[r * w..(r + 1) * w]);
                off += w;
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let owned: Vec<Tensor> = parts.to_vec();
        let widths_b = widths.clone();
        Tensor::build(
            "concat_last",
            shape,
            out,
            parts.to_vec(),
            Box::new(move |g| {
                let mut off = 0;
                for (p, &w) in owned.iter().zip(&widths_b) {
                    let mut dp = vec![0.0; rows * w];
                    for r in 0..rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + off..r * total + off + w]);
                    }
                    p.accumulate(&dp);
                    off += w;
                }
            }),
        )
    }

    /// Contiguous range along the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let d = self.last_dim()?;
        if start + len > d || len == 0 {
            return Err(Error::numeric(format!(
                "slice_last {start}..{} out of last axis {d}",
                start + len
            )));
        }
        let rows = self.numel() / d;
        let out: Vec<f64> = {
            let a = self.read();
            let mut o = vec![0.0; rows * len];
            for r in 0..rows {
                o[r * len..(r + 1) * len]
                    .copy_from_slice(&a.values[r * d + start..r * d + start + len]);
            }
            o
        };
        let mut shape = self.shape();
        *shape.last_mut().unwrap() = len;
        let pa = self.clone();
        Tensor::build(
            "slice_last",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; rows * d];
                for r in 0..rows {
                    da[r * d + start..r * d + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                pa.accumulate(&da);
            }),
        )
    }

    /// Single slice along the first axis; drops that axis.
    pub fn slice_first(&self, index: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(Error::numeric("slice_first on 0-d tensor"));
        }
        let d0 = shape[0];
        if index >= d0 {
            return Err(Error::numeric(format!(
                "slice_first index {index} out of first axis {d0}"
            )));
        }
        let stride: usize = shape[1..].iter().product();
        let out: Vec<f64> = {
            let a = self.read();
            a.values[index * stride..(index + 1) * stride].to_vec()
        };
        let pa = self.clone();
        let total = d0 * stride;
        Tensor::build(
            "slice_first",
            shape[1..].to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; total];
                da[index * stride..(index + 1) * stride].copy_from_slice(g);
                pa.accumulate(&da);
            }),
        )
    }

    /// Numerically stable softmax along `axis`; each line sums to 1.
    pub fn softmax_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::numeric(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = self.values();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..axis_len {
                    max = max.max(out[base + k * inner]);
                }
                let mut sum = 0.0;
                for k in 0..axis_len {
                    let e = (out[base + k * inner] - max).exp();
                    out[base + k * inner] = e;
                    sum += e;
                }
                for k in 0..axis_len {
                    out[base + k * inner] /= sum;
                }
            }
        }
        let ys = out.clone();
        let pa = self.clone();
        Tensor::build(
            "softmax",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * axis_len * inner + i;
                        let mut dot = 0.0;
                        for k in 0..axis_len {
                            let idx = base + k * inner;
                            dot += g[idx] * ys[idx];
                        }
                        for k in 0..axis_len {
                            let idx = base + k * inner;
                            da[idx] = ys[idx] * (g[idx] - dot);
                        }
                    }
                }
                pa.accumulate(&da);
            }),
        )
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.read().values.iter().sum();
        let n = self.numel();
        let pa = self.clone();
        Tensor::build(
            "sum",
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g| {
                pa.accumulate(&vec![g[0]; n]);
            }),
        )
    }

    /// Scales every row of a `[r, c]` tensor by the matching entry of an
    /// `[r, 1]` weight column.
    pub fn row_scale(&self, weights: &Tensor) -> Result<Tensor> {
        let (r, c) = self.dims2("row_scale")?;
        if weights.shape() != [r, 1] {
            return Err(Error::numeric(format!(
                "row_scale: weights {:?} do not match rows of {:?}",
                weights.shape(),
                self.shape()
            )));
        }
        let out: Vec<f64> = {
            let a = self.read();
            let w = weights.read();
            let mut o = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    o[i * c + j] = a.values[i * c + j] * w.values[i];
                }
            }
            o
        };
        let (pa, pw) = (self.clone(), weights.clone());
        Tensor::build(
            "row_scale",
            vec![r, c],
            out,
            vec![self.clone(), weights.clone()],
            Box::new(move |g| {
                {
                    let wv = pw.read().values.clone();
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g[i * c + j] * wv[i];
                        }
                    }
                    pa.accumulate(&da);
                }
                {
                    let av = pa.read().values.clone();
                    let mut dw = vec![0.0; r];
                    for i in 0..r {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += g[i * c + j] * av[i * c + j];
                        }
                        dw[i] = s;
                    }
                    pw.accumulate(&dw);
                }
            }),
        )
    }

    /// Inverted dropout: kept entries scale by `1/(1-rate)` so evaluation
    /// needs no rescale. Callers skip this op entirely in eval mode.
    pub fn dropout(&self, rate: f64, rng: &mut Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::numeric(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| {
                if rng.uniform(0.0, 1.0) < rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        self.apply_mask(&mask)
    }

    /// Element-wise product with a fixed mask; used by dropout and by the
    /// gradient checker, which needs the mask held constant across calls.
    pub fn apply_mask(&self, mask: &[f64]) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(Error::numeric("mask length mismatch"));
        }
        let out: Vec<f64> = {
            let a = self.read();
            a.values.iter().zip(mask).map(|(x, m)| x * m).collect()
        };
        let pa = self.clone();
        let mask = mask.to_vec();
        Tensor::build(
            "mask",
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let da: Vec<f64> = g.iter().zip(&mask).map(|(gi, m)| gi * m).collect();
                pa.accumulate(&da);
            }),
        )
    }

    /// Reinterprets the values under a new shape with the same element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() {
            return Err(Error::numeric(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(),
                new_shape
            )));
        }
        let out = self.values();
        let pa = self.clone();
        Tensor::build(
            "reshape",
            new_shape.to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                pa.accumulate(g);
            }),
        )
    }

    // ── reverse pass ─────────────────────────────────────────────────

    /// Populates `grad` on every tracked ancestor of a scalar loss with
    /// `d loss / d ancestor`. Repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::numeric(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        // Iterative postorder DFS over tracked parents; the reversed order is
        // a topological order, so each node's gradient is complete before it
        // propagates to its parents.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        visited.insert(self.id());
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        while let Some((t, from)) = stack.pop() {
            let next = {
                let inner = t.read();
                let mut found = None;
                for (j, p) in inner.parents.iter().enumerate().skip(from) {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        found = Some((j, p.clone()));
                        break;
                    }
                }
                found
            };
            match next {
                Some((j, p)) => {
                    visited.insert(p.id());
                    stack.push((t, j + 1));
                    stack.push((p, 0));
                }
                None => order.push(t),
            }
        }
        self.accumulate(&[1.0]);
        for t in order.iter().rev() {
            let grad = t.read().grad.clone();
            if let Some(g) = grad {
                let inner = t.read();
                if let Some(back) = &inner.back {
                    back(&g);
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.read();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += av * b[p * n + j];
            }
        }
    }
    c
}

/// Interleaves two `[n, t]` head outputs into a `[t, n, 2]` prediction
/// window: channel 0 is the first argument, channel 1 the second.
pub fn stack_channels(inflow: &Tensor, outflow: &Tensor) -> Result<Tensor> {
    let (n, t) = inflow.dims2("stack_channels")?;
    if outflow.shape() != [n, t] {
        return Err(Error::numeric(format!(
            "stack_channels: shapes {:?} vs {:?}",
            inflow.shape(),
            outflow.shape()
        )));
    }
    let out = {
        let a = inflow.read();
        let b = outflow.read();
        let mut o = vec![0.0; t * n * 2];
        for ti in 0..t {
            for s in 0..n {
                o[(ti * n + s) * 2] = a.values[s * t + ti];
                o[(ti * n + s) * 2 + 1] = b.values[s * t + ti];
            }
        }
        o
    };
    let (pa, pb) = (inflow.clone(), outflow.clone());
    Tensor::build(
        "stack_channels",
        vec![t, n, 2],
        out,
        vec![inflow.clone(), outflow.clone()],
        Box::new(move |g| {
            let mut da = vec![0.0; n * t];
            let mut db = vec![0.0; n * t];
            for ti in 0..t {
                for s in 0..n {
                    da[s * t + ti] = g[(ti * n + s) * 2];
                    db[s * t + ti] = g[(ti * n + s) * 2 + 1];
                }
            }
            pa.accumulate(&da);
            pb.accumulate(&db);
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = eye.matmul(&m).unwrap();
        assert_eq!(r.values(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().values(), vec![11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 5]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
    }

    #[test]
    fn elementwise_basics() {
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        assert_eq!(x.tanh().unwrap().values(), vec![0.0]);
        assert_eq!(x.sigmoid().unwrap().values(), vec![0.5]);
        let y = Tensor::new(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(y.relu().unwrap().values(), vec![0.0, 2.0]);
    }

    #[test]
    fn softmax_uniform_and_log_weights() {
        let x = Tensor::new(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let s = x.softmax_axis(0).unwrap().values();
        assert_close(&s, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1e-15);

        let x = Tensor::new(&[3], vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        let s = x.softmax_axis(0).unwrap().values();
        assert_close(&s, &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0], 1e-12);
    }

    #[test]
    fn softmax_lines_sum_to_one() {
        let mut rng = Rng::new(7);
        let vals: Vec<f64> = (0..24).map(|_| rng.uniform(-4.0, 4.0)).collect();
        let x = Tensor::new(&[2, 3, 4], vals).unwrap();
        for axis in 0..3 {
            let s = x.softmax_axis(axis).unwrap();
            let v = s.values();
            let shape = [2usize, 3, 4];
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * shape[axis] * inner + i;
                    let total: f64 = (0..shape[axis]).map(|k| v[base + k * inner]).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                    assert!((0..shape[axis]).all(|k| v[base + k * inner] >= 0.0));
                }
            }
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::param(&[2, 3], vec![1.0, -2.0, 0.5, 4.0, 0.0, -1.0]).unwrap();
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_of_half_square_is_identity() {
        let vals = vec![1.5, -2.0, 0.25];
        let x = Tensor::param(&[3], vals.clone()).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap().scale(0.5).unwrap();
        loss.backward().unwrap();
        assert_close(&x.grad().unwrap(), &vals, 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(x.backward().is_err());
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn shared_operand_gradient_adds_both_paths() {
        // loss = sum(x ⊙ x) has gradient 2x.
        let x = Tensor::param(&[2], vec![3.0, -1.0]).unwrap();
        x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
        assert_close(&x.grad().unwrap(), &[6.0, -2.0], 1e-15);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = Tensor::new(&[1], vec![1e308]).unwrap();
        assert!(x.exp().is_err());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![5.0, 6.0]).unwrap();
        let c = Tensor::concat_last(&[a, b]).unwrap();
        assert_eq!(c.shape(), vec![2, 3]);
        assert_eq!(c.values(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = c.slice_last(0, 2).unwrap();
        assert_eq!(back.values(), vec![1.0, 2.0, 3.0, 4.0]);
        let tail = c.slice_last(2, 1).unwrap();
        assert_eq!(tail.values(), vec![5.0, 6.0]);
    }

    #[test]
    fn dropout_expectation_matches_identity() {
        // Inverted scaling keeps the mean at the eval-mode output: the average
        // of many masked draws of a linear probe stays within 3 standard
        // errors of the unmasked value.
        let x = Tensor::new(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let probe = [0.3, 0.7, -0.2, 1.1];
        let eval_value: f64 = x
            .values()
            .iter()
            .zip(&probe)
            .map(|(v, p)| v * p)
            .sum();
        let mut rng = Rng::new(99);
        let n = 10_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let d = x.dropout(0.4, &mut rng).unwrap();
            let v: f64 = d.values().iter().zip(&probe).map(|(v, p)| v * p).sum();
            samples.push(v);
        }
        let mean: f64 = samples.iter().sum::<f64>() / n as f64;
        let var: f64 =
            samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
        let stderr = (var / n as f64).sqrt();
        assert!(
            (mean - eval_value).abs() <= 3.0 * stderr,
            "mean {mean} vs eval {eval_value}, stderr {stderr}"
        );
    }

    #[test]
    fn stack_channels_layout() {
        let yin = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let yout = Tensor::new(&[2, 3], vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]).unwrap();
        let y = stack_channels(&yin, &yout).unwrap();
        assert_eq!(y.shape(), vec![3, 2, 2]);
        // step 0: station 0 = (1, 10), station 1 = (4, 40)
        assert_eq!(y.values()[..4], [1.0, 10.0, 4.0, 40.0]);
    }

    #[test]
    fn determinism_same_seed_same_stream() {
        let mut a = Rng::new(1234);
        let mut b = Rng::new(1234);
        for _ in 0..100 {
            assert_eq!(a.uniform(-1.0, 1.0).to_bits(), b.uniform(-1.0, 1.0).to_bits());
        }
    }
}
