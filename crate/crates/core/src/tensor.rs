//! Dense row-major `f64` tensors and the handful of kernels the network needs.
//!
//! Every differentiable kernel comes as a forward function plus an explicit
//! `*_backward` function. There is no tape: callers invoke the backward rules
//! themselves, in reverse layer order.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(format!("invalid shape {shape:?}: every axis must be >= 1")));
        }
        if shape_len(shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {} values, got {}",
                shape_len(shape),
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "invalid shape {shape:?}");
        Tensor { shape: shape.to_vec(), data: vec![value; shape_len(shape)] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Standard normal entries drawn from `rng`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = StandardNormal.sample(rng);
        }
        t
    }

    /// Uniform entries in `(-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.random_range(-bound..bound);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        same_shape("dot", self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        same_shape("max_abs_diff", self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Copy of channel `c` of a rank-3 tensor as an `F×T` tensor.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        let (channels, f, t) = self.dims3()?;
        if c >= channels {
            return Err(Error::Index(format!("channel {c} out of range for {channels} channels")));
        }
        let plane = f * t;
        Tensor::from_vec(&[f, t], self.data[c * plane..(c + 1) * plane].to_vec())
    }

    pub(crate) fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::dim(format!("expected a rank-2 tensor, got shape {:?}", self.shape))),
        }
    }

    pub(crate) fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::dim(format!("expected a rank-3 tensor, got shape {:?}", self.shape))),
        }
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::dim(format!("{op}: shapes {:?} and {:?} differ", a.shape, b.shape)));
    }
    Ok(())
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        same_shape(&format!("accumulate into {}", self.name), &self.grad, g)?;
        for (a, b) in self.grad.data.iter_mut().zip(&g.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

// Raw row-major kernels. `out` is overwritten.

/// out[m×n] = a[m×k] · b[k×n]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    out[..m * n].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

// Four independent accumulators so the adds can pipeline.
fn dot_lanes(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// out[m×n] = a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_a_bt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = dot_lanes(arow, brow);
        }
    }
}

/// out[m×n] = a[k×m]ᵀ · b[k×n]
pub(crate) fn gemm_at_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    out[..m * n].iter_mut().for_each(|v| *v = 0.0);
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!("matmul: shapes {:?} and {:?} do not chain", a.shape, b.shape)));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, &b.data, &mut out);
    Tensor::from_vec(&[m, n], out)
}

/// Returns `(dA, dB)` for `C = A·B`: `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 || dc.shape != [m, n] {
        return Err(Error::dim(format!(
            "matmul_backward: shapes {:?}, {:?}, {:?} are inconsistent",
            a.shape, b.shape, dc.shape
        )));
    }
    let mut da = vec![0.0; m * k];
    gemm_a_bt(m, n, k, &dc.data, &b.data, &mut da);
    let mut db = vec![0.0; k * n];
    gemm_at_b(k, m, n, &a.data, &dc.data, &mut db);
    Ok((Tensor::from_vec(&[m, k], da)?, Tensor::from_vec(&[k, n], db)?))
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

struct ConvGeom {
    c_in: usize,
    f: usize,
    t: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    fo: usize,
    to: usize,
}

impl ConvGeom {
    fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (c_in, f, t) = x.dims3()?;
        let [c_out, wc, kh, kw] = w.shape[..] else {
            return Err(Error::dim(format!("conv2d: weight must be rank 4, got {:?}", w.shape)));
        };
        if wc != c_in {
            return Err(Error::dim(format!(
                "conv2d: input {:?} has {c_in} channels but weight {:?} expects {wc}",
                x.shape, w.shape
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d: stride must be positive"));
        }
        let (Some(fo), Some(to)) = (conv_out_len(f, kh, stride, pad), conv_out_len(t, kw, stride, pad)) else {
            return Err(Error::dim(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                f + 2 * pad,
                t + 2 * pad
            )));
        };
        Ok(ConvGeom { c_in, f, t, c_out, kh, kw, stride, pad, fo, to })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.fo * self.to
    }

    // Visits every (im2col index, input index) pair that lands inside the
    // unpadded input.
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize)) {
        let n = self.positions();
        for ci in 0..self.c_in {
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let row = (ci * self.kh + a) * self.kw + b;
                    for oi in 0..self.fo {
                        let i = (oi * self.stride + a) as isize - self.pad as isize;
                        if i < 0 || i as usize >= self.f {
                            continue;
                        }
                        let base = (ci * self.f + i as usize) * self.t;
                        for oj in 0..self.to {
                            let j = (oj * self.stride + b) as isize - self.pad as isize;
                            if j < 0 || j as usize >= self.t {
                                continue;
                            }
                            visit(row * n + oi * self.to + oj, base + j as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.patch() * self.positions()];
        self.for_each_tap(|c, xi| cols[c] = x[xi]);
        cols
    }
}

/// 2-D cross-correlation of `x[C_in×F×T]` with `w[C_out×C_in×kh×kw]`.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    let cols = g.im2col(&x.data);
    let mut out = vec![0.0; g.c_out * g.positions()];
    gemm(g.c_out, g.patch(), g.positions(), &w.data, &cols, &mut out);
    Tensor::from_vec(&[g.c_out, g.fo, g.to], out)
}

/// Returns `(dx, dw)` for [`conv2d`].
pub fn conv2d_backward(x: &Tensor, w: &Tensor, stride: usize, pad: usize, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    if dy.shape != [g.c_out, g.fo, g.to] {
        return Err(Error::dim(format!(
            "conv2d_backward: upstream gradient {:?} does not match output [{}, {}, {}]",
            dy.shape, g.c_out, g.fo, g.to
        )));
    }
    let (k, n) = (g.patch(), g.positions());
    let cols = g.im2col(&x.data);
    let mut dw = vec![0.0; g.c_out * k];
    gemm_a_bt(g.c_out, n, k, &dy.data, &cols, &mut dw);
    let mut dcols = vec![0.0; k * n];
    gemm_at_b(k, g.c_out, n, &w.data, &dy.data, &mut dcols);
    let mut dx = vec![0.0; x.len()];
    g.for_each_tap(|c, xi| dx[xi] += dcols[c]);
    Ok((Tensor::from_vec(&x.shape, dx)?, Tensor::from_vec(&w.shape, dw)?))
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&v| f(v)).collect() }
}

fn zip_map(op: &str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| v.max(0.0))
}

/// Gradient is zero at exactly 0.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    zip_map("relu_backward", x, dy, |v, g| if v > 0.0 { g } else { 0.0 })
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

/// Takes the forward *output* `y = sigmoid(x)`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    zip_map("sigmoid_backward", y, dy, |s, g| g * s * (1.0 - s))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_map("add", a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_map("mul", a, b, |x, y| x * y)
}

/// Returns `(da, db)` for elementwise `a ⊙ b`.
pub fn mul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((mul(dy, b)?, mul(dy, a)?))
}

pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    map(x, |v| v * factor)
}

/// Multiplies every `F×T` plane of channel `c` by `s[c]`.
pub fn channel_scale(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (c, f, t) = x.dims3()?;
    if s.len() != c {
        return Err(Error::dim(format!("channel_scale: input {:?} needs {c} scales, got {:?}", x.shape, s.shape)));
    }
    let plane = f * t;
    let mut out = x.data.clone();
    for (chunk, &sc) in out.chunks_mut(plane).zip(&s.data) {
        chunk.iter_mut().for_each(|v| *v *= sc);
    }
    Tensor::from_vec(&x.shape, out)
}

/// Returns `(dx, ds)` for [`channel_scale`]; `ds` has shape `[C]`.
pub fn channel_scale_backward(x: &Tensor, s: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    same_shape("channel_scale_backward", x, dy)?;
    let dx = channel_scale(dy, s)?;
    let (c, f, t) = x.dims3()?;
    let plane = f * t;
    let ds = (0..c)
        .map(|ch| {
            let r = ch * plane..(ch + 1) * plane;
            x.data[r.clone()].iter().zip(&dy.data[r]).map(|(a, b)| a * b).sum()
        })
        .collect();
    Ok((dx, Tensor::from_vec(&[c], ds)?))
}

pub const GRAD_CHECK_EPS: f64 = 1e-5;
pub const GRAD_CHECK_TOL: f64 = 1e-4;
/// Denominator floor for the relative error so vanishing gradients are
/// compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Compares the analytic gradient returned by `f` against central finite
/// differences, one component of `x` at a time.
///
/// `f` returns the scalar loss at its argument together with the analytic
/// gradient of that loss with respect to the argument. The gradient is only
/// read at `x` itself.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Numeric(format!("grad_check: eps must be positive, got {eps}")));
    }
    let (loss, analytic) = f(x)?;
    if !loss.is_finite() || !analytic.is_finite() {
        return Err(Error::Numeric("grad_check: non-finite loss or gradient at the base point".into()));
    }
    same_shape("grad_check", x, &analytic)?;
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst_index: 0, checked: 0, tol };
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let plus = f(&probe)?.0;
        probe.data[i] = orig - eps;
        let minus = f(&probe)?.0;
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("grad_check: non-finite loss when perturbing component {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        report.max_abs_error = report.max_abs_error.max(abs);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    // Projects a tensor-valued op onto a fixed random direction to get a scalar loss.
    fn projected<F>(op: F, probe: Tensor) -> impl Fn(&Tensor) -> Result<(f64, Tensor)>
    where
        F: Fn(&Tensor, &Tensor) -> Result<(Tensor, Tensor)>,
    {
        move |x| {
            let (y, dx) = op(x, &probe)?;
            Ok((y.dot(&probe)?, dx))
        }
    }

    #[test]
    fn matmul_examples() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        assert_eq!(matmul(&a, &Tensor::identity(2)).unwrap(), a);
        let r = matmul(&t(&[1, 2], &[1.0, 2.0]), &t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = matmul(&Tensor::zeros(&[2, 3]), &Tensor::randn(&[3, 2], &mut rng)).unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn conv2d_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[1, 5, 7], &mut rng);
        assert_eq!(conv2d(&x, &Tensor::full(&[1, 1, 1, 1], 1.0), 1, 0).unwrap(), x);

        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = conv2d(&x, &Tensor::full(&[1, 1, 2, 2], 1.0), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);

        let y = conv2d(&Tensor::zeros(&[1, 3, 3]), &Tensor::zeros(&[1, 1, 3, 3]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let err = conv2d(&Tensor::zeros(&[1, 2, 2]), &Tensor::zeros(&[1, 1, 3, 3]), 1, 0).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        assert!(conv2d(&Tensor::zeros(&[2, 4, 4]), &Tensor::zeros(&[1, 1, 3, 3]), 1, 0).is_err());
    }

    // Direct six-loop convolution used as an oracle for the im2col path.
    fn conv_naive(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (ci, f, tt) = x.dims3().unwrap();
        let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let fo = (f + 2 * pad - kh) / stride + 1;
        let to = (tt + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; co * fo * to];
        for o in 0..co {
            for i in 0..fo {
                for j in 0..to {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for a in 0..kh {
                            for b in 0..kw {
                                let ii = (i * stride + a) as isize - pad as isize;
                                let jj = (j * stride + b) as isize - pad as isize;
                                if ii >= 0 && jj >= 0 && (ii as usize) < f && (jj as usize) < tt {
                                    acc += x.data()[(c * f + ii as usize) * tt + jj as usize]
                                        * w.data()[((o * ci + c) * kh + a) * kw + b];
                                }
                            }
                        }
                    }
                    out[(o * fo + i) * to + j] = acc;
                }
            }
        }
        Tensor::from_vec(&[co, fo, to], out).unwrap()
    }

    #[test]
    fn conv2d_matches_naive_and_shape_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for f in 3..7 {
            for tt in [3, 5, 8] {
                for (kh, kw) in [(1, 1), (3, 3), (2, 3)] {
                    for stride in 1..=3 {
                        for pad in 0..=2 {
                            let x = Tensor::randn(&[2, f, tt], &mut rng);
                            let w = Tensor::randn(&[3, 2, kh, kw], &mut rng);
                            let y = conv2d(&x, &w, stride, pad).unwrap();
                            let fo = (f + 2 * pad - kh) / stride + 1;
                            let to = (tt + 2 * pad - kw) / stride + 1;
                            assert_eq!(y.shape(), &[3, fo, to]);
                            assert!(y.max_abs_diff(&conv_naive(&x, &w, stride, pad)).unwrap() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(sigmoid(&t(&[1], &[0.0])).data(), &[0.5]);
        assert_eq!(relu(&t(&[2], &[-3.5, 2.0])).data(), &[0.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(&[3, 2, 4], &mut rng);
        assert_eq!(channel_scale(&x, &Tensor::full(&[3], 1.0)).unwrap(), x);
        assert!(channel_scale(&x, &Tensor::full(&[2], 1.0)).is_err());
        assert!(add(&x, &Tensor::zeros(&[3, 2, 3])).is_err());
        assert_eq!(relu_backward(&t(&[1], &[0.0]), &t(&[1], &[1.0])).unwrap().data(), &[0.0]);
    }

    #[test]
    fn grad_check_scalar_examples() {
        let sig = |x: &Tensor| -> Result<(f64, Tensor)> {
            let y = sigmoid(x);
            let g = sigmoid_backward(&y, &Tensor::full(x.shape(), 1.0))?;
            Ok((y.sum(), g))
        };
        assert!(grad_check(sig, &t(&[1], &[0.3]), GRAD_CHECK_EPS, GRAD_CHECK_TOL).unwrap().passed());
        let rl = |x: &Tensor| -> Result<(f64, Tensor)> {
            Ok((relu(x).sum(), relu_backward(x, &Tensor::full(x.shape(), 1.0))?))
        };
        assert!(grad_check(rl, &t(&[1], &[1.0]), GRAD_CHECK_EPS, GRAD_CHECK_TOL).unwrap().passed());
    }

    #[test]
    fn grad_check_flags_wrong_gradient() {
        let wrong = |x: &Tensor| -> Result<(f64, Tensor)> { Ok((sigmoid(x).sum(), Tensor::full(x.shape(), 1.0))) };
        assert!(!grad_check(wrong, &t(&[1], &[0.3]), GRAD_CHECK_EPS, GRAD_CHECK_TOL).unwrap().passed());
        let nan = |x: &Tensor| -> Result<(f64, Tensor)> { Ok((f64::NAN, x.clone())) };
        assert!(matches!(grad_check(nan, &t(&[1], &[0.3]), 1e-5, 1e-4), Err(Error::Numeric(_))));
    }

    #[test]
    fn backward_rules_pass_grad_check_on_ten_seeds() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let check = |f: &dyn Fn(&Tensor) -> Result<(f64, Tensor)>, x: &Tensor, what: &str| {
                let r = grad_check(f, x, GRAD_CHECK_EPS, GRAD_CHECK_TOL).unwrap();
                assert!(r.passed(), "{what} seed {seed}: {r:?}");
            };

            let b = Tensor::randn(&[4, 2], &mut rng);
            let a = Tensor::randn(&[3, 4], &mut rng);
            let pa = Tensor::randn(&[3, 2], &mut rng);
            let bb = b.clone();
            check(
                &projected(move |a, p| Ok((matmul(a, &bb)?, matmul_backward(a, &bb, p)?.0)), pa.clone()),
                &a,
                "matmul dA",
            );
            let aa = a.clone();
            check(
                &projected(move |b, p| Ok((matmul(&aa, b)?, matmul_backward(&aa, b, p)?.1)), pa),
                &b,
                "matmul dB",
            );

            let x = Tensor::randn(&[2, 5, 6], &mut rng);
            let w = Tensor::randn(&[3, 2, 3, 3], &mut rng);
            let py = Tensor::randn(&[3, 3, 3], &mut rng);
            let ww = w.clone();
            check(
                &projected(move |x, p| Ok((conv2d(x, &ww, 2, 1)?, conv2d_backward(x, &ww, 2, 1, p)?.0)), py.clone()),
                &x,
                "conv dx",
            );
            let xx = x.clone();
            check(
                &projected(move |w, p| Ok((conv2d(&xx, w, 2, 1)?, conv2d_backward(&xx, w, 2, 1, p)?.1)), py),
                &w,
                "conv dw",
            );

            let v = Tensor::randn(&[2, 3, 4], &mut rng);
            let pv = Tensor::randn(&[2, 3, 4], &mut rng);
            check(&projected(|x, p| Ok((sigmoid(x), sigmoid_backward(&sigmoid(x), p)?)), pv.clone()), &v, "sigmoid");
            // keep relu away from its kink
            let vr = map(&v, |z| if z.abs() < 1e-3 { 1e-3_f64.copysign(z) } else { z });
            check(&projected(|x, p| Ok((relu(x), relu_backward(x, p)?)), pv.clone()), &vr, "relu");
            let other = Tensor::randn(&[2, 3, 4], &mut rng);
            let o2 = other.clone();
            check(&projected(move |x, p| Ok((mul(x, &o2)?, mul_backward(x, &o2, p)?.0)), pv.clone()), &v, "mul");
            let o3 = other.clone();
            check(&projected(move |x, p| Ok((add(x, &o3)?, p.clone())), pv.clone()), &v, "add");
            check(&projected(|x, p| Ok((scale(x, -1.7), scale(p, -1.7))), pv.clone()), &v, "scale");

            let s = Tensor::randn(&[2], &mut rng);
            let s2 = s.clone();
            check(
                &projected(move |x, p| Ok((channel_scale(x, &s2)?, channel_scale_backward(x, &s2, p)?.0)), pv.clone()),
                &v,
                "channel_scale dx",
            );
            let v2 = v.clone();
            check(
                &projected(move |s, p| Ok((channel_scale(&v2, s)?, channel_scale_backward(&v2, s, p)?.1)), pv),
                &s,
                "channel_scale ds",
            );
        }
    }

    #[test]
    fn parameter_grad_tracks_value_shape() {
        let mut p = Parameter::new("w", Tensor::full(&[2, 3], 1.0));
        assert_eq!(p.grad.shape(), p.value.shape());
        p.accumulate(&Tensor::full(&[2, 3], 0.5)).unwrap();
        p.accumulate(&Tensor::full(&[2, 3], 0.5)).unwrap();
        assert_eq!(p.grad, Tensor::full(&[2, 3], 1.0));
        assert!(p.accumulate(&Tensor::zeros(&[3, 2])).is_err());
        p.zero_grad();
        assert_eq!(p.grad.sum(), 0.0);
    }

    #[test]
    fn from_vec_rejects_bad_lengths() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_vec(&[0, 2], vec![]).is_err());
    }
}
