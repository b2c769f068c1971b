//! Dense row-major tensors in double precision, plus the raw numeric
//! kernels (matmul, valid 1D convolution, broadcasting) used by the
//! compute graph.

use crate::error::{Error, Result};
use rand::Rng;

/// Dense tensor: `shape` dimension sizes, `data` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Scalar as a one-element tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Variance-preserving uniform init in [-b, b], b = sqrt(6/(fan_in+fan_out)).
    pub fn glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(shape, -bound, bound, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Shape(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({numel} elements)",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, &d) in index.iter().zip(&self.shape) {
            debug_assert!(*i < d);
            off = off * d + i;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Broadcast shape of two operands under trailing-alignment rules, or an
/// error when some dimension pair is neither equal nor 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::Shape(format!(
                "cannot broadcast {a:?} with {b:?}"
            )));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

fn pad_shape(shape: &[usize], ndim: usize) -> Vec<usize> {
    let mut padded = vec![1usize; ndim];
    padded[ndim - shape.len()..].copy_from_slice(shape);
    padded
}

/// Strides of a shape as seen from an `ndim`-dimensional broadcast view;
/// broadcast dimensions get stride 0.
fn broadcast_strides(shape: &[usize], ndim: usize) -> Vec<usize> {
    let padded = pad_shape(shape, ndim);
    let mut strides = vec![0usize; ndim];
    let mut s = 1;
    for d in (0..ndim).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { s };
        s *= padded[d];
    }
    strides
}

/// Elementwise combine with broadcasting.
pub fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape.clone(), data);
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape)?;
    let ndim = out_shape.len();
    let sa = broadcast_strides(&a.shape, ndim);
    let sb = broadcast_strides(&b.shape, ndim);
    let numel: usize = out_shape.iter().product();
    let mut data = vec![0.0; numel];
    let mut coords = vec![0usize; ndim];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for out in data.iter_mut() {
        *out = f(a.data[ia], b.data[ib]);
        // odometer increment
        for d in (0..ndim).rev() {
            coords[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
        }
    }
    Tensor::new(out_shape, data)
}

/// Sum `grad` (of `grad_shape`) down to `target_shape`, undoing a broadcast.
pub fn reduce_to_shape(grad: &Tensor, target_shape: &[usize]) -> Tensor {
    if grad.shape() == target_shape {
        return grad.clone();
    }
    let ndim = grad.shape().len();
    let st = broadcast_strides(target_shape, ndim);
    let out_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; out_numel];
    let shape = grad.shape();
    let mut coords = vec![0usize; ndim];
    let mut it = 0usize;
    for &g in grad.data() {
        out[it] += g;
        for d in (0..ndim).rev() {
            coords[d] += 1;
            it += st[d];
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
            it -= st[d] * shape[d];
        }
    }
    Tensor::new(target_shape.to_vec(), out).expect("reduce_to_shape produced valid tensor")
}

/// C[m,n] = A[m,k] * B[k,n], accumulating into `out`.
pub fn matmul_2d_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

pub fn matmul_2d(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_2d_into(a, b, &mut out, m, k, n);
    out
}

/// C[m,n] = A[k,m]^T * B[k,n], accumulating into `out`.
pub fn matmul_at_b_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut out[i * n..(i + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// C[m,n] = A[m,k] * B[n,k]^T, accumulating into `out`.
pub fn matmul_a_bt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (j, c) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            *c += s;
        }
    }
}

/// Valid 1D convolution along the middle (temporal) axis.
///
/// x: [n, len, c_in], kernel: [k_len, c_in, c_out] -> [n, len - k_len + 1, c_out].
pub fn conv1d_valid(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (n, len, c_in) = dims3(x, "conv1d input")?;
    let (k_len, kc_in, c_out) = dims3(kernel, "conv1d kernel")?;
    if kc_in != c_in {
        return Err(Error::Shape(format!(
            "conv1d channel mismatch: input has {c_in}, kernel expects {kc_in}"
        )));
    }
    if len < k_len {
        return Err(Error::Shape(format!(
            "conv1d input length {len} shorter than kernel {k_len}"
        )));
    }
    let out_len = len - k_len + 1;
    let mut out = vec![0.0; n * out_len * c_out];
    let xd = x.data();
    let kd = kernel.data();
    for i in 0..n {
        for t in 0..out_len {
            let orow = &mut out[(i * out_len + t) * c_out..(i * out_len + t + 1) * c_out];
            for k in 0..k_len {
                let xrow = &xd[(i * len + t + k) * c_in..(i * len + t + k + 1) * c_in];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let krow = &kd[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                    for (o, &kv) in orow.iter_mut().zip(krow) {
                        *o += xv * kv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, out_len, c_out], out)
}

/// Gradients of `conv1d_valid` given upstream grad g: [n, out_len, c_out].
pub fn conv1d_valid_grads(
    x: &Tensor,
    kernel: &Tensor,
    g: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (n, len, c_in) = dims3(x, "conv1d input")?;
    let (k_len, _, c_out) = dims3(kernel, "conv1d kernel")?;
    let out_len = len - k_len + 1;
    let mut gx = vec![0.0; x.numel()];
    let mut gk = vec![0.0; kernel.numel()];
    let xd = x.data();
    let kd = kernel.data();
    let gd = g.data();
    for i in 0..n {
        for t in 0..out_len {
            let grow = &gd[(i * out_len + t) * c_out..(i * out_len + t + 1) * c_out];
            for k in 0..k_len {
                let xoff = (i * len + t + k) * c_in;
                for c in 0..c_in {
                    let krow = &kd[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                    let mut s = 0.0;
                    for (&gv, &kv) in grow.iter().zip(krow) {
                        s += gv * kv;
                    }
                    gx[xoff + c] += s;
                    let xv = xd[xoff + c];
                    if xv != 0.0 {
                        let kgrow =
                            &mut gk[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                        for (kg, &gv) in kgrow.iter_mut().zip(grow) {
                            *kg += xv * gv;
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
    ))
}

pub fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::Shape(format!("{what}: expected 3 dims, got {s:?}"))),
    }
}

pub fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::Shape(format!("{what}: expected 2 dims, got {s:?}"))),
    }
}
