//! Forward kernels on plain tensors. The tape reuses these for its values.

use super::{Element, Tensor};
use crate::error::{dim_err, Result};

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(dim_err!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut out = vec![T::zero(); m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn matmul_into<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
pub(crate) fn matmul_nt_into<T: Element>(g: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in g_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            out[i * k + p] = out[i * k + p] + acc;
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
pub(crate) fn matmul_tn_into<T: Element>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o = *o + av * gv;
            }
        }
    }
}

pub fn transpose<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = a.dims2()?;
    let d = a.data();
    let mut out = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            out.push(d[i * n + j]);
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Outer / axis / inner extents for iterating slices along `axis`.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Softmax along `axis` with max-shifting.
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_layout(x.shape(), axis)?;
    if len == 0 {
        return Err(dim_err!("softmax over an empty axis"));
    }
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                total = total + e;
            }
            for j in 0..len {
                out[at(j)] = out[at(j)] / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Normalized values and reciprocal standard deviations per last-axis row.
pub(crate) struct NormStats<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_stats<T: Element>(x: &Tensor<T>, eps: T) -> NormStats<T> {
    let cols = *x.shape().last().unwrap();
    let rows = x.len() / cols;
    let n = T::from_usize(cols);
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        xhat.extend(row.iter().map(|&v| (v - mean) * rs));
        rstd.push(rs);
    }
    NormStats { xhat, rstd }
}

pub(crate) fn check_norm_args<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<()> {
    let cols = *x.shape().last().unwrap();
    if gamma.len() != cols || beta.len() != cols {
        return Err(dim_err!(
            "layer_norm affine extents {} / {} do not match last axis {cols}",
            gamma.len(),
            beta.len()
        ));
    }
    if !(eps > T::zero()) {
        return Err(crate::error::Error::Input("layer_norm eps must be positive".into()));
    }
    Ok(())
}

/// Per-row standardization over the last axis followed by `gamma * x + beta`.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    check_norm_args(x, gamma, beta, eps)?;
    let stats = layer_norm_stats(x, eps);
    Ok(apply_affine(x.shape(), &stats.xhat, gamma.data(), beta.data()))
}

pub(crate) fn apply_affine<T: Element>(shape: &[usize], xhat: &[T], gamma: &[T], beta: &[T]) -> Tensor<T> {
    let cols = gamma.len();
    let data = xhat
        .iter()
        .enumerate()
        .map(|(i, &v)| gamma[i % cols] * v + beta[i % cols])
        .collect();
    Tensor::new(shape.to_vec(), data).expect("same shape")
}

pub(crate) fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(dim_err!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(a, b, "add", |x, y| x + y)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(a, b, "mul", |x, y| x * y)
}

/// Adds a last-axis bias vector to every row.
pub fn add_bias<T: Element>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let cols = *x.shape().last().unwrap();
    if bias.len() != cols {
        return Err(dim_err!("bias of length {} for last axis {cols}", bias.len()));
    }
    let b = bias.data();
    let data = x.data().iter().enumerate().map(|(i, &v)| v + b[i % cols]).collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

pub fn sigmoid_scalar<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    map(x, sigmoid_scalar)
}

pub fn tanh<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    map(x, T::tanh)
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    map(x, |v| v.max(T::zero()))
}

/// Concatenate 2-D tensors along columns.
pub fn concat_cols<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| dim_err!("concat of nothing"))?;
    let (rows, _) = first.dims2()?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = p.dims2()?;
        if r != rows {
            return Err(dim_err!("concat_cols row counts differ: {rows} vs {r}"));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    Tensor::new(vec![rows, total], out)
}

/// Stack 2-D tensors along rows.
pub fn concat_rows<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| dim_err!("concat of nothing"))?;
    let (_, cols) = first.dims2()?;
    let mut rows = 0;
    let mut out = Vec::new();
    for p in parts {
        let (r, c) = p.dims2()?;
        if c != cols {
            return Err(dim_err!("concat_rows column counts differ: {cols} vs {c}"));
        }
        rows += r;
        out.extend_from_slice(p.data());
    }
    Tensor::new(vec![rows, cols], out)
}

/// Column-wise mean of a 2-D tensor, as a 1×cols row.
pub fn mean_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = x.dims2()?;
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(x.row(r)) {
            *o = *o + v;
        }
    }
    let n = T::from_usize(rows);
    out.iter_mut().for_each(|o| *o = *o / n);
    Tensor::new(vec![1, cols], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small_case() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[5., 6.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17., 39.]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = Tensor::<f64>::from_fn(&[2, 5], |i| i as f64 * 0.3 - 1.0);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(matmul(&eye, &a).unwrap(), a);
        let zero = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matmul(&zero, &a).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn softmax_closed_forms() {
        let s = softmax(&t(&[2], &[0., 0.]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&t(&[2], &[0., 3f64.ln()]), 0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = t(&[2, 2], &[0., 1., 0., 1.]);
        let s = softmax(&x, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let one = t(&[2], &[1., 1.]);
        let zero = t(&[2], &[0., 0.]);
        let y = layer_norm(&t(&[1, 2], &[4., 4.]), &one, &zero, 1e-5).unwrap();
        assert_eq!(y.data(), &[0., 0.]);
        let y = layer_norm(&t(&[1, 2], &[1., 3.]), &one, &zero, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
        let beta = t(&[2], &[0.25, -2.]);
        let y = layer_norm(&t(&[1, 2], &[7., -3.]), &zero, &beta, 1e-5).unwrap();
        assert_eq!(y.data(), beta.data());
        assert!(layer_norm(&t(&[1, 2], &[1., 3.]), &one, &zero, 0.0).is_err());
    }
}
