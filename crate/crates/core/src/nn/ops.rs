//! Pure tensor kernels: gemm, convolution via im2col, activations,
//! normalization, softmax, cross-entropy, embedding gathers.
//!
//! These functions carry no autodiff state. The graph wires them into
//! forward/backward pairs, and inference paths call them directly.

use super::scalar::{c, Scalar};
use crate::error::{Error, Result};

/// `C = A·B (+ beta·C)` on row-major buffers.
///
/// `ta` means the `a` buffer stores the transpose: it is `(k, m)` row-major.
/// `tb` likewise means `b` is `(n, k)` row-major.
pub fn matmul_into<T: Scalar>(
    cbuf: &mut [T],
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
    beta: T,
) {
    assert_eq!(a.len(), m * k, "gemm: A buffer size");
    assert_eq!(b.len(), k * n, "gemm: B buffer size");
    assert_eq!(cbuf.len(), m * n, "gemm: C buffer size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::zero() {
            cbuf.fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            cbuf.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul<T: Scalar>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    matmul_into(&mut out, a, b, m, k, n, ta, tb, T::zero());
    out
}

/// Inference-path affine map: `y (rows, out) = x (rows, in) · wᵀ + b` with
/// `w (out, in)`.
pub fn linear_rows<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    rows: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<T> {
    let mut y = matmul(x, w, rows, d_in, d_out, false, true);
    for r in 0..rows {
        for i in 0..d_out {
            y[r * d_out + i] = y[r * d_out + i] + b[i];
        }
    }
    y
}

/// Output length of a strided cross-correlation.
pub fn conv1d_out_len(l: usize, k: usize, stride: usize, pad: usize) -> usize {
    (l + 2 * pad - k) / stride + 1
}

/// Output length of the transposed variant.
pub fn conv1d_transpose_out_len(l: usize, k: usize, stride: usize, pad: usize) -> usize {
    (l - 1) * stride + k - 2 * pad
}

/// `cols[(ch*kk + j), b*p + t] = x[b, ch, t*stride + j - pad]`, zero outside.
///
/// `x` is `(bsz, nch, l)`; `cols` is `(nch*kk, bsz*p)`; `p` = positions.
pub fn im2col<T: Scalar>(
    x: &[T],
    bsz: usize,
    nch: usize,
    l: usize,
    kk: usize,
    stride: usize,
    pad: usize,
    p: usize,
    cols: &mut [T],
) {
    assert_eq!(x.len(), bsz * nch * l);
    assert_eq!(cols.len(), nch * kk * bsz * p);
    let width = bsz * p;
    for ch in 0..nch {
        for j in 0..kk {
            let row = &mut cols[(ch * kk + j) * width..(ch * kk + j + 1) * width];
            for b in 0..bsz {
                let xrow = &x[(b * nch + ch) * l..(b * nch + ch + 1) * l];
                let dst = &mut row[b * p..(b + 1) * p];
                for (t, d) in dst.iter_mut().enumerate() {
                    let src = (t * stride + j) as isize - pad as isize;
                    *d = if src >= 0 && (src as usize) < l {
                        xrow[src as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: `x[b, ch, t*stride + j - pad] += cols[...]`.
pub fn col2im_acc<T: Scalar>(
    cols: &[T],
    bsz: usize,
    nch: usize,
    l: usize,
    kk: usize,
    stride: usize,
    pad: usize,
    p: usize,
    x: &mut [T],
) {
    assert_eq!(x.len(), bsz * nch * l);
    assert_eq!(cols.len(), nch * kk * bsz * p);
    let width = bsz * p;
    for ch in 0..nch {
        for j in 0..kk {
            let row = &cols[(ch * kk + j) * width..(ch * kk + j + 1) * width];
            for b in 0..bsz {
                let xrow = &mut x[(b * nch + ch) * l..(b * nch + ch + 1) * l];
                let src = &row[b * p..(b + 1) * p];
                for (t, s) in src.iter().enumerate() {
                    let dst = (t * stride + j) as isize - pad as isize;
                    if dst >= 0 && (dst as usize) < l {
                        xrow[dst as usize] = xrow[dst as usize] + *s;
                    }
                }
            }
        }
    }
}

/// Strided cross-correlation. Returns `(out, cols)`; `cols` is reused by the
/// backward pass.
///
/// `x`: `(bsz, c_in, l)`, `w`: `(c_out, c_in, k)`, `bias`: `(c_out)` optional.
pub fn conv1d_fwd<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    bsz: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<T>, Vec<T>) {
    let p = conv1d_out_len(l, k, stride, pad);
    let mut cols = vec![T::zero(); c_in * k * bsz * p];
    im2col(x, bsz, c_in, l, k, stride, pad, p, &mut cols);
    // tmp (c_out, bsz*p) = W (c_out, c_in*k) · cols
    let tmp = matmul(w, &cols, c_out, c_in * k, bsz * p, false, false);
    let mut out = vec![T::zero(); bsz * c_out * p];
    for b in 0..bsz {
        for co in 0..c_out {
            let add = bias.map_or(T::zero(), |bb| bb[co]);
            let src = &tmp[co * bsz * p + b * p..co * bsz * p + (b + 1) * p];
            let dst = &mut out[(b * c_out + co) * p..(b * c_out + co + 1) * p];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s + add;
            }
        }
    }
    (out, cols)
}

/// Gradients of [`conv1d_fwd`] w.r.t. input, weight and bias.
pub fn conv1d_bwd<T: Scalar>(
    dout: &[T],
    cols: &[T],
    w: &[T],
    bsz: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let p = conv1d_out_len(l, k, stride, pad);
    // Regroup dout (bsz, c_out, p) as dtmp (c_out, bsz*p).
    let mut dtmp = vec![T::zero(); c_out * bsz * p];
    for b in 0..bsz {
        for co in 0..c_out {
            let src = &dout[(b * c_out + co) * p..(b * c_out + co + 1) * p];
            dtmp[co * bsz * p + b * p..co * bsz * p + (b + 1) * p].copy_from_slice(src);
        }
    }
    // dW = dtmp · colsᵀ
    let dw = matmul(&dtmp, cols, c_out, bsz * p, c_in * k, false, true);
    // dcols = Wᵀ · dtmp
    let dcols = matmul(w, &dtmp, c_in * k, c_out, bsz * p, true, false);
    let mut dx = vec![T::zero(); bsz * c_in * l];
    col2im_acc(&dcols, bsz, c_in, l, k, stride, pad, p, &mut dx);
    let mut db = vec![T::zero(); c_out];
    for b in 0..bsz {
        for co in 0..c_out {
            let src = &dout[(b * c_out + co) * p..(b * c_out + co + 1) * p];
            let mut s = T::zero();
            for v in src {
                s = s + *v;
            }
            db[co] = db[co] + s;
        }
    }
    (dx, dw, db)
}

/// Transposed convolution. `x`: `(bsz, c_in, l)`, `w`: `(c_in, c_out, k)`.
/// Output length `(l-1)*stride + k - 2*pad`.
pub fn conv1d_transpose_fwd<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    bsz: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let lout = conv1d_transpose_out_len(l, k, stride, pad);
    // Pack x (bsz, c_in, l) into xr (c_in, bsz*l).
    let mut xr = vec![T::zero(); c_in * bsz * l];
    for b in 0..bsz {
        for ci in 0..c_in {
            let src = &x[(b * c_in + ci) * l..(b * c_in + ci + 1) * l];
            xr[ci * bsz * l + b * l..ci * bsz * l + (b + 1) * l].copy_from_slice(src);
        }
    }
    // cols (c_out*k, bsz*l) = Wᵀ · xr, with W viewed as (c_in, c_out*k).
    let cols = matmul(w, &xr, c_out * k, c_in, bsz * l, true, false);
    let mut out = vec![T::zero(); bsz * c_out * lout];
    // Scatter: out[b, co, t*stride + j - pad] += cols[co*k + j, b*l + t].
    col2im_acc(&cols, bsz, c_out, lout, k, stride, pad, l, &mut out);
    if let Some(bb) = bias {
        for b in 0..bsz {
            for co in 0..c_out {
                let dst = &mut out[(b * c_out + co) * lout..(b * c_out + co + 1) * lout];
                for d in dst.iter_mut() {
                    *d = *d + bb[co];
                }
            }
        }
    }
    out
}

/// Gradients of [`conv1d_transpose_fwd`].
pub fn conv1d_transpose_bwd<T: Scalar>(
    dout: &[T],
    x: &[T],
    w: &[T],
    bsz: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let lout = conv1d_transpose_out_len(l, k, stride, pad);
    // dcols[co*k + j, b*l + t] = dout[b, co, t*stride + j - pad]
    let mut dcols = vec![T::zero(); c_out * k * bsz * l];
    im2col(dout, bsz, c_out, lout, k, stride, pad, l, &mut dcols);
    // dxr (c_in, bsz*l) = W (c_in, c_out*k) · dcols
    let dxr = matmul(w, &dcols, c_in, c_out * k, bsz * l, false, false);
    let mut dx = vec![T::zero(); bsz * c_in * l];
    for b in 0..bsz {
        for ci in 0..c_in {
            let src = &dxr[ci * bsz * l + b * l..ci * bsz * l + (b + 1) * l];
            dx[(b * c_in + ci) * l..(b * c_in + ci + 1) * l].copy_from_slice(src);
        }
    }
    // dW (c_in, c_out*k) = xr · dcolsᵀ
    let mut xr = vec![T::zero(); c_in * bsz * l];
    for b in 0..bsz {
        for ci in 0..c_in {
            let src = &x[(b * c_in + ci) * l..(b * c_in + ci + 1) * l];
            xr[ci * bsz * l + b * l..ci * bsz * l + (b + 1) * l].copy_from_slice(src);
        }
    }
    let dw = matmul(&xr, &dcols, c_in, bsz * l, c_out * k, false, true);
    let mut db = vec![T::zero(); c_out];
    for b in 0..bsz {
        for co in 0..c_out {
            let src = &dout[(b * c_out + co) * lout..(b * c_out + co + 1) * lout];
            let mut s = T::zero();
            for v in src {
                s = s + *v;
            }
            db[co] = db[co] + s;
        }
    }
    (dx, dw, db)
}

pub fn relu_fwd<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

pub fn relu_bwd<T: Scalar>(dout: &[T], x: &[T]) -> Vec<T> {
    dout.iter()
        .zip(x)
        .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
        .collect()
}

#[inline]
fn gelu_inner<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation of the Gaussian error linear unit
    let a: T = c(0.797_884_560_802_865_4); // sqrt(2/pi)
    let b: T = c(0.044715);
    let u = a * (x + b * x * x * x);
    let t = u.tanh();
    let half: T = c(0.5);
    let y = half * x * (T::one() + t);
    let du = a * (T::one() + c::<T>(3.0) * b * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
    (y, dy)
}

pub fn gelu_fwd<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| gelu_inner(v).0).collect()
}

pub fn gelu_bwd<T: Scalar>(dout: &[T], x: &[T]) -> Vec<T> {
    dout.iter().zip(x).map(|(&d, &v)| d * gelu_inner(v).1).collect()
}

/// Layer normalization over the last axis.
/// Returns `(y, mean, rstd)` with `mean`/`rstd` per row for the backward pass.
pub fn layer_norm_fwd<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    d: usize,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut means = vec![T::zero(); rows];
    let mut rstds = vec![T::zero(); rows];
    let dn = T::from_f64(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mut mu = T::zero();
        for v in row {
            mu = mu + *v;
        }
        mu = mu / dn;
        let mut var = T::zero();
        for v in row {
            let dv = *v - mu;
            var = var + dv * dv;
        }
        var = var / dn;
        let rstd = (var + eps).sqrt().recip();
        means[r] = mu;
        rstds[r] = rstd;
        let out = &mut y[r * d..(r + 1) * d];
        for i in 0..d {
            out[i] = gamma[i] * ((row[i] - mu) * rstd) + beta[i];
        }
    }
    (y, means, rstds)
}

/// Gradients of layer normalization. Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_bwd<T: Scalar>(
    dout: &[T],
    x: &[T],
    gamma: &[T],
    means: &[T],
    rstds: &[T],
    d: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let dn = T::from_f64(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let drow = &dout[r * d..(r + 1) * d];
        let mu = means[r];
        let rstd = rstds[r];
        let mut sum_dyg = T::zero();
        let mut sum_dyg_xc = T::zero();
        for i in 0..d {
            let xc = (row[i] - mu) * rstd;
            let dyg = drow[i] * gamma[i];
            sum_dyg = sum_dyg + dyg;
            sum_dyg_xc = sum_dyg_xc + dyg * xc;
            dgamma[i] = dgamma[i] + drow[i] * xc;
            dbeta[i] = dbeta[i] + drow[i];
        }
        let m1 = sum_dyg / dn;
        let m2 = sum_dyg_xc / dn;
        let out = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let xc = (row[i] - mu) * rstd;
            let dyg = drow[i] * gamma[i];
            out[i] = rstd * (dyg - m1 - xc * m2);
        }
    }
    (dx, dgamma, dbeta)
}

/// Row-wise softmax over the last axis, numerically stabilized.
pub fn softmax_rows_fwd<T: Scalar>(x: &[T], d: usize) -> Vec<T> {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let out = &mut y[r * d..(r + 1) * d];
        let mut mx = row[0];
        for v in row {
            if *v > mx {
                mx = *v;
            }
        }
        let mut sum = T::zero();
        for i in 0..d {
            let e = (row[i] - mx).exp();
            out[i] = e;
            sum = sum + e;
        }
        let inv = sum.recip();
        for o in out.iter_mut() {
            *o = *o * inv;
        }
    }
    y
}

pub fn softmax_rows_bwd<T: Scalar>(dout: &[T], y: &[T], d: usize) -> Vec<T> {
    let rows = y.len() / d;
    let mut dx = vec![T::zero(); y.len()];
    for r in 0..rows {
        let yr = &y[r * d..(r + 1) * d];
        let dr = &dout[r * d..(r + 1) * d];
        let mut dot = T::zero();
        for i in 0..d {
            dot = dot + dr[i] * yr[i];
        }
        let out = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            out[i] = yr[i] * (dr[i] - dot);
        }
    }
    dx
}

/// Mean cross-entropy over rows with per-row 0/1 weights and an optional
/// vocabulary validity mask (invalid logits are treated as -inf).
///
/// Returns `(loss, probs)`; `probs` feeds the backward pass.
pub fn cross_entropy_fwd<T: Scalar>(
    logits: &[T],
    targets: &[u32],
    row_weight: Option<&[T]>,
    vocab_valid: Option<&[bool]>,
    v: usize,
) -> Result<(T, Vec<T>, T)> {
    let rows = targets.len();
    if logits.len() != rows * v {
        return Err(Error::shape(format!(
            "cross_entropy: {} logits for {} rows of vocab {}",
            logits.len(),
            rows,
            v
        )));
    }
    if let Some(w) = row_weight {
        if w.len() != rows {
            return Err(Error::shape("cross_entropy: row weight length"));
        }
    }
    if let Some(vm) = vocab_valid {
        if vm.len() != v {
            return Err(Error::shape("cross_entropy: vocab mask length"));
        }
    }
    let mut total_w = T::zero();
    let mut loss = T::zero();
    let mut probs = vec![T::zero(); logits.len()];
    for r in 0..rows {
        let t = targets[r] as usize;
        if t >= v {
            return Err(Error::invalid_input(format!(
                "cross_entropy: target {} out of range for vocab {}",
                t, v
            )));
        }
        if let Some(vm) = vocab_valid {
            if !vm[t] {
                return Err(Error::invalid_input(format!(
                    "cross_entropy: target {} is masked out of the vocabulary",
                    t
                )));
            }
        }
        let w = row_weight.map_or(T::one(), |ws| ws[r]);
        let row = &logits[r * v..(r + 1) * v];
        let prow = &mut probs[r * v..(r + 1) * v];
        let mut mx = T::neg_infinity();
        for i in 0..v {
            let valid = vocab_valid.map_or(true, |vm| vm[i]);
            if valid && row[i] > mx {
                mx = row[i];
            }
        }
        let mut sum = T::zero();
        for i in 0..v {
            let valid = vocab_valid.map_or(true, |vm| vm[i]);
            let e = if valid { (row[i] - mx).exp() } else { T::zero() };
            prow[i] = e;
            sum = sum + e;
        }
        let inv = sum.recip();
        for p in prow.iter_mut() {
            *p = *p * inv;
        }
        if w > T::zero() {
            let lse = sum.ln() + mx;
            loss = loss + w * (lse - row[t]);
            total_w = total_w + w;
        }
    }
    if total_w <= T::zero() {
        return Err(Error::EmptyMask);
    }
    Ok((loss / total_w, probs, total_w))
}

/// `dlogits = upstream * row_weight/total_w * (softmax - onehot)`.
pub fn cross_entropy_bwd<T: Scalar>(
    upstream: T,
    probs: &[T],
    targets: &[u32],
    row_weight: Option<&[T]>,
    total_w: T,
    v: usize,
) -> Vec<T> {
    let rows = targets.len();
    let mut dl = vec![T::zero(); probs.len()];
    let scale = upstream / total_w;
    for r in 0..rows {
        let w = row_weight.map_or(T::one(), |ws| ws[r]);
        if w <= T::zero() {
            continue;
        }
        let prow = &probs[r * v..(r + 1) * v];
        let drow = &mut dl[r * v..(r + 1) * v];
        let t = targets[r] as usize;
        for i in 0..v {
            drow[i] = scale * w * prow[i];
        }
        drow[t] = drow[t] - scale * w;
    }
    dl
}

/// Gather rows of `table (v, d)` at `ids`, producing `(ids.len(), d)`.
pub fn embedding_fwd<T: Scalar>(table: &[T], ids: &[u32], v: usize, d: usize) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); ids.len() * d];
    for (r, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= v {
            return Err(Error::InvalidToken(format!(
                "embedding id {} out of range for table of {}",
                id, v
            )));
        }
        out[r * d..(r + 1) * d].copy_from_slice(&table[id * d..(id + 1) * d]);
    }
    Ok(out)
}

/// Scatter-add adjoint of [`embedding_fwd`].
pub fn embedding_bwd<T: Scalar>(dout: &[T], ids: &[u32], v: usize, d: usize) -> Vec<T> {
    let mut dtable = vec![T::zero(); v * d];
    for (r, &id) in ids.iter().enumerate() {
        let dst = &mut dtable[(id as usize) * d..(id as usize + 1) * d];
        let src = &dout[r * d..(r + 1) * d];
        for i in 0..d {
            dst[i] = dst[i] + src[i];
        }
    }
    dtable
}

/// Copy with permuted axes: `out[perm(idx)] = in[idx]`.
pub fn permute_copy<T: Scalar>(x: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    assert_eq!(axes.len(), rank);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    }
    let numel: usize = shape.iter().product();
    let mut out = vec![T::zero(); numel];
    // Iterate output linearly, map back to input index.
    let mut idx = vec![0usize; rank];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut rem = o;
        for i in 0..rank {
            idx[i] = rem / out_strides[i];
            rem %= out_strides[i];
        }
        let mut src = 0usize;
        for i in 0..rank {
            src += idx[i] * in_strides[axes[i]];
        }
        *slot = x[src];
    }
    (out, out_shape)
}

/// Inverse permutation such that `invert(perm)[perm[i]] = i`.
pub fn invert_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
