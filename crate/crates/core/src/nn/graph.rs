//! Reverse-mode autodiff over a Wengert tape.
//!
//! A [`Graph`] records one forward computation. Every op appends a node
//! holding the forward value and a closure that routes the output gradient to
//! the node's parents. [`Graph::backward`] walks the tape in reverse; node ids
//! are already a topological order, so no sort is needed.
//!
//! Graphs are rebuilt every training step. Parameters enter as leaves via
//! [`Graph::leaf`]; their gradients are read back by id after backward.

use std::sync::Arc;

use super::ops;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn<T> = Box<dyn Fn(&Tensor<T>, &mut dyn FnMut(usize, Tensor<T>))>;

struct Node<T> {
    value: Tensor<T>,
    back: Option<BackFn<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads<T> {
    table: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.table.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, back: Option<BackFn<T>>) -> Var {
        self.nodes.push(Node { value, back });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (parameters, inputs whose gradient is wanted).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        // A leaf keeps its gradient in the table; an empty closure marks it
        // as grad-carrying without propagating further.
        self.push(value, Some(Box::new(|_, _| {})))
    }

    /// Non-differentiable input; gradients stop here and are not stored.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, None)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse pass from a scalar loss. Seeds d(loss)/d(loss)=1 and returns
    /// the full gradient table.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut table: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        table[loss.0] = Some(Tensor::scalar_value(T::one()));
        for id in (0..=loss.0).rev() {
            let Some(back) = self.nodes[id].back.as_ref() else {
                table[id] = None; // constants do not retain gradients
                continue;
            };
            let Some(g) = table[id].clone() else {
                continue;
            };
            let mut sink = |pid: usize, pg: Tensor<T>| {
                debug_assert_eq!(
                    pg.shape(),
                    self.nodes[pid].value.shape(),
                    "gradient shape mismatch for node {pid}"
                );
                match table[pid].as_mut() {
                    Some(existing) => existing.add_assign(&pg),
                    None => table[pid] = Some(pg),
                }
            };
            back(&g, &mut sink);
        }
        Ok(Grads { table })
    }

    // ---- elementwise and broadcasting arithmetic ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = av.zip_map(&bv, |x, y| x + y)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.clone());
                sink(b.0, g.clone());
            })),
        ))
    }

    /// `x + b` where `b`'s shape matches the trailing axis of `x`.
    pub fn add_bias_lastdim(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let bv = self.value(b).clone();
        let d = *xv.shape().last().ok_or_else(|| Error::shape("add_bias on rank-0"))?;
        if bv.shape() != [d] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match last dim {} of {:?}",
                bv.shape(),
                d,
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        {
            let data = out.data_mut();
            let bd = bv.data();
            for (i, v) in data.iter_mut().enumerate() {
                *v = *v + bd[i % d];
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(x.0, g.clone());
                let gd = g.data();
                let mut db = vec![T::zero(); d];
                for (i, v) in gd.iter().enumerate() {
                    db[i % d] = db[i % d] + *v;
                }
                sink(b.0, Tensor::new(vec![d], db));
            })),
        ))
    }

    /// `x (G, M, N) + m (M, N)` broadcast over the leading axis. Also covers
    /// `(B, T, D) + (T, D)` positional tables and `(R, T, T) + (T, T)` masks.
    pub fn add_broadcast_mat(&mut self, x: Var, m: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let mv = self.value(m).clone();
        if xv.shape().len() != 3 || mv.shape() != &xv.shape()[1..] {
            return Err(Error::shape(format!(
                "add_broadcast_mat: {:?} + {:?}",
                xv.shape(),
                mv.shape()
            )));
        }
        let chunk = mv.numel();
        let mut out = xv.clone();
        {
            let data = out.data_mut();
            let md = mv.data();
            for (i, v) in data.iter_mut().enumerate() {
                *v = *v + md[i % chunk];
            }
        }
        let mshape = mv.shape().to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(x.0, g.clone());
                let gd = g.data();
                let mut dm = vec![T::zero(); chunk];
                for (i, v) in gd.iter().enumerate() {
                    dm[i % chunk] = dm[i % chunk] + *v;
                }
                sink(m.0, Tensor::new(mshape.clone(), dm));
            })),
        ))
    }

    /// `x (B, T, D) + v (B, D)` broadcast over the middle axis (per-sequence
    /// conditioning vectors).
    pub fn add_broadcast_vec(&mut self, x: Var, vvar: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let vv = self.value(vvar).clone();
        let (sb, st, sd) = match xv.shape() {
            [b, t, d] => (*b, *t, *d),
            other => return Err(Error::shape(format!("add_broadcast_vec on {:?}", other))),
        };
        if vv.shape() != [sb, sd] {
            return Err(Error::shape(format!(
                "add_broadcast_vec: {:?} + {:?}",
                xv.shape(),
                vv.shape()
            )));
        }
        let mut out = xv.clone();
        {
            let data = out.data_mut();
            let vd = vv.data();
            for b in 0..sb {
                for t in 0..st {
                    let row = &mut data[(b * st + t) * sd..(b * st + t + 1) * sd];
                    let src = &vd[b * sd..(b + 1) * sd];
                    for i in 0..sd {
                        row[i] = row[i] + src[i];
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(x.0, g.clone());
                let gd = g.data();
                let mut dv = vec![T::zero(); sb * sd];
                for b in 0..sb {
                    for t in 0..st {
                        let row = &gd[(b * st + t) * sd..(b * st + t + 1) * sd];
                        let dst = &mut dv[b * sd..(b + 1) * sd];
                        for i in 0..sd {
                            dst[i] = dst[i] + row[i];
                        }
                    }
                }
                sink(vvar.0, Tensor::new(vec![sb, sd], dv));
            })),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = av.zip_map(&bv, |x, y| x * y)?;
        let (ac, bc) = (av, bv);
        Ok(self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.zip_map(&bc, |gv, bvv| gv * bvv).expect("shape"));
                sink(b.0, g.zip_map(&ac, |gv, avv| gv * avv).expect("shape"));
            })),
        ))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(x.0, g.map(|v| v * s));
            })),
        )
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        let old_shape = self.value(x).shape().to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(x.0, g.reshaped(&old_shape).expect("reshape backward"));
            })),
        ))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x).clone();
        if axes.len() != xv.shape().len() {
            return Err(Error::shape(format!(
                "permute axes {:?} on shape {:?}",
                axes,
                xv.shape()
            )));
        }
        let (data, shape) = ops::permute_copy(xv.data(), xv.shape(), axes);
        let inv = ops::invert_axes(axes);
        Ok(self.push(
            Tensor::new(shape, data),
            Some(Box::new(move |g, sink| {
                let (gd, gs) = ops::permute_copy(g.data(), g.shape(), &inv);
                sink(x.0, Tensor::new(gs, gd));
            })),
        ))
    }

    // ---- linear algebra ----

    /// `a (M, K) · b (K, N)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let (m, k) = match av.shape() {
            [m, k] => (*m, *k),
            other => return Err(Error::shape(format!("matmul lhs shape {:?}", other))),
        };
        let (k2, n) = match bv.shape() {
            [k2, n] => (*k2, *n),
            other => return Err(Error::shape(format!("matmul rhs shape {:?}", other))),
        };
        if k != k2 {
            return Err(Error::shape(format!("matmul: inner dims {} vs {}", k, k2)));
        }
        let out = ops::matmul(av.data(), bv.data(), m, k, n, false, false);
        Ok(self.push(
            Tensor::new(vec![m, n], out),
            Some(Box::new(move |g, sink| {
                // dA = dC·Bᵀ ; dB = Aᵀ·dC
                let da = ops::matmul(g.data(), bv.data(), m, n, k, false, true);
                let db = ops::matmul(av.data(), g.data(), k, m, n, true, false);
                sink(a.0, Tensor::new(vec![m, k], da));
                sink(b.0, Tensor::new(vec![k, n], db));
            })),
        ))
    }

    /// Batched matmul `a (G, M, K) · b (G, K, N)`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let (ga, m, k) = match av.shape() {
            [g, m, k] => (*g, *m, *k),
            other => return Err(Error::shape(format!("bmm lhs shape {:?}", other))),
        };
        let (gb, k2, n) = match bv.shape() {
            [g, k2, n] => (*g, *k2, *n),
            other => return Err(Error::shape(format!("bmm rhs shape {:?}", other))),
        };
        if ga != gb || k != k2 {
            return Err(Error::shape(format!(
                "bmm: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![T::zero(); ga * m * n];
        for gi in 0..ga {
            ops::matmul_into(
                &mut out[gi * m * n..(gi + 1) * m * n],
                &av.data()[gi * m * k..(gi + 1) * m * k],
                &bv.data()[gi * k * n..(gi + 1) * k * n],
                m,
                k,
                n,
                false,
                false,
                T::zero(),
            );
        }
        Ok(self.push(
            Tensor::new(vec![ga, m, n], out),
            Some(Box::new(move |g, sink| {
                let gd = g.data();
                let mut da = vec![T::zero(); ga * m * k];
                let mut db = vec![T::zero(); ga * k * n];
                for gi in 0..ga {
                    ops::matmul_into(
                        &mut da[gi * m * k..(gi + 1) * m * k],
                        &gd[gi * m * n..(gi + 1) * m * n],
                        &bv.data()[gi * k * n..(gi + 1) * k * n],
                        m,
                        n,
                        k,
                        false,
                        true,
                        T::zero(),
                    );
                    ops::matmul_into(
                        &mut db[gi * k * n..(gi + 1) * k * n],
                        &av.data()[gi * m * k..(gi + 1) * m * k],
                        &gd[gi * m * n..(gi + 1) * m * n],
                        k,
                        m,
                        n,
                        true,
                        false,
                        T::zero(),
                    );
                }
                sink(a.0, Tensor::new(vec![ga, m, k], da));
                sink(b.0, Tensor::new(vec![ga, k, n], db));
            })),
        ))
    }

    /// `x (..., In) · wᵀ (+ b)`, with `w (Out, In)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let (out_f, in_f) = match wv.shape() {
            [o, i] => (*o, *i),
            other => return Err(Error::shape(format!("linear weight shape {:?}", other))),
        };
        let xin = *xv
            .shape()
            .last()
            .ok_or_else(|| Error::shape("linear on rank-0 input"))?;
        if xin != in_f {
            return Err(Error::shape(format!(
                "linear: input feature {} vs weight {}",
                xin, in_f
            )));
        }
        let rows = xv.numel() / in_f;
        // out (rows, Out) = x (rows, In) · wᵀ
        let out = ops::matmul(xv.data(), wv.data(), rows, in_f, out_f, false, true);
        let mut out_shape = xv.shape().to_vec();
        *out_shape.last_mut().unwrap() = out_f;
        let y = self.push(
            Tensor::new(out_shape, out),
            Some(Box::new(move |g, sink| {
                // dx (rows, In) = dY (rows, Out) · W (Out, In)
                let dx = ops::matmul(g.data(), wv.data(), rows, out_f, in_f, false, false);
                // dW (Out, In) = dYᵀ (Out, rows) · x (rows, In)
                let dw = ops::matmul(g.data(), xv.data(), out_f, rows, in_f, true, false);
                sink(x.0, Tensor::new(xv.shape().to_vec(), dx));
                sink(w.0, Tensor::new(vec![out_f, in_f], dw));
            })),
        );
        match b {
            Some(bias) => self.add_bias_lastdim(y, bias),
            None => Ok(y),
        }
    }

    // ---- convolutions ----

    /// Strided 1-D cross-correlation. `x (B, Cin, L)`, `w (Cout, Cin, K)`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = b.map(|bb| self.value(bb).clone());
        let (bsz, c_in, l) = match xv.shape() {
            [a, c, d] => (*a, *c, *d),
            other => return Err(Error::shape(format!("conv1d input shape {:?}", other))),
        };
        let (c_out, c_in2, k) = match wv.shape() {
            [a, c, d] => (*a, *c, *d),
            other => return Err(Error::shape(format!("conv1d weight shape {:?}", other))),
        };
        if c_in != c_in2 {
            return Err(Error::shape(format!(
                "conv1d: input channels {} vs weight {}",
                c_in, c_in2
            )));
        }
        if l + 2 * pad < k || stride == 0 {
            return Err(Error::shape(format!(
                "conv1d: kernel {} over length {} (pad {}, stride {})",
                k, l, pad, stride
            )));
        }
        let p = ops::conv1d_out_len(l, k, stride, pad);
        let (out, cols) = ops::conv1d_fwd(
            xv.data(),
            wv.data(),
            bv.as_ref().map(|t| t.data()),
            bsz,
            c_in,
            l,
            c_out,
            k,
            stride,
            pad,
        );
        let cols = Arc::new(cols);
        Ok(self.push(
            Tensor::new(vec![bsz, c_out, p], out),
            Some(Box::new(move |g, sink| {
                let (dx, dw, db) = ops::conv1d_bwd(
                    g.data(),
                    &cols,
                    wv.data(),
                    bsz,
                    c_in,
                    l,
                    c_out,
                    k,
                    stride,
                    pad,
                );
                sink(x.0, Tensor::new(vec![bsz, c_in, l], dx));
                sink(w.0, Tensor::new(vec![c_out, c_in, k], dw));
                if let Some(bb) = b {
                    sink(bb.0, Tensor::new(vec![c_out], db));
                }
            })),
        ))
    }

    /// Transposed 1-D convolution. `x (B, Cin, L)`, `w (Cin, Cout, K)`.
    pub fn conv1d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = b.map(|bb| self.value(bb).clone());
        let (bsz, c_in, l) = match xv.shape() {
            [a, c, d] => (*a, *c, *d),
            other => return Err(Error::shape(format!("conv1d_transpose input {:?}", other))),
        };
        let (c_in2, c_out, k) = match wv.shape() {
            [a, c, d] => (*a, *c, *d),
            other => return Err(Error::shape(format!("conv1d_transpose weight {:?}", other))),
        };
        if c_in != c_in2 {
            return Err(Error::shape(format!(
                "conv1d_transpose: input channels {} vs weight {}",
                c_in, c_in2
            )));
        }
        if stride == 0 || (l - 1) * stride + k <= 2 * pad {
            return Err(Error::shape("conv1d_transpose: empty output"));
        }
        let lout = ops::conv1d_transpose_out_len(l, k, stride, pad);
        let out = ops::conv1d_transpose_fwd(
            xv.data(),
            wv.data(),
            bv.as_ref().map(|t| t.data()),
            bsz,
            c_in,
            l,
            c_out,
            k,
            stride,
            pad,
        );
        Ok(self.push(
            Tensor::new(vec![bsz, c_out, lout], out),
            Some(Box::new(move |g, sink| {
                let (dx, dw, db) = ops::conv1d_transpose_bwd(
                    g.data(),
                    xv.data(),
                    wv.data(),
                    bsz,
                    c_in,
                    l,
                    c_out,
                    k,
                    stride,
                    pad,
                );
                sink(x.0, Tensor::new(vec![bsz, c_in, l], dx));
                sink(w.0, Tensor::new(vec![c_in, c_out, k], dw));
                if let Some(bb) = b {
                    sink(bb.0, Tensor::new(vec![c_out], db));
                }
            })),
        ))
    }

    // ---- activations and normalization ----

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        let out = ops::relu_fwd(xv.data());
        self.push(
            Tensor::new(xv.shape().to_vec(), out),
            Some(Box::new(move |g, sink| {
                let dx = ops::relu_bwd(g.data(), xv.data());
                sink(x.0, Tensor::new(xv.shape().to_vec(), dx));
            })),
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        let out = ops::gelu_fwd(xv.data());
        self.push(
            Tensor::new(xv.shape().to_vec(), out),
            Some(Box::new(move |g, sink| {
                let dx = ops::gelu_bwd(g.data(), xv.data());
                sink(x.0, Tensor::new(xv.shape().to_vec(), dx));
            })),
        )
    }

    /// Layer norm over the last axis with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let d = *xv
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm on rank-0"))?;
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::shape(format!(
                "layer_norm: affine shapes {:?}/{:?} for feature dim {}",
                gv.shape(),
                bv.shape(),
                d
            )));
        }
        let (y, means, rstds) = ops::layer_norm_fwd(xv.data(), gv.data(), bv.data(), d, eps);
        let means = Arc::new(means);
        let rstds = Arc::new(rstds);
        Ok(self.push(
            Tensor::new(xv.shape().to_vec(), y),
            Some(Box::new(move |g, sink| {
                let (dx, dgamma, dbeta) =
                    ops::layer_norm_bwd(g.data(), xv.data(), gv.data(), &means, &rstds, d);
                sink(x.0, Tensor::new(xv.shape().to_vec(), dx));
                sink(gamma.0, Tensor::new(vec![d], dgamma));
                sink(beta.0, Tensor::new(vec![d], dbeta));
            })),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let d = *xv
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax on rank-0"))?;
        let y = ops::softmax_rows_fwd(xv.data(), d);
        let yt = Tensor::new(xv.shape().to_vec(), y);
        let yc = yt.clone();
        Ok(self.push(
            yt,
            Some(Box::new(move |g, sink| {
                let dx = ops::softmax_rows_bwd(g.data(), yc.data(), d);
                sink(x.0, Tensor::new(yc.shape().to_vec(), dx));
            })),
        ))
    }

    // ---- lookups, losses, passthrough ----

    /// Gather rows of `table (V, D)` at `ids`; output `(ids.len(), D)`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let tv = self.value(table).clone();
        let (v, d) = match tv.shape() {
            [v, d] => (*v, *d),
            other => return Err(Error::shape(format!("embedding table shape {:?}", other))),
        };
        let out = ops::embedding_fwd(tv.data(), ids, v, d)?;
        let ids_owned: Arc<[u32]> = ids.into();
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out),
            Some(Box::new(move |g, sink| {
                let dt = ops::embedding_bwd(g.data(), &ids_owned, v, d);
                sink(table.0, Tensor::new(vec![v, d], dt));
            })),
        ))
    }

    /// Mean cross-entropy of `logits (R, V)` against `targets`, averaged over
    /// rows with nonzero weight. `vocab_valid` masks logits out of the
    /// softmax entirely (as if -inf).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        row_weight: Option<&[T]>,
        vocab_valid: Option<&[bool]>,
    ) -> Result<Var> {
        let lv = self.value(logits).clone();
        let (rows, v) = match lv.shape() {
            [r, v] => (*r, *v),
            other => return Err(Error::shape(format!("cross_entropy logits {:?}", other))),
        };
        if targets.len() != rows {
            return Err(Error::shape(format!(
                "cross_entropy: {} targets for {} rows",
                targets.len(),
                rows
            )));
        }
        let (loss, probs, total_w) =
            ops::cross_entropy_fwd(lv.data(), targets, row_weight, vocab_valid, v)?;
        let probs = Arc::new(probs);
        let targets_owned: Arc<[u32]> = targets.into();
        let weights_owned: Option<Arc<[T]>> = row_weight.map(|w| w.into());
        Ok(self.push(
            Tensor::scalar_value(loss),
            Some(Box::new(move |g, sink| {
                let dl = ops::cross_entropy_bwd(
                    g.item(),
                    &probs,
                    &targets_owned,
                    weights_owned.as_deref(),
                    total_w,
                    v,
                );
                sink(logits.0, Tensor::new(vec![rows, v], dl));
            })),
        ))
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!(
                "mse: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let n = T::from_f64(av.numel() as f64);
        let mut acc = T::zero();
        for (x, y) in av.data().iter().zip(bv.data()) {
            let d = *x - *y;
            acc = acc + d * d;
        }
        let loss = acc / n;
        Ok(self.push(
            Tensor::scalar_value(loss),
            Some(Box::new(move |g, sink| {
                let s = g.item() * T::from_f64(2.0) / n;
                let da = av
                    .zip_map(&bv, |x, y| s * (x - y))
                    .expect("mse backward shape");
                let db = da.map(|v| -v);
                sink(a.0, da);
                sink(b.0, db);
            })),
        ))
    }

    /// Mean of all elements.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        let n = T::from_f64(xv.numel() as f64);
        let mut acc = T::zero();
        for v in xv.data() {
            acc = acc + *v;
        }
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::scalar_value(acc / n),
            Some(Box::new(move |g, sink| {
                let gv = g.item() / n;
                sink(x.0, Tensor::full(&shape, gv));
            })),
        )
    }

    /// Mean over the last axis: `(..., L) -> (...)`.
    pub fn mean_lastdim(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        if xv.shape().len() < 2 {
            return Err(Error::shape(format!(
                "mean_lastdim needs rank >= 2, got {:?}",
                xv.shape()
            )));
        }
        let l = *xv.shape().last().unwrap();
        let rows = xv.numel() / l;
        let ln = T::from_f64(l as f64);
        let mut out = vec![T::zero(); rows];
        for r in 0..rows {
            let mut acc = T::zero();
            for v in &xv.data()[r * l..(r + 1) * l] {
                acc = acc + *v;
            }
            out[r] = acc / ln;
        }
        let out_shape: Vec<usize> = xv.shape()[..xv.shape().len() - 1].to_vec();
        let in_shape = xv.shape().to_vec();
        Ok(self.push(
            Tensor::new(out_shape, out),
            Some(Box::new(move |g, sink| {
                let gd = g.data();
                let mut dx = vec![T::zero(); rows * l];
                for r in 0..rows {
                    let gv = gd[r] / ln;
                    for v in &mut dx[r * l..(r + 1) * l] {
                        *v = gv;
                    }
                }
                sink(x.0, Tensor::new(in_shape.clone(), dx));
            })),
        ))
    }

    /// Sum of all elements.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        let mut acc = T::zero();
        for v in xv.data() {
            acc = acc + *v;
        }
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::scalar_value(acc),
            Some(Box::new(move |g, sink| {
                sink(x.0, Tensor::full(&shape, g.item()));
            })),
        )
    }

    /// Identity-gradient passthrough: forward takes `value`, backward copies
    /// the incoming gradient to `x` unchanged. This is the straight-through
    /// estimator used at the quantization boundary.
    pub fn passthrough(&mut self, x: Var, value: Tensor<T>) -> Result<Var> {
        if value.shape() != self.value(x).shape() {
            return Err(Error::shape(format!(
                "passthrough: value shape {:?} vs input {:?}",
                value.shape(),
                self.value(x).shape()
            )));
        }
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                sink(x.0, g.clone());
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_through_chain() {
        // y = mean((2x)^2) over 3 elems; dy/dx = 8x/3
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]));
        let two = g.scale(x, 2.0);
        let sq = g.mul(two, two).unwrap();
        let y = g.mean_all(sq);
        let grads = g.backward(y).unwrap();
        let dx = grads.get(x).unwrap();
        for (i, &xv) in [1.0, -2.0, 0.5].iter().enumerate() {
            assert!((dx.data()[i] - 8.0 * xv / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_accumulates_over_fanout() {
        // y = sum(x) + sum(x) -> dx = 2
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2], vec![3.0, 4.0]));
        let s1 = g.sum_all(x);
        let s2 = g.sum_all(x);
        let y = g.add(s1, s2).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn passthrough_copies_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2], vec![0.0, 0.0]));
        let st = g
            .passthrough(x, Tensor::new(vec![2], vec![5.0, -1.0]))
            .unwrap();
        assert_eq!(g.value(st).data(), &[5.0, -1.0]);
        let y = g.sum_all(st);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_nonscalar() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn constants_do_not_retain_grads() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]));
        let k = g.constant(Tensor::new(vec![2], vec![10.0, 20.0]));
        let p = g.mul(x, k).unwrap();
        let y = g.sum_all(p);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[10.0, 20.0]);
        assert!(grads.get(k).is_none());
    }
}
