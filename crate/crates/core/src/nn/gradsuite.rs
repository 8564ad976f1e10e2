//! Named finite-difference checks covering every trainable block in the
//! pipeline, run in f64 where central differences are trustworthy at the
//! 1e-3 tolerance. The CLI `grad-check` command and the acceptance suite
//! both drive this battery.

use std::collections::BTreeMap;

use super::gradcheck::{grad_check, GradCheckReport};
use super::graph::{Graph, Var};
use super::layers::{causal_mask, init_block, transformer_block};
use super::params::{kaiming_uniform, normal_init, Bound, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::stream_rng;

pub const GRAD_TOL: f64 = 1e-3;
const COORDS_PER_TENSOR: usize = 10;

fn named_store_check(
    store: ParamStore<f64>,
    extra: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &Bound, &[Var]) -> Result<Var>,
    seed: u64,
) -> Result<GradCheckReport> {
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    let mut tensors: Vec<Tensor<f64>> = names.iter().map(|n| store.get(n).clone()).collect();
    let n_params = tensors.len();
    tensors.extend(extra);
    grad_check(
        &tensors,
        move |g, vars| {
            let mut map = BTreeMap::new();
            for (n, v) in names.iter().zip(vars) {
                map.insert(n.clone(), *v);
            }
            let bound = Bound::from_map(vars[..n_params].to_vec(), map);
            f(g, &bound, &vars[n_params..])
        },
        GRAD_TOL,
        COORDS_PER_TENSOR,
        seed,
    )
}

/// Run every named check; returns `(name, report)` pairs.
pub fn standard_battery() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    let mut push = |name: &str, r: GradCheckReport| out.push((name.to_string(), r));

    // Plain layers.
    {
        let mut rng = stream_rng(101, "gs", &[]);
        let x = Tensor::<f64>::rand_normal(&[3, 6], 0.0, 1.0, &mut rng);
        let w = kaiming_uniform::<f64>(&[4, 6], 6, &mut rng);
        let b = Tensor::<f64>::rand_normal(&[4], 0.0, 0.1, &mut rng);
        push(
            "linear",
            grad_check(
                &[x, w, b],
                |g, v| {
                    let y = g.linear(v[0], v[1], Some(v[2]))?;
                    Ok(g.mean_all(y))
                },
                GRAD_TOL,
                COORDS_PER_TENSOR,
                1,
            )?,
        );
    }
    {
        let mut rng = stream_rng(102, "gs", &[]);
        let x = Tensor::<f64>::rand_normal(&[2, 3, 12], 0.0, 1.0, &mut rng);
        let w = kaiming_uniform::<f64>(&[5, 3, 5], 15, &mut rng);
        let b = Tensor::<f64>::rand_normal(&[5], 0.0, 0.1, &mut rng);
        push(
            "conv1d",
            grad_check(
                &[x, w, b],
                |g, v| {
                    let y = g.conv1d(v[0], v[1], Some(v[2]), 2, 2)?;
                    let y = g.relu(y);
                    Ok(g.mean_all(y))
                },
                GRAD_TOL,
                COORDS_PER_TENSOR,
                2,
            )?,
        );
    }
    {
        let mut rng = stream_rng(103, "gs", &[]);
        let x = Tensor::<f64>::rand_normal(&[2, 5, 6], 0.0, 1.0, &mut rng);
        let w = kaiming_uniform::<f64>(&[5, 3, 4], 20, &mut rng);
        let b = Tensor::<f64>::rand_normal(&[3], 0.0, 0.1, &mut rng);
        push(
            "conv1d_transpose",
            grad_check(
                &[x, w, b],
                |g, v| {
                    let y = g.conv1d_transpose(v[0], v[1], Some(v[2]), 2, 1)?;
                    Ok(g.mean_all(y))
                },
                GRAD_TOL,
                COORDS_PER_TENSOR,
                3,
            )?,
        );
    }
    {
        let mut rng = stream_rng(104, "gs", &[]);
        let x = Tensor::<f64>::rand_normal(&[4, 8], 0.0, 2.0, &mut rng);
        let gm = Tensor::<f64>::rand_normal(&[8], 1.0, 0.1, &mut rng);
        let bt = Tensor::<f64>::rand_normal(&[8], 0.0, 0.1, &mut rng);
        push(
            "layer_norm_softmax",
            grad_check(
                &[x, gm, bt],
                |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    let s = g.softmax(y)?;
                    let sq = g.mul(s, s)?;
                    Ok(g.sum_all(sq))
                },
                GRAD_TOL,
                COORDS_PER_TENSOR,
                4,
            )?,
        );
    }
    {
        let mut rng = stream_rng(105, "gs", &[]);
        let table = Tensor::<f64>::rand_normal(&[9, 6], 0.0, 1.0, &mut rng);
        let w = kaiming_uniform::<f64>(&[5, 6], 6, &mut rng);
        let ids = [0u32, 4, 8, 4, 2];
        let targets = [1u32, 0, 4, 2, 3];
        let weights = [1.0f64, 1.0, 0.0, 1.0, 1.0];
        push(
            "embedding_cross_entropy",
            grad_check(
                &[table, w],
                move |g, v| {
                    let e = g.embedding(v[0], &ids)?;
                    let logits = g.linear(e, v[1], None)?;
                    g.cross_entropy(logits, &targets, Some(&weights), None)
                },
                GRAD_TOL,
                COORDS_PER_TENSOR,
                5,
            )?,
        );
    }

    // Attention blocks as wired by the priors.
    {
        let width = 16;
        let mut rng = stream_rng(106, "gs", &[]);
        let mut store = ParamStore::<f64>::new();
        init_block(&mut store, "blk", width, &mut rng);
        let x = Tensor::<f64>::rand_normal(&[2, 5, width], 0.0, 1.0, &mut rng);
        push(
            "attention_block_causal",
            named_store_check(
                store,
                vec![x],
                move |g, bound, extra| {
                    let mask = causal_mask::<f64>(5);
                    let y = transformer_block(g, bound, "blk", extra[0], 4, Some(&mask), None)?;
                    Ok(g.mean_all(y))
                },
                6,
            )?,
        );
    }
    {
        let width = 16;
        let mut rng = stream_rng(107, "gs", &[]);
        let mut store = ParamStore::<f64>::new();
        init_block(&mut store, "blk", width, &mut rng);
        let x = Tensor::<f64>::rand_normal(&[2, 5, width], 0.0, 1.0, &mut rng);
        let cond = Tensor::<f64>::rand_normal(&[2, width], 0.0, 1.0, &mut rng);
        push(
            "attention_block_full_conditioned",
            named_store_check(
                store,
                vec![x, cond],
                move |g, bound, extra| {
                    let cv = g.leaf(g.value(extra[1]).clone());
                    let _ = cv; // conditioning var enters through extra[1] directly
                    let y = transformer_block(g, bound, "blk", extra[0], 4, None, Some(extra[1]))?;
                    Ok(g.mean_all(y))
                },
                7,
            )?,
        );
    }

    // Quantizer boundary: strided conv encoder, straight-through into a
    // transposed-conv decoder, full objective.
    //
    // The hard argmin makes the raw loss discontinuous, so finite differences
    // check the smooth surrogate the straight-through estimator actually
    // differentiates: codeword assignment and the quantization residual
    // `delta = zq - z` are frozen at the base point, making the decoder see
    // `z + delta` (identity gradient to the encoder) while the quantization
    // term keeps its differentiable path into the codebook. At the base point
    // this function and its gradient coincide with the training loss and its
    // backward pass.
    {
        let mut rng = stream_rng(108, "gs", &[]);
        let (n, ell) = (6usize, 4usize);
        let mut store = ParamStore::<f64>::new();
        store.add("enc.w", kaiming_uniform::<f64>(&[ell, 2, 4], 8, &mut rng));
        store.add("enc.b", Tensor::zeros(&[ell]));
        store.add("codebook", normal_init::<f64>(&[n, ell], 0.5, &mut rng));
        store.add("dec.w", kaiming_uniform::<f64>(&[ell, 2, 4], ell * 4, &mut rng));
        store.add("dec.b", Tensor::zeros(&[2]));
        let x = Tensor::<f64>::rand_normal(&[2, 2, 12], 0.0, 1.0, &mut rng);
        let rows = 2 * 6;

        // Base-point forward: latent slices, assignment, quantized values.
        let encode = |g: &mut Graph<f64>, bound: &Bound, x: Var| -> Result<Var> {
            let z = g.conv1d(x, bound.var("enc.w"), Some(bound.var("enc.b")), 2, 1)?;
            let z = g.permute(z, &[0, 2, 1])?;
            g.reshape(z, &[rows, ell])
        };
        let (tokens, z_base, zq_base) = {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let xv = g.constant(x.clone());
            let z = encode(&mut g, &bound, xv)?;
            let zv = g.value(z).clone();
            let cb = store.get("codebook").clone();
            let mut tokens = Vec::with_capacity(rows);
            for r in 0..rows {
                let s = &zv.data()[r * ell..(r + 1) * ell];
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for j in 0..n {
                    let e = &cb.data()[j * ell..(j + 1) * ell];
                    let d: f64 = s.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                tokens.push(best as u32);
            }
            let zq = g.embedding(bound.var("codebook"), &tokens)?;
            (tokens, zv, g.value(zq).clone())
        };
        let delta = zq_base.zip_map(&z_base, |q, z| q - z)?;
        push(
            "vqvae_straight_through_objective",
            named_store_check(
                store,
                vec![],
                move |g, bound, _extra| {
                    let xv = g.constant(x.clone());
                    let z = encode(g, bound, xv)?;
                    let zq = g.embedding(bound.var("codebook"), &tokens)?;
                    let z_const = g.constant(z_base.clone());
                    let l_quant = g.mse(zq, z_const)?;
                    let zq_const = g.constant(zq_base.clone());
                    let l_commit = g.mse(z, zq_const)?;
                    let dvar = g.constant(delta.clone());
                    let st = g.add(z, dvar)?;
                    let st = g.reshape(st, &[2, 6, ell])?;
                    let st = g.permute(st, &[0, 2, 1])?;
                    let xhat =
                        g.conv1d_transpose(st, bound.var("dec.w"), Some(bound.var("dec.b")), 2, 1)?;
                    let xc = g.constant(x.clone());
                    let l_recon = g.mse(xhat, xc)?;
                    let reg = g.scale(l_commit, 0.25);
                    let a = g.add(l_recon, l_quant)?;
                    g.add(a, reg)
                },
                8,
            )?,
        );
    }

    // Classifier stack: conv tower, global pooling, cross-entropy head.
    // The evaluation point must keep ReLU preactivations away from 0, where
    // central differences straddle the kink; this seed does.
    {
        let mut rng = stream_rng(210, "gs", &[]);
        let mut store = ParamStore::<f64>::new();
        store.add("c0.w", kaiming_uniform::<f64>(&[6, 2, 5], 10, &mut rng));
        store.add("c0.b", Tensor::zeros(&[6]));
        store.add("c1.w", kaiming_uniform::<f64>(&[8, 6, 3], 18, &mut rng));
        store.add("c1.b", Tensor::zeros(&[8]));
        store.add("head.w", kaiming_uniform::<f64>(&[3, 8], 8, &mut rng));
        store.add("head.b", Tensor::zeros(&[3]));
        let x = Tensor::<f64>::rand_normal(&[4, 2, 16], 0.0, 1.0, &mut rng);
        let targets = [0u32, 1, 2, 1];
        push(
            "classifier_stack",
            named_store_check(
                store,
                vec![x],
                move |g, bound, extra| {
                    let h = g.conv1d(extra[0], bound.var("c0.w"), Some(bound.var("c0.b")), 2, 2)?;
                    let h = g.relu(h);
                    let h = g.conv1d(h, bound.var("c1.w"), Some(bound.var("c1.b")), 2, 1)?;
                    let h = g.relu(h);
                    let f = g.mean_lastdim(h)?;
                    let logits = g.linear(f, bound.var("head.w"), Some(bound.var("head.b")))?;
                    g.cross_entropy(logits, &targets, None, None)
                },
                9,
            )?,
        );
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_block_in_the_battery_passes() {
        for (name, report) in standard_battery().unwrap() {
            assert!(
                report.pass(),
                "{name}: max rel err {:e} over {} coords",
                report.max_rel_err,
                report.n_checked
            );
        }
    }
}
