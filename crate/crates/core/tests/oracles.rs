//! Exact-model oracles: tiny hand-set networks whose distributions can be
//! enumerated in closed form, checked against the sampling implementations.
//!
//! Both priors are reduced to analytically tractable functions by zeroing
//! the residual-branch output projections (attention `wo`, MLP `fc2`), so a
//! position's hidden state is exactly `token embedding + positional embedding
//! (+ conditioning)`. The reference math is reimplemented here in f64,
//! independent of the graph and inference paths under test.

use dscn_core::arprior::{ArConfig, ArModel};
use dscn_core::channel::{apply_pattern, ErasedSequence};
use dscn_core::nn::tensor::Tensor;
use dscn_core::rng::derive_seed;
use dscn_core::seddprior::{NoiseSchedule, ScheduleKind, SeddConfig, SeddModel};
use dscn_core::tokens::TokenSequence;

const WIDTH: usize = 8;

/// Deterministic small weight pattern, exactly representable in f32.
fn patterned(shape: &[usize], scale: f64, phase: usize) -> Tensor<f32> {
    let numel: usize = shape.iter().product();
    let data: Vec<f32> = (0..numel)
        .map(|i| {
            let k = (i * 7 + phase * 3) % 16;
            ((k as f64 - 7.5) / 16.0 * scale) as f32
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

fn zero_residual_branches(params: &mut dscn_core::nn::ParamStore<f32>, n_layers: usize) {
    for i in 0..n_layers {
        for name in [
            format!("blk{i}.attn.wo"),
            format!("blk{i}.attn.wo_b"),
            format!("blk{i}.mlp.fc2"),
            format!("blk{i}.mlp.fc2_b"),
        ] {
            let t = params.get_mut(&name);
            let shape = t.shape().to_vec();
            *t = Tensor::zeros(&shape);
        }
    }
}

fn layer_norm_f64(x: &[f64]) -> Vec<f64> {
    let d = x.len() as f64;
    let mu: f64 = x.iter().sum::<f64>() / d;
    let var: f64 = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    let rstd = 1.0 / (var + 1e-5).sqrt();
    x.iter().map(|v| (v - mu) * rstd).collect()
}

fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn row_f64(t: &Tensor<f32>, row: usize, d: usize) -> Vec<f64> {
    t.data()[row * d..(row + 1) * d]
        .iter()
        .map(|&v| f64::from(v))
        .collect()
}

// ---------------------------------------------------------------------------
// Autoregressive prior: N = 2, d_s = 2 joint distribution.
// ---------------------------------------------------------------------------

fn tiny_ar_model() -> ArModel {
    let cfg = ArConfig {
        n_codewords: 2,
        n_classes: 1,
        d_s: 2,
        n_layers: 1,
        n_heads: 2,
        width: WIDTH,
        epochs: 0,
        batch_size: 1,
        lr: 0.0,
        seed: 123,
    };
    let mut model = ArModel::init(cfg).unwrap();
    zero_residual_branches(&mut model.params, 1);
    let v = model.config.vocab_size(); // 4: data 0..1, BOS=2, class=3
    *model.params.get_mut("tok_emb") = patterned(&[v, WIDTH], 1.0, 1);
    *model.params.get_mut("pos_emb") = patterned(&[model.config.context_len(), WIDTH], 0.75, 2);
    *model.params.get_mut("ln_f.g") = Tensor::full(&[WIDTH], 1.0);
    *model.params.get_mut("ln_f.b") = Tensor::zeros(&[WIDTH]);
    *model.params.get_mut("head.w") = patterned(&[v, WIDTH], 1.25, 3);
    *model.params.get_mut("head.b") = Tensor::zeros(&[v]);
    model
}

/// Data-token conditional at input position `pos` holding token `tok`:
/// softmax over tokens {0, 1} of `head · ln(tok_emb + pos_emb)`.
fn ar_reference_conditional(model: &ArModel, tok: u32, pos: usize) -> Vec<f64> {
    let tok_emb = model.params.get("tok_emb");
    let pos_emb = model.params.get("pos_emb");
    let head = model.params.get("head.w");
    let e = row_f64(tok_emb, tok as usize, WIDTH);
    let p = row_f64(pos_emb, pos, WIDTH);
    let h: Vec<f64> = e.iter().zip(&p).map(|(a, b)| a + b).collect();
    let hn = layer_norm_f64(&h);
    let mut logits = Vec::with_capacity(2);
    for k in 0..2 {
        let w = row_f64(head, k, WIDTH);
        logits.push(w.iter().zip(&hn).map(|(a, b)| a * b).sum::<f64>());
    }
    softmax_f64(&logits)
}

/// Joint of the 4 sequences: `p(z1 | BOS, C) * p(z2 | z1)`. BOS sits at
/// position 0, the class token at position 1, z1 at position 2.
fn ar_reference_joint(model: &ArModel) -> [[f64; 2]; 2] {
    let class_tok = model.config.class_token(0);
    let p1 = ar_reference_conditional(model, class_tok, 1);
    let mut joint = [[0.0; 2]; 2];
    for z1 in 0..2 {
        let p2 = ar_reference_conditional(model, z1 as u32, 2);
        for z2 in 0..2 {
            joint[z1][z2] = p1[z1] * p2[z2];
        }
    }
    joint
}

#[test]
fn ar_log_probability_matches_enumeration() {
    let model = tiny_ar_model();
    let joint = ar_reference_joint(&model);
    let total: f64 = joint.iter().flatten().sum();
    assert!((total - 1.0).abs() < 1e-12);
    for z1 in 0..2u32 {
        for z2 in 0..2u32 {
            let z = TokenSequence::new(vec![z1, z2], 2).unwrap();
            let lp = model.sequence_log_prob(&z, 0).unwrap();
            let expect = joint[z1 as usize][z2 as usize].ln();
            assert!(
                (lp - expect).abs() < 1e-6,
                "sequence ({z1},{z2}): log-prob {lp} vs enumerated {expect}"
            );
        }
    }
}

#[test]
fn ar_sampling_frequencies_match_the_joint_within_3_sigma() {
    let model = tiny_ar_model();
    let joint = ar_reference_joint(&model);
    let n: usize = 100_000;
    let mut counts = [[0usize; 2]; 2];
    let chunk = 10_000;
    for start in (0..n).step_by(chunk) {
        let lanes = chunk.min(n - start);
        let class_ids = vec![0u16; lanes];
        let prefixes: Vec<&[u32]> = vec![&[]; lanes];
        let seeds: Vec<u64> = (0..lanes)
            .map(|i| derive_seed(42, "ar-oracle", &[(start + i) as u64]))
            .collect();
        let out = model
            .generate_batch(&class_ids, &prefixes, 2, 1.0, 0, &seeds)
            .unwrap();
        for z in out {
            counts[z[0] as usize][z[1] as usize] += 1;
        }
    }
    for z1 in 0..2 {
        for z2 in 0..2 {
            let p = joint[z1][z2];
            let freq = counts[z1][z2] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "sequence ({z1},{z2}): freq {freq:.5} vs p {p:.5} (3 sigma = {:.5})",
                3.0 * sigma
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Diffusion prior: N = 2, d_s = 2 reverse-chain distribution.
// ---------------------------------------------------------------------------

fn tiny_sedd_model() -> SeddModel {
    let cfg = SeddConfig {
        n_codewords: 2,
        n_classes: 1,
        d_s: 2,
        n_layers: 1,
        n_heads: 2,
        width: WIDTH,
        schedule: ScheduleKind::Linear,
        n_steps: 4,
        epochs: 0,
        batch_size: 1,
        lr: 0.0,
        seed: 321,
    };
    let mut model = SeddModel::init(cfg).unwrap();
    zero_residual_branches(&mut model.params, 1);
    *model.params.get_mut("tok_emb") = patterned(&[3, WIDTH], 1.0, 4); // tokens 0, 1, A
    *model.params.get_mut("pos_emb") = patterned(&[2, WIDTH], 0.75, 5);
    *model.params.get_mut("class_emb") = patterned(&[1, WIDTH], 0.5, 6);
    *model.params.get_mut("time_mlp.fc1") = patterned(&[WIDTH, WIDTH], 0.5, 7);
    *model.params.get_mut("time_mlp.fc1_b") = Tensor::zeros(&[WIDTH]);
    *model.params.get_mut("time_mlp.fc2") = patterned(&[WIDTH, WIDTH], 0.5, 8);
    *model.params.get_mut("time_mlp.fc2_b") = Tensor::zeros(&[WIDTH]);
    *model.params.get_mut("ln_f.g") = Tensor::full(&[WIDTH], 1.0);
    *model.params.get_mut("ln_f.b") = Tensor::zeros(&[WIDTH]);
    *model.params.get_mut("head.w") = patterned(&[2, WIDTH], 1.25, 9);
    *model.params.get_mut("head.b") = Tensor::zeros(&[2]);
    model
}

fn gelu_f64(x: f64) -> f64 {
    let a = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (a * (x + 0.044715 * x * x * x)).tanh())
}

fn sinusoid_f64(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = 1000f64.powf(i as f64 / half as f64);
        out[i] = (t * freq).sin();
        out[half + i] = (t * freq).cos();
    }
    out
}

fn matvec_f64(w: &Tensor<f32>, x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let wr = row_f64(w, r, cols);
            wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Per-position token distribution at time `t`, for a still-masked position:
/// masked positions hold the mask token A = 2.
fn sedd_reference_conditional(model: &SeddModel, pos: usize, t: f64) -> Vec<f64> {
    let sin = sinusoid_f64(t, WIDTH);
    let h1 = matvec_f64(model.params.get("time_mlp.fc1"), &sin, WIDTH, WIDTH);
    let h1: Vec<f64> = h1.into_iter().map(gelu_f64).collect();
    let time_cond = matvec_f64(model.params.get("time_mlp.fc2"), &h1, WIDTH, WIDTH);
    let class = row_f64(model.params.get("class_emb"), 0, WIDTH);
    let tok = row_f64(model.params.get("tok_emb"), 2, WIDTH); // mask token A
    let posv = row_f64(model.params.get("pos_emb"), pos, WIDTH);
    let h: Vec<f64> = (0..WIDTH)
        .map(|i| tok[i] + posv[i] + time_cond[i] + class[i])
        .collect();
    let hn = layer_norm_f64(&h);
    let logits = matvec_f64(model.params.get("head.w"), &hn, 2, WIDTH);
    softmax_f64(&logits)
}

/// Exact final-sequence distribution of the reverse walk from all-mask at
/// t* = 1 with `n_steps` steps.
///
/// With attention zeroed, positions evolve independently; a position's token
/// distribution is determined by the time at which it unmasks. Unmask times
/// follow the schedule-consistent chain: at step k (t_now -> t_next) a
/// still-masked position unmasks with probability `1 - gamma(t_next)/gamma(t_now)`.
fn sedd_reference_joint(model: &SeddModel, n_steps: usize) -> [[f64; 2]; 2] {
    let schedule = NoiseSchedule::new(ScheduleKind::Linear);
    // q[k] = probability the position unmasks at step k.
    let mut q = Vec::with_capacity(n_steps);
    let mut still_masked = 1.0f64;
    let mut ts = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let t_now = 1.0 - k as f64 / n_steps as f64;
        let t_next = 1.0 - (k + 1) as f64 / n_steps as f64;
        let g_now = schedule.gamma(t_now);
        let g_next = schedule.gamma(t_next);
        let u = if g_now <= 0.0 { 1.0 } else { 1.0 - g_next / g_now };
        q.push(still_masked * u);
        still_masked *= 1.0 - u;
        ts.push(t_now);
    }
    assert!(still_masked < 1e-12, "walk must always terminate unmasked");
    // Marginal per position: sum over unmask times of the step-time
    // conditional. The forward sees the pre-step state, where this position
    // still holds the mask token.
    let mut marginals = [[0.0f64; 2]; 2];
    for pos in 0..2 {
        for (k, &qk) in q.iter().enumerate() {
            let p = sedd_reference_conditional(model, pos, ts[k]);
            marginals[pos][0] += qk * p[0];
            marginals[pos][1] += qk * p[1];
        }
    }
    let mut joint = [[0.0; 2]; 2];
    for z1 in 0..2 {
        for z2 in 0..2 {
            joint[z1][z2] = marginals[0][z1] * marginals[1][z2];
        }
    }
    joint
}

#[test]
fn sedd_reverse_chain_matches_enumeration_within_3_sigma() {
    let model = tiny_sedd_model();
    let n_steps = 4;
    let joint = sedd_reference_joint(&model, n_steps);
    let total: f64 = joint.iter().flatten().sum();
    assert!((total - 1.0).abs() < 1e-9);
    let n: usize = 100_000;
    let mut counts = [[0usize; 2]; 2];
    let chunk = 5_000;
    for start in (0..n).step_by(chunk) {
        let lanes = chunk.min(n - start);
        let class_ids = vec![0u16; lanes];
        let seeds: Vec<u64> = (0..lanes)
            .map(|i| derive_seed(77, "sedd-oracle", &[(start + i) as u64]))
            .collect();
        let out = model
            .reverse_sample_batch(&class_ids, n_steps, &seeds)
            .unwrap();
        for z in out {
            counts[z.tokens()[0] as usize][z.tokens()[1] as usize] += 1;
        }
    }
    for z1 in 0..2 {
        for z2 in 0..2 {
            let p = joint[z1][z2];
            let freq = counts[z1][z2] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "sequence ({z1},{z2}): freq {freq:.5} vs p {p:.5} (3 sigma = {:.5})",
                3.0 * sigma
            );
        }
    }
}

#[test]
fn sedd_inpainting_clamps_and_degenerates_to_identity() {
    let model = tiny_sedd_model();
    // One received token, one erased: received position must survive exactly.
    let z = TokenSequence::new(vec![1, 0], 2).unwrap();
    let erased = apply_pattern(&z, &[true, false]).unwrap();
    for seed in 0..50 {
        let out = model.inpaint_punctured(&erased, 0, 4, seed).unwrap();
        assert_eq!(out.tokens()[0], 1);
        assert!(out.tokens()[1] < 2);
    }
    // Nothing erased: identity without touching the walk.
    let full = ErasedSequence::new(vec![1, 0], vec![true, true], 2).unwrap();
    let out = model.inpaint_punctured(&full, 0, 4, 0).unwrap();
    assert_eq!(out.tokens(), z.tokens());
}
