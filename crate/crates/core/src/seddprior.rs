//! Masking-only discrete diffusion prior.
//!
//! Forward process: each token is independently replaced by the absorbing
//! mask token `A = N` with probability `gamma(t)`; delivered tokens are never
//! re-valued (`beta_t = 0`). A full-attention transformer conditioned on
//! `(t, class)` predicts the original token at every masked position; the
//! reverse sampler walks a time grid toward `t = 0`, unmasking each position
//! with the schedule-consistent probability `1 - gamma(t_next)/gamma(t_now)`
//! and filling all of a step's unmasked positions in parallel from one
//! forward pass. Punctured transmissions are inpainted by clamping received
//! tokens and starting the walk at the effective noise level `gamma(t*) =
//! erased fraction`.

use serde::{Deserialize, Serialize};

use crate::channel::ErasedSequence;
use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::layers::{init_block, sinusoidal_embedding, transformer_block, LAYER_NORM_EPS};
use crate::nn::params::{normal_init, Bound, ParamStore};
use crate::nn::scalar::Real;
use crate::nn::tensor::Tensor;
use crate::nn::{ckpt, ops, Adam, AdamConfig};
use crate::rng::{stream_rng, Rng};
use crate::tokens::TokenSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Cumulative mask probability over continuous time `t` in `[0, 1]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        NoiseSchedule { kind }
    }

    /// Mask probability `gamma(t)`; `gamma(0) = 0`, `gamma(1) = 1`, monotone.
    pub fn gamma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => t,
            ScheduleKind::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * t).cos()),
        }
    }

    /// Keep probability `alpha(t) = 1 - gamma(t)` (masking-only regime).
    pub fn alpha(&self, t: f64) -> f64 {
        1.0 - self.gamma(t)
    }

    /// Inverse of gamma: the time whose mask probability equals `frac`.
    pub fn time_for_gamma(&self, frac: f64) -> f64 {
        let frac = frac.clamp(0.0, 1.0);
        match self.kind {
            ScheduleKind::Linear => frac,
            ScheduleKind::Cosine => (1.0 - 2.0 * frac).acos() / std::f64::consts::PI,
        }
    }
}

/// Dense transition matrix of the forward process at time `t`:
/// `(N+1) x (N+1)`, column-stochastic, absorbing in the mask state.
/// Row/column `N` is the mask token.
pub fn build_qt(schedule: &NoiseSchedule, n: usize, t: f64) -> Result<Tensor<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid_input(format!("time {t} outside [0, 1]")));
    }
    let gamma = schedule.gamma(t);
    let alpha = 1.0 - gamma;
    let side = n + 1;
    let mut q = vec![0f64; side * side];
    for j in 0..n {
        q[j * side + j] = alpha; // stay
        q[n * side + j] = gamma; // absorb into mask
    }
    q[n * side + n] = 1.0; // mask is absorbing
    Ok(Tensor::new(vec![side, side], q))
}

/// Independently mask each token with probability `gamma(t)`.
/// Returns the corrupted sequence (mask token `A = N` at hit positions) and
/// the per-position mask flags.
pub fn corrupt(
    z: &TokenSequence,
    schedule: &NoiseSchedule,
    t: f64,
    seed: u64,
) -> Result<(Vec<u32>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid_input(format!("time {t} outside [0, 1]")));
    }
    let mut rng = stream_rng(seed, "sedd-corrupt", &[]);
    Ok(corrupt_with_rng(z, schedule, t, &mut rng))
}

fn corrupt_with_rng(
    z: &TokenSequence,
    schedule: &NoiseSchedule,
    t: f64,
    rng: &mut Rng,
) -> (Vec<u32>, Vec<bool>) {
    use rand::Rng as _;
    let gamma = schedule.gamma(t);
    let a = z.mask_token();
    let mut tokens = Vec::with_capacity(z.len());
    let mut flags = Vec::with_capacity(z.len());
    for &tok in z.tokens() {
        let hit = rng.gen_range(0.0..1.0) < gamma;
        tokens.push(if hit { a } else { tok });
        flags.push(hit);
    }
    (tokens, flags)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeddConfig {
    /// Data vocabulary size N; the mask token is `A = N`.
    pub n_codewords: usize,
    pub n_classes: usize,
    pub d_s: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub width: usize,
    pub schedule: ScheduleKind,
    /// Default reverse-step count.
    pub n_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SeddConfig {
    fn default() -> Self {
        SeddConfig {
            n_codewords: 64,
            n_classes: 3,
            d_s: 128,
            n_layers: 4,
            n_heads: 4,
            width: 128,
            schedule: ScheduleKind::Linear,
            n_steps: 64,
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl SeddConfig {
    /// Input embedding vocabulary: data tokens plus the mask token.
    pub fn input_vocab(&self) -> usize {
        self.n_codewords + 1
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SeddEpochStats {
    pub epoch: usize,
    pub loss: f64,
}

pub struct SeddModel {
    pub params: ParamStore<Real>,
    pub config: SeddConfig,
    pub schedule: NoiseSchedule,
}

impl SeddModel {
    pub fn init(config: SeddConfig) -> Result<Self> {
        if config.width % config.n_heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                config.width, config.n_heads
            )));
        }
        let mut rng = stream_rng(config.seed, "sedd-init", &[]);
        let mut params = ParamStore::new();
        let d = config.width;
        params.add("tok_emb", normal_init(&[config.input_vocab(), d], 0.02, &mut rng));
        params.add("pos_emb", normal_init(&[config.d_s, d], 0.02, &mut rng));
        params.add("class_emb", normal_init(&[config.n_classes, d], 0.02, &mut rng));
        params.add("time_mlp.fc1", normal_init(&[d, d], 0.02, &mut rng));
        params.add("time_mlp.fc1_b", Tensor::zeros(&[d]));
        params.add("time_mlp.fc2", normal_init(&[d, d], 0.02, &mut rng));
        params.add("time_mlp.fc2_b", Tensor::zeros(&[d]));
        for i in 0..config.n_layers {
            init_block(&mut params, &format!("blk{i}"), d, &mut rng);
        }
        params.add("ln_f.g", Tensor::full(&[d], 1.0));
        params.add("ln_f.b", Tensor::zeros(&[d]));
        params.add("head.w", normal_init(&[config.n_codewords, d], 0.02, &mut rng));
        params.add("head.b", Tensor::zeros(&[config.n_codewords]));
        let schedule = NoiseSchedule::new(config.schedule);
        Ok(SeddModel {
            params,
            config,
            schedule,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        ckpt::save(&self.params, path)
    }

    pub fn load(path: &std::path::Path, config: SeddConfig) -> Result<Self> {
        let params = ckpt::load(path)?;
        let fresh = SeddModel::init(config.clone())?;
        for name in fresh.params.names() {
            let got = params
                .try_get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing parameter {name}")))?;
            if got.shape() != fresh.params.get(name).shape() {
                return Err(Error::Format(format!(
                    "checkpoint parameter {name}: shape {:?} vs configured {:?}",
                    got.shape(),
                    fresh.params.get(name).shape()
                )));
            }
        }
        Ok(SeddModel {
            params,
            config: config.clone(),
            schedule: NoiseSchedule::new(config.schedule),
        })
    }

    /// Score-network logits on the graph: `(B*d_s, N)` over data tokens for
    /// input ids over `{0..N} (A = N allowed)`, conditioned per sequence on
    /// `(t, class)`.
    pub fn logits_on_graph(
        &self,
        g: &mut Graph<Real>,
        bound: &Bound,
        ids: &[u32],
        ts: &[f64],
        class_ids: &[u16],
    ) -> Result<Var> {
        let d_s = self.config.d_s;
        let d = self.config.width;
        let bsz = ts.len();
        if ids.len() != bsz * d_s || class_ids.len() != bsz {
            return Err(Error::shape(format!(
                "sedd forward: {} ids, {} times, {} classes",
                ids.len(),
                ts.len(),
                class_ids.len()
            )));
        }
        for &c in class_ids {
            if c as usize >= self.config.n_classes {
                return Err(Error::invalid_input(format!("class id {c} out of range")));
            }
        }
        let tok = g.embedding(bound.var("tok_emb"), ids)?;
        let tok = g.reshape(tok, &[bsz, d_s, d])?;
        let pos_ids: Vec<u32> = (0..d_s as u32).collect();
        let pos = g.embedding(bound.var("pos_emb"), &pos_ids)?;
        let mut x = g.add_broadcast_mat(tok, pos)?;
        // Conditioning vector: MLP(sinusoid(t)) + class embedding, per sequence.
        let mut sin = Vec::with_capacity(bsz * d);
        for &t in ts {
            sin.extend(sinusoidal_embedding::<Real>(t, d));
        }
        let sin = g.constant(Tensor::new(vec![bsz, d], sin));
        let h = g.linear(sin, bound.var("time_mlp.fc1"), Some(bound.var("time_mlp.fc1_b")))?;
        let h = g.gelu(h);
        let time_cond = g.linear(h, bound.var("time_mlp.fc2"), Some(bound.var("time_mlp.fc2_b")))?;
        let class_rows: Vec<u32> = class_ids.iter().map(|&c| c as u32).collect();
        let class_cond = g.embedding(bound.var("class_emb"), &class_rows)?;
        let cond = g.add(time_cond, class_cond)?;
        for i in 0..self.config.n_layers {
            x = transformer_block(
                g,
                bound,
                &format!("blk{i}"),
                x,
                self.config.n_heads,
                None,
                Some(cond),
            )?;
        }
        let x = g.layer_norm(x, bound.var("ln_f.g"), bound.var("ln_f.b"), LAYER_NORM_EPS as Real)?;
        let x = g.reshape(x, &[bsz * d_s, d])?;
        g.linear(x, bound.var("head.w"), Some(bound.var("head.b")))
    }

    /// Masked cross-entropy at a fixed corruption (deterministic; used by
    /// training internals and gradient checks).
    pub fn loss_at_corruption(
        &self,
        g: &mut Graph<Real>,
        bound: &Bound,
        corrupted: &[u32],
        originals: &[u32],
        flags: &[bool],
        ts: &[f64],
        class_ids: &[u16],
    ) -> Result<Var> {
        let logits = self.logits_on_graph(g, bound, corrupted, ts, class_ids)?;
        let weights: Vec<Real> = flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        g.cross_entropy(logits, originals, Some(&weights), None)
    }

    /// Draw `(t, corruption)` per sequence and compute the masked CE.
    /// Degenerate draws with zero masked positions are re-drawn, never
    /// silently scored as zero.
    pub fn loss_on_graph(
        &self,
        g: &mut Graph<Real>,
        bound: &Bound,
        seqs: &[&TokenSequence],
        class_ids: &[u16],
        seed: u64,
        step: u64,
    ) -> Result<Var> {
        use rand::Rng as _;
        let d_s = self.config.d_s;
        let mut corrupted = Vec::with_capacity(seqs.len() * d_s);
        let mut originals = Vec::with_capacity(seqs.len() * d_s);
        let mut flags = Vec::with_capacity(seqs.len() * d_s);
        let mut ts = Vec::with_capacity(seqs.len());
        for (bi, z) in seqs.iter().enumerate() {
            if z.len() != d_s {
                return Err(Error::shape(format!(
                    "sequence length {} vs d_s {d_s}",
                    z.len()
                )));
            }
            let mut rng = stream_rng(seed, "sedd-draw", &[step, bi as u64]);
            loop {
                let t = 1.0 - rng.gen_range(0.0..1.0); // (0, 1]
                let (ctoks, cflags) = corrupt_with_rng(z, &self.schedule, t, &mut rng);
                if cflags.iter().any(|&f| f) {
                    corrupted.extend_from_slice(&ctoks);
                    originals.extend_from_slice(z.tokens());
                    flags.extend_from_slice(&cflags);
                    ts.push(t);
                    break;
                }
            }
        }
        self.loss_at_corruption(g, bound, &corrupted, &originals, &flags, &ts, class_ids)
    }

    /// Single-sequence loss value (stochastic draw controlled by `seed`).
    pub fn sedd_loss(&self, z: &TokenSequence, class_id: u16, seed: u64) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let loss = self.loss_on_graph(&mut g, &bound, &[z], &[class_id], seed, 0)?;
        Ok(g.value(loss).item() as f64)
    }

    /// Plain-tensor forward used by the reverse sampler:
    /// logits `(B, d_s, N)` flattened.
    pub fn logits_infer(&self, ids: &[u32], ts: &[f64], class_ids: &[u16]) -> Result<Vec<f32>> {
        let cfg = &self.config;
        let (d, d_s, heads) = (cfg.width, cfg.d_s, cfg.n_heads);
        let dh = d / heads;
        let bsz = ts.len();
        if ids.len() != bsz * d_s || class_ids.len() != bsz {
            return Err(Error::shape("sedd infer: shape mismatch"));
        }
        let p = &self.params;
        let iv = cfg.input_vocab();
        let tok_emb = p.get("tok_emb").data();
        let pos_emb = p.get("pos_emb").data();
        let class_emb = p.get("class_emb").data();
        // Conditioning vectors (B, D).
        let mut sin = Vec::with_capacity(bsz * d);
        for &t in ts {
            sin.extend(sinusoidal_embedding::<f32>(t, d));
        }
        let h = ops::linear_rows(
            &sin,
            p.get("time_mlp.fc1").data(),
            p.get("time_mlp.fc1_b").data(),
            bsz,
            d,
            d,
        );
        let h = ops::gelu_fwd(&h);
        let mut cond = ops::linear_rows(
            &h,
            p.get("time_mlp.fc2").data(),
            p.get("time_mlp.fc2_b").data(),
            bsz,
            d,
            d,
        );
        for (b, &c) in class_ids.iter().enumerate() {
            if c as usize >= cfg.n_classes {
                return Err(Error::invalid_input(format!("class id {c} out of range")));
            }
            for i in 0..d {
                cond[b * d + i] += class_emb[c as usize * d + i];
            }
        }
        // Token + positional embeddings, (B*d_s, D).
        let rows = bsz * d_s;
        let mut x = vec![0f32; rows * d];
        for b in 0..bsz {
            for tpos in 0..d_s {
                let tok = ids[b * d_s + tpos] as usize;
                if tok >= iv {
                    return Err(Error::InvalidToken(format!("token {tok} >= vocab {iv}")));
                }
                let dst = &mut x[(b * d_s + tpos) * d..(b * d_s + tpos + 1) * d];
                for i in 0..d {
                    dst[i] = tok_emb[tok * d + i] + pos_emb[tpos * d + i];
                }
            }
        }
        let eps = LAYER_NORM_EPS as f32;
        let mut qb = vec![0f32; d_s * dh];
        let mut kb = vec![0f32; d_s * dh];
        let mut vb = vec![0f32; d_s * dh];
        for layer in 0..cfg.n_layers {
            let pref = format!("blk{layer}");
            // conditioning enters at block entry
            for b in 0..bsz {
                for tpos in 0..d_s {
                    let dst = &mut x[(b * d_s + tpos) * d..(b * d_s + tpos + 1) * d];
                    for i in 0..d {
                        dst[i] += cond[b * d + i];
                    }
                }
            }
            let (hn, _, _) = ops::layer_norm_fwd(
                &x,
                p.get(&format!("{pref}.ln1.g")).data(),
                p.get(&format!("{pref}.ln1.b")).data(),
                d,
                eps,
            );
            let q = ops::linear_rows(
                &hn,
                p.get(&format!("{pref}.attn.wq")).data(),
                p.get(&format!("{pref}.attn.wq_b")).data(),
                rows,
                d,
                d,
            );
            let k = ops::linear_rows(
                &hn,
                p.get(&format!("{pref}.attn.wk")).data(),
                p.get(&format!("{pref}.attn.wk_b")).data(),
                rows,
                d,
                d,
            );
            let v = ops::linear_rows(
                &hn,
                p.get(&format!("{pref}.attn.wv")).data(),
                p.get(&format!("{pref}.attn.wv_b")).data(),
                rows,
                d,
                d,
            );
            let scale = 1.0 / (dh as f32).sqrt();
            let mut attn_out = vec![0f32; rows * d];
            for b in 0..bsz {
                for hh in 0..heads {
                    for tpos in 0..d_s {
                        let src = (b * d_s + tpos) * d + hh * dh;
                        qb[tpos * dh..(tpos + 1) * dh].copy_from_slice(&q[src..src + dh]);
                        kb[tpos * dh..(tpos + 1) * dh].copy_from_slice(&k[src..src + dh]);
                        vb[tpos * dh..(tpos + 1) * dh].copy_from_slice(&v[src..src + dh]);
                    }
                    // scores (d_s, d_s) = qb · kbᵀ
                    let mut scores = ops::matmul(&qb, &kb, d_s, dh, d_s, false, true);
                    for s in scores.iter_mut() {
                        *s *= scale;
                    }
                    let probs = ops::softmax_rows_fwd(&scores, d_s);
                    let ctx = ops::matmul(&probs, &vb, d_s, d_s, dh, false, false);
                    for tpos in 0..d_s {
                        let dst = (b * d_s + tpos) * d + hh * dh;
                        attn_out[dst..dst + dh].copy_from_slice(&ctx[tpos * dh..(tpos + 1) * dh]);
                    }
                }
            }
            let proj = ops::linear_rows(
                &attn_out,
                p.get(&format!("{pref}.attn.wo")).data(),
                p.get(&format!("{pref}.attn.wo_b")).data(),
                rows,
                d,
                d,
            );
            for i in 0..x.len() {
                x[i] += proj[i];
            }
            let (h2, _, _) = ops::layer_norm_fwd(
                &x,
                p.get(&format!("{pref}.ln2.g")).data(),
                p.get(&format!("{pref}.ln2.b")).data(),
                d,
                eps,
            );
            let fc1 = ops::linear_rows(
                &h2,
                p.get(&format!("{pref}.mlp.fc1")).data(),
                p.get(&format!("{pref}.mlp.fc1_b")).data(),
                rows,
                d,
                4 * d,
            );
            let a = ops::gelu_fwd(&fc1);
            let fc2 = ops::linear_rows(
                &a,
                p.get(&format!("{pref}.mlp.fc2")).data(),
                p.get(&format!("{pref}.mlp.fc2_b")).data(),
                rows,
                4 * d,
                d,
            );
            for i in 0..x.len() {
                x[i] += fc2[i];
            }
        }
        let (xf, _, _) = ops::layer_norm_fwd(&x, p.get("ln_f.g").data(), p.get("ln_f.b").data(), d, eps);
        Ok(ops::linear_rows(
            &xf,
            p.get("head.w").data(),
            p.get("head.b").data(),
            rows,
            d,
            cfg.n_codewords,
        ))
    }

    /// Core reverse walk shared by generation and inpainting.
    ///
    /// `states[b]` holds the current tokens (mask `A = N` at unknown
    /// positions); erased positions evolve while known positions are left
    /// untouched (clamped). Item `b` walks its own grid from `t_stars[b]`
    /// down to 0 in `n_steps` steps.
    fn denoise_batch(
        &self,
        mut states: Vec<Vec<u32>>,
        t_stars: &[f64],
        class_ids: &[u16],
        n_steps: usize,
        seeds: &[u64],
    ) -> Result<Vec<TokenSequence>> {
        use rand::Rng as _;
        if n_steps == 0 {
            return Err(Error::invalid_input("n_steps must be >= 1"));
        }
        let bsz = states.len();
        if t_stars.len() != bsz || class_ids.len() != bsz || seeds.len() != bsz {
            return Err(Error::shape("denoise_batch: mismatched arrays"));
        }
        let d_s = self.config.d_s;
        let n = self.config.n_codewords;
        let a = n as u32;
        let mut rngs: Vec<Rng> = seeds
            .iter()
            .map(|&s| stream_rng(s, "sedd-denoise", &[]))
            .collect();
        let mut ts = vec![0f64; bsz];
        for k in 0..n_steps {
            // Decide which masked positions unmask this step.
            let mut unmask: Vec<Vec<usize>> = Vec::with_capacity(bsz);
            let mut any = false;
            for b in 0..bsz {
                let t_now = t_stars[b] * (1.0 - k as f64 / n_steps as f64);
                let t_next = t_stars[b] * (1.0 - (k + 1) as f64 / n_steps as f64);
                ts[b] = t_now;
                let g_now = self.schedule.gamma(t_now);
                let g_next = self.schedule.gamma(t_next);
                let p_unmask = if g_now <= 0.0 {
                    1.0
                } else {
                    1.0 - g_next / g_now
                };
                let mut hits = Vec::new();
                for (i, &tok) in states[b].iter().enumerate() {
                    if tok == a && rngs[b].gen_range(0.0..1.0) < p_unmask {
                        hits.push(i);
                    }
                }
                if !hits.is_empty() {
                    any = true;
                }
                unmask.push(hits);
            }
            if !any {
                continue;
            }
            // One parallel estimate of all positions, then fill the chosen ones.
            let flat: Vec<u32> = states.iter().flatten().copied().collect();
            let logits = self.logits_infer(&flat, &ts, class_ids)?;
            for b in 0..bsz {
                for &pos in &unmask[b] {
                    let row = &logits[(b * d_s + pos) * n..(b * d_s + pos + 1) * n];
                    states[b][pos] = sample_row(row, &mut rngs[b]);
                }
            }
        }
        let mut out = Vec::with_capacity(bsz);
        for s in states {
            debug_assert!(s.iter().all(|&t| t < a), "mask token survived the walk");
            out.push(TokenSequence::new(s, a)?);
        }
        Ok(out)
    }

    /// Generate one sequence from pure noise (all-mask start at `t = 1`).
    pub fn reverse_sample(&self, class_id: u16, n_steps: usize, seed: u64) -> Result<TokenSequence> {
        Ok(self
            .reverse_sample_batch(&[class_id], n_steps, &[seed])?
            .into_iter()
            .next()
            .unwrap())
    }

    pub fn reverse_sample_batch(
        &self,
        class_ids: &[u16],
        n_steps: usize,
        seeds: &[u64],
    ) -> Result<Vec<TokenSequence>> {
        let d_s = self.config.d_s;
        let a = self.config.n_codewords as u32;
        let states = vec![vec![a; d_s]; class_ids.len()];
        let t_stars = vec![1.0; class_ids.len()];
        self.denoise_batch(states, &t_stars, class_ids, n_steps, seeds)
    }

    /// Fill the erased positions of a punctured transmission. Received
    /// tokens are preserved exactly at every step.
    pub fn inpaint_punctured(
        &self,
        received: &ErasedSequence,
        class_id: u16,
        n_steps: usize,
        seed: u64,
    ) -> Result<TokenSequence> {
        Ok(self
            .inpaint_punctured_batch(&[received], &[class_id], n_steps, &[seed])?
            .into_iter()
            .next()
            .unwrap())
    }

    pub fn inpaint_punctured_batch(
        &self,
        received: &[&ErasedSequence],
        class_ids: &[u16],
        n_steps: usize,
        seeds: &[u64],
    ) -> Result<Vec<TokenSequence>> {
        let d_s = self.config.d_s;
        let n = self.config.n_codewords as u32;
        let mut states = Vec::with_capacity(received.len());
        let mut t_stars = Vec::with_capacity(received.len());
        for r in received {
            if r.len() != d_s {
                return Err(Error::shape(format!(
                    "erased sequence length {} vs d_s {d_s}",
                    r.len()
                )));
            }
            if r.vocab() != n {
                return Err(Error::InvalidToken(format!(
                    "erased sequence vocabulary {} vs model {n}",
                    r.vocab()
                )));
            }
            let frac = r.n_erased() as f64 / d_s as f64;
            states.push(r.tokens().to_vec());
            t_stars.push(self.schedule.time_for_gamma(frac));
        }
        // Nothing erased anywhere: identity, no model calls.
        if t_stars.iter().all(|&t| t == 0.0) {
            return received
                .iter()
                .map(|r| TokenSequence::new(r.tokens().to_vec(), n))
                .collect();
        }
        self.denoise_batch(states, &t_stars, class_ids, n_steps, seeds)
    }
}

/// Sample an index from one row of logits (temperature 1, f64 math).
fn sample_row(row: &[f32], rng: &mut Rng) -> u32 {
    use rand::Rng as _;
    let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut cum = 0.0f64;
    let cdf: Vec<f64> = row
        .iter()
        .map(|&l| {
            cum += ((l as f64) - mx).exp();
            cum
        })
        .collect();
    let u: f64 = rng.gen_range(0.0..cum);
    cdf.partition_point(|&w| w <= u).min(row.len() - 1) as u32
}

/// Train on tokenized sequences. Deterministic given the config seed.
pub fn train_sedd(
    seqs: &[TokenSequence],
    class_ids: &[u16],
    config: &SeddConfig,
) -> Result<(SeddModel, Vec<SeddEpochStats>)> {
    if seqs.is_empty() || seqs.len() != class_ids.len() {
        return Err(Error::invalid_input("empty or mismatched training arrays"));
    }
    let mut model = SeddModel::init(config.clone())?;
    let mut opt = Adam::new(
        &model.params,
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
    );
    let n = seqs.len();
    let bs = config.batch_size.min(n);
    let mut log = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom as _;
        let mut rng = stream_rng(config.seed, "sedd-shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(bs) {
            let batch: Vec<&TokenSequence> = chunk.iter().map(|&i| &seqs[i]).collect();
            let classes: Vec<u16> = chunk.iter().map(|&i| class_ids[i]).collect();
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let loss = model.loss_on_graph(&mut g, &bound, &batch, &classes, config.seed, step)?;
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: format!("loss became {lv}"),
                });
            }
            let grads = g.backward(loss)?;
            opt.step(&mut model.params, &grads, &bound);
            total += lv;
            batches += 1;
            step += 1;
        }
        log.push(SeddEpochStats {
            epoch,
            loss: total / batches.max(1) as f64,
        });
    }
    Ok((model, log))
}
