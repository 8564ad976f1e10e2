//! Vector-quantized autoencoder: discretizes `(2, p)` signals into length-d_s
//! token sequences and reconstructs signals from tokens.
//!
//! The encoder downsamples by strided convolutions to an `(ℓ, d_s)` latent
//! grid; each of the `d_s` column slices is snapped to its nearest codeword.
//! Training follows the four-term objective: reconstruction + quantization +
//! beta * (commitment + KL of the batch codeword-usage histogram against
//! uniform). Gradients cross the non-differentiable argmin through an
//! identity-gradient passthrough.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{kaiming_uniform, Bound, ParamStore};
use crate::nn::scalar::Real;
use crate::nn::tensor::Tensor;
use crate::nn::{ckpt, Adam, AdamConfig};
use crate::rng::{stream_rng, Rng};
use crate::siggen::{batch_signals, Dataset, Signal};
use crate::tokens::TokenSequence;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VqvaeConfig {
    /// Codebook size N.
    pub n_codewords: usize,
    /// Codeword dimension ℓ (also the latent channel count).
    pub codeword_dim: usize,
    /// Tokens per datapoint d_s.
    pub latent_len: usize,
    /// Input length p; must be `latent_len * 2^k` for k >= 1 downsampling
    /// stages.
    pub p: usize,
    /// Commitment/KL weight beta.
    pub beta: f64,
    /// Temperature for stochastic quantization during the early epochs;
    /// 0 disables it.
    pub stochastic_tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VqvaeConfig {
    fn default() -> Self {
        VqvaeConfig {
            n_codewords: 64,
            codeword_dim: 32,
            latent_len: 128,
            p: 1024,
            beta: 0.25,
            stochastic_tau: 1.0,
            epochs: 18,
            batch_size: 16,
            lr: 2e-3,
            seed: 0,
        }
    }
}

impl VqvaeConfig {
    /// Number of stride-2 stages implied by `p / latent_len`.
    pub fn n_stages(&self) -> Result<usize> {
        if self.latent_len == 0 || self.p % self.latent_len != 0 {
            return Err(Error::Config(format!(
                "p {} not divisible by latent_len {}",
                self.p, self.latent_len
            )));
        }
        let ratio = self.p / self.latent_len;
        if !ratio.is_power_of_two() || ratio < 2 {
            return Err(Error::Config(format!(
                "p/latent_len = {ratio} must be a power of two >= 2"
            )));
        }
        Ok(ratio.trailing_zeros() as usize)
    }

    fn stage_channels(&self, n_stages: usize) -> Vec<usize> {
        (0..n_stages).map(|i| (32 << i).min(64)).collect()
    }
}

/// Per-batch loss components; `total = recon + quant + beta*(commit + kl)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossComponents {
    pub total: f64,
    pub recon: f64,
    pub quant: f64,
    pub commit: f64,
    pub kl: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossComponents,
    /// exp(entropy) of the epoch's codeword usage histogram.
    pub perplexity: f64,
    /// Codewords revived at epoch end.
    pub revived: usize,
}

pub struct VqvaeModel {
    pub params: ParamStore<Real>,
    pub config: VqvaeConfig,
}

/// How encode snaps latent slices to codewords.
#[derive(Clone, Copy, Debug)]
pub enum QuantizeMode {
    /// Nearest codeword, ties to the lower index.
    Deterministic,
    /// Sample from softmax(-dist^2 / tau).
    Stochastic { tau: f64, seed: u64 },
}

impl VqvaeModel {
    pub fn init(config: VqvaeConfig) -> Result<Self> {
        let n_stages = config.n_stages()?;
        let chans = config.stage_channels(n_stages);
        let mut rng = stream_rng(config.seed, "vqvae-init", &[]);
        let mut params = ParamStore::new();
        let k = 5usize;
        let mut c_in = 2usize;
        for (i, &c_out) in chans.iter().enumerate() {
            params.add(
                format!("enc.conv{i}.w"),
                kaiming_uniform(&[c_out, c_in, k], c_in * k, &mut rng),
            );
            params.add(format!("enc.conv{i}.b"), Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        let cw = *chans.last().unwrap();
        for half in ["c1", "c2"] {
            params.add(
                format!("enc.res.{half}.w"),
                kaiming_uniform(&[cw, cw, 3], cw * 3, &mut rng),
            );
            params.add(format!("enc.res.{half}.b"), Tensor::zeros(&[cw]));
        }
        let ell = config.codeword_dim;
        params.add(
            "enc.proj.w",
            kaiming_uniform(&[ell, cw, 3], cw * 3, &mut rng),
        );
        params.add("enc.proj.b", Tensor::zeros(&[ell]));

        // Codebook entries start uniform in [-1/N, 1/N].
        let n = config.n_codewords;
        params.add(
            "codebook",
            Tensor::rand_uniform(&[n, ell], -1.0 / n as f64, 1.0 / n as f64, &mut rng),
        );

        params.add(
            "dec.proj.w",
            kaiming_uniform(&[cw, ell, 3], ell * 3, &mut rng),
        );
        params.add("dec.proj.b", Tensor::zeros(&[cw]));
        for half in ["c1", "c2"] {
            params.add(
                format!("dec.res.{half}.w"),
                kaiming_uniform(&[cw, cw, 3], cw * 3, &mut rng),
            );
            params.add(format!("dec.res.{half}.b"), Tensor::zeros(&[cw]));
        }
        // Transposed stages mirror the encoder channel progression.
        let mut up_in = cw;
        for i in 0..n_stages {
            let up_out = if i + 1 == n_stages {
                2
            } else {
                chans[n_stages - 2 - i]
            };
            params.add(
                format!("dec.convt{i}.w"),
                kaiming_uniform(&[up_in, up_out, 4], up_in * 4, &mut rng),
            );
            params.add(format!("dec.convt{i}.b"), Tensor::zeros(&[up_out]));
            up_in = up_out;
        }
        Ok(VqvaeModel { params, config })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        ckpt::save(&self.params, path)
    }

    pub fn load(path: &std::path::Path, config: VqvaeConfig) -> Result<Self> {
        let params = ckpt::load(path)?;
        let fresh = VqvaeModel::init(config.clone())?;
        for name in fresh.params.names() {
            let loaded = params.try_get(name).ok_or_else(|| {
                Error::Format(format!("checkpoint missing parameter {name}"))
            })?;
            if loaded.shape() != fresh.params.get(name).shape() {
                return Err(Error::Format(format!(
                    "checkpoint parameter {name} has shape {:?}, config wants {:?}",
                    loaded.shape(),
                    fresh.params.get(name).shape()
                )));
            }
        }
        Ok(VqvaeModel { params, config })
    }

    /// Encoder forward on the graph: `(B, 2, p) -> (B, ℓ, d_s)`.
    pub fn encoder_forward(&self, g: &mut Graph<Real>, bound: &Bound, x: Var) -> Result<Var> {
        let n_stages = self.config.n_stages()?;
        let mut h = x;
        for i in 0..n_stages {
            let w = bound.var(&format!("enc.conv{i}.w"));
            let b = bound.var(&format!("enc.conv{i}.b"));
            h = g.conv1d(h, w, Some(b), 2, 2)?;
            h = g.relu(h);
        }
        let r1 = g.conv1d(
            h,
            bound.var("enc.res.c1.w"),
            Some(bound.var("enc.res.c1.b")),
            1,
            1,
        )?;
        let r1 = g.relu(r1);
        let r2 = g.conv1d(
            r1,
            bound.var("enc.res.c2.w"),
            Some(bound.var("enc.res.c2.b")),
            1,
            1,
        )?;
        let h = g.add(h, r2)?;
        let h = g.relu(h);
        g.conv1d(h, bound.var("enc.proj.w"), Some(bound.var("enc.proj.b")), 1, 1)
    }

    /// Decoder forward on the graph: `(B, ℓ, d_s) -> (B, 2, p)`.
    pub fn decoder_forward(&self, g: &mut Graph<Real>, bound: &Bound, zq: Var) -> Result<Var> {
        let n_stages = self.config.n_stages()?;
        let h = g.conv1d(
            zq,
            bound.var("dec.proj.w"),
            Some(bound.var("dec.proj.b")),
            1,
            1,
        )?;
        let h = g.relu(h);
        let r1 = g.conv1d(
            h,
            bound.var("dec.res.c1.w"),
            Some(bound.var("dec.res.c1.b")),
            1,
            1,
        )?;
        let r1 = g.relu(r1);
        let r2 = g.conv1d(
            r1,
            bound.var("dec.res.c2.w"),
            Some(bound.var("dec.res.c2.b")),
            1,
            1,
        )?;
        let h = g.add(h, r2)?;
        let mut h = g.relu(h);
        for i in 0..n_stages {
            let w = bound.var(&format!("dec.convt{i}.w"));
            let b = bound.var(&format!("dec.convt{i}.b"));
            h = g.conv1d_transpose(h, w, Some(b), 2, 1)?;
            if i + 1 < n_stages {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Nearest-codeword indices for latent slices `(rows, ℓ)`; exact
    /// distance loop with ties resolved to the lower index.
    pub fn nearest_codewords(&self, slices: &Tensor<Real>) -> Vec<u32> {
        let ell = self.config.codeword_dim;
        let n = self.config.n_codewords;
        let cb = self.params.get("codebook");
        let cbd = cb.data();
        let rows = slices.numel() / ell;
        let sd = slices.data();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let slice = &sd[r * ell..(r + 1) * ell];
            let mut best = 0usize;
            let mut best_d = f32::INFINITY;
            for j in 0..n {
                let e = &cbd[j * ell..(j + 1) * ell];
                let mut d = 0f32;
                for i in 0..ell {
                    let diff = slice[i] - e[i];
                    d += diff * diff;
                }
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            out.push(best as u32);
        }
        out
    }

    /// Stochastic codeword assignment: sample j with probability
    /// softmax(-dist^2 / (tau * mean dist^2)). Normalizing by the slice's
    /// mean squared distance makes tau act on relative distances, so the
    /// sampling stays meaningful at any latent scale (raw distances at init
    /// are tiny and would otherwise give a uniform, assignment-destroying
    /// draw).
    fn sample_codewords(&self, slices: &Tensor<Real>, tau: f64, rng: &mut Rng) -> Vec<u32> {
        use rand::Rng as _;
        let ell = self.config.codeword_dim;
        let n = self.config.n_codewords;
        let cbd = self.params.get("codebook").data();
        let rows = slices.numel() / ell;
        let sd = slices.data();
        let mut out = Vec::with_capacity(rows);
        let mut logits = vec![0f64; n];
        for r in 0..rows {
            let slice = &sd[r * ell..(r + 1) * ell];
            for (j, l) in logits.iter_mut().enumerate() {
                let e = &cbd[j * ell..(j + 1) * ell];
                let mut d = 0f64;
                for i in 0..ell {
                    let diff = (slice[i] - e[i]) as f64;
                    d += diff * diff;
                }
                *l = -d;
            }
            let mean_d: f64 = logits.iter().map(|l| -l).sum::<f64>() / n as f64;
            let scale = 1.0 / (tau * mean_d.max(1e-12));
            for l in logits.iter_mut() {
                *l *= scale;
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut cum = 0f64;
            let weights: Vec<f64> = logits
                .iter()
                .map(|l| {
                    cum += (l - mx).exp();
                    cum
                })
                .collect();
            let u: f64 = rng.gen_range(0.0..cum);
            let pick = weights.partition_point(|&w| w <= u).min(n - 1);
            out.push(pick as u32);
        }
        out
    }

    fn quantize(&self, slices: &Tensor<Real>, mode: QuantizeMode, step: u64) -> Vec<u32> {
        match mode {
            QuantizeMode::Deterministic => self.nearest_codewords(slices),
            QuantizeMode::Stochastic { tau, seed } => {
                let mut rng = stream_rng(seed, "vqvae-stochastic", &[step]);
                self.sample_codewords(slices, tau, &mut rng)
            }
        }
    }

    /// Encode a batch `(B, 2, p)` into tokens; returns the flattened token
    /// ids `(B*d_s)` and the latent slices `(B*d_s, ℓ)`.
    pub fn encode_batch(&self, x: &Tensor<Real>) -> Result<(Vec<u32>, Tensor<Real>)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let z = self.encoder_forward(&mut g, &bound, xv)?;
        let z = g.permute(z, &[0, 2, 1])?; // (B, d_s, ℓ)
        let rows = x.shape()[0] * self.config.latent_len;
        let z = g.reshape(z, &[rows, self.config.codeword_dim])?;
        let slices = g.value(z).clone();
        let tokens = self.nearest_codewords(&slices);
        Ok((tokens, slices))
    }

    /// Encode one signal to its token sequence (deterministic mode).
    pub fn encode(&self, sig: &Signal) -> Result<TokenSequence> {
        let x = batch_signals([sig]);
        let (tokens, _) = self.encode_batch(&x)?;
        TokenSequence::new(tokens, self.config.n_codewords as u32)
    }

    /// Decode flattened token ids `(B*d_s)` back to signals `(B, 2, p)`.
    pub fn decode_batch(&self, tokens: &[u32], bsz: usize) -> Result<Tensor<Real>> {
        let d_s = self.config.latent_len;
        if tokens.len() != bsz * d_s {
            return Err(Error::shape(format!(
                "decode_batch: {} tokens for {} sequences of {d_s}",
                tokens.len(),
                bsz
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.n_codewords as u32) {
            return Err(Error::InvalidToken(format!(
                "decode: token {bad} not a codeword index (N = {}); erased positions must be \
                 recovered before decoding",
                self.config.n_codewords
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let emb = g.embedding(bound.var("codebook"), tokens)?; // (B*d_s, ℓ)
        let emb = g.reshape(emb, &[bsz, d_s, self.config.codeword_dim])?;
        let zq = g.permute(emb, &[0, 2, 1])?; // (B, ℓ, d_s)
        let y = self.decoder_forward(&mut g, &bound, zq)?;
        Ok(g.value(y).clone())
    }

    /// Decode one token sequence to a `(2, p)` signal tensor.
    pub fn decode(&self, z: &TokenSequence) -> Result<Tensor<Real>> {
        if z.len() != self.config.latent_len {
            return Err(Error::shape(format!(
                "decode: sequence length {} vs d_s {}",
                z.len(),
                self.config.latent_len
            )));
        }
        let y = self.decode_batch(z.tokens(), 1)?;
        y.reshaped(&[2, self.config.p])
    }

    fn check_input(&self, x: &Tensor<Real>) -> Result<()> {
        match x.shape() {
            [_, 2, p] if *p == self.config.p => Ok(()),
            other => Err(Error::shape(format!(
                "expected (B, 2, {}), got {:?}",
                self.config.p, other
            ))),
        }
    }

    /// Bind parameters as constants (inference paths: no gradient tracking).
    fn bind_frozen(&self, g: &mut Graph<Real>) -> Bound {
        let mut map = std::collections::BTreeMap::new();
        let mut vars = Vec::with_capacity(self.params.len());
        for name in self.params.names() {
            let v = g.constant(self.params.get(name).clone());
            map.insert(name.to_string(), v);
            vars.push(v);
        }
        Bound::from_map(vars, map)
    }

    /// Build the full training loss on `g`. Returns the loss var, the token
    /// assignment used, and the numeric components.
    pub fn loss_on_graph(
        &self,
        g: &mut Graph<Real>,
        bound: &Bound,
        x: &Tensor<Real>,
        mode: QuantizeMode,
        step: u64,
    ) -> Result<(Var, Vec<u32>, LossComponents)> {
        self.check_input(x)?;
        let bsz = x.shape()[0];
        let d_s = self.config.latent_len;
        let ell = self.config.codeword_dim;
        let n = self.config.n_codewords;
        let rows = bsz * d_s;

        let xv = g.constant(x.clone());
        let z = self.encoder_forward(g, bound, xv)?;
        let z = g.permute(z, &[0, 2, 1])?;
        let z = g.reshape(z, &[rows, ell])?;
        let z_val = g.value(z).clone();

        let tokens = self.quantize(&z_val, mode, step);
        let zq = g.embedding(bound.var("codebook"), &tokens)?;
        let zq_val = g.value(zq).clone();

        // L_quant pulls codewords toward (detached) encoder outputs.
        let z_const = g.constant(z_val);
        let l_quant = g.mse(zq, z_const)?;
        // L_commit pulls encoder outputs toward (detached) codewords.
        let zq_const = g.constant(zq_val.clone());
        let l_commit = g.mse(z, zq_const)?;

        // Straight-through into the decoder.
        let st = g.passthrough(z, zq_val)?;
        let st = g.reshape(st, &[bsz, d_s, ell])?;
        let st = g.permute(st, &[0, 2, 1])?;
        let xhat = self.decoder_forward(g, bound, st)?;
        let x_const = g.constant(x.clone());
        let l_recon = g.mse(xhat, x_const)?;

        // KL(batch usage || uniform): constant w.r.t. parameters under hard
        // assignment, reported and added for the total per the objective.
        let kl = usage_kl(&tokens, n);
        let kl_var = g.constant(Tensor::scalar_value(kl as Real));

        let beta = self.config.beta as Real;
        let reg = g.add(l_commit, kl_var)?;
        let reg = g.scale(reg, beta);
        let rq = g.add(l_recon, l_quant)?;
        let total = g.add(rq, reg)?;

        let comps = LossComponents {
            total: g.value(total).item() as f64,
            recon: g.value(l_recon).item() as f64,
            quant: g.value(l_quant).item() as f64,
            commit: g.value(l_commit).item() as f64,
            kl,
        };
        Ok((total, tokens, comps))
    }

    /// Reconstruction `(B, 2, p) -> (B, 2, p)` through encode/quantize/decode.
    pub fn reconstruct_batch(&self, x: &Tensor<Real>) -> Result<Tensor<Real>> {
        let (tokens, _) = self.encode_batch(x)?;
        self.decode_batch(&tokens, x.shape()[0])
    }
}

/// KL divergence of the token-usage histogram from the uniform distribution,
/// in nats. A single used codeword gives `ln N`.
pub fn usage_kl(tokens: &[u32], n: usize) -> f64 {
    let mut counts = vec![0usize; n];
    for &t in tokens {
        counts[t as usize] += 1;
    }
    let total = tokens.len() as f64;
    let mut kl = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / total;
            kl += p * (p * n as f64).ln();
        }
    }
    kl
}

/// exp(entropy) of the usage histogram; N means perfectly uniform usage.
pub fn usage_perplexity(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.ln();
        }
    }
    h.exp()
}

/// Train a fresh model on `train`. Deterministic given the config seed.
pub fn train_vqvae(train: &Dataset, config: &VqvaeConfig) -> Result<(VqvaeModel, Vec<EpochStats>)> {
    if train.signals.is_empty() {
        return Err(Error::invalid_input("empty training set"));
    }
    let mut model = VqvaeModel::init(config.clone())?;
    let mut opt = Adam::new(
        &model.params,
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
    );
    let n = train.signals.len();
    let bs = config.batch_size.min(n);
    let stochastic_until = config.epochs / 4;
    let codebook_idx = model.params.index_of("codebook");
    let mut log = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom as _;
        let mut shuffle_rng = stream_rng(config.seed, "vqvae-shuffle", &[epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        let mut usage = vec![0usize; config.n_codewords];
        let mut sums = LossComponents::default();
        let mut batches = 0usize;
        let mut slice_stash: Option<Tensor<Real>> = None;

        for chunk in order.chunks(bs) {
            let x = batch_signals(chunk.iter().map(|&i| &train.signals[i]));
            let mode = if config.stochastic_tau > 0.0 && epoch < stochastic_until {
                QuantizeMode::Stochastic {
                    tau: config.stochastic_tau,
                    seed: config.seed,
                }
            } else {
                QuantizeMode::Deterministic
            };
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let (loss, tokens, comps) = model.loss_on_graph(&mut g, &bound, &x, mode, step)?;
            if !comps.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: format!("loss became {}", comps.total),
                });
            }
            for &t in &tokens {
                usage[t as usize] += 1;
            }
            let grads = g.backward(loss)?;
            opt.step(&mut model.params, &grads, &bound);
            sums.total += comps.total;
            sums.recon += comps.recon;
            sums.quant += comps.quant;
            sums.commit += comps.commit;
            sums.kl += comps.kl;
            batches += 1;
            step += 1;

            if chunk.len() == bs {
                // Keep the latest batch's latent slices for revival seeding.
                let (_, slices) = model.encode_batch(&x)?;
                slice_stash = Some(slices);
            }
        }

        // Revive codewords unused for the whole epoch.
        let mut revived = 0usize;
        if let Some(stash) = &slice_stash {
            let rows = stash.numel() / config.codeword_dim;
            let mut rng = stream_rng(config.seed, "vqvae-revive", &[epoch as u64]);
            use rand::Rng as _;
            for (j, &u) in usage.iter().enumerate() {
                if u == 0 {
                    let r = rng.gen_range(0..rows);
                    let src = stash.data()
                        [r * config.codeword_dim..(r + 1) * config.codeword_dim]
                        .to_vec();
                    let ell = config.codeword_dim;
                    let cb = model.params.get_mut("codebook");
                    cb.data_mut()[j * ell..(j + 1) * ell].copy_from_slice(&src);
                    for e in 0..ell {
                        opt.reset_slot(codebook_idx, j * ell + e);
                    }
                    revived += 1;
                }
            }
        }

        let inv = 1.0 / batches.max(1) as f64;
        log.push(EpochStats {
            epoch,
            loss: LossComponents {
                total: sums.total * inv,
                recon: sums.recon * inv,
                quant: sums.quant * inv,
                commit: sums.commit * inv,
                kl: sums.kl * inv,
            },
            perplexity: usage_perplexity(&usage),
            revived,
        });
    }
    Ok((model, log))
}

/// Tokenize a whole dataset in batches; returns one sequence per signal.
pub fn encode_dataset(
    model: &VqvaeModel,
    ds: &Dataset,
    batch_size: usize,
) -> Result<Vec<TokenSequence>> {
    let d_s = model.config.latent_len;
    let vocab = model.config.n_codewords as u32;
    let mut out = Vec::with_capacity(ds.signals.len());
    for chunk in ds.signals.chunks(batch_size.max(1)) {
        let x = batch_signals(chunk.iter());
        let (tokens, _) = model.encode_batch(&x)?;
        for b in 0..chunk.len() {
            out.push(TokenSequence::new(
                tokens[b * d_s..(b + 1) * d_s].to_vec(),
                vocab,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siggen::{build_dataset, desk_schemes, Split, WaveformConfig};

    fn tiny_config() -> VqvaeConfig {
        VqvaeConfig {
            n_codewords: 8,
            codeword_dim: 4,
            latent_len: 16,
            p: 64,
            beta: 0.25,
            stochastic_tau: 0.0,
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
            seed: 3,
        }
    }

    fn tiny_dataset() -> Dataset {
        build_dataset(
            &desk_schemes(),
            6,
            64,
            Split::Train,
            5,
            &WaveformConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn encode_token_range_and_shape() {
        let model = VqvaeModel::init(tiny_config()).unwrap();
        let ds = tiny_dataset();
        let z = model.encode(&ds.signals[0]).unwrap();
        assert_eq!(z.len(), 16);
        assert!(z.tokens().iter().all(|&t| t < 8));
    }

    #[test]
    fn nearest_codeword_simple_case() {
        // codebook {e0=(0,0), e1=(1,1)}, slice (0.2, 0.1) -> token 0
        let mut cfg = tiny_config();
        cfg.n_codewords = 2;
        cfg.codeword_dim = 2;
        let mut model = VqvaeModel::init(cfg).unwrap();
        let cb = model.params.get_mut("codebook");
        cb.data_mut().copy_from_slice(&[0.0, 0.0, 1.0, 1.0]);
        let slice = Tensor::new(vec![1, 2], vec![0.2, 0.1]);
        assert_eq!(model.nearest_codewords(&slice), vec![0]);
        // exactly equidistant: (0.5, 0.5) -> lower index wins
        let tie = Tensor::new(vec![1, 2], vec![0.5, 0.5]);
        assert_eq!(model.nearest_codewords(&tie), vec![0]);
    }

    #[test]
    fn quantizer_matches_brute_force_search() {
        let model = VqvaeModel::init(tiny_config()).unwrap();
        let mut rng = stream_rng(17, "bf", &[]);
        let slices = Tensor::<Real>::rand_normal(&[200, 4], 0.0, 1.0, &mut rng);
        let got = model.nearest_codewords(&slices);
        let cb = model.params.get("codebook").data().to_vec();
        for r in 0..200 {
            let s = &slices.data()[r * 4..(r + 1) * 4];
            let mut best = 0;
            let mut best_d = f32::INFINITY;
            for j in 0..8 {
                let e = &cb[j * 4..(j + 1) * 4];
                let d: f32 = s.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(got[r], best as u32, "row {r}");
        }
    }

    #[test]
    fn decode_rejects_mask_token() {
        let model = VqvaeModel::init(tiny_config()).unwrap();
        let tokens: Vec<u32> = vec![8; 16]; // A = N = 8
        let err = model.decode_batch(&tokens, 1);
        assert!(matches!(err, Err(Error::InvalidToken(_))));
    }

    #[test]
    fn decode_is_deterministic() {
        let model = VqvaeModel::init(tiny_config()).unwrap();
        let tokens: Vec<u32> = (0..16).map(|i| i % 8).collect();
        let a = model.decode_batch(&tokens, 1).unwrap();
        let b = model.decode_batch(&tokens, 1).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), &[1, 2, 64]);
    }

    #[test]
    fn loss_components_sum_to_total() {
        let model = VqvaeModel::init(tiny_config()).unwrap();
        let ds = tiny_dataset();
        let x = batch_signals(ds.signals.iter().take(4));
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        let (_, _, c) = model
            .loss_on_graph(&mut g, &bound, &x, QuantizeMode::Deterministic, 0)
            .unwrap();
        let expect = c.recon + c.quant + 0.25 * (c.commit + c.kl);
        assert!(
            (c.total - expect).abs() < 1e-6,
            "total {} vs sum {}",
            c.total,
            expect
        );
    }

    #[test]
    fn usage_kl_point_mass_is_ln_n() {
        let tokens = vec![3u32; 100];
        assert!((usage_kl(&tokens, 64) - 64f64.ln()).abs() < 1e-12);
        // perfectly uniform usage has zero KL
        let uniform: Vec<u32> = (0..64).collect();
        assert!(usage_kl(&uniform, 64).abs() < 1e-12);
    }

    #[test]
    fn straight_through_gradient_passes_unchanged() {
        // With loss = recon only, the gradient arriving at the encoder-output
        // node equals the gradient at the quantized embedding elementwise.
        let model = VqvaeModel::init(tiny_config()).unwrap();
        let ds = tiny_dataset();
        let x = batch_signals([&ds.signals[0]]);
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        let xv = g.constant(x.clone());
        let z = model.encoder_forward(&mut g, &bound, xv).unwrap();
        let z = g.permute(z, &[0, 2, 1]).unwrap();
        let z = g.reshape(z, &[16, 4]).unwrap();
        let z_val = g.value(z).clone();
        let tokens = model.nearest_codewords(&z_val);
        let zq = g.embedding(bound.var("codebook"), &tokens).unwrap();
        let zq_val = g.value(zq).clone();
        let st = g.passthrough(z, zq_val).unwrap();
        let st2 = g.reshape(st, &[1, 16, 4]).unwrap();
        let st3 = g.permute(st2, &[0, 2, 1]).unwrap();
        let xhat = model.decoder_forward(&mut g, &bound, st3).unwrap();
        let xc = g.constant(x);
        let recon = g.mse(xhat, xc).unwrap();
        let grads = g.backward(recon).unwrap();
        let g_z = grads.get(z).unwrap();
        let g_st = grads.get(st).unwrap();
        assert_eq!(g_z.data(), g_st.data());
    }

    #[test]
    fn training_runs_and_is_seed_deterministic() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let (m1, log1) = train_vqvae(&ds, &cfg).unwrap();
        let (m2, log2) = train_vqvae(&ds, &cfg).unwrap();
        assert_eq!(log1.len(), 2);
        assert_eq!(
            log1.last().unwrap().loss.total,
            log2.last().unwrap().loss.total
        );
        assert_eq!(
            m1.params.get("codebook").data(),
            m2.params.get("codebook").data()
        );
        // loss should drop from the first epoch to the last
        assert!(log1.last().unwrap().loss.total < log1[0].loss.total);
    }

    #[test]
    fn encode_dataset_shapes() {
        let model = VqvaeModel::init(tiny_config()).unwrap();
        let ds = tiny_dataset();
        let seqs = encode_dataset(&model, &ds, 5).unwrap();
        assert_eq!(seqs.len(), ds.signals.len());
        assert!(seqs.iter().all(|s| s.len() == 16));
    }
}
