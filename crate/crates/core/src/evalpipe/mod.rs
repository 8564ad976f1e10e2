//! End-to-end semantic transmission runs and their evaluation.
//!
//! A frozen 1-D convolutional classifier is the meaning extractor: it is
//! trained on real signals only, then judges how much task-aligned meaning
//! survives encode → erase → recover → decode. The metric suite reports
//! classification accuracy, k-NN manifold fidelity/diversity in the frozen
//! classifier's feature space, their harmonic mean (top-F1), and the
//! empirical semantic-channel matrix.

pub mod metrics;
pub mod plot;

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arprior::{per_sequence_seeds, ArModel};
use crate::channel::{apply_pattern, ErasedSequence, ErasureSpec};
use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{kaiming_uniform, Bound, ParamStore};
use crate::nn::scalar::Real;
use crate::nn::tensor::Tensor;
use crate::nn::{ckpt, Adam, AdamConfig};
use crate::rng::stream_rng;
use crate::seddprior::SeddModel;
use crate::siggen::{batch_signals, Dataset, Signal};
use crate::tokens::TokenSequence;
use crate::vqvae::VqvaeModel;

pub use metrics::{estimate_semantic_channel, fidelity_diversity, SemanticChannelMatrix};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub n_classes: usize,
    pub p: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            n_classes: 3,
            p: 1024,
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Feature dimension of the penultimate (pooled) layer.
pub const CLASSIFIER_FEATURES: usize = 128;

/// Frozen task classifier; `(B, 2, p)` in, class logits out.
pub struct Classifier {
    pub params: ParamStore<Real>,
    pub config: ClassifierConfig,
    /// Real-data validation accuracy recorded when the model was frozen.
    pub frozen_val_accuracy: f64,
}

const CONV_PLAN: [(usize, usize, usize); 4] = [
    // (out channels, kernel, pad), every stage stride 2
    (32, 7, 3),
    (64, 5, 2),
    (96, 5, 2),
    (CLASSIFIER_FEATURES, 3, 1),
];

impl Classifier {
    pub fn init(config: ClassifierConfig) -> Result<Self> {
        if config.p % 16 != 0 {
            return Err(Error::Config(format!(
                "input length {} must be divisible by 16 (four stride-2 stages)",
                config.p
            )));
        }
        let mut rng = stream_rng(config.seed, "clf-init", &[]);
        let mut params = ParamStore::new();
        let mut c_in = 2usize;
        for (i, (c_out, k, _)) in CONV_PLAN.iter().enumerate() {
            params.add(
                format!("conv{i}.w"),
                kaiming_uniform(&[*c_out, c_in, *k], c_in * k, &mut rng),
            );
            params.add(format!("conv{i}.b"), Tensor::zeros(&[*c_out]));
            c_in = *c_out;
        }
        params.add(
            "head.w",
            kaiming_uniform(
                &[config.n_classes, CLASSIFIER_FEATURES],
                CLASSIFIER_FEATURES,
                &mut rng,
            ),
        );
        params.add("head.b", Tensor::zeros(&[config.n_classes]));
        Ok(Classifier {
            params,
            config,
            frozen_val_accuracy: 0.0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut with_meta = self.params.clone();
        with_meta.add(
            "meta.val_accuracy",
            Tensor::scalar_value(self.frozen_val_accuracy as Real),
        );
        ckpt::save(&with_meta, path)
    }

    pub fn load(path: &Path, config: ClassifierConfig) -> Result<Self> {
        let loaded = ckpt::load(path)?;
        let fresh = Classifier::init(config.clone())?;
        let mut params = ParamStore::new();
        for name in fresh.params.names() {
            let got = loaded
                .try_get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing parameter {name}")))?;
            if got.shape() != fresh.params.get(name).shape() {
                return Err(Error::Format(format!(
                    "checkpoint parameter {name}: shape {:?} vs configured {:?}",
                    got.shape(),
                    fresh.params.get(name).shape()
                )));
            }
            params.add(name.to_string(), got.clone());
        }
        let frozen_val_accuracy = loaded
            .try_get("meta.val_accuracy")
            .map_or(0.0, |t| t.item() as f64);
        Ok(Classifier {
            params,
            config,
            frozen_val_accuracy,
        })
    }

    /// Forward pass: returns `(logits (B, c), features (B, F))` vars.
    pub fn forward_on_graph(
        &self,
        g: &mut Graph<Real>,
        bound: &Bound,
        x: Var,
    ) -> Result<(Var, Var)> {
        let mut h = x;
        for (i, (_, _, pad)) in CONV_PLAN.iter().enumerate() {
            let w = bound.var(&format!("conv{i}.w"));
            let b = bound.var(&format!("conv{i}.b"));
            h = g.conv1d(h, w, Some(b), 2, *pad)?;
            h = g.relu(h);
        }
        let feats = g.mean_lastdim(h)?; // (B, F)
        let logits = g.linear(feats, bound.var("head.w"), Some(bound.var("head.b")))?;
        Ok((logits, feats))
    }

    fn check_input(&self, x: &Tensor<Real>) -> Result<()> {
        match x.shape() {
            [_, 2, p] if *p == self.config.p => Ok(()),
            other => Err(Error::shape(format!(
                "classifier expects (B, 2, {}), got {:?}",
                self.config.p, other
            ))),
        }
    }

    /// Predictions and penultimate features for a batch.
    pub fn classify_batch(&self, x: &Tensor<Real>) -> Result<(Vec<u16>, Tensor<Real>)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let mut map = std::collections::BTreeMap::new();
        let mut vars = Vec::new();
        for name in self.params.names() {
            let v = g.constant(self.params.get(name).clone());
            map.insert(name.to_string(), v);
            vars.push(v);
        }
        let bound = Bound::from_map(vars, map);
        let xv = g.constant(x.clone());
        let (logits, feats) = self.forward_on_graph(&mut g, &bound, xv)?;
        let lv = g.value(logits);
        let c = self.config.n_classes;
        let preds = (0..x.shape()[0])
            .map(|b| {
                let row = &lv.data()[b * c..(b + 1) * c];
                let mut best = 0usize;
                for j in 1..c {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best as u16
            })
            .collect();
        Ok((preds, g.value(feats).clone()))
    }

    /// Fraction of correctly classified signals.
    pub fn accuracy(&self, ds: &Dataset, batch: usize) -> Result<f64> {
        let mut hits = 0usize;
        for chunk in ds.signals.chunks(batch.max(1)) {
            let x = batch_signals(chunk.iter());
            let (preds, _) = self.classify_batch(&x)?;
            hits += preds
                .iter()
                .zip(chunk)
                .filter(|(p, s)| **p == s.label)
                .count();
        }
        Ok(hits as f64 / ds.signals.len() as f64)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierEpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

/// Train on `train`, track accuracy on `val`, freeze, and record the final
/// validation accuracy in the returned model.
pub fn train_classifier(
    train: &Dataset,
    val: &Dataset,
    config: &ClassifierConfig,
) -> Result<(Classifier, Vec<ClassifierEpochStats>)> {
    if train.signals.is_empty() || val.signals.is_empty() {
        return Err(Error::invalid_input("empty train or val split"));
    }
    let mut model = Classifier::init(config.clone())?;
    let mut opt = Adam::new(
        &model.params,
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
    );
    let n = train.signals.len();
    let bs = config.batch_size.min(n);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom as _;
        let mut rng = stream_rng(config.seed, "clf-shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(bs) {
            let x = batch_signals(chunk.iter().map(|&i| &train.signals[i]));
            let targets: Vec<u32> = chunk
                .iter()
                .map(|&i| u32::from(train.signals[i].label))
                .collect();
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let xv = g.constant(x);
            let (logits, _) = model.forward_on_graph(&mut g, &bound, xv)?;
            let loss = g.cross_entropy(logits, &targets, None, None)?;
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
        }
        let val_accuracy = model.accuracy(val, 64)?;
        log.push(ClassifierEpochStats {
            epoch,
            loss: total / batches.max(1) as f64,
            val_accuracy,
        });
    }
    model.frozen_val_accuracy = log.last().map_or(0.0, |s| s.val_accuracy);
    Ok((model, log))
}

/// Recovery strategy at the receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recovery {
    /// No generative recovery; only valid when nothing was erased.
    None,
    /// Autoregressive completion; requires a prefix (truncation) pattern.
    Dot,
    /// Masked-diffusion inpainting; accepts any pattern.
    Sedd,
}

impl Recovery {
    pub fn name(&self) -> &'static str {
        match self {
            Recovery::None => "none",
            Recovery::Dot => "dot",
            Recovery::Sedd => "sedd",
        }
    }

    /// The recovery family matched to a channel's erasure pattern.
    pub fn for_spec(spec: &ErasureSpec) -> Recovery {
        if spec.is_prefix_pattern() {
            Recovery::Dot
        } else {
            Recovery::Sedd
        }
    }
}

/// Trained models needed at the receiver side.
pub struct RecoveryModels<'a> {
    pub dot: Option<&'a ArModel>,
    pub sedd: Option<&'a SeddModel>,
    pub classifier: &'a Classifier,
    /// Reverse-step count for diffusion inpainting.
    pub sedd_steps: usize,
}

/// Everything observable from one transmission, for audit.
#[derive(Clone, Debug)]
pub struct Transmission {
    /// Tokens at the transmitter.
    pub sent: TokenSequence,
    /// What the channel delivered.
    pub erased: ErasedSequence,
    /// Tokens after recovery.
    pub recovered: TokenSequence,
    /// Decoded signal `(2, p)`.
    pub reconstructed: Tensor<Real>,
    /// Classifier verdict on the decoded signal.
    pub predicted: u16,
}

fn recover_sequences(
    erased: &[ErasedSequence],
    class_ids: &[u16],
    recovery: Recovery,
    models: &RecoveryModels,
    seeds: &[u64],
) -> Result<Vec<TokenSequence>> {
    match recovery {
        Recovery::None => {
            let mut out = Vec::with_capacity(erased.len());
            for e in erased {
                if e.n_erased() != 0 {
                    return Err(Error::PatternMismatch(
                        "recovery=none requires a zero-erasure channel".into(),
                    ));
                }
                out.push(TokenSequence::new(e.tokens().to_vec(), e.vocab())?);
            }
            Ok(out)
        }
        Recovery::Dot => {
            let model = models
                .dot
                .ok_or_else(|| Error::Dependency("no autoregressive model supplied".into()))?;
            let mut out = Vec::with_capacity(erased.len());
            // All sweeps share one prefix length; fall back to per-item calls
            // if a mixed batch ever shows up.
            for (i, e) in erased.iter().enumerate() {
                if !e.is_prefix() {
                    return Err(Error::PatternMismatch(
                        "autoregressive completion requires a truncation (prefix) pattern; \
                         puncture patterns pair with diffusion inpainting"
                            .into(),
                    ));
                }
                let t_e = e.n_received();
                let prefix = &e.tokens()[..t_e];
                out.push(model.complete_truncated(prefix, class_ids[i], seeds[i])?);
            }
            Ok(out)
        }
        Recovery::Sedd => {
            let model = models
                .sedd
                .ok_or_else(|| Error::Dependency("no diffusion model supplied".into()))?;
            let refs: Vec<&ErasedSequence> = erased.iter().collect();
            model.inpaint_punctured_batch(&refs, class_ids, models.sedd_steps, seeds)
        }
    }
}

/// Run one signal end to end: encode, erase, recover, decode, classify.
pub fn transmit_one(
    x: &Signal,
    vqvae: &VqvaeModel,
    spec: &ErasureSpec,
    recovery: Recovery,
    models: &RecoveryModels,
    seed: u64,
) -> Result<Transmission> {
    let sent = vqvae.encode(x)?;
    let erased = apply_pattern(&sent, &spec.pattern(sent.len())?)?;
    let recovered = recover_sequences(
        std::slice::from_ref(&erased),
        &[x.label],
        recovery,
        models,
        &[seed],
    )?
    .pop()
    .unwrap();
    let reconstructed = vqvae.decode(&recovered)?;
    let as_batch = reconstructed.reshaped(&[1, 2, vqvae.config.p])?;
    let (preds, _) = models.classifier.classify_batch(&as_batch)?;
    Ok(Transmission {
        sent,
        erased,
        recovered,
        reconstructed,
        predicted: preds[0],
    })
}

/// One sweep-point result row.
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    pub config_id: String,
    pub channel_kind: String,
    pub epsilon: f64,
    pub pattern_hex: String,
    pub recovery: String,
    pub accuracy: f64,
    pub fidelity: f64,
    pub diversity: f64,
    pub top_f1: f64,
    pub n_samples: usize,
}

/// Sweep-wide knobs.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub config_id: String,
    pub batch_size: usize,
    /// k for the k-NN manifold metrics.
    pub knn_k: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            config_id: "run".into(),
            batch_size: 32,
            knn_k: 3,
        }
    }
}

/// Evaluate every erasure spec on the same dataset slice.
///
/// Recovery is matched to the pattern family (truncation -> autoregressive,
/// puncturing -> diffusion). Per-transmission RNG streams derive from
/// `(seed, spec index, item index)`, so results are independent of batch
/// layout and byte-reproducible.
pub fn run_sweep(
    signals: &[Signal],
    vqvae: &VqvaeModel,
    models: &RecoveryModels,
    sweep: &[ErasureSpec],
    seed: u64,
    cfg: &SweepConfig,
) -> Result<Vec<MetricsRecord>> {
    if sweep.is_empty() {
        return Err(Error::invalid_input("empty sweep"));
    }
    if signals.is_empty() {
        return Err(Error::invalid_input("empty evaluation slice"));
    }
    let d_s = vqvae.config.latent_len;
    let bs = cfg.batch_size.max(1);

    // Tokenize and fingerprint the real signals once.
    let mut sent: Vec<TokenSequence> = Vec::with_capacity(signals.len());
    let mut real_feats: Vec<Tensor<Real>> = Vec::new();
    for chunk in signals.chunks(bs) {
        let x = batch_signals(chunk.iter());
        let (tokens, _) = vqvae.encode_batch(&x)?;
        for b in 0..chunk.len() {
            sent.push(TokenSequence::new(
                tokens[b * d_s..(b + 1) * d_s].to_vec(),
                vqvae.config.n_codewords as u32,
            )?);
        }
        let (_, feats) = models.classifier.classify_batch(&x)?;
        real_feats.push(feats);
    }
    let real = concat_rows(&real_feats);

    let mut records = Vec::with_capacity(sweep.len());
    for (si, spec) in sweep.iter().enumerate() {
        let recovery = Recovery::for_spec(spec);
        let pattern = spec.pattern(d_s)?;
        let seeds = per_sequence_seeds(seed, "sweep", signals.len(), (si as u64) << 32);
        let mut hits = 0usize;
        let mut gen_feats: Vec<Tensor<Real>> = Vec::new();
        let mut pairs: Vec<(u16, u16)> = Vec::with_capacity(signals.len());
        for (ci, chunk) in signals.chunks(bs).enumerate() {
            let base = ci * bs;
            let erased: Vec<ErasedSequence> = (0..chunk.len())
                .map(|b| apply_pattern(&sent[base + b], &pattern))
                .collect::<Result<_>>()?;
            let classes: Vec<u16> = chunk.iter().map(|s| s.label).collect();
            let recovered = recover_sequences(
                &erased,
                &classes,
                recovery,
                models,
                &seeds[base..base + chunk.len()],
            )?;
            let flat: Vec<u32> = recovered.iter().flat_map(|z| z.tokens().iter().copied()).collect();
            let decoded = vqvae.decode_batch(&flat, chunk.len())?;
            let (preds, feats) = models.classifier.classify_batch(&decoded)?;
            for (b, s) in chunk.iter().enumerate() {
                if preds[b] == s.label {
                    hits += 1;
                }
                pairs.push((s.label, preds[b]));
            }
            gen_feats.push(feats);
        }
        let generated = concat_rows(&gen_feats);
        let (fidelity, diversity, top_f1) =
            fidelity_diversity(&real, &generated, cfg.knn_k)?;
        records.push(MetricsRecord {
            config_id: cfg.config_id.clone(),
            channel_kind: spec.kind_name().to_string(),
            epsilon: spec.epsilon(),
            pattern_hex: crate::channel::pattern_to_hex(&pattern),
            recovery: recovery.name().to_string(),
            accuracy: hits as f64 / signals.len() as f64,
            fidelity,
            diversity,
            top_f1,
            n_samples: signals.len(),
        });
    }
    Ok(records)
}

fn concat_rows(parts: &[Tensor<Real>]) -> Tensor<Real> {
    let cols = parts[0].shape()[1];
    let rows: usize = parts.iter().map(|t| t.shape()[0]).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for t in parts {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![rows, cols], data)
}

/// CSV emission, stable formatting for byte-identical reruns.
pub fn write_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "config_id,channel_kind,epsilon,pattern_hex,recovery,accuracy,fidelity,diversity,top_f1,n"
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.config_id,
            r.channel_kind,
            r.epsilon,
            r.pattern_hex,
            r.recovery,
            r.accuracy,
            r.fidelity,
            r.diversity,
            r.top_f1,
            r.n_samples
        )?;
    }
    w.flush()?;
    Ok(())
}
