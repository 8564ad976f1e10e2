//! Subcommand implementations.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use dscn_core::arprior::{train_arprior, ArModel};
use dscn_core::channel::ErasureSpec;
use dscn_core::error::Error;
use dscn_core::evalpipe::plot::{line_chart, Series};
use dscn_core::evalpipe::{
    estimate_semantic_channel, run_sweep, train_classifier, transmit_one, Classifier,
    MetricsRecord, Recovery, RecoveryModels, SweepConfig,
};
use dscn_core::nn::gradsuite;
use dscn_core::seddprior::{train_sedd, SeddModel};
use dscn_core::siggen::{
    build_dataset, desk_schemes, export_csv, full_schemes, load_dataset, save_dataset, Dataset,
    Split,
};
use dscn_core::vqvae::{encode_dataset, train_vqvae, VqvaeModel};
use dscn_core::Result;

use crate::config::RunConfig;

pub const VERSION_STRING: &str = concat!("dscn ", env!("CARGO_PKG_VERSION"));

/// Artifact sidecar carrying provenance; deterministic content so reruns
/// stay byte-identical.
fn write_sidecar(artifact: &Path, cfg: &RunConfig) -> Result<()> {
    let meta = artifact.with_extension(format!(
        "{}.meta",
        artifact.extension().and_then(|e| e.to_str()).unwrap_or("bin")
    ));
    let mut f = std::fs::File::create(meta)?;
    writeln!(f, "config_hash = {:016x}", cfg.config_hash())?;
    writeln!(f, "seed = {}", cfg.seed)?;
    writeln!(f, "version = \"{VERSION_STRING}\"")?;
    Ok(())
}

fn data_path(out: &Path, split: Split) -> PathBuf {
    match split {
        Split::Train => out.join("data_train.bin"),
        Split::Val => out.join("data_val.bin"),
        Split::Test => out.join("data_eval.bin"),
    }
}

fn load_split(out: &Path, cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let path = data_path(out, split);
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "{} missing; run `dscn gen-data` first",
            path.display()
        )));
    }
    let mut ds = load_dataset(&path)?;
    ds.class_names = cfg.dataset.classes.clone();
    ds.split = split;
    ds.seed = cfg.seed;
    Ok(ds)
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Dependency(format!(
            "{} missing; run `dscn {hint}` first",
            path.display()
        )))
    }
}

pub fn gen_data(cfg: &RunConfig, out: &Path, classes: Option<usize>, csv: bool) -> Result<()> {
    let mut cfg = cfg.clone();
    match classes {
        Some(3) => {
            cfg.dataset.classes = desk_schemes().iter().map(|s| s.name().to_string()).collect()
        }
        Some(6) => {
            cfg.dataset.classes = full_schemes().iter().map(|s| s.name().to_string()).collect()
        }
        Some(other) => {
            return Err(Error::Config(format!(
                "--classes accepts 3 (desk subset) or 6 (full set), got {other}"
            )))
        }
        None => {}
    }
    let schemes = cfg.dataset.schemes()?;
    let wf = cfg.dataset.waveform();
    for (split, n) in [
        (Split::Train, cfg.dataset.n_train_per_class),
        (Split::Val, cfg.dataset.n_val_per_class),
        (Split::Test, cfg.dataset.n_eval_per_class),
    ] {
        let ds = build_dataset(&schemes, n, cfg.dataset.p, split, cfg.seed, &wf)?;
        let path = data_path(out, split);
        save_dataset(&ds, &path)?;
        write_sidecar(&path, &cfg)?;
        if csv {
            export_csv(&ds, &path.with_extension("csv"))?;
        }
        println!(
            "wrote {} ({} signals, {} classes, p = {})",
            path.display(),
            ds.signals.len(),
            ds.n_classes(),
            ds.p()
        );
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStage {
    Vqvae,
    Dot,
    Sedd,
    Clf,
}

pub fn train(cfg: &RunConfig, out: &Path, stage: TrainStage) -> Result<()> {
    let train_ds = load_split(out, cfg, Split::Train)?;
    match stage {
        TrainStage::Vqvae => {
            let (model, log) = train_vqvae(&train_ds, &cfg.vqvae_config())?;
            let path = out.join("vqvae.ckpt");
            model.save(&path)?;
            write_sidecar(&path, cfg)?;
            let mut f = std::fs::File::create(out.join("vqvae_train_log.csv"))?;
            writeln!(f, "epoch,total,recon,quant,commit,kl,perplexity,revived")?;
            for s in &log {
                writeln!(
                    f,
                    "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{}",
                    s.epoch,
                    s.loss.total,
                    s.loss.recon,
                    s.loss.quant,
                    s.loss.commit,
                    s.loss.kl,
                    s.perplexity,
                    s.revived
                )?;
            }
            let last = log.last().unwrap();
            println!(
                "vqvae: {} epochs, final loss {:.4} (recon {:.4}), perplexity {:.1}",
                log.len(),
                last.loss.total,
                last.loss.recon,
                last.perplexity
            );
        }
        TrainStage::Dot | TrainStage::Sedd => {
            let vq_path = out.join("vqvae.ckpt");
            require(&vq_path, "train-vqvae")?;
            let vqvae = VqvaeModel::load(&vq_path, cfg.vqvae_config())?;
            let seqs = encode_dataset(&vqvae, &train_ds, 32)?;
            let labels: Vec<u16> = train_ds.signals.iter().map(|s| s.label).collect();
            if stage == TrainStage::Dot {
                let (model, log) = train_arprior(&seqs, &labels, &cfg.ar_config())?;
                let path = out.join("dot.ckpt");
                model.save(&path)?;
                write_sidecar(&path, cfg)?;
                let mut f = std::fs::File::create(out.join("dot_train_log.csv"))?;
                writeln!(f, "epoch,loss")?;
                for s in &log {
                    writeln!(f, "{},{:.6}", s.epoch, s.loss)?;
                }
                println!(
                    "dot: trained on {} sequences of d_s = {}, final loss {:.4}",
                    seqs.len(),
                    vqvae.config.latent_len,
                    log.last().unwrap().loss
                );
            } else {
                let (model, log) = train_sedd(&seqs, &labels, &cfg.sedd_config()?)?;
                let path = out.join("sedd.ckpt");
                model.save(&path)?;
                write_sidecar(&path, cfg)?;
                let mut f = std::fs::File::create(out.join("sedd_train_log.csv"))?;
                writeln!(f, "epoch,loss")?;
                for s in &log {
                    writeln!(f, "{},{:.6}", s.epoch, s.loss)?;
                }
                println!(
                    "sedd: trained on {} sequences of d_s = {}, final loss {:.4}",
                    seqs.len(),
                    vqvae.config.latent_len,
                    log.last().unwrap().loss
                );
            }
        }
        TrainStage::Clf => {
            let val_ds = load_split(out, cfg, Split::Val)?;
            let (model, log) = train_classifier(&train_ds, &val_ds, &cfg.classifier_config())?;
            let path = out.join("clf.ckpt");
            model.save(&path)?;
            write_sidecar(&path, cfg)?;
            let mut f = std::fs::File::create(out.join("clf_train_log.csv"))?;
            writeln!(f, "epoch,loss,val_accuracy")?;
            for s in &log {
                writeln!(f, "{},{:.6},{:.6}", s.epoch, s.loss, s.val_accuracy)?;
            }
            println!(
                "classifier: frozen at val accuracy {:.4}",
                model.frozen_val_accuracy
            );
        }
    }
    Ok(())
}

struct LoadedModels {
    vqvae: VqvaeModel,
    dot: ArModel,
    sedd: SeddModel,
    clf: Classifier,
}

fn load_all_models(cfg: &RunConfig, out: &Path) -> Result<LoadedModels> {
    for (file, hint) in [
        ("vqvae.ckpt", "train-vqvae"),
        ("dot.ckpt", "train-dot"),
        ("sedd.ckpt", "train-sedd"),
        ("clf.ckpt", "train-clf"),
    ] {
        require(&out.join(file), hint)?;
    }
    Ok(LoadedModels {
        vqvae: VqvaeModel::load(&out.join("vqvae.ckpt"), cfg.vqvae_config())?,
        dot: ArModel::load(&out.join("dot.ckpt"), cfg.ar_config())?,
        sedd: SeddModel::load(&out.join("sedd.ckpt"), cfg.sedd_config()?)?,
        clf: Classifier::load(&out.join("clf.ckpt"), cfg.classifier_config())?,
    })
}

fn truncation_specs(cfg: &RunConfig) -> Vec<ErasureSpec> {
    let d_s = cfg.vqvae.latent_len as f64;
    let mut specs: Vec<ErasureSpec> = cfg
        .sweep
        .truncation_exponents
        .iter()
        .map(|&x| ErasureSpec::Truncate {
            epsilon: 1.0 - (1u64 << x) as f64 / d_s,
        })
        .collect();
    specs.sort_by(|a, b| a.epsilon().partial_cmp(&b.epsilon()).unwrap());
    specs
}

fn puncture_specs(cfg: &RunConfig) -> Vec<ErasureSpec> {
    cfg.sweep
        .burst_lengths
        .iter()
        .map(|&i| ErasureSpec::PunctureBurst { i })
        .collect()
}

fn print_summary(records: &[MetricsRecord]) {
    println!(
        "{:<18} {:>8} {:>8} {:>9} {:>9} {:>9} {:>7}",
        "channel", "epsilon", "recovery", "accuracy", "fidelity", "diversity", "top_f1"
    );
    for r in records {
        println!(
            "{:<18} {:>8.4} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>7.4}",
            r.channel_kind, r.epsilon, r.recovery, r.accuracy, r.fidelity, r.diversity, r.top_f1
        );
    }
}

fn write_manifest(path: &Path, cfg: &RunConfig, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "config_hash = {:016x}", cfg.config_hash())?;
    writeln!(f, "seed = {}", cfg.seed)?;
    writeln!(f, "version = \"{VERSION_STRING}\"")?;
    writeln!(f, "n_eval = {}", cfg.sweep.n_eval)?;
    for (i, r) in records.iter().enumerate() {
        writeln!(f, "\n[[point]]")?;
        writeln!(f, "index = {i}")?;
        writeln!(f, "channel_kind = \"{}\"", r.channel_kind)?;
        writeln!(f, "epsilon = {:.6}", r.epsilon)?;
        writeln!(f, "recovery = \"{}\"", r.recovery)?;
        writeln!(f, "pattern_hex = \"{}\"", r.pattern_hex)?;
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, out: &Path, epsilon_filter: Option<f64>) -> Result<()> {
    let models = load_all_models(cfg, out)?;
    let eval_ds = load_split(out, cfg, Split::Test)?;
    let n = cfg.sweep.n_eval.min(eval_ds.signals.len());
    let slice = &eval_ds.signals[..n];
    let recovery = RecoveryModels {
        dot: Some(&models.dot),
        sedd: Some(&models.sedd),
        classifier: &models.clf,
        sedd_steps: cfg.sedd.n_steps,
    };
    let filter = |specs: Vec<ErasureSpec>| -> Vec<ErasureSpec> {
        match epsilon_filter {
            Some(eps) => specs
                .into_iter()
                .filter(|s| (s.epsilon() - eps).abs() < 1e-9)
                .collect(),
            None => specs,
        }
    };
    let trunc = filter(truncation_specs(cfg));
    let punct = filter(puncture_specs(cfg));
    if trunc.is_empty() && punct.is_empty() {
        return Err(Error::Config(
            "epsilon filter removed every sweep point".into(),
        ));
    }
    let sweep_cfg = SweepConfig {
        config_id: format!("{:016x}", cfg.config_hash()),
        batch_size: cfg.sweep.batch_size,
        knn_k: 3,
    };
    let mut all = Vec::new();
    if !trunc.is_empty() {
        let recs = run_sweep(slice, &models.vqvae, &recovery, &trunc, cfg.seed, &sweep_cfg)?;
        let csv = out.join("sweep_truncation.csv");
        dscn_core::evalpipe::write_metrics_csv(&recs, &csv)?;
        let xs: Vec<f64> = recs
            .iter()
            .map(|r| {
                let t_e = (1.0 - r.epsilon) * cfg.vqvae.latent_len as f64;
                t_e.log2()
            })
            .collect();
        line_chart(
            &out.join("sweep_truncation.svg"),
            "truncation recovery (autoregressive completion)",
            "log2(received tokens)",
            "metric",
            &xs,
            &[
                Series {
                    name: "accuracy",
                    ys: recs.iter().map(|r| r.accuracy).collect(),
                },
                Series {
                    name: "fidelity",
                    ys: recs.iter().map(|r| r.fidelity).collect(),
                },
                Series {
                    name: "diversity",
                    ys: recs.iter().map(|r| r.diversity).collect(),
                },
                Series {
                    name: "top-F1",
                    ys: recs.iter().map(|r| r.top_f1).collect(),
                },
            ],
        )?;
        println!("wrote {}", csv.display());
        all.extend(recs);
    }
    if !punct.is_empty() {
        let recs = run_sweep(slice, &models.vqvae, &recovery, &punct, cfg.seed, &sweep_cfg)?;
        let csv = out.join("sweep_puncture.csv");
        dscn_core::evalpipe::write_metrics_csv(&recs, &csv)?;
        let xs: Vec<f64> = recs.iter().map(|r| r.epsilon).collect();
        line_chart(
            &out.join("sweep_puncture.svg"),
            "puncture recovery (diffusion inpainting)",
            "erasure rate",
            "metric",
            &xs,
            &[
                Series {
                    name: "accuracy",
                    ys: recs.iter().map(|r| r.accuracy).collect(),
                },
                Series {
                    name: "fidelity",
                    ys: recs.iter().map(|r| r.fidelity).collect(),
                },
                Series {
                    name: "diversity",
                    ys: recs.iter().map(|r| r.diversity).collect(),
                },
                Series {
                    name: "top-F1",
                    ys: recs.iter().map(|r| r.top_f1).collect(),
                },
            ],
        )?;
        println!("wrote {}", csv.display());
        all.extend(recs);
    }
    write_manifest(&out.join("sweep_manifest.toml"), cfg, &all)?;
    print_summary(&all);
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    out: &Path,
    epsilon: Option<f64>,
    burst: Option<usize>,
    n: usize,
) -> Result<()> {
    let eval_ds = load_split(out, cfg, Split::Test)?;
    let spec = match (epsilon, burst) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("--epsilon and --burst are exclusive".into()))
        }
        (Some(eps), None) => ErasureSpec::Truncate { epsilon: eps },
        (None, Some(i)) => ErasureSpec::PunctureBurst { i },
        (None, None) => ErasureSpec::Truncate { epsilon: 0.0 },
    };
    let recovery = if spec.epsilon() == 0.0 {
        Recovery::None
    } else {
        Recovery::for_spec(&spec)
    };
    // Load only what this channel/recovery pairing needs.
    require(&out.join("vqvae.ckpt"), "train-vqvae")?;
    require(&out.join("clf.ckpt"), "train-clf")?;
    let vqvae = VqvaeModel::load(&out.join("vqvae.ckpt"), cfg.vqvae_config())?;
    let clf = Classifier::load(&out.join("clf.ckpt"), cfg.classifier_config())?;
    let dot = if recovery == Recovery::Dot {
        require(&out.join("dot.ckpt"), "train-dot")?;
        Some(ArModel::load(&out.join("dot.ckpt"), cfg.ar_config())?)
    } else {
        None
    };
    let sedd = if recovery == Recovery::Sedd {
        require(&out.join("sedd.ckpt"), "train-sedd")?;
        Some(SeddModel::load(&out.join("sedd.ckpt"), cfg.sedd_config()?)?)
    } else {
        None
    };
    let rm = RecoveryModels {
        dot: dot.as_ref(),
        sedd: sedd.as_ref(),
        classifier: &clf,
        sedd_steps: cfg.sedd.n_steps,
    };
    let n = n.min(eval_ds.signals.len());
    let mut pairs = Vec::with_capacity(n);
    let csv_path = out.join("evaluate.csv");
    let mut f = std::fs::File::create(&csv_path)?;
    writeln!(f, "index,true_class,predicted_class,received_tokens")?;
    for (i, sig) in eval_ds.signals.iter().take(n).enumerate() {
        let tr = transmit_one(
            sig,
            &vqvae,
            &spec,
            recovery,
            &rm,
            dscn_core::rng::derive_seed(cfg.seed, "evaluate", &[i as u64]),
        )?;
        writeln!(
            f,
            "{i},{},{},{}",
            sig.label,
            tr.predicted,
            tr.erased.n_received()
        )?;
        pairs.push((sig.label, tr.predicted));
    }
    let matrix = estimate_semantic_channel(&pairs, cfg.n_classes())?;
    println!(
        "channel {} ({}), recovery {}, {} transmissions",
        spec.kind_name(),
        spec.param_label(),
        recovery.name(),
        n
    );
    println!("accuracy {:.4}", matrix.accuracy());
    println!("semantic channel matrix P(predicted | true):");
    print!("{:>10}", "");
    for name in &eval_ds.class_names {
        print!("{name:>10}");
    }
    println!();
    for (w, name) in eval_ds.class_names.iter().enumerate() {
        print!("{name:>10}");
        for j in 0..cfg.n_classes() {
            print!("{:>10.4}", matrix.prob(w, j));
        }
        println!();
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn grad_check() -> Result<()> {
    let mut failed = 0usize;
    for (name, report) in gradsuite::standard_battery()? {
        let status = if report.pass() { "PASS" } else { "FAIL" };
        println!(
            "{status} {name}: max rel err {:.3e} over {} coordinates (tol {:.0e})",
            report.max_rel_err, report.n_checked, report.tol
        );
        if !report.pass() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::invalid_input(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
