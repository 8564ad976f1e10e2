//! End-to-end CLI tests on a micro configuration (seconds, not minutes).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dscn")
}

fn micro_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        r#"seed = 11

[dataset]
classes = ["ASK4", "PSK16", "FSK2"]
n_train_per_class = 8
n_val_per_class = 4
n_eval_per_class = 6
p = 64

[vqvae]
n_codewords = 8
codeword_dim = 4
latent_len = 8
stochastic_tau = 0.0
epochs = 2
batch_size = 4

[dot]
n_layers = 1
n_heads = 2
width = 16
epochs = 2
batch_size = 4

[sedd]
n_layers = 1
n_heads = 2
width = 16
n_steps = 4
epochs = 2
batch_size = 4

[classifier]
epochs = 2
batch_size = 4

[sweep]
truncation_exponents = [1, 3]
burst_lengths = [1, 3]
n_eval = 12
batch_size = 6
"#,
    )
    .unwrap();
    path
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("DSCN_OUT")
        .output()
        .expect("spawn dscn")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dscn-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn usage_errors_exit_1() {
    let dir = tmpdir("usage");
    let out = run(&["definitely-not-a-command"], &dir);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["sweep", "--no-such-flag"], &dir);
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn help_exits_0() {
    let dir = tmpdir("help");
    let out = run(&["--help"], &dir);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen-data", "train-vqvae", "train-dot", "train-sedd", "train-clf", "sweep", "evaluate", "grad-check"] {
        assert!(text.contains(cmd), "--help should list {cmd}");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_errors_exit_2() {
    let dir = tmpdir("config");
    // missing --config
    let out = run(&["gen-data"], &dir);
    assert_eq!(out.status.code(), Some(2));
    // malformed key: error names it
    std::fs::write(dir.join("bad.toml"), "seed = 1\n[dataset]\nclases = [\"ASK4\"]\n").unwrap();
    let out = run(&["gen-data", "--config", "bad.toml"], &dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clases"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_prerequisites_exit_3() {
    let dir = tmpdir("deps");
    let cfg = micro_config(&dir);
    let cfgs = cfg.to_str().unwrap();
    // no dataset yet
    let out = run(&["train-vqvae", "--config", cfgs, "--out", "out"], &dir);
    assert_eq!(out.status.code(), Some(3));
    // dataset but no tokenizer
    assert!(run(&["gen-data", "--config", cfgs, "--out", "out"], &dir)
        .status
        .success());
    let out = run(&["train-sedd", "--config", cfgs, "--out", "out"], &dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-vqvae"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn full_micro_pipeline_and_reproducibility() {
    let dir = tmpdir("pipeline");
    let cfg = micro_config(&dir);
    let cfgs = cfg.to_str().unwrap();
    for cmd in ["gen-data", "train-vqvae", "train-clf", "train-dot", "train-sedd"] {
        let out = run(&[cmd, "--config", cfgs, "--out", "out"], &dir);
        assert!(
            out.status.success(),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    // identical config + seed retrain gives identical checkpoint bytes
    let first = std::fs::read(dir.join("out/vqvae.ckpt")).unwrap();
    assert!(run(&["train-vqvae", "--config", cfgs, "--out", "out"], &dir)
        .status
        .success());
    assert_eq!(first, std::fs::read(dir.join("out/vqvae.ckpt")).unwrap());

    // sweep emits CSVs, SVGs and a manifest; reruns are byte-identical
    let out = run(&["sweep", "--config", cfgs, "--out", "out"], &dir);
    assert!(
        out.status.success(),
        "sweep failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "sweep_truncation.csv",
        "sweep_puncture.csv",
        "sweep_truncation.svg",
        "sweep_puncture.svg",
        "sweep_manifest.toml",
    ] {
        assert!(dir.join("out").join(f).exists(), "missing {f}");
    }
    let trunc_rows = std::fs::read_to_string(dir.join("out/sweep_truncation.csv")).unwrap();
    assert_eq!(trunc_rows.lines().count(), 1 + 2, "header + one row per exponent");
    let csv1 = std::fs::read(dir.join("out/sweep_puncture.csv")).unwrap();
    assert!(run(&["sweep", "--config", cfgs, "--out", "out"], &dir)
        .status
        .success());
    assert_eq!(csv1, std::fs::read(dir.join("out/sweep_puncture.csv")).unwrap());

    // artifact sidecars carry provenance
    let meta = std::fs::read_to_string(dir.join("out/vqvae.ckpt.meta")).unwrap();
    assert!(meta.contains("config_hash"));
    assert!(meta.contains("seed = 11"));
    assert!(meta.contains("version"));

    // evaluate at zero erasure prints the semantic channel matrix
    let out = run(
        &["evaluate", "--config", cfgs, "--out", "out", "--n", "12"],
        &dir,
    );
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("semantic channel matrix"));
    assert!(dir.join("out/evaluate.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn init_config_roundtrips() {
    let dir = tmpdir("init");
    let out = run(&["init-config", "--path", "fresh.toml"], &dir);
    assert!(out.status.success());
    // generated template must itself be a valid config
    let out = run(&["gen-data", "--config", "fresh.toml", "--out", "out", "--classes", "3"], &dir);
    assert!(
        out.status.success(),
        "gen-data on template failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn env_var_sets_output_root() {
    let dir = tmpdir("env");
    let cfg = micro_config(&dir);
    let out = Command::new(bin())
        .args(["gen-data", "--config", cfg.to_str().unwrap()])
        .current_dir(&dir)
        .env("DSCN_OUT", "env_out")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("env_out/data_train.bin").exists());
    std::fs::remove_dir_all(&dir).ok();
}
