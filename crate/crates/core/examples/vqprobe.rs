use dscn_core::nn::graph::Graph;
use dscn_core::nn::{Adam, AdamConfig};
use dscn_core::siggen::{batch_signals, build_dataset, desk_schemes, Split, WaveformConfig};
use dscn_core::vqvae::{QuantizeMode, VqvaeConfig, VqvaeModel};

fn std_of(v: &[f32]) -> f32 {
    let m: f32 = v.iter().sum::<f32>() / v.len() as f32;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f32>() / v.len() as f32).sqrt()
}

fn main() {
    let ds = build_dataset(&desk_schemes(), 64, 1024, Split::Train, 1, &WaveformConfig::default()).unwrap();
    let cfg = VqvaeConfig { stochastic_tau: 0.0, lr: 2e-3, ..Default::default() };
    let mut model = VqvaeModel::init(cfg.clone()).unwrap();
    let mut opt = Adam::new(&model.params, AdamConfig { lr: cfg.lr, ..Default::default() });
    for step in 0..400u64 {
        let start = (step as usize * 16) % 176;
        let x = batch_signals(ds.signals.iter().skip(start).take(16));
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        let (loss, tokens, comps) = model
            .loss_on_graph(&mut g, &bound, &x, QuantizeMode::Deterministic, step)
            .unwrap();
        let grads = g.backward(loss).unwrap();
        opt.step(&mut model.params, &grads, &bound);
        if step % 50 == 0 {
            let (_, slices) = model.encode_batch(&x).unwrap();
            let cb = model.params.get("codebook");
            let uniq: std::collections::BTreeSet<u32> = tokens.iter().copied().collect();
            println!(
                "step {step}: recon {:.4} quant {:.5} commit {:.5} | z_e std {:.4} cb std {:.4} uniq {}",
                comps.recon, comps.quant, comps.commit,
                std_of(slices.data()), std_of(cb.data()), uniq.len()
            );
        }
    }
}
