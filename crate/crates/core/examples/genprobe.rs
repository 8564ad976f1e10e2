use dscn_core::arprior::{per_sequence_seeds, ArConfig, ArModel};
use dscn_core::evalpipe::{Classifier, ClassifierConfig};
use dscn_core::tokens::TokenSequence;
use dscn_core::vqvae::{VqvaeConfig, VqvaeModel};
use std::path::Path;

fn main() {
    let out = Path::new("/tmp/desk/out");
    let vq = VqvaeModel::load(&out.join("vqvae.ckpt"), VqvaeConfig { stochastic_tau: 1.0, ..Default::default() }).unwrap();
    let clf = Classifier::load(&out.join("clf.ckpt"), ClassifierConfig::default()).unwrap();
    let dot = ArModel::load(&out.join("dot.ckpt"), ArConfig { epochs: 14, batch_size: 32, ..Default::default() }).unwrap();
    let n = 96;
    let classes: Vec<u16> = (0..n).map(|i| (i % 3) as u16).collect();
    let seeds = per_sequence_seeds(7, "probe", n, 0);
    let mut hits = 0;
    // also measure truncation completion at eps=0.875 (t_e=16)
    for (cs, ss) in classes.chunks(32).zip(seeds.chunks(32)) {
        let prefixes: Vec<&[u32]> = vec![&[]; cs.len()];
        let seqs = dot.generate_batch(cs, &prefixes, 128, 1.0, 0, ss).unwrap();
        let flat: Vec<u32> = seqs.iter().flatten().copied().collect();
        let dec = vq.decode_batch(&flat, cs.len()).unwrap();
        let (preds, _) = clf.classify_batch(&dec).unwrap();
        hits += preds.iter().zip(cs).filter(|(p, c)| **p == **c).count();
    }
    println!("dot zero-context accuracy: {:.4}", hits as f64 / n as f64);
    let _ = TokenSequence::new(vec![0], 64);
}
