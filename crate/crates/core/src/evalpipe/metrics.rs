//! Manifold fidelity/diversity and the empirical semantic-channel matrix.

use crate::error::{Error, Result};
use crate::nn::scalar::Real;
use crate::nn::tensor::Tensor;

/// Row-stochastic estimate of `P(recovered meaning | intended meaning)`.
#[derive(Clone, Debug)]
pub struct SemanticChannelMatrix {
    /// `c x c`, row w holds the distribution of predictions given true class w.
    pub probs: Vec<f64>,
    /// Raw confusion counts in the same layout.
    pub counts: Vec<usize>,
    pub n_classes: usize,
}

impl SemanticChannelMatrix {
    pub fn prob(&self, w_true: usize, w_hat: usize) -> f64 {
        self.probs[w_true * self.n_classes + w_hat]
    }

    /// Count-weighted diagonal mass; equals plain accuracy over the samples.
    pub fn accuracy(&self) -> f64 {
        let total: usize = self.counts.iter().sum();
        let correct: usize = (0..self.n_classes)
            .map(|w| self.counts[w * self.n_classes + w])
            .sum();
        correct as f64 / total as f64
    }
}

/// Row-normalized confusion counts from `(true, predicted)` pairs.
pub fn estimate_semantic_channel(
    pairs: &[(u16, u16)],
    n_classes: usize,
) -> Result<SemanticChannelMatrix> {
    let mut counts = vec![0usize; n_classes * n_classes];
    for &(w, w_hat) in pairs {
        if w as usize >= n_classes || w_hat as usize >= n_classes {
            return Err(Error::invalid_input(format!(
                "class pair ({w}, {w_hat}) out of range for {n_classes} classes"
            )));
        }
        counts[w as usize * n_classes + w_hat as usize] += 1;
    }
    let mut probs = vec![0f64; n_classes * n_classes];
    for w in 0..n_classes {
        let row_total: usize = counts[w * n_classes..(w + 1) * n_classes].iter().sum();
        if row_total == 0 {
            return Err(Error::invalid_input(format!(
                "no samples observed for true class {w}"
            )));
        }
        for j in 0..n_classes {
            probs[w * n_classes + j] = counts[w * n_classes + j] as f64 / row_total as f64;
        }
    }
    Ok(SemanticChannelMatrix {
        probs,
        counts,
        n_classes,
    })
}

fn sq_dist(a: &[Real], b: &[Real]) -> f64 {
    let mut acc = 0f64;
    for i in 0..a.len() {
        let d = (a[i] - b[i]) as f64;
        acc += d * d;
    }
    acc
}

/// Squared distance from each point in `set` to its k-th nearest *other*
/// point in the same set.
fn knn_radii_sq(set: &Tensor<Real>, k: usize) -> Vec<f64> {
    let (n, d) = (set.shape()[0], set.shape()[1]);
    let data = set.data();
    let mut radii = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        let a = &data[i * d..(i + 1) * d];
        for j in 0..n {
            if j != i {
                dists.push(sq_dist(a, &data[j * d..(j + 1) * d]));
            }
        }
        dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
        radii.push(dists[k - 1]);
    }
    radii
}

/// Fraction of `points` that land inside the k-NN manifold of `set`
/// (within the k-th-neighbor radius of at least one set point).
fn fraction_in_manifold(set: &Tensor<Real>, radii_sq: &[f64], points: &Tensor<Real>) -> f64 {
    let (n, d) = (set.shape()[0], set.shape()[1]);
    let m = points.shape()[0];
    let sd = set.data();
    let pd = points.data();
    let mut hits = 0usize;
    for i in 0..m {
        let p = &pd[i * d..(i + 1) * d];
        for j in 0..n {
            if sq_dist(p, &sd[j * d..(j + 1) * d]) <= radii_sq[j] {
                hits += 1;
                break;
            }
        }
    }
    hits as f64 / m as f64
}

/// k-NN precision/recall-style manifold metrics in feature space.
///
/// `fidelity`: fraction of generated points inside the real manifold
/// (realism). `diversity`: fraction of real points inside the generated
/// manifold (coverage). `top_f1`: their harmonic mean (0 when either is 0).
/// Swapping the two sets swaps fidelity and diversity.
pub fn fidelity_diversity(
    real: &Tensor<Real>,
    generated: &Tensor<Real>,
    k: usize,
) -> Result<(f64, f64, f64)> {
    let (nr, dr) = match real.shape() {
        [n, d] => (*n, *d),
        other => return Err(Error::shape(format!("real feature shape {:?}", other))),
    };
    let (ng, dg) = match generated.shape() {
        [n, d] => (*n, *d),
        other => return Err(Error::shape(format!("generated feature shape {:?}", other))),
    };
    if dr != dg {
        return Err(Error::shape(format!("feature dims differ: {dr} vs {dg}")));
    }
    if k == 0 || nr < k + 1 || ng < k + 1 {
        return Err(Error::invalid_input(format!(
            "need at least k+1 = {} points per set, got {nr} real / {ng} generated",
            k + 1
        )));
    }
    // A zero-variance reference manifold has no geometry to measure against.
    let rd = real.data();
    let first = &rd[..dr];
    if (1..nr).all(|i| sq_dist(first, &rd[i * dr..(i + 1) * dr]) == 0.0) {
        return Err(Error::DegenerateFeatures(
            "real feature set has zero variance".into(),
        ));
    }
    let real_radii = knn_radii_sq(real, k);
    let gen_radii = knn_radii_sq(generated, k);
    let fidelity = fraction_in_manifold(real, &real_radii, generated);
    let diversity = fraction_in_manifold(generated, &gen_radii, real);
    let top_f1 = if fidelity > 0.0 && diversity > 0.0 {
        2.0 * fidelity * diversity / (fidelity + diversity)
    } else {
        0.0
    };
    Ok((fidelity, diversity, top_f1))
}
