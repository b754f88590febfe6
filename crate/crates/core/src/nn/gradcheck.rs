use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{backward, forward, Graph, Mode};
use super::params::Params;
use super::tensor::Tensor;
use crate::error::{OocsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// Flat parameter index with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares backpropagated gradients with central differences on up to
/// `samples` randomly chosen scalars.
///
/// Dropout masks are fixed by `seed`, so networks with dropout are checked in
/// training mode exactly as they are trained.
pub fn finite_diff_check(
    graph: &Graph,
    params: &Params<f64>,
    batch: &Tensor<f64>,
    labels: &[u8],
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(OocsError::Domain(format!("finite-difference step must be positive, got {eps}")));
    }
    let (_, cache) = forward(graph, params, batch, Mode::Train, seed)?;
    let (_, grads) = backward(graph, params, &cache, labels)?;
    let analytic: Vec<f64> = grads.values().copied().collect();
    let total = analytic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        sample(&mut rng, total, samples).into_vec()
    };
    picks.sort_unstable();

    let loss_at = |p: &Params<f64>| -> Result<f64> {
        let (_, c) = forward(graph, p, batch, Mode::Train, seed)?;
        Ok(backward(graph, p, &c, labels)?.0)
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        checked: picks.len(),
        max_rel_err: 0.0,
        mean_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut sum = 0.0;
    for &i in &picks {
        let orig = *work.value_mut(i).expect("index in range");
        *work.value_mut(i).unwrap() = orig + eps;
        let plus = loss_at(&work)?;
        *work.value_mut(i).unwrap() = orig - eps;
        let minus = loss_at(&work)?;
        *work.value_mut(i).unwrap() = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        sum += rel;
        if rel > report.max_rel_err || report.checked == 1 {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    if !picks.is_empty() {
        report.mean_rel_err = sum / picks.len() as f64;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{build_oocs_network, OocsConfig, ResponseSource};
    use crate::kernels::{DogParams, Polarity};
    use crate::nn::params::init_params;
    use crate::nn::spec::{LayerKind, NetworkSpec};
    use rand::Rng;

    fn randomized(spec: &NetworkSpec, seed: u64) -> Params<f64> {
        // nonzero biases keep ReLUs away from their kink on flat inputs
        let mut p: Params<f64> = init_params(spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for b in &mut p.blocks {
            b.bias.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        p
    }

    fn images(n: usize, side: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(n, side, side, 1, (0..n * side * side).map(|_| rng.random()).collect()).unwrap()
    }

    fn every_kind() -> NetworkSpec {
        let mut base = NetworkSpec::new(8, 8, 1);
        base.chain("c0", LayerKind::Conv2D { filters: 2 })
            .chain("r0", LayerKind::ReLU)
            .chain("c1", LayerKind::Conv2D { filters: 4 })
            .chain("r1", LayerKind::ReLU)
            .chain("p1", LayerKind::MaxPool2x2)
            .chain("f", LayerKind::Flatten)
            .chain("fc1", LayerKind::Dense { units: 6 })
            .chain("r2", LayerKind::ReLU)
            .chain("drop", LayerKind::Dropout { rate: 0.5 })
            .chain("fc2", LayerKind::Dense { units: 10 })
            .chain("loss", LayerKind::SoftmaxCE);
        let mut cfg = OocsConfig::new("c1", "p1", "r1", DogParams::new(3, 0.5, Polarity::On).unwrap());
        // response from a trainable tensor, so gradients flow through the fixed branch
        cfg.response_source = ResponseSource::PathwayInput;
        build_oocs_network(&base, &cfg).unwrap()
    }

    #[test]
    fn tiny_conv_pool_dense() {
        let mut s = NetworkSpec::new(6, 6, 1);
        s.chain("c", LayerKind::Conv2D { filters: 2 })
            .chain("p", LayerKind::MaxPool2x2)
            .chain("f", LayerKind::Flatten)
            .chain("fc", LayerKind::Dense { units: 10 })
            .chain("loss", LayerKind::SoftmaxCE);
        let g = Graph::new(s).unwrap();
        let p = randomized(g.spec(), 1);
        let rep = finite_diff_check(&g, &p, &images(2, 6, 2), &[3, 7], 1e-5, usize::MAX, 0).unwrap();
        assert_eq!(rep.checked, p.total_count());
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    #[test]
    fn residual_concat_and_dropout() {
        let g = Graph::new(every_kind()).unwrap();
        let p = randomized(g.spec(), 2);
        let rep = finite_diff_check(&g, &p, &images(3, 8, 3), &[0, 4, 9], 1e-5, 200, 5).unwrap();
        assert_eq!(rep.checked, 200);
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    #[test]
    fn zero_input_batch() {
        let g = Graph::new(every_kind()).unwrap();
        let p = randomized(g.spec(), 3);
        let zeros = Tensor::zeros(2, 8, 8, 1);
        let rep = finite_diff_check(&g, &p, &zeros, &[1, 2], 1e-5, 200, 6).unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let g = Graph::new(every_kind()).unwrap();
        let p = randomized(g.spec(), 3);
        assert!(finite_diff_check(&g, &p, &images(1, 8, 1), &[0], 0.0, 10, 0).is_err());
    }
}
