//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Mode;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Maximum relative error between backprop gradients and central
/// differences, over up to `probes` randomly chosen entries of each
/// parameter tensor and of the input.
///
/// `loss_fn` maps the network output to `(loss, dloss/doutput)`. Probes
/// whose +/- step flips any ReLU are skipped, since a difference across a
/// kink does not estimate the derivative.
pub fn grad_check<F>(net: &Network, input: &Tensor, mode: Mode, loss_fn: F, probes: usize, seed: u64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic_net = net.clone();
    analytic_net.zero_grad();
    let out = analytic_net.forward(input, mode)?;
    let pattern = analytic_net.activation_pattern();
    let (_, upstream) = loss_fn(&out)?;
    let input_grad = analytic_net.backward(&upstream)?;
    let analytic: Vec<Vec<f64>> = analytic_net.params_mut().iter().map(|p| p.grad.clone()).collect();

    // loss at the probe point, or None when the activation pattern changed
    let loss_at = |probe: &mut Network, x: &Tensor| -> Result<Option<f64>> {
        let out = probe.forward(x, mode)?;
        let same = probe.activation_pattern() == pattern;
        probe.cache = None;
        Ok(same.then_some(loss_fn(&out)?.0))
    };
    let central = |plus: Option<f64>, minus: Option<f64>| match (plus, minus) {
        (Some(p), Some(m)) => Some((p - m) / (2.0 * FD_STEP)),
        _ => None,
    };

    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        for j in sample(&mut rng, n, probes.min(n)) {
            let original = probe.params_mut()[pi].value.data()[j];
            probe.params_mut()[pi].value.data_mut()[j] = original + FD_STEP;
            let plus = loss_at(&mut probe, input)?;
            probe.params_mut()[pi].value.data_mut()[j] = original - FD_STEP;
            let minus = loss_at(&mut probe, input)?;
            probe.params_mut()[pi].value.data_mut()[j] = original;
            if let Some(numeric) = central(plus, minus) {
                worst = worst.max(relative_error(grads[j], numeric));
            }
        }
    }
    let mut x = input.clone();
    for j in sample(&mut rng, input.len(), probes.min(input.len())) {
        let original = x.data()[j];
        x.data_mut()[j] = original + FD_STEP;
        let plus = loss_at(&mut net.clone(), &x)?;
        x.data_mut()[j] = original - FD_STEP;
        let minus = loss_at(&mut net.clone(), &x)?;
        x.data_mut()[j] = original;
        if let Some(numeric) = central(plus, minus) {
            worst = worst.max(relative_error(input_grad.data()[j], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::{softmax_cross_entropy, LayerSpec, NetworkSpec};
    use rand::Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// `sum(c * y)` for a fixed random `c`.
    fn projection(shape: &[usize], seed: u64) -> impl Fn(&Tensor) -> Result<(f64, Tensor)> {
        let c = random(shape.to_vec(), &mut ChaCha8Rng::seed_from_u64(seed));
        move |y: &Tensor| {
            let loss = y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
            Ok((loss, c.clone()))
        }
    }

    /// Zero biases put ReLU inputs exactly on the kink wherever a receptive
    /// field is all zeros; random offsets move them off it.
    pub(crate) fn jitter_vectors(net: &mut Network, rng: &mut ChaCha8Rng) {
        for p in net.params_mut() {
            if p.value.shape().len() == 1 {
                p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
            }
        }
    }

    fn check(spec: NetworkSpec, batch: usize, mode: Mode, tol: f64) {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Network::new(spec.clone(), &mut rng).unwrap();
            jitter_vectors(&mut net, &mut rng);
            let mut shape = vec![batch];
            shape.extend(&spec.input_shape);
            let x = random(shape, &mut rng);
            let out = spec.output_shape(batch).unwrap();
            let err = grad_check(&net, &x, mode, projection(&out, seed + 10), 20, seed).unwrap();
            assert!(err < tol, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn linear_softmax_cross_entropy() {
        let spec = NetworkSpec {
            input_shape: vec![6],
            layers: vec![LayerSpec::Linear {
                in_features: 6,
                out_features: 3,
                bias: true,
            }],
        };
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::new(spec.clone(), &mut rng).unwrap();
            let x = random(vec![4, 6], &mut rng);
            let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
            let err = grad_check(&net, &x, Mode::Train, |y| softmax_cross_entropy(y, &labels), 20, seed).unwrap();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn conv_relu() {
        let spec = NetworkSpec {
            input_shape: vec![2, 5, 6],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
            ],
        };
        check(spec, 2, Mode::Train, 1e-5);
    }

    #[test]
    fn batchnorm_train_and_eval() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec::BatchNorm {
                    features: 4,
                    momentum: 0.1,
                    eps: 1e-5,
                },
            ],
        };
        check(spec.clone(), 6, Mode::Train, 1e-5);
        check(spec, 6, Mode::Eval, 1e-5);
    }

    #[test]
    fn residual_flatten_linear() {
        let spec = NetworkSpec {
            input_shape: vec![1, 5, 4],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Residual { channels: 2, kernel: 3 },
                LayerSpec::FrameFlatten,
                LayerSpec::Linear {
                    in_features: 8,
                    out_features: 3,
                    bias: true,
                },
            ],
        };
        check(spec, 2, Mode::Train, 1e-5);
    }
}
