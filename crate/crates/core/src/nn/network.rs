use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerCache, LayerSpec, Mode};
use super::param::Param;
use super::tensor::Tensor;
use crate::error::{AsdError, Result};
use crate::util::short_hash;

/// Layer stack description; `input_shape` excludes the batch dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Output shape for a batch of `batch` inputs; fails on incompatible layers.
    pub fn output_shape(&self, batch: usize) -> Result<Vec<usize>> {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.input_shape);
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("spec serializes"))
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    pub(crate) cache: Option<Vec<LayerCache>>,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.output_shape(1)?;
        let layers = spec.layers.iter().map(|l| Layer::from_spec(l, rng)).collect();
        Ok(Self {
            spec,
            layers,
            cache: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.spec.input_shape.len() + 1 || x.shape()[1..] != self.spec.input_shape[..] {
            return Err(AsdError::Contract(format!(
                "network expects [batch, {:?}], got {:?}",
                self.spec.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass that records intermediates for [`Network::backward`].
    /// Train mode normalizes with batch statistics and updates running ones.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let (out, cache) = layer.forward(&h, mode, true)?;
            caches.push(cache.expect("cache requested"));
            h = out;
        }
        if !h.all_finite() {
            return Err(AsdError::Numeric("non-finite network output".into()));
        }
        self.cache = Some(caches);
        Ok(h)
    }

    /// Evaluation-mode forward without caching; safe to share across threads.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        if !h.all_finite() {
            return Err(AsdError::Numeric("non-finite network output".into()));
        }
        Ok(h)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    /// Consumes the cache of the preceding [`Network::forward`].
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let caches = self
            .cache
            .take()
            .ok_or_else(|| AsdError::Contract("backward called without a cached forward pass".into()))?;
        let mut g = grad.clone();
        for (layer, cache) in self.layers.iter_mut().zip(&caches).rev() {
            g = layer.backward(cache, &g)?;
        }
        if !g.all_finite() {
            return Err(AsdError::Numeric("non-finite gradient".into()));
        }
        Ok(g)
    }

    /// Concatenated ReLU on/off masks recorded by the last [`Network::forward`].
    pub(crate) fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for cache in self.cache.iter().flatten() {
            match cache {
                LayerCache::Relu(mask) => out.extend(mask),
                LayerCache::Residual(r) => {
                    out.extend(&r.hidden_mask);
                    out.extend(&r.out_mask);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|(_, p)| p.len())
            .sum()
    }

    /// Parameters and buffers keyed `"<layer>.<name>"`.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, p) in layer.params() {
                out.insert(format!("{i}.{name}"), p.value.clone());
            }
            for (name, buf) in layer.buffers() {
                out.insert(
                    format!("{i}.{name}"),
                    Tensor::new(vec![buf.len()], buf.clone()).expect("nonempty buffer"),
                );
            }
        }
        out
    }

    pub fn load_tensors(&mut self, tensors: &BTreeMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let names: Vec<&'static str> = layer.params().iter().map(|(n, _)| *n).collect();
            for (name, p) in names.into_iter().zip(layer.params_mut()) {
                let key = format!("{prefix}{i}.{name}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| AsdError::Data(format!("checkpoint lacks tensor '{key}'")))?;
                t.expect_shape(p.value.shape(), &key)?;
                *p = Param::new(t.clone());
            }
            for (name, buf) in layer.buffers_mut() {
                let key = format!("{prefix}{i}.{name}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| AsdError::Data(format!("checkpoint lacks tensor '{key}'")))?;
                t.expect_shape(&[buf.len()], &key)?;
                buf.copy_from_slice(t.data());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn same_padding_conv_keeps_grid() {
        let spec = NetworkSpec {
            input_shape: vec![1, 5, 128],
            layers: vec![LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 4,
                kernel: 3,
                stride: 1,
                padding: 1,
            }],
        };
        assert_eq!(spec.output_shape(2).unwrap(), vec![2, 4, 5, 128]);
        let net = Network::new(spec, &mut rng()).unwrap();
        let y = net.infer(&Tensor::zeros(vec![2, 1, 5, 128])).unwrap();
        assert_eq!(y.shape(), &[2, 4, 5, 128]);
    }

    #[test]
    fn incompatible_specs_rejected() {
        let spec = NetworkSpec {
            input_shape: vec![10],
            layers: vec![LayerSpec::Linear {
                in_features: 11,
                out_features: 2,
                bias: true,
            }],
        };
        assert!(matches!(Network::new(spec, &mut rng()), Err(AsdError::Contract(_))));
    }

    #[test]
    fn zero_weight_residual_is_identity_on_nonnegative_input() {
        let spec = NetworkSpec {
            input_shape: vec![3, 4, 6],
            layers: vec![LayerSpec::Residual { channels: 3, kernel: 3 }],
        };
        let mut net = Network::new(spec, &mut rng()).unwrap();
        for p in net.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::new(vec![2, 3, 4, 6], (0..144).map(|v| (v % 7) as f64 * 0.3).collect()).unwrap();
        assert_eq!(net.infer(&x).unwrap(), x);
    }

    #[test]
    fn backward_requires_forward() {
        let spec = NetworkSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::Linear {
                in_features: 3,
                out_features: 2,
                bias: true,
            }],
        };
        let mut net = Network::new(spec, &mut rng()).unwrap();
        assert!(matches!(
            net.backward(&Tensor::zeros(vec![1, 2])),
            Err(AsdError::Contract(_))
        ));
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        net.backward(&Tensor::zeros(vec![1, 2])).unwrap();
        // the cache is consumed
        assert!(net.backward(&Tensor::zeros(vec![1, 2])).is_err());
    }

    #[test]
    fn linear_weight_gradient_is_input_outer_product() {
        let spec = NetworkSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::Linear {
                in_features: 3,
                out_features: 2,
                bias: true,
            }],
        };
        let mut net = Network::new(spec, &mut rng()).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        // loss = sum(output): dW[o][i] = sum_n x[n][i], db[o] = N
        net.backward(&Tensor::filled(vec![2, 2], 1.0)).unwrap();
        let params = net.params_mut();
        assert_eq!(params[0].grad, vec![0.0, 2.5, 7.0, 0.0, 2.5, 7.0]);
        assert_eq!(params[1].grad, vec![2.0, 2.0]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let spec = NetworkSpec {
            input_shape: vec![2, 3, 4],
            layers: vec![
                LayerSpec::Residual { channels: 2, kernel: 3 },
                LayerSpec::FrameFlatten,
                LayerSpec::Linear {
                    in_features: 8,
                    out_features: 3,
                    bias: true,
                },
                LayerSpec::BatchNorm {
                    features: 3,
                    momentum: 0.1,
                    eps: 1e-5,
                },
            ],
        };
        let mut net = Network::new(spec, &mut rng()).unwrap();
        let x = Tensor::new(vec![2, 2, 3, 4], (0..48).map(|v| (v as f64).cos()).collect()).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        let dx = net.backward(&Tensor::zeros(vec![6, 3])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        for p in net.params_mut() {
            assert!(p.grad.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn eval_forward_is_batch_order_independent() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec::Linear {
                    in_features: 4,
                    out_features: 3,
                    bias: true,
                },
                LayerSpec::BatchNorm {
                    features: 3,
                    momentum: 0.1,
                    eps: 1e-5,
                },
                LayerSpec::Relu,
            ],
        };
        let mut net = Network::new(spec, &mut rng()).unwrap();
        let x = Tensor::new(vec![3, 4], (0..12).map(|v| v as f64 * 0.1).collect()).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        let y = net.infer(&x).unwrap();
        let swapped = Tensor::new(
            vec![3, 4],
            [x.row(2), x.row(0), x.row(1)].concat(),
        )
        .unwrap();
        let ys = net.infer(&swapped).unwrap();
        assert_eq!(ys.row(0), y.row(2));
        assert_eq!(ys.row(1), y.row(0));
        assert_eq!(net.infer(&x).unwrap(), y);
    }

    #[test]
    fn tensors_round_trip_through_named_map() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec::Linear {
                    in_features: 4,
                    out_features: 3,
                    bias: true,
                },
                LayerSpec::BatchNorm {
                    features: 3,
                    momentum: 0.1,
                    eps: 1e-5,
                },
            ],
        };
        let a = Network::new(spec.clone(), &mut rng()).unwrap();
        let mut b = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        b.load_tensors(&a.named_tensors(), "").unwrap();
        assert_eq!(a.named_tensors(), b.named_tensors());
        assert_eq!(a.parameter_count(), 4 * 3 + 3 + 3 + 3);
    }
}
