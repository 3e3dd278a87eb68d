//! Diagonal-covariance Gaussian mixture fitted by EM, used as an outlier
//! detector on frame embeddings.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::activity::ActivityModel;
use crate::error::{AsdError, Result};
use crate::features::FeatureMatrix;
use crate::nn::{Checkpoint, Tensor};
use crate::util::rng_for;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub n_components: usize,
    pub variance_floor: f64,
    pub weight_floor: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub max_samples: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            n_components: 5,
            variance_floor: 1e-6,
            weight_floor: 1e-12,
            tolerance: 1e-6,
            max_iter: 200,
            max_samples: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `M x D`, row-major.
    pub means: Vec<f64>,
    /// `M x D`, row-major.
    pub variances: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GmmFitLog {
    /// Mean log-likelihood after each EM iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub n_vectors: usize,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    fn check(&self) -> Result<()> {
        let m = self.weights.len();
        if m == 0 || self.dim == 0 || self.means.len() != m * self.dim || self.variances.len() != m * self.dim {
            return Err(AsdError::Data("inconsistent mixture dimensions".into()));
        }
        if self.variances.iter().any(|&v| !(v > 0.0) || !v.is_finite())
            || self.weights.iter().any(|&w| !(w > 0.0))
            || self.means.iter().any(|v| !v.is_finite())
        {
            return Err(AsdError::Data("mixture parameters must be finite with positive weights and variances".into()));
        }
        Ok(())
    }

    /// `ln(weight_m) + ln N(x; mean_m, diag var_m)` for every component.
    fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (m, o) in out.iter_mut().enumerate() {
            let mu = &self.means[m * d..(m + 1) * d];
            let var = &self.variances[m * d..(m + 1) * d];
            let mut acc = 0.0;
            for k in 0..d {
                let diff = x[k] - mu[k];
                acc += diff * diff / var[k] + var[k].ln();
            }
            *o = self.weights[m].ln() - 0.5 * (acc + d as f64 * LN_2PI);
        }
    }

    /// Negative log-likelihood of one vector.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.n_components()];
        self.component_log_densities(x, &mut buf);
        -log_sum_exp(&buf)
    }

    /// Mean negative log-likelihood over the rows of `vectors`.
    pub fn mean_score(&self, vectors: &Tensor) -> Result<f64> {
        vectors.expect_shape(&[vectors.rows(), self.dim], "embedding rows")?;
        let mut buf = vec![0.0; self.n_components()];
        let mut total = 0.0;
        for r in 0..vectors.rows() {
            self.component_log_densities(vectors.row(r), &mut buf);
            total -= log_sum_exp(&buf);
        }
        Ok(total / vectors.rows() as f64)
    }

    pub fn to_checkpoint_tensors(&self) -> Vec<(String, Tensor)> {
        let (m, d) = (self.n_components(), self.dim);
        vec![
            ("gmm.weights".into(), Tensor::new(vec![m], self.weights.clone()).expect("shape")),
            ("gmm.means".into(), Tensor::new(vec![m, d], self.means.clone()).expect("shape")),
            ("gmm.variances".into(), Tensor::new(vec![m, d], self.variances.clone()).expect("shape")),
        ]
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let w = ckpt.tensor("gmm.weights")?;
        let mu = ckpt.tensor("gmm.means")?;
        let var = ckpt.tensor("gmm.variances")?;
        if mu.shape().len() != 2 {
            return Err(AsdError::Data("gmm.means must be two-dimensional".into()));
        }
        let model = Self {
            weights: w.data().to_vec(),
            means: mu.data().to_vec(),
            variances: var.data().to_vec(),
            dim: mu.shape()[1],
        };
        model.check()?;
        Ok(model)
    }
}

/// Writes the mixture and its fit metadata into a checkpoint.
pub fn store_gmm(ckpt: &mut Checkpoint, gmm: &GmmModel, log: &GmmFitLog) {
    for (name, t) in gmm.to_checkpoint_tensors() {
        ckpt.tensors.insert(name, t);
    }
    if let Some(meta) = ckpt.meta.as_object_mut() {
        meta.insert(
            "gmm".into(),
            json!({
                "n_components": gmm.n_components(),
                "iterations": log.iterations,
                "final_log_likelihood": log.log_likelihood.last(),
                "converged": log.converged,
                "n_vectors": log.n_vectors,
            }),
        );
    }
}

fn kmeans_pp<R: Rng + ?Sized>(data: &[f64], d: usize, m: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len() / d;
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut centers = row(rng.gen_range(0..n)).to_vec();
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..d])).collect();
    while centers.len() < m * d {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if u < b {
                    idx = i;
                    break;
                }
                u -= b;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(row(i), &c));
        }
        centers.extend(c);
    }
    centers
}

fn floor_weights(weights: &mut [f64], floor: f64) {
    for w in weights.iter_mut() {
        *w = w.max(floor);
    }
    let s: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= s;
    }
}

/// Weighted M-step from responsibilities `resp` (`N x M`).
fn m_step(data: &[f64], d: usize, resp: &[f64], config: &GmmConfig, model: &mut GmmModel) {
    let m = model.n_components();
    let n = data.len() / d;
    let mut nk = vec![0.0; m];
    let mut sum = vec![0.0; m * d];
    for i in 0..n {
        let x = &data[i * d..(i + 1) * d];
        for c in 0..m {
            let r = resp[i * m + c];
            if r == 0.0 {
                continue;
            }
            nk[c] += r;
            for k in 0..d {
                sum[c * d + k] += r * x[k];
            }
        }
    }
    for c in 0..m {
        if nk[c] <= 0.0 {
            continue;
        }
        for k in 0..d {
            let mu = sum[c * d + k] / nk[c];
            model.means[c * d + k] = mu;
        }
    }
    // second pass for numerically stable variances
    let mut sq = vec![0.0; m * d];
    for i in 0..n {
        let x = &data[i * d..(i + 1) * d];
        for c in 0..m {
            let r = resp[i * m + c];
            if r == 0.0 {
                continue;
            }
            for k in 0..d {
                let diff = x[k] - model.means[c * d + k];
                sq[c * d + k] += r * diff * diff;
            }
        }
    }
    for c in 0..m {
        if nk[c] <= 0.0 {
            continue;
        }
        for k in 0..d {
            model.variances[c * d + k] = (sq[c * d + k] / nk[c]).max(config.variance_floor);
        }
    }
    model.weights = nk.iter().map(|v| v / n as f64).collect();
    floor_weights(&mut model.weights, config.weight_floor);
}

/// E-step: fills responsibilities and returns the mean log-likelihood.
fn e_step(data: &[f64], d: usize, model: &GmmModel, resp: &mut [f64]) -> f64 {
    let m = model.n_components();
    let mut total = 0.0;
    for (i, r) in resp.chunks_mut(m).enumerate() {
        model.component_log_densities(&data[i * d..(i + 1) * d], r);
        let lse = log_sum_exp(r);
        total += lse;
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    total / (data.len() / d) as f64
}

/// Fits an `M`-component diagonal mixture to the rows of `vectors`
/// (`N x D`), initialized by k-means++.
pub fn fit_gmm(vectors: &Tensor, config: &GmmConfig, seed: u64) -> Result<(GmmModel, GmmFitLog)> {
    let m = config.n_components;
    if vectors.shape().len() != 2 || vectors.is_empty() {
        return Err(AsdError::DegenerateInput("mixture fitting needs a non-empty N x D matrix".into()));
    }
    let (n_all, d) = (vectors.rows(), vectors.row_len());
    if m == 0 {
        return Err(AsdError::Config("mixture needs at least one component".into()));
    }
    if n_all < m {
        return Err(AsdError::DegenerateInput(format!("{n_all} vectors for {m} components")));
    }
    if n_all < 10 * m {
        log::warn!("fitting {m} components on only {n_all} vectors");
    }
    if !vectors.all_finite() {
        return Err(AsdError::Numeric("non-finite embedding vector".into()));
    }
    let mut rng = rng_for(seed, "gmm", 0);
    let subsampled;
    let data: &[f64] = if n_all > config.max_samples {
        let mut idx = sample(&mut rng, n_all, config.max_samples).into_vec();
        idx.sort_unstable();
        subsampled = idx.iter().flat_map(|&i| vectors.row(i).iter().copied()).collect::<Vec<_>>();
        &subsampled
    } else {
        vectors.data()
    };
    let n = data.len() / d;

    let centers = kmeans_pp(data, d, m, &mut rng);
    let mut resp = vec![0.0; n * m];
    for i in 0..n {
        let x = &data[i * d..(i + 1) * d];
        let nearest = (0..m)
            .min_by(|&a, &b| {
                sq_dist(x, &centers[a * d..(a + 1) * d]).total_cmp(&sq_dist(x, &centers[b * d..(b + 1) * d]))
            })
            .expect("m > 0");
        resp[i * m + nearest] = 1.0;
    }
    let mut model = GmmModel {
        weights: vec![1.0 / m as f64; m],
        means: centers,
        variances: vec![1.0; m * d],
        dim: d,
    };
    m_step(data, d, &resp, config, &mut model);

    let mut log = GmmFitLog {
        n_vectors: n,
        ..GmmFitLog::default()
    };
    let mut prev = e_step(data, d, &model, &mut resp);
    for _ in 0..config.max_iter {
        m_step(data, d, &resp, config, &mut model);
        let ll = e_step(data, d, &model, &mut resp);
        if !ll.is_finite() {
            return Err(AsdError::Numeric("mixture log-likelihood is not finite".into()));
        }
        log.log_likelihood.push(ll);
        log.iterations += 1;
        let rel = (ll - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = ll;
        if rel < config.tolerance {
            log.converged = true;
            break;
        }
    }
    Ok((model, log))
}

/// Mean mixture score over every (window, offset) embedding of a clip.
pub fn anomaly_score_od_sad(features: &FeatureMatrix, model: &ActivityModel, gmm: &GmmModel) -> Result<f64> {
    gmm.mean_score(&model.clip_embeddings(features)?)
}

/// Embeddings of every window and offset of every clip, stacked.
pub fn collect_embeddings(model: &ActivityModel, clips: &[FeatureMatrix]) -> Result<Tensor> {
    let parts = clips
        .par_iter()
        .filter(|c| c.n_frames >= model.config.window_len)
        .map(|c| model.clip_embeddings(c))
        .collect::<Result<Vec<_>>>()?;
    let d = model.embed_dim();
    let data: Vec<f64> = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::new(vec![data.len() / d, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_cluster_data(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = |rng: &mut ChaCha8Rng| {
            let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let (mx, my, s) = if rng.gen::<f64>() < 0.3 { (-4.0, 2.0, 0.5) } else { (3.0, -1.0, 0.8) };
            data.push(mx + s * z(&mut rng));
            data.push(my + s * z(&mut rng));
        }
        Tensor::new(vec![n, 2], data).unwrap()
    }

    #[test]
    fn single_component_is_sample_moments() {
        let x = two_cluster_data(500, 1);
        let cfg = GmmConfig {
            n_components: 1,
            ..GmmConfig::default()
        };
        let (g, _) = fit_gmm(&x, &cfg, 0).unwrap();
        for k in 0..2 {
            let col: Vec<f64> = (0..500).map(|i| x.row(i)[k]).collect();
            let mean = col.iter().sum::<f64>() / 500.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 500.0;
            assert!((g.means[k] - mean).abs() < 1e-9);
            assert!((g.variances[k] - var).abs() < 1e-9);
        }
        assert!((g.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_two_components() {
        let x = two_cluster_data(5000, 2);
        let cfg = GmmConfig {
            n_components: 2,
            ..GmmConfig::default()
        };
        let (g, log) = fit_gmm(&x, &cfg, 3).unwrap();
        let truth = [[-4.0, 2.0], [3.0, -1.0]];
        let err = |perm: [usize; 2]| {
            (0..2)
                .map(|c| sq_dist(&g.means[perm[c] * 2..perm[c] * 2 + 2], &truth[c]).sqrt())
                .fold(0.0, f64::max)
        };
        let best = err([0, 1]).min(err([1, 0]));
        assert!(best < 0.1, "mean error {best}");
        assert!(log.converged);
    }

    #[test]
    fn log_likelihood_is_monotone_and_weights_normalized() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1.0..1.0) * rng.gen_range(0.0..3.0)).collect();
            let x = Tensor::new(vec![1000, 3], data).unwrap();
            let (g, log) = fit_gmm(&x, &GmmConfig::default(), seed).unwrap();
            for w in log.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
            assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(g.weights.iter().all(|&w| w >= 1e-12));
            assert!(g.variances.iter().all(|&v| v >= 1e-6));
        }
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let x = two_cluster_data(300, 4);
        let (g, _) = fit_gmm(&x, &GmmConfig::default(), 1).unwrap();
        let mut resp = vec![0.0; 300 * 5];
        e_step(x.data(), 2, &g, &mut resp);
        for r in resp.chunks(5) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_duplicates_hit_floors() {
        let mut data = vec![1.0; 200];
        data.extend((0..200).map(|i| i as f64 * 0.01));
        let x = Tensor::new(vec![200, 2], data).unwrap();
        let (g, log) = fit_gmm(&x, &GmmConfig::default(), 0).unwrap();
        assert!(g.variances.iter().all(|&v| v >= 1e-6));
        assert!(log.log_likelihood.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_few_vectors_is_an_error() {
        let x = Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap();
        assert!(matches!(fit_gmm(&x, &GmmConfig::default(), 0), Err(AsdError::DegenerateInput(_))));
    }

    #[test]
    fn fit_is_deterministic() {
        let x = two_cluster_data(400, 5);
        assert_eq!(fit_gmm(&x, &GmmConfig::default(), 9).unwrap().0, fit_gmm(&x, &GmmConfig::default(), 9).unwrap().0);
    }

    #[test]
    fn score_at_mean_of_unit_gaussian() {
        for d in [1usize, 4, 64] {
            let g = GmmModel {
                weights: vec![1.0],
                means: vec![0.5; d],
                variances: vec![1.0; d],
                dim: d,
            };
            let expected = d as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln();
            assert!((g.score(&vec![0.5; d]) - expected).abs() < 1e-12);
            let mut prev = g.score(&vec![0.5; d]);
            for step in 1..6 {
                let s = g.score(&vec![0.5 + step as f64 * 0.3; d]);
                assert!(s > prev);
                prev = s;
            }
        }
    }

    #[test]
    fn score_matches_naive_density_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (m, d) = (4, 3);
        let mut w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let g = GmmModel {
            weights: w.clone(),
            means: (0..m * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            variances: (0..m * d).map(|_| rng.gen_range(0.3..2.0)).collect(),
            dim: d,
        };
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut density = 0.0;
            for c in 0..m {
                let mut p = w[c];
                for k in 0..d {
                    let var = g.variances[c * d + k];
                    let diff = x[k] - g.means[c * d + k];
                    p *= (-diff * diff / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
                }
                density += p;
            }
            assert!((g.score(&x) + density.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let x = two_cluster_data(200, 6);
        let (g, log) = fit_gmm(&x, &GmmConfig::default(), 0).unwrap();
        let mut ckpt = Checkpoint::new(json!({}));
        store_gmm(&mut ckpt, &g, &log);
        let back = GmmModel::from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, g);
        assert_eq!(ckpt.meta["gmm"]["iterations"], log.iterations);
    }
}
