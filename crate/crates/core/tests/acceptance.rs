//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test --test acceptance`.

use std::path::Path;
use std::time::Instant;

use asd_core::activity::{classify, detection_loss, trace_accuracy, ActivityModel, ActivityModelConfig, EmbeddingSequence};
use asd_core::audio::{Condition, Split};
use asd_core::config::ExperimentConfig;
use asd_core::eval::{auc, fit_standardizer, EvalReport, Method};
use asd_core::features::{windows, FeatureMatrix};
use asd_core::gmm::{anomaly_score_od_sad, fit_gmm, GmmConfig, GmmModel};
use asd_core::nn::{grad_check, mse, softmax_cross_entropy, LayerSpec, Mode, Network, NetworkSpec, Tensor};
use asd_core::pipeline::{self, load_manifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOISE: &str = "similar_machine";

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<Outcome>, id: &'static str, name: &'static str, pass: bool, detail: String) {
    println!("[{}] {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    results.push(Outcome { id, name, pass, detail });
}

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn jitter_vectors(net: &mut Network, rng: &mut ChaCha8Rng) {
    for p in net.params_mut() {
        if p.value.shape().len() == 1 {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
    }
}

fn conv(cin: usize, cout: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: 3,
        stride: 1,
        padding: 1,
    }
}

// ---------------------------------------------------------------- criterion 1

enum Head {
    Projection,
    SoftmaxCe,
    Mse,
}

fn layer_error(spec: &NetworkSpec, batch: usize, mode: Mode, head: &Head, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(spec.clone(), &mut rng).unwrap();
    jitter_vectors(&mut net, &mut rng);
    let mut shape = vec![batch];
    shape.extend(&spec.input_shape);
    let x = random(shape, &mut rng);
    let out_shape = spec.output_shape(batch).unwrap();
    let c = random(out_shape.clone(), &mut rng);
    let labels: Vec<usize> = (0..out_shape[0]).map(|_| rng.gen_range(0..out_shape[1])).collect();
    let target = random(out_shape, &mut rng);
    let err = match head {
        Head::Projection => grad_check(
            &net,
            &x,
            mode,
            |y| Ok((y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum(), c.clone())),
            20,
            seed,
        ),
        Head::SoftmaxCe => grad_check(&net, &x, mode, |y| softmax_cross_entropy(y, &labels), 20, seed),
        Head::Mse => grad_check(&net, &x, mode, |y| mse(y, &target), 20, seed),
    };
    err.unwrap()
}

fn criterion_1(results: &mut Vec<Outcome>) {
    let start = Instant::now();
    let linear = |i, o| LayerSpec::Linear {
        in_features: i,
        out_features: o,
        bias: true,
    };
    let cases: Vec<(&str, NetworkSpec, usize, Mode, Head, f64)> = vec![
        ("linear+softmax+ce", NetworkSpec { input_shape: vec![6], layers: vec![linear(6, 3)] }, 4, Mode::Train, Head::SoftmaxCe, 1e-6),
        (
            "linear(no bias)+softmax+ce",
            NetworkSpec {
                input_shape: vec![6],
                layers: vec![LayerSpec::Linear { in_features: 6, out_features: 2, bias: false }],
            },
            5,
            Mode::Train,
            Head::SoftmaxCe,
            1e-6,
        ),
        ("linear+mse", NetworkSpec { input_shape: vec![6], layers: vec![linear(6, 4)] }, 4, Mode::Train, Head::Mse, 1e-6),
        ("conv2d", NetworkSpec { input_shape: vec![2, 5, 6], layers: vec![conv(2, 3)] }, 2, Mode::Train, Head::Projection, 1e-5),
        (
            "conv2d+relu",
            NetworkSpec { input_shape: vec![2, 5, 6], layers: vec![conv(2, 3), LayerSpec::Relu] },
            2,
            Mode::Train,
            Head::Projection,
            1e-5,
        ),
        (
            "residual",
            NetworkSpec {
                input_shape: vec![2, 5, 4],
                layers: vec![LayerSpec::Residual { channels: 2, kernel: 3 }],
            },
            2,
            Mode::Train,
            Head::Projection,
            1e-5,
        ),
        (
            "frame-flatten+linear",
            NetworkSpec {
                input_shape: vec![2, 5, 4],
                layers: vec![LayerSpec::FrameFlatten, linear(8, 3)],
            },
            2,
            Mode::Train,
            Head::Projection,
            1e-5,
        ),
        (
            "batchnorm(train)",
            NetworkSpec {
                input_shape: vec![4],
                layers: vec![LayerSpec::BatchNorm { features: 4, momentum: 0.1, eps: 1e-5 }],
            },
            6,
            Mode::Train,
            Head::Projection,
            1e-5,
        ),
        (
            "batchnorm(eval)",
            NetworkSpec {
                input_shape: vec![4],
                layers: vec![LayerSpec::BatchNorm { features: 4, momentum: 0.1, eps: 1e-5 }],
            },
            6,
            Mode::Eval,
            Head::Projection,
            1e-5,
        ),
        (
            "embedder stack",
            NetworkSpec {
                input_shape: vec![1, 5, 4],
                layers: vec![
                    conv(1, 2),
                    LayerSpec::Relu,
                    LayerSpec::Residual { channels: 2, kernel: 3 },
                    LayerSpec::FrameFlatten,
                    linear(8, 3),
                ],
            },
            2,
            Mode::Train,
            Head::Projection,
            1e-5,
        ),
    ];
    let mut failures = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for (name, spec, batch, mode, head, tol) in &cases {
        for seed in 0..3 {
            let err = layer_error(spec, *batch, *mode, head, seed);
            worst_ratio = worst_ratio.max(err / tol);
            if !(err < *tol) {
                failures.push(format!("{name} seed {seed}: {err:.2e} >= {tol:.0e}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 30.0;
    let detail = if failures.is_empty() {
        format!("{} layer cases x 3 seeds, worst error/tolerance {worst_ratio:.3}, {secs:.1} s (< 30 s)", cases.len())
    } else {
        format!("{}, {secs:.1} s", failures.join("; "))
    };
    report(results, "1", "gradient correctness", pass, detail);
}

// ---------------------------------------------------------------- criterion 2

fn toy_model(rng: &mut ChaCha8Rng) -> ActivityModel {
    let config = ActivityModelConfig {
        window_len: 5,
        n_mels: 6,
        channels: 2,
        residual_blocks: 1,
        embed_dim: 3,
    };
    let mut model = ActivityModel::new(config, rng).unwrap();
    model.classifier.value.data_mut().iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    model
}

fn toy_clip(id: &str, n_frames: usize, n_mels: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let frames = (0..n_frames * n_mels).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let labels = (0..n_frames).map(|_| rng.gen_range(0..2u8)).collect();
    FeatureMatrix::from_rows(id, frames, n_mels).unwrap().with_labels(labels).unwrap()
}

/// Cross-entropy of one window computed directly from embeddings and the
/// classifier matrix.
fn brute_window_loss(model: &ActivityModel, emb: &EmbeddingSequence, labels: &[u8]) -> f64 {
    let w = model.classifier.value.data();
    let d = emb.dim;
    let mut total = 0.0;
    for (l, &y) in labels.iter().enumerate() {
        let x = emb.frame(l);
        let z: Vec<f64> = (0..2).map(|k| (0..d).map(|j| w[k * d + j] * x[j]).sum()).collect();
        let log_norm = z[0].max(z[1]) + ((z[0] - z[0].max(z[1])).exp() + (z[1] - z[0].max(z[1])).exp()).ln();
        total += log_norm - z[y as usize];
    }
    total
}

fn brute_clip_losses(model: &ActivityModel, clip: &FeatureMatrix) -> Vec<f64> {
    windows(clip, model.config.window_len)
        .unwrap()
        .iter()
        .map(|win| brute_window_loss(model, &model.embed(win).unwrap(), win.labels.unwrap()))
        .collect()
}

fn brute_gmm_nll(gmm: &GmmModel, x: &[f64]) -> f64 {
    let d = gmm.dim;
    let terms: Vec<f64> = (0..gmm.weights.len())
        .map(|k| {
            let mut log_p = gmm.weights[k].ln();
            for j in 0..d {
                let var = gmm.variances[k * d + j];
                let diff = x[j] - gmm.means[k * d + j];
                log_p += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - diff * diff / (2.0 * var);
            }
            log_p
        })
        .collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    -(m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn criterion_2(results: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut worst = [0.0f64; 5];
    let mut auc_mismatches = 0usize;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = toy_model(&mut rng);
        let d = model.embed_dim();

        // per-frame cross-entropy of a random embedding sequence
        let emb = EmbeddingSequence {
            values: (0..5 * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            dim: d,
        };
        let labels: Vec<u8> = (0..5).map(|_| rng.gen_range(0..2u8)).collect();
        let post = classify(&emb, &model.classifier.value).unwrap();
        let got = detection_loss(&post, &labels).unwrap();
        worst[0] = worst[0].max(rel(got, brute_window_loss(&model, &emb, &labels)));

        // clip score and training cost over clips of unequal length
        let clips: Vec<FeatureMatrix> = (0..3)
            .map(|i| toy_clip(&format!("c{i}"), rng.gen_range(5..14), 6, &mut rng))
            .collect();
        let per_clip: Vec<Vec<f64>> = clips.iter().map(|c| brute_clip_losses(&model, c)).collect();
        let means: Vec<f64> = per_clip.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        let cost = model.training_cost(&clips).unwrap();
        worst[1] = worst[1].max(rel(cost, means.iter().sum::<f64>() / means.len() as f64));
        for (clip, mean) in clips.iter().zip(&means) {
            worst[2] = worst[2].max(rel(model.anomaly_score(clip).unwrap(), *mean));
        }

        // GMM score averaged over every window and frame offset
        let m = 3;
        let raw_w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sum_w: f64 = raw_w.iter().sum();
        let gmm = GmmModel {
            weights: raw_w.iter().map(|w| w / sum_w).collect(),
            means: (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            variances: (0..m * d).map(|_| rng.gen_range(0.2..2.0)).collect(),
            dim: d,
        };
        for clip in &clips {
            let wins = windows(clip, 5).unwrap();
            let mut total = 0.0;
            for win in &wins {
                let e = model.embed(win).unwrap();
                total += (0..5).map(|l| brute_gmm_nll(&gmm, e.frame(l))).sum::<f64>();
            }
            let expected = total / (wins.len() * 5) as f64;
            worst[3] = worst[3].max(rel(anomaly_score_od_sad(clip, &model, &gmm).unwrap(), expected));
        }

        // standardization against a two-pass population variance
        let scores: Vec<f64> = (0..rng.gen_range(2..30)).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let eps = if seed % 2 == 0 { 0.0 } else { 1000.0 };
        let stats = fit_standardizer(&scores, eps).unwrap();
        let mu = scores.iter().sum::<f64>() / scores.len() as f64;
        let var = scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / scores.len() as f64;
        let probe = rng.gen_range(-80.0..80.0);
        worst[4] = worst[4].max(rel(stats.standardize(probe), (probe - mu) / (var + eps).sqrt()));

        // AUC against exhaustive pair counting, with ties on a coarse grid
        let normal: Vec<f64> = (0..rng.gen_range(1..25)).map(|_| rng.gen_range(0..8) as f64).collect();
        let anomalous: Vec<f64> = (0..rng.gen_range(1..25)).map(|_| rng.gen_range(2..10) as f64).collect();
        let mut twice_wins = 0u64;
        for a in &anomalous {
            for n in &normal {
                twice_wins += if a > n { 2 } else if a == n { 1 } else { 0 };
            }
        }
        let expected = twice_wins as f64 / (2 * normal.len() * anomalous.len()) as f64;
        if auc(&normal, &anomalous).unwrap() != expected {
            auc_mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let names = ["frame CE", "training cost", "clip score", "GMM clip score", "standardize"];
    let pass = worst.iter().all(|w| *w <= 1e-12) && auc_mismatches == 0 && secs < 10.0;
    let detail = format!(
        "{}, AUC mismatches {auc_mismatches}, {secs:.2} s (tol 1e-12, AUC exact, < 10 s)",
        names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ")
    );
    report(results, "2", "formula oracles", pass, detail);
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3(results: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let normal = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let true_means = [[-2.0, 0.0], [2.0, 1.0]];
    let mut data = Vec::with_capacity(5000 * 2);
    for i in 0..5000 {
        let mu = true_means[usize::from(i % 10 >= 4)];
        data.push(mu[0] + 0.5 * normal(&mut rng));
        data.push(mu[1] + 0.5 * normal(&mut rng));
    }
    let x = Tensor::new(vec![5000, 2], data).unwrap();
    let two = GmmConfig { n_components: 2, ..GmmConfig::default() };
    let (gmm, log) = fit_gmm(&x, &two, 0).unwrap();
    let mean_err = true_means
        .iter()
        .map(|t| {
            (0..2)
                .map(|k| ((gmm.means[2 * k] - t[0]).powi(2) + (gmm.means[2 * k + 1] - t[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);

    let mut logs = vec![log];
    for seed in 0..6u64 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = 400;
        let v = random(vec![n, 4], &mut r);
        let data: Vec<f64> = v.data().iter().enumerate().map(|(i, x)| x * x * x + (i / 4 % 3) as f64).collect();
        let (_, l) = fit_gmm(&Tensor::new(vec![n, 4], data).unwrap(), &GmmConfig::default(), seed).unwrap();
        logs.push(l);
    }
    let worst_drop = logs
        .iter()
        .flat_map(|l| l.log_likelihood.windows(2).map(|w| w[0] - w[1]))
        .fold(f64::NEG_INFINITY, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_drop <= 1e-9 && mean_err < 0.1 && secs < 30.0;
    report(
        results,
        "3",
        "EM behavior",
        pass,
        format!(
            "largest log-likelihood decrease {:.1e} over {} fits (tol 1e-9), 2-component mean error {mean_err:.4} (< 0.1), {secs:.2} s (< 30 s)",
            worst_drop.max(0.0),
            logs.len()
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4(results: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = ActivityModelConfig {
        window_len: 5,
        n_mels: 16,
        channels: 2,
        residual_blocks: 1,
        embed_dim: 4,
    };
    let model = ActivityModel::new(config, &mut rng).unwrap();
    let clip = toy_clip("sym", 40, 16, &mut rng);
    let a1 = model.anomaly_score(&clip).unwrap();
    let expected = 5.0 * std::f64::consts::LN_2;
    let ok_a = (a1 - expected).abs() <= 1e-9;
    report(
        results,
        "4a",
        "untrained classifier score",
        ok_a,
        format!("A1 = {a1:.12}, 5 ln 2 = {expected:.12}, |diff| {:.1e} (tol 1e-9)", (a1 - expected).abs()),
    );

    let mu = 42.0;
    let stats = fit_standardizer(&[mu, mu, mu], 1000.0).unwrap();
    let z = stats.standardize(mu + 10.0);
    let exact = 10.0 / 1000f64.sqrt();
    let ok_b = stats.sigma2 == 0.0 && (z - exact).abs() <= 1e-9 && format!("{z:.5}") == "0.31623";
    report(
        results,
        "4b",
        "standardize spot value",
        ok_b,
        format!("z = {z:.12}, 10/sqrt(1000) = {exact:.12} (tol 1e-9), rounds to {z:.5}"),
    );
}

// ------------------------------------------------------------ criteria 5 to 7

fn desk_config(seed: u64, out_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("desk").unwrap();
    cfg.seed = seed;
    cfg.corpus.seed = seed;
    cfg.out_dir = out_dir.to_path_buf();
    cfg.validate().unwrap();
    cfg
}

fn cell(report: &EvalReport, method: &str, snr: f64) -> f64 {
    report
        .row(method)
        .and_then(|r| r.cell(NOISE, snr))
        .map(|c| c.auc)
        .unwrap_or(f64::NAN)
}

fn frame_accuracy_6db_normal(cfg: &ExperimentConfig) -> (f64, usize) {
    let manifest = load_manifest(cfg).unwrap();
    let ids: Vec<String> = manifest
        .split(Split::Test)
        .filter(|e| e.condition == Condition::Normal && e.snr_db == 6.0)
        .map(|e| e.clip_id.clone())
        .collect();
    let mut sum = 0.0;
    for id in &ids {
        let (rows, feats) = pipeline::trace(cfg, id).unwrap();
        sum += trace_accuracy(&rows, feats.frame_labels.as_ref().unwrap());
    }
    (sum / ids.len() as f64, ids.len())
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("scores"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files.push(("report.json".into(), std::fs::read(dir.join("report").join("report.json")).unwrap()));
    files
}

fn criteria_5_to_7(results: &mut Vec<Outcome>) {
    let root = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let configs: Vec<ExperimentConfig> = (0..3).map(|s| desk_config(s, &root.path().join(format!("seed{s}")))).collect();
    for cfg in &configs {
        let t = Instant::now();
        pipeline::run_all(cfg).unwrap();
        println!("    seed {} pipeline finished in {:.1} s", cfg.seed, t.elapsed().as_secs_f64());
    }
    let rep = pipeline::evaluate(&configs).unwrap();
    let secs = start.elapsed().as_secs_f64();
    println!("{}", rep.to_text());

    let sad6 = cell(&rep, "sad", 6.0);
    report(results, "5a", "SAD AUC at 6 dB", sad6 >= 0.75 && secs < 600.0, format!("{sad6:.4} (>= 0.75), 3 seeds in {secs:.0} s (< 600 s)"));

    let singles = [Method::AeLabeled, Method::Sad, Method::AeUnlabeled, Method::OdSad];
    let at6: Vec<(Method, f64)> = singles.iter().map(|m| (*m, cell(&rep, m.id(), 6.0))).collect();
    report(
        results,
        "5b",
        "every method above 0.60 at 6 dB",
        at6.iter().all(|(_, a)| *a > 0.60),
        at6.iter().map(|(m, a)| format!("{m} {a:.4}")).collect::<Vec<_>>().join(", "),
    );

    let drops: Vec<(Method, f64)> = [Method::Sad, Method::AeLabeled, Method::AeUnlabeled]
        .iter()
        .map(|m| (*m, cell(&rep, m.id(), 6.0) - cell(&rep, m.id(), -12.0)))
        .collect();
    report(
        results,
        "5c",
        "degradation from 6 dB to -12 dB",
        drops.iter().all(|(_, d)| *d >= 0.05),
        format!("{} (each >= 0.05)", drops.iter().map(|(m, d)| format!("{m} {d:+.4}")).collect::<Vec<_>>().join(", ")),
    );

    let (acc, n) = frame_accuracy_6db_normal(&configs[0]);
    report(results, "5d", "activity trace accuracy", acc >= 0.9, format!("{acc:.4} over {n} normal 6 dB test clips (>= 0.90)"));

    let mut ens_detail = Vec::new();
    let mut ens_ok = true;
    for members in asd_core::eval::ENSEMBLES {
        let id = format!("{}+{}", members[0].id(), members[1].id());
        for snr in [6.0, 0.0] {
            let e = cell(&rep, &id, snr);
            let best = members.iter().map(|m| cell(&rep, m.id(), snr)).fold(f64::NEG_INFINITY, f64::max);
            ens_ok &= e >= best - 0.05;
            ens_detail.push(format!("{id} @{snr} dB {e:.4} vs {best:.4}"));
        }
    }
    report(results, "6", "ensemble sanity", ens_ok, format!("{} (ensemble >= best member - 0.05)", ens_detail.join(", ")));

    let again = desk_config(0, &root.path().join("seed0-repeat"));
    pipeline::run_all(&again).unwrap();
    let a = read_outputs(&configs[0].out_dir);
    let b = read_outputs(&again.out_dir);
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let same = a.len() == b.len() && differing.is_empty();
    report(
        results,
        "7",
        "determinism",
        same,
        if same {
            format!("{} score CSVs and report.json byte-identical across two seed-0 runs", a.len() - 1)
        } else {
            format!("differing files: {differing:?}")
        },
    );
}

fn main() {
    let quick = std::env::args().any(|a| a == "--quick");
    let mut results = Vec::new();
    criterion_1(&mut results);
    criterion_2(&mut results);
    criterion_3(&mut results);
    criterion_4(&mut results);
    if quick {
        println!("[SKIP] 5-7 end-to-end criteria (--quick)");
    } else {
        criteria_5_to_7(&mut results);
    }
    let failed: Vec<&Outcome> = results.iter().filter(|r| !r.pass).collect();
    println!("\nacceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    for f in &failed {
        println!("  failed {} {}: {}", f.id, f.name, f.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
