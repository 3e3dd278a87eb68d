//! Standardizes two detectors' scores with training statistics, sums them
//! into an ensemble, and compares AUCs.
//!
//! ```bash
//! cargo run --example scoring_and_auc
//! ```

use asd_core::eval::{auc, ensemble, fit_standardizer, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> asd_core::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // detector a: large scale, good at the first half of the anomalies;
    // detector b: small scale, good at the second half
    let mut draw = |n: usize, shift_a: f64, shift_b: f64| -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| (3.0 + shift_a + rng.gen_range(-1.0..1.0), 0.01 * (1.0 + shift_b + rng.gen_range(-1.0..1.0))))
            .collect()
    };
    let train = draw(200, 0.0, 0.0);
    let normal = draw(50, 0.0, 0.0);
    let mut anomalous = draw(25, 2.0, 0.0);
    anomalous.extend(draw(25, 0.0, 2.0));

    let stats_a = fit_standardizer(&train.iter().map(|p| p.0).collect::<Vec<_>>(), Method::AeUnlabeled.default_epsilon())?;
    let stats_b = fit_standardizer(&train.iter().map(|p| p.1).collect::<Vec<_>>(), 0.0)?;
    println!("a: mu {:.3} sigma2 {:.4} eps {}", stats_a.mu, stats_a.sigma2, stats_a.epsilon);
    println!("b: mu {:.4} sigma2 {:.2e} eps {}", stats_b.mu, stats_b.sigma2, stats_b.epsilon);

    let split = |xs: &[(f64, f64)], f: &dyn Fn(&(f64, f64)) -> f64| xs.iter().map(f).collect::<Vec<_>>();
    let ens = |p: &(f64, f64)| ensemble(&[Some(stats_a.standardize(p.0)), Some(stats_b.standardize(p.1))]).expect("both members present");
    println!("AUC a        {:.3}", auc(&split(&normal, &|p| p.0), &split(&anomalous, &|p| p.0))?);
    println!("AUC b        {:.3}", auc(&split(&normal, &|p| p.1), &split(&anomalous, &|p| p.1))?);
    println!("AUC ensemble {:.3}", auc(&split(&normal, &ens), &split(&anomalous, &ens))?);
    Ok(())
}
