//! Desk-scale UCI protocol on the Pima diabetes dataset: 90/10 split,
//! batch training for 250 iterations, average negative test log-likelihood
//! per inducing-point fraction.
//!
//!     cargo run --release --example benchmark_pima [reps]

use std::time::Instant;

use sepgp::dataset::{load_csv, split};
use sepgp::predictor;
use sepgp::trainer::{train_batch, TrainConfig};

fn main() -> sepgp::Result<()> {
    let reps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/pima.csv");
    let full = load_csv(&path, 8)?;
    println!("pima: n = {}, d = {}, {reps} repetition(s)", full.n(), full.dim());

    for frac in [0.15, 0.25, 0.5] {
        let mut nlls = Vec::new();
        let mut errs = Vec::new();
        let start = Instant::now();
        for rep in 0..reps {
            let seed = 1 + rep;
            let (train, test) = split(&full, 0.1, seed)?;
            let m = ((train.n() as f64 * frac).round() as usize).min(train.n());
            let mut config = TrainConfig::batch(m);
            config.iterations = 250;
            config.seed = seed;
            let (model, _) = train_batch(&train, &config)?;
            let eval = predictor::evaluate(&model, &test)?;
            nlls.push(eval.avg_neg_log_likelihood);
            errs.push(eval.error_rate);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "m = {:>3.0}%  avg nll {:.3}  avg error {:.3}  ({:.0}s)",
            frac * 100.0,
            mean(&nlls),
            mean(&errs),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
