//! Batch training on synthetic data: one damped parallel EP sweep and one
//! hyper-parameter ascent step per iteration.
//!
//!     cargo run --release --example train_batch

use sepgp::dataset::{gaussian_blobs, split};
use sepgp::predictor;
use sepgp::trainer::{train_batch_with_eval, TrainConfig};

fn main() -> sepgp::Result<()> {
    let data = gaussian_blobs(600, 2, 1.1, 42);
    let (train, test) = split(&data, 0.1, 42)?;

    let mut config = TrainConfig::batch(32);
    config.iterations = 100;
    config.seed = 42;
    config.eval_every = 20;

    let (model, curve) = train_batch_with_eval(&train, &config, Some(&test), None)?;

    println!("iter    log_zq      test_err  test_nll");
    for r in &curve.records {
        if r.iteration % 20 == 0 || r.iteration == 1 {
            println!(
                "{:>4}  {:>10.4}  {}  {}",
                r.iteration,
                r.log_zq,
                r.test_error.map_or("  -   ".into(), |v| format!("{v:.4}")),
                r.test_nll.map_or("  -   ".into(), |v| format!("{v:.4}")),
            );
        }
    }
    let eval = predictor::evaluate(&model, &test)?;
    println!(
        "\nfinal: log_zq = {:.4}, test error = {:.4}, test nll = {:.4} ({} sweeps)",
        model.meta.final_log_zq,
        eval.error_rate,
        eval.avg_neg_log_likelihood,
        model.meta.total_sweeps
    );
    Ok(())
}
