//! Minibatch-stochastic training with ADADELTA: sites for every instance
//! stay resident, each step refines one minibatch against the current
//! posterior and takes a stochastic gradient step.
//!
//!     cargo run --release --example train_stochastic

use std::time::Instant;

use sepgp::dataset::{gaussian_blobs, split};
use sepgp::predictor;
use sepgp::trainer::{train_stochastic, TrainConfig};

fn main() -> sepgp::Result<()> {
    let data = gaussian_blobs(20_000, 2, 1.0, 7);
    let (train, test) = split(&data, 0.1, 7)?;
    println!("training on {} instances, m = 200, minibatch 200", train.n());

    let mut config = TrainConfig::stochastic(200, 200);
    config.iterations = 25;
    config.seed = 7;

    let start = Instant::now();
    let (model, curve) = train_stochastic(&train, &config)?;
    let secs = start.elapsed().as_secs_f64();

    for r in curve.records.iter().step_by(5) {
        println!("step {:>3}  stochastic log_zq ≈ {:>12.2}", r.iteration, r.log_zq);
    }
    let eval = predictor::evaluate(&model, &test)?;
    println!(
        "\n{} minibatch steps in {secs:.1}s → test error {:.4}, nll {:.4}",
        config.iterations, eval.error_rate, eval.avg_neg_log_likelihood
    );
    Ok(())
}
