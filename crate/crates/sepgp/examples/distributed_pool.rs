//! Master–worker training with the in-process pool, including the
//! retry path when a worker fails mid-round.
//!
//!     cargo run --release --example distributed_pool

use std::time::Instant;

use sepgp::dataset::{gaussian_blobs, split};
use sepgp::distributed::{distributed_train, distributed_train_local};
use sepgp::predictor;
use sepgp::trainer::TrainConfig;

fn main() -> sepgp::Result<()> {
    let data = gaussian_blobs(2000, 2, 1.1, 3);
    let (train, test) = split(&data, 0.1, 3)?;

    let mut config = TrainConfig::batch(48);
    config.iterations = 40;
    config.seed = 3;

    for k in [1usize, 2, 4] {
        let start = Instant::now();
        let (model, _) = distributed_train(&train, &config, k)?;
        let eval = predictor::evaluate(&model, &test)?;
        println!(
            "K={k}: error {:.4}, nll {:.4}, log_zq {:.2}, {:.2}s",
            eval.error_rate,
            eval.avg_neg_log_likelihood,
            model.meta.final_log_zq,
            start.elapsed().as_secs_f64()
        );
    }

    // a worker dies during round 5; the master retries the round once
    println!("\ninjecting a one-shot worker failure at round 5 ...");
    let (model, _) = distributed_train_local(&train, &config, 3, None, Some((1, 5)))?;
    println!(
        "training still completed: final log_zq {:.2}",
        model.meta.final_log_zq
    );
    Ok(())
}
