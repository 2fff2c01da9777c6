//! Checkpointing: save a partially trained model, restore it, verify the
//! predictions survive the round trip, and resume training in a different
//! mode.
//!
//!     cargo run --release --example checkpoint_resume

use sepgp::dataset::{gaussian_blobs, split};
use sepgp::predictor;
use sepgp::trainer::{self, TrainConfig};

fn main() -> sepgp::Result<()> {
    let data = gaussian_blobs(500, 2, 1.1, 99);
    let (train, test) = split(&data, 0.1, 99)?;

    let mut config = TrainConfig::batch(24);
    config.iterations = 30;
    config.seed = 99;
    let (model, _) = trainer::train_batch(&train, &config)?;

    let dir = std::env::temp_dir().join("sepgp-checkpoint-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("model.json");
    trainer::checkpoint(&model, &path)?;
    println!("checkpoint written to {}", path.display());

    let restored = trainer::restore(&path)?;
    let before = predictor::evaluate(&model, &test)?;
    let after = predictor::evaluate(&restored, &test)?;
    println!(
        "error before {:.5} / after restore {:.5} (nll {:.6} / {:.6})",
        before.error_rate, after.error_rate,
        before.avg_neg_log_likelihood, after.avg_neg_log_likelihood
    );

    // resume the same sites and hyper-parameters in stochastic mode
    let mut sconfig = TrainConfig::stochastic(24, 24);
    sconfig.iterations = 20;
    sconfig.seed = 99;
    let (resumed, _) = trainer::train_stochastic_with_eval(&train, &sconfig, None, Some(&restored))?;
    let final_eval = predictor::evaluate(&resumed, &test)?;
    println!(
        "after 20 stochastic steps on top: error {:.5}, nll {:.6}",
        final_eval.error_rate, final_eval.avg_neg_log_likelihood
    );
    Ok(())
}
