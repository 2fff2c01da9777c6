//! Decision-boundary raw data for a 2-d problem: train, then export a grid
//! of class probabilities that an external plotting tool can contour.
//! Also shows how the learned inducing points move relative to their
//! initial draw from the training rows.
//!
//!     cargo run --release --example predict_grid

use nalgebra::DMatrix;
use sepgp::dataset::gaussian_blobs;
use sepgp::predictor;
use sepgp::trainer::{train_batch, TrainConfig};

fn main() -> sepgp::Result<()> {
    let train = gaussian_blobs(400, 2, 1.2, 21);
    let mut config = TrainConfig::batch(16);
    config.iterations = 80;
    config.seed = 21;
    let (model, _) = train_batch(&train, &config)?;

    // 20×20 probability grid over the data range (raw coordinates)
    let steps = 20usize;
    let (lo, hi) = (-3.5, 3.5);
    let mut rows = Vec::with_capacity(steps * steps);
    for iy in 0..steps {
        for ix in 0..steps {
            let x = lo + (hi - lo) * ix as f64 / (steps - 1) as f64;
            let y = lo + (hi - lo) * iy as f64 / (steps - 1) as f64;
            rows.push([x, y]);
        }
    }
    let grid = DMatrix::from_fn(rows.len(), 2, |r, c| rows[r][c]);
    let latents = predictor::predict_latent_batch(&grid, &model)?;

    // coarse ASCII rendering of p(+1); '+' ≥ 0.5, '.' otherwise
    println!("p(y=+1) over [{lo},{hi}]²:");
    for iy in (0..steps).rev() {
        let mut line = String::new();
        for ix in 0..steps {
            let lat = latents[iy * steps + ix];
            let p = sepgp::stats::normal_cdf(lat.mean / (lat.var + 1.0).sqrt());
            line.push(if p >= 0.5 { '+' } else { '.' });
        }
        println!("  {line}");
    }

    // the CSV the CLI would emit with `predict --grid lo,hi,lo,hi,steps`
    let csv = predictor::predictions_csv(&grid, &model)?;
    println!("\nfirst grid rows of the prediction CSV:");
    for line in csv.lines().take(4) {
        println!("  {line}");
    }
    println!(
        "\ninducing points after learning (first 4 of {}):",
        model.hyper.num_inducing()
    );
    let raw = model.standardization.invert_matrix(&model.hyper.inducing);
    for r in 0..4 {
        println!("  ({:+.3}, {:+.3})", raw[(r, 0)], raw[(r, 1)]);
    }
    Ok(())
}
