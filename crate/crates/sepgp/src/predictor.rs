//! Predictive latent distribution, class probabilities and test metrics.

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::kernel;
use crate::stats;
use crate::trainer::Model;

/// Latent Gaussian at a test input: f⋆ ~ N(mean, var).
#[derive(Debug, Clone, Copy)]
pub struct LatentPrediction {
    pub mean: f64,
    pub var: f64,
}

/// Test-set summary.
#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub error_rate: f64,
    pub avg_neg_log_likelihood: f64,
    pub n_test: usize,
}

/// Latent predictions for raw (unstandardized) inputs, one row per point.
///
///   m⋆ = k⋆ᵀ Kmm⁻¹ μ,
///   s⋆ = k⋆⋆ − k⋆ᵀKmm⁻¹k⋆ + k⋆ᵀKmm⁻¹ Σ Kmm⁻¹ k⋆,
///
/// with the noise-free k⋆⋆ = σ²; the label noise enters the probit
/// argument as the +1, not the kernel.
pub fn predict_latent_batch(x_raw: &DMatrix<f64>, model: &Model) -> Result<Vec<LatentPrediction>> {
    let x_std = model.standardization.apply_matrix(x_raw);
    let prior = kernel::build_prior(&model.hyper)?;
    let kstar = kernel::signal_matrix(&x_std, &model.hyper.inducing, &model.hyper); // k×m
    let upsilon = crate::linalg::chol_solve_cols(&prior.chol, &kstar.transpose()); // m×k
    let sv = crate::linalg::par_mul(&model.posterior.sigma, &upsilon); // m×k
    let kss = model.hyper.amplitude();
    let mut out = Vec::with_capacity(x_raw.nrows());
    for i in 0..x_raw.nrows() {
        let u = upsilon.column(i);
        let mean = u.dot(&model.posterior.mu);
        let var = (kss - u.dot(&kstar.row(i).transpose()) + u.dot(&sv.column(i))).max(0.0);
        out.push(LatentPrediction { mean, var });
    }
    Ok(out)
}

pub fn predict_latent(x_raw: &[f64], model: &Model) -> Result<LatentPrediction> {
    let x = DMatrix::from_row_slice(1, x_raw.len(), x_raw);
    Ok(predict_latent_batch(&x, model)?[0])
}

/// p(y⋆ = +1 | x⋆) = Φ(m⋆ / √(s⋆ + 1)).
pub fn predict_proba(x_raw: &[f64], model: &Model) -> Result<f64> {
    let lat = predict_latent(x_raw, model)?;
    Ok(stats::normal_cdf(lat.mean / (lat.var + 1.0).sqrt()))
}

/// Error rate and average negative test log-likelihood. The decision rule
/// is p(+1) ≥ 0.5 → +1.
pub fn evaluate(model: &Model, test: &Dataset) -> Result<EvalReport> {
    let latents = predict_latent_batch(&test.inputs, model)?;
    let n = test.n();
    let mut wrong = 0usize;
    let mut nll_sum = 0.0;
    for (i, lat) in latents.iter().enumerate() {
        let scaled = lat.mean / (lat.var + 1.0).sqrt();
        let pred = if stats::normal_cdf(scaled) >= 0.5 { 1.0 } else { -1.0 };
        if pred != test.labels[i] {
            wrong += 1;
        }
        nll_sum -= stats::log_phi(test.labels[i] * scaled);
    }
    Ok(EvalReport {
        error_rate: wrong as f64 / n as f64,
        avg_neg_log_likelihood: nll_sum / n as f64,
        n_test: n,
    })
}

/// Prediction CSV with header `index,p_plus,label_pred,m_star,s_star`.
pub fn predictions_csv(x_raw: &DMatrix<f64>, model: &Model) -> Result<String> {
    let latents = predict_latent_batch(x_raw, model)?;
    let mut out = String::from("index,p_plus,label_pred,m_star,s_star\n");
    for (i, lat) in latents.iter().enumerate() {
        let p = stats::normal_cdf(lat.mean / (lat.var + 1.0).sqrt());
        let label = if p >= 0.5 { 1 } else { -1 };
        out.push_str(&format!("{},{},{},{},{}\n", i, p, label, lat.mean, lat.var));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use crate::dataset::{gaussian_blobs, Standardization};
    use crate::ep::{self, SiteFactors};
    use crate::kernel::Hyperparameters;
    use crate::trainer::{train_batch, TrainConfig, TrainMeta, TrainMode};
    use approx::assert_relative_eq;

    fn untrained_model(n: usize, m: usize, seed: u64) -> (Model, DMatrix<f64>) {
        let data = gaussian_blobs(n, 2, 1.0, seed);
        let hyper = Hyperparameters::init(&data, m, seed).unwrap();
        let bundle = kernel::build_bundle(&data.inputs, &hyper).unwrap();
        let sites = SiteFactors::init(n);
        let posterior = ep::reconstruct(&bundle, &sites).unwrap();
        let model = Model {
            hyper,
            sites,
            posterior,
            standardization: Standardization::identity(2),
            meta: TrainMeta {
                mode: TrainMode::Batch,
                seed,
                iterations_run: 0,
                total_sweeps: 0,
                final_log_zq: 0.0,
                optimizer: None,
            },
        };
        (model, data.inputs)
    }

    #[test]
    fn untrained_model_predicts_prior() {
        let (model, x) = untrained_model(15, 5, 3);
        for i in 0..5 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let lat = predict_latent(&row, &model).unwrap();
            assert_eq!(lat.mean, 0.0);
            let p = predict_proba(&row, &model).unwrap();
            assert_relative_eq!(p, 0.5, epsilon = 1e-15);
        }
        // far from data and inducing points, s⋆ → k⋆⋆ = σ²; everywhere with
        // zero sites the Σ term cancels the Nyström subtraction.
        let lat = predict_latent(&[40.0, -35.0], &model).unwrap();
        assert_relative_eq!(lat.var, model.hyper.amplitude(), max_relative = 1e-10);
        let lat2 = predict_latent(&[0.3, 0.1], &model).unwrap();
        assert_relative_eq!(lat2.var, model.hyper.amplitude(), max_relative = 1e-10);
    }

    #[test]
    fn scalar_model_closed_form() {
        // m = 1, x⋆ at the single inducing point: everything is scalar.
        let (mut model, _) = untrained_model(6, 1, 5);
        // inject a non-trivial posterior
        model.posterior.mu[0] = 0.7;
        model.posterior.sigma[(0, 0)] = 0.4;
        let z: Vec<f64> = model.hyper.inducing.row(0).iter().copied().collect();
        let lat = predict_latent(&z, &model).unwrap();
        let prior = kernel::build_prior(&model.hyper).unwrap();
        let kzz = prior.kmm[(0, 0)];
        let kstar = kernel::k_eval(&z, &z, false, &model.hyper); // σ², no noise
        let u = kstar / kzz;
        assert_relative_eq!(lat.mean, u * 0.7, max_relative = 1e-12);
        let want_var = model.hyper.amplitude() - u * kstar + u * 0.4 * u;
        assert_relative_eq!(lat.var, want_var, max_relative = 1e-12);
    }

    #[test]
    fn predictive_moments_match_monte_carlo() {
        // m⋆, s⋆ against Monte-Carlo integration of ∫ p(f⋆|f̄) q(f̄) df̄
        // using a deterministic low-discrepancy-ish sampler.
        let (mut model, _) = untrained_model(20, 5, 7);
        // posterior with structure: Σ = 0.3·Kmm, μ alternating
        let prior = kernel::build_prior(&model.hyper).unwrap();
        model.posterior.sigma = &prior.kmm * 0.3;
        for i in 0..5 {
            model.posterior.mu[i] = if i % 2 == 0 { 0.5 } else { -0.3 };
        }
        let xstar = [0.4, -0.2];
        let lat = predict_latent(&xstar, &model).unwrap();

        // MC: f̄ ~ N(μ, Σ) via Cholesky, then E[f⋆|f̄] = υ⋆ᵀf̄ plus the
        // conditional variance k⋆⋆ − υ⋆ᵀk⋆.
        let lchol = nalgebra::Cholesky::new(model.posterior.sigma.clone()).unwrap();
        let l = lchol.l();
        let kstar = kernel::signal_matrix(
            &DMatrix::from_row_slice(1, 2, &xstar),
            &model.hyper.inducing,
            &model.hyper,
        );
        let upsilon = prior.chol.solve(&kstar.transpose());
        let cond_var = model.hyper.amplitude() - upsilon.column(0).dot(&kstar.row(0).transpose());
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        use rand::Rng;
        let mut mean_acc = 0.0;
        let mut var_acc = 0.0;
        let samples = 1_000_000;
        for _ in 0..samples {
            let z = DVector::from_fn(5, |_, _| {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            });
            let fbar = &model.posterior.mu + &l * z;
            let proj = upsilon.column(0).dot(&fbar);
            mean_acc += proj;
            var_acc += proj * proj;
        }
        let mc_mean = mean_acc / samples as f64;
        let mc_var = var_acc / samples as f64 - mc_mean * mc_mean + cond_var;
        assert!((lat.mean - mc_mean).abs() < 3e-3, "{} vs {}", lat.mean, mc_mean);
        assert!((lat.var - mc_var).abs() / lat.var < 5e-3, "{} vs {}", lat.var, mc_var);
    }

    #[test]
    fn proba_basics() {
        let (mut model, _) = untrained_model(10, 3, 11);
        model.posterior.mu[0] = 1.0;
        // p(+1) + p(−1) = 1 exactly, monotone in the mean
        let p1 = predict_proba(&[0.1, 0.2], &model).unwrap();
        assert!(p1 > 0.0 && p1 < 1.0);
        // Φ(1): engineered point where m⋆/√(s⋆+1) = 1 is awkward to build
        // directly; check the cdf value instead
        assert_relative_eq!(stats::normal_cdf(1.0), 0.841345, epsilon = 1e-6);
        // sign-flipped posterior mean flips the probability
        let mut flipped = model.clone();
        flipped.posterior.mu = -&model.posterior.mu;
        let p = predict_proba(&[0.5, -0.4], &model).unwrap();
        let pf = predict_proba(&[0.5, -0.4], &flipped).unwrap();
        assert_relative_eq!(p, 1.0 - pf, epsilon = 1e-12);
    }

    #[test]
    fn batch_prediction_equals_per_point() {
        let data = gaussian_blobs(60, 2, 1.2, 13);
        let mut config = TrainConfig::batch(10);
        config.iterations = 20;
        config.seed = 13;
        let (model, _) = train_batch(&data, &config).unwrap();
        let probe = gaussian_blobs(7, 2, 1.0, 14);
        let batch = predict_latent_batch(&probe.inputs, &model).unwrap();
        for i in 0..7 {
            let row: Vec<f64> = probe.inputs.row(i).iter().copied().collect();
            let single = predict_latent(&row, &model).unwrap();
            assert!((batch[i].mean - single.mean).abs() < 1e-12);
            assert!((batch[i].var - single.var).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_separated_blobs() {
        let data = gaussian_blobs(200, 2, 2.5, 17);
        let (train, test) = crate::dataset::split(&data, 0.2, 1).unwrap();
        let mut config = TrainConfig::batch(20);
        config.iterations = 40;
        config.seed = 17;
        let (model, _) = train_batch(&train, &config).unwrap();
        let rep = evaluate(&model, &test).unwrap();
        assert!(rep.error_rate <= 0.05, "error {}", rep.error_rate);
        assert!(rep.avg_neg_log_likelihood < 0.2, "nll {}", rep.avg_neg_log_likelihood);
        assert_eq!(rep.n_test, test.n());
    }

    #[test]
    fn uninformative_model_nll_is_log_two() {
        let (model, x) = untrained_model(12, 4, 19);
        let test = Dataset {
            inputs: x.rows(0, 12).into_owned(),
            labels: DVector::from_fn(12, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }),
        };
        let rep = evaluate(&model, &test).unwrap();
        assert_relative_eq!(rep.avg_neg_log_likelihood, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn flipping_labels_complements_error_rate() {
        let data = gaussian_blobs(80, 2, 1.5, 23);
        let (train, test) = crate::dataset::split(&data, 0.25, 2).unwrap();
        let mut config = TrainConfig::batch(12);
        config.iterations = 25;
        config.seed = 23;
        let (model, _) = train_batch(&train, &config).unwrap();
        let rep = evaluate(&model, &test).unwrap();
        let flipped = Dataset {
            inputs: test.inputs.clone(),
            labels: -&test.labels,
        };
        let rep_f = evaluate(&model, &flipped).unwrap();
        assert_relative_eq!(rep.error_rate + rep_f.error_rate, 1.0, epsilon = 1e-12);
    }
}
