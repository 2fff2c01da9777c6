//! Master–worker distributed training.
//!
//! The data is split across K stateful workers. Each synchronous round the
//! master broadcasts the posterior snapshot (and the hyper-parameters when
//! they changed); every worker refines its partition's sites against that
//! snapshot and returns the product of its approximate factors as natural-
//! parameter aggregates, an O(m²) message independent of partition size.
//! The master combines the aggregates with the prior, broadcasts the fresh
//! posterior, collects gradient partials, takes the ascent step and
//! triggers a re-aggregation under the new kernel.
//!
//! Two transports share this protocol: an in-process pool (default) and
//! length-prefixed JSON over TCP (`wire`).

pub mod wire;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{self, Dataset, Standardization};
use crate::ep::{self, PosteriorApprox, SiteFactors};
use crate::error::{Result, SepError};
use crate::kernel::{self, Hyperparameters, PriorFactor, RowBlock};
use crate::linalg;
use crate::objective::{self, GradientVector};
use crate::trainer::{
    CurveRecord, HyperSchedule, LearningCurve, Model, TrainConfig, TrainMeta, TrainMode,
};

pub const PROTOCOL_VERSION: &str = "sep/1";

/// One worker's share of the data.
#[derive(Debug, Clone)]
pub struct Partition {
    pub worker_id: usize,
    pub indices: Vec<usize>,
}

/// Split n instances into K balanced partitions, deterministically.
pub fn partition(n: usize, k: usize, seed: u64) -> Result<Vec<Partition>> {
    if k == 0 || k > n {
        return Err(SepError::InvalidArg(format!(
            "need 1 <= K <= n; K={k}, n={n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15_7b1);
    idx.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut cursor = 0;
    for w in 0..k {
        let size = base + usize::from(w < extra);
        out.push(Partition {
            worker_id: w,
            indices: idx[cursor..cursor + size].to_vec(),
        });
        cursor += size;
    }
    Ok(out)
}

/// Worker→master aggregate of a round: the product of the partition's
/// approximate factors in natural parameters, plus bookkeeping.
#[derive(Debug, Clone)]
pub struct PartitionMessage {
    pub worker_id: usize,
    pub epoch: u64,
    /// Σ_{j∈D_k} ν̃_j υ_j υ_jᵀ (m×m, symmetric)
    pub precision_contribution: DMatrix<f64>,
    /// Σ_{j∈D_k} μ̃_j υ_j
    pub linear_contribution: DVector<f64>,
    /// Σ_{j∈D_k} log Z̃_j against the posterior this message answers
    pub log_ztilde_sum: f64,
    /// site-term gradient partial (present in the gradient phase)
    pub gradient_site_partial: Option<GradientVector>,
    /// (global index, ν̃, μ̃) of sites that changed this round
    pub site_deltas: Vec<(usize, f64, f64)>,
    pub skipped: usize,
}

/// A stateful in-process worker owning one partition.
pub struct LocalWorker {
    pub id: usize,
    pub indices: Vec<usize>,
    x_rows: DMatrix<f64>,
    labels: DVector<f64>,
    nu: DVector<f64>,
    mu: DVector<f64>,
    log_s: DVector<f64>,
    pending: Option<(DVector<f64>, DVector<f64>, DVector<f64>)>,
    hyper: Option<Hyperparameters>,
    prior: Option<PriorFactor>,
    rows: Option<RowBlock>,
    /// fail the sweep at this epoch once (fault-injection hook)
    pub fail_at_epoch: Option<u64>,
}

impl LocalWorker {
    pub fn new(partition: &Partition, x_std: &DMatrix<f64>, labels: &DVector<f64>) -> Self {
        let k = partition.indices.len();
        let d = x_std.ncols();
        let x_rows = DMatrix::from_fn(k, d, |i, j| x_std[(partition.indices[i], j)]);
        let y = DVector::from_fn(k, |i, _| labels[partition.indices[i]]);
        Self {
            id: partition.worker_id,
            indices: partition.indices.clone(),
            x_rows,
            labels: y,
            nu: DVector::zeros(k),
            mu: DVector::zeros(k),
            log_s: DVector::zeros(k),
            pending: None,
            hyper: None,
            prior: None,
            rows: None,
            fail_at_epoch: None,
        }
    }

    fn ensure_kernel(&mut self, hyper: &Hyperparameters) -> Result<()> {
        let stale = self
            .hyper
            .as_ref()
            .is_none_or(|h| h.version() != hyper.version());
        if stale {
            let prior = kernel::build_prior(hyper)?;
            let rows = kernel::row_block(&self.x_rows, hyper, &prior.chol);
            self.hyper = Some(hyper.clone());
            self.prior = Some(prior);
            self.rows = Some(rows);
        }
        Ok(())
    }

    /// Phase 1: refine every site against the snapshot; the new parameters
    /// stay pending until the master confirms the round. The returned
    /// aggregates describe the refined (pending) sites.
    pub fn sweep(
        &mut self,
        epoch: u64,
        hyper: &Hyperparameters,
        posterior: &PosteriorApprox,
        rho: f64,
    ) -> Result<PartitionMessage> {
        if self.fail_at_epoch == Some(epoch) {
            self.fail_at_epoch = None;
            return Err(SepError::Distributed(format!(
                "worker {} injected fault at epoch {epoch}",
                self.id
            )));
        }
        self.ensure_kernel(hyper)?;
        let rows = self.rows.as_ref().unwrap();
        let proj = posterior.project(&rows.upsilon);
        let refined = ep::refine_sites(
            &proj,
            &rows.fitc,
            &self.labels,
            &self.nu,
            &self.mu,
            &self.log_s,
            rho,
        );
        let precision = linalg::weighted_gram(&rows.upsilon, &refined.nu);
        let linear = linalg::weighted_colsum(&rows.upsilon, &refined.mu);
        let mut site_deltas = Vec::new();
        for i in 0..self.indices.len() {
            if refined.nu[i] != self.nu[i] || refined.mu[i] != self.mu[i] {
                site_deltas.push((self.indices[i], refined.nu[i], refined.mu[i]));
            }
        }
        let log_zi_sum = refined.log_zi.iter().filter(|v| v.is_finite()).sum();
        let skipped = refined.skipped;
        self.pending = Some((refined.nu, refined.mu, refined.log_s));
        Ok(PartitionMessage {
            worker_id: self.id,
            epoch,
            precision_contribution: precision,
            linear_contribution: linear,
            log_ztilde_sum: log_zi_sum,
            gradient_site_partial: None,
            site_deltas,
            skipped,
        })
    }

    /// Phase 2: the master's combined posterior confirms the round. Commits
    /// the pending sites and evaluates the site terms of the objective and
    /// (optionally) the gradient against the fresh posterior.
    pub fn finish(
        &mut self,
        posterior: &PosteriorApprox,
        want_grad: bool,
    ) -> Result<(f64, Option<GradientVector>)> {
        if let Some((nu, mu, log_s)) = self.pending.take() {
            self.nu = nu;
            self.mu = mu;
            self.log_s = log_s;
        }
        let rows = self.rows.as_ref().unwrap();
        let hyper = self.hyper.as_ref().unwrap();
        let prior = self.prior.as_ref().unwrap();
        let site_rows = objective::SiteRows {
            x: &self.x_rows,
            knm: &rows.knm,
            upsilon: &rows.upsilon,
            fitc: &rows.fitc,
            y: &self.labels,
            nu: &self.nu,
            mu: &self.mu,
            indices: Some(&self.indices),
        };
        let ztilde = objective::site_log_ztilde(&site_rows, posterior)?.sum();
        let grad = if want_grad {
            Some(GradientVector {
                values: objective::site_gradient_part(
                    &site_rows,
                    hyper,
                    &prior.kmm,
                    &prior.chol,
                    prior.jitter,
                    posterior,
                    1.0,
                )?,
            })
        } else {
            None
        };
        Ok((ztilde, grad))
    }

    /// Phase 3 (after a hyper-parameter step): rebuild kernel rows and
    /// return the aggregates of the unchanged committed sites.
    pub fn reaggregate(
        &mut self,
        hyper: &Hyperparameters,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.ensure_kernel(hyper)?;
        let rows = self.rows.as_ref().unwrap();
        Ok((
            linalg::weighted_gram(&rows.upsilon, &self.nu),
            linalg::weighted_colsum(&rows.upsilon, &self.mu),
        ))
    }

    pub fn sites(&self) -> (Vec<usize>, DVector<f64>, DVector<f64>, DVector<f64>) {
        (
            self.indices.clone(),
            self.nu.clone(),
            self.mu.clone(),
            self.log_s.clone(),
        )
    }
}

/// Single-round combine: Σ = (Kmm⁻¹ + Σ_k A_k)⁻¹, μ = Σ Σ_k h_k, reduced
/// in worker-id order. Rejects missing or duplicated workers.
pub fn master_combine(
    messages: &[PartitionMessage],
    prior: &PriorFactor,
    expected_workers: usize,
    bundle_version: u64,
) -> Result<PosteriorApprox> {
    let m = prior.kmm.nrows();
    let mut seen = vec![false; expected_workers];
    for msg in messages {
        if msg.worker_id >= expected_workers || seen[msg.worker_id] {
            return Err(SepError::Distributed(format!(
                "duplicate or unknown worker id {}",
                msg.worker_id
            )));
        }
        seen[msg.worker_id] = true;
    }
    let missing: Vec<usize> = (0..expected_workers).filter(|&w| !seen[w]).collect();
    if !missing.is_empty() {
        return Err(SepError::Distributed(format!(
            "missing worker messages: {missing:?}"
        )));
    }
    let mut by_id: Vec<&PartitionMessage> = messages.iter().collect();
    by_id.sort_by_key(|m| m.worker_id);
    let mut precision = DMatrix::zeros(m, m);
    let mut linear = DVector::zeros(m);
    for msg in by_id {
        precision += &msg.precision_contribution;
        linear += &msg.linear_contribution;
    }
    let bundle_like = kernel::KernelBundle {
        kmm: prior.kmm.clone(),
        chol: prior.chol.clone(),
        log_det_kmm: prior.log_det,
        jitter: prior.jitter,
        knm: DMatrix::zeros(0, m),
        kdiag: DVector::zeros(0),
        upsilon: DMatrix::zeros(m, 0),
        fitc_diag: DVector::zeros(0),
        hyper_version: bundle_version,
    };
    ep::reconstruct_from_natural(&bundle_like, &precision, &linear)
}

/// One self-contained worker round: refine one partition against a
/// snapshot and aggregate. Wraps [`LocalWorker::sweep`] for callers that
/// hold partitions themselves.
pub fn worker_round(
    worker: &mut LocalWorker,
    epoch: u64,
    hyper: &Hyperparameters,
    posterior: &PosteriorApprox,
    rho: f64,
) -> Result<PartitionMessage> {
    let msg = worker.sweep(epoch, hyper, posterior, rho)?;
    // immediately committed in the single-call form
    worker.finish(posterior, false)?;
    Ok(msg)
}

/// Transport abstraction over the round protocol.
pub trait WorkerPool {
    fn num_workers(&self) -> usize;
    fn sweep_round(
        &mut self,
        epoch: u64,
        hyper: &Hyperparameters,
        posterior: &PosteriorApprox,
        rho: f64,
    ) -> Result<Vec<PartitionMessage>>;
    /// Returns per-worker (log Z̃ sum, gradient partial) in worker order.
    fn finish_round(
        &mut self,
        epoch: u64,
        posterior: &PosteriorApprox,
        want_grad: bool,
    ) -> Result<Vec<(f64, Option<GradientVector>)>>;
    fn reaggregate_round(
        &mut self,
        hyper: &Hyperparameters,
    ) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>>;
    fn gather_sites(&mut self, n: usize) -> Result<SiteFactors>;
    fn shutdown(&mut self);
}

/// In-process pool: workers run concurrently, results reduce in id order.
pub struct LocalPool {
    pub workers: Vec<LocalWorker>,
}

impl LocalPool {
    pub fn new(data_std: &DMatrix<f64>, labels: &DVector<f64>, k: usize, seed: u64) -> Result<Self> {
        let parts = partition(data_std.nrows(), k, seed)?;
        let workers = parts
            .iter()
            .map(|p| LocalWorker::new(p, data_std, labels))
            .collect();
        Ok(Self { workers })
    }
}

impl WorkerPool for LocalPool {
    fn num_workers(&self) -> usize {
        self.workers.len()
    }

    fn sweep_round(
        &mut self,
        epoch: u64,
        hyper: &Hyperparameters,
        posterior: &PosteriorApprox,
        rho: f64,
    ) -> Result<Vec<PartitionMessage>> {
        let results: Vec<Result<PartitionMessage>> = self
            .workers
            .par_iter_mut()
            .map(|w| w.sweep(epoch, hyper, posterior, rho))
            .collect();
        results.into_iter().collect()
    }

    fn finish_round(
        &mut self,
        _epoch: u64,
        posterior: &PosteriorApprox,
        want_grad: bool,
    ) -> Result<Vec<(f64, Option<GradientVector>)>> {
        let results: Vec<Result<(f64, Option<GradientVector>)>> = self
            .workers
            .par_iter_mut()
            .map(|w| w.finish(posterior, want_grad))
            .collect();
        results.into_iter().collect()
    }

    fn reaggregate_round(
        &mut self,
        hyper: &Hyperparameters,
    ) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
        let results: Vec<Result<(DMatrix<f64>, DVector<f64>)>> = self
            .workers
            .par_iter_mut()
            .map(|w| w.reaggregate(hyper))
            .collect();
        results.into_iter().collect()
    }

    fn gather_sites(&mut self, n: usize) -> Result<SiteFactors> {
        let mut sites = SiteFactors::init(n);
        for w in &self.workers {
            let (idx, nu, mu, log_s) = w.sites();
            for (j, &i) in idx.iter().enumerate() {
                sites.nu[i] = nu[j];
                sites.mu[i] = mu[j];
                sites.log_s[i] = log_s[j];
            }
        }
        Ok(sites)
    }

    fn shutdown(&mut self) {}
}

fn combine_from_aggregates(
    parts: &[(DMatrix<f64>, DVector<f64>)],
    prior: &PriorFactor,
    bundle_version: u64,
) -> Result<PosteriorApprox> {
    let m = prior.kmm.nrows();
    let mut precision = DMatrix::zeros(m, m);
    let mut linear = DVector::zeros(m);
    for (a, h) in parts {
        precision += a;
        linear += h;
    }
    let bundle_like = kernel::KernelBundle {
        kmm: prior.kmm.clone(),
        chol: prior.chol.clone(),
        log_det_kmm: prior.log_det,
        jitter: prior.jitter,
        knm: DMatrix::zeros(0, m),
        kdiag: DVector::zeros(0),
        upsilon: DMatrix::zeros(m, 0),
        fitc_diag: DVector::zeros(0),
        hyper_version: bundle_version,
    };
    ep::reconstruct_from_natural(&bundle_like, &precision, &linear)
}

/// Distributed training over any transport. Equivalent to
/// [`crate::trainer::train_batch`] run on a single node: every iteration
/// performs one synchronized parallel sweep, one combine, one gradient
/// reduction and one hyper-parameter step, with a retry on worker failure.
pub fn distributed_train_with_pool<P: WorkerPool>(
    data: &Dataset,
    config: &TrainConfig,
    pool: &mut P,
    eval_set: Option<&Dataset>,
) -> Result<(Model, LearningCurve)> {
    config.validate(data.n())?;
    if let HyperSchedule::Outer { .. } = config.hyper_schedule {
        return Err(SepError::InvalidArg(
            "distributed training supports the inner schedule only".into(),
        ));
    }
    let (x_std, standardization, labels) = if config.standardize {
        let (s, st) = dataset::standardize(data);
        (s.inputs, st, s.labels)
    } else {
        (
            data.inputs.clone(),
            Standardization::identity(data.dim()),
            data.labels.clone(),
        )
    };
    let std_train = Dataset {
        inputs: x_std.clone(),
        labels: labels.clone(),
    };
    let mut hyper = Hyperparameters::init(&std_train, config.num_inducing, config.seed)?;
    let mut prior = kernel::build_prior(&hyper)?;
    let mut posterior = {
        let m = hyper.num_inducing();
        combine_from_aggregates(
            &[(DMatrix::zeros(m, m), DVector::zeros(m))],
            &prior,
            hyper.version(),
        )?
    };
    let mut optimizer = config.make_optimizer(&hyper);
    let rho = config.damping();
    let k = pool.num_workers();
    let mut curve = LearningCurve::default();
    let start = Instant::now();
    let mut last_log_zq = f64::NAN;
    let mut total_sweeps = 0usize;

    for iter in 1..=config.iterations {
        let epoch = iter as u64;
        // phase 1 with one retry
        let messages = match pool.sweep_round(epoch, &hyper, &posterior, rho) {
            Ok(msgs) => msgs,
            Err(first) => {
                eprintln!("round {iter} failed ({first}); retrying once");
                pool.sweep_round(epoch, &hyper, &posterior, rho)?
            }
        };
        total_sweeps += 1;
        let combined = master_combine(&messages, &prior, k, hyper.version())?;
        // phase 2: commit + objective site terms + gradient partials
        let finishes = pool.finish_round(epoch, &combined, config.learn_hyper)?;
        let prior_terms = combined.half_log_det_ratio + 0.5 * combined.mahalanobis();
        let log_zq = prior_terms + finishes.iter().map(|(z, _)| z).sum::<f64>();
        last_log_zq = log_zq;
        posterior = combined;

        if config.learn_hyper {
            let mut grad =
                objective::prior_gradient_part(&hyper, &prior.kmm, &prior.chol, prior.jitter, &posterior);
            for (_, g) in &finishes {
                let g = g.as_ref().ok_or_else(|| {
                    SepError::Distributed("missing gradient partial".into())
                })?;
                grad += &g.values;
            }
            let delta = optimizer.step(&GradientVector { values: grad });
            hyper.apply_step(&delta, config.freeze_noise);
            prior = kernel::build_prior(&hyper)?;
            // phase 3: aggregates under the new kernel, same sites
            let parts = pool.reaggregate_round(&hyper)?;
            posterior = combine_from_aggregates(&parts, &prior, hyper.version())?;
        }

        let (test_error, test_nll) = if config.eval_every > 0
            && iter % config.eval_every == 0
            && eval_set.is_some()
        {
            let sites = pool.gather_sites(data.n())?;
            let model = Model {
                hyper: hyper.clone(),
                sites,
                posterior: posterior.clone(),
                standardization: standardization.clone(),
                meta: TrainMeta {
                    mode: TrainMode::Distributed,
                    seed: config.seed,
                    iterations_run: iter,
                    total_sweeps,
                    final_log_zq: log_zq,
                    optimizer: None,
                },
            };
            match crate::predictor::evaluate(&model, eval_set.unwrap()) {
                Ok(rep) => (Some(rep.error_rate), Some(rep.avg_neg_log_likelihood)),
                Err(_) => (None, None),
            }
        } else {
            (None, None)
        };
        curve.push(CurveRecord {
            iteration: iter,
            seconds: start.elapsed().as_secs_f64(),
            log_zq,
            test_error,
            test_nll,
        });
    }

    let sites = pool.gather_sites(data.n())?;
    pool.shutdown();
    let model = Model {
        hyper,
        sites,
        posterior,
        standardization,
        meta: TrainMeta {
            mode: TrainMode::Distributed,
            seed: config.seed,
            iterations_run: config.iterations,
            total_sweeps,
            final_log_zq: last_log_zq,
            optimizer: Some(optimizer.clone()),
        },
    };
    Ok((model, curve))
}

/// Distributed training with the in-process pool.
pub fn distributed_train(
    data: &Dataset,
    config: &TrainConfig,
    k: usize,
) -> Result<(Model, LearningCurve)> {
    distributed_train_local(data, config, k, None, None)
}

/// In-process distributed training with optional eval set and a
/// fault-injection hook `(worker id, epoch)` used by the tests.
pub fn distributed_train_local(
    data: &Dataset,
    config: &TrainConfig,
    k: usize,
    eval_set: Option<&Dataset>,
    fail_once: Option<(usize, u64)>,
) -> Result<(Model, LearningCurve)> {
    let (x_std, labels) = if config.standardize {
        let (s, _) = dataset::standardize(data);
        (s.inputs, s.labels)
    } else {
        (data.inputs.clone(), data.labels.clone())
    };
    let mut pool = LocalPool::new(&x_std, &labels, k, config.seed)?;
    if let Some((w, epoch)) = fail_once {
        pool.workers[w].fail_at_epoch = Some(epoch);
    }
    distributed_train_with_pool(data, config, &mut pool, eval_set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gaussian_blobs;
    use crate::trainer::train_batch;

    #[test]
    fn partition_balances_and_is_deterministic() {
        let parts = partition(10, 3, 7).unwrap();
        let mut sizes: Vec<usize> = parts.iter().map(|p| p.indices.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        let mut all: Vec<usize> = parts.iter().flat_map(|p| p.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let again = partition(10, 3, 7).unwrap();
        for (a, b) in parts.iter().zip(&again) {
            assert_eq!(a.indices, b.indices);
        }
        assert!(partition(5, 6, 0).is_err());
        let one = partition(8, 1, 0).unwrap();
        assert_eq!(one[0].indices.len(), 8);
    }

    #[test]
    fn worker_message_matches_brute_force_aggregates() {
        let data = gaussian_blobs(24, 2, 1.0, 3);
        let (std_data, _) = dataset::standardize(&data);
        let hyper = Hyperparameters::init(&std_data, 5, 3).unwrap();
        let bundle = kernel::build_bundle(&std_data.inputs, &hyper).unwrap();
        let sites = SiteFactors::init(24);
        let posterior = ep::reconstruct(&bundle, &sites).unwrap();
        let parts = partition(24, 3, 3).unwrap();
        let mut worker = LocalWorker::new(&parts[1], &std_data.inputs, &std_data.labels);
        let msg = worker
            .sweep(1, &hyper, &posterior, 0.7)
            .expect("sweep failed");
        // brute force from the committed pending sites
        worker.finish(&posterior, false).unwrap();
        let (idx, nu, mu, _) = worker.sites();
        let m = 5;
        let mut prec = DMatrix::zeros(m, m);
        let mut lin = DVector::zeros(m);
        for (j, &i) in idx.iter().enumerate() {
            let u = bundle.upsilon.column(i).into_owned();
            prec += nu[j] * &u * u.transpose();
            lin += mu[j] * &u;
        }
        assert!((&msg.precision_contribution - &prec).abs().max() < 1e-12);
        assert!((&msg.linear_contribution - &lin).abs().max() < 1e-12);
        let asym = (&msg.precision_contribution
            - msg.precision_contribution.transpose())
        .abs()
        .max();
        assert!(asym < 1e-12);
    }

    #[test]
    fn empty_partition_yields_zero_aggregates() {
        let data = gaussian_blobs(6, 2, 1.0, 5);
        let (std_data, _) = dataset::standardize(&data);
        let hyper = Hyperparameters::init(&std_data, 3, 5).unwrap();
        let bundle = kernel::build_bundle(&std_data.inputs, &hyper).unwrap();
        let posterior = ep::reconstruct(&bundle, &SiteFactors::init(6)).unwrap();
        let part = Partition {
            worker_id: 0,
            indices: vec![],
        };
        let mut worker = LocalWorker::new(&part, &std_data.inputs, &std_data.labels);
        let msg = worker.sweep(1, &hyper, &posterior, 0.5).unwrap();
        assert_eq!(msg.precision_contribution.abs().max(), 0.0);
        assert_eq!(msg.linear_contribution.abs().max(), 0.0);
        assert_eq!(msg.site_deltas.len(), 0);
    }

    #[test]
    fn combine_equals_single_node_reconstruct() {
        let data = gaussian_blobs(30, 2, 1.0, 9);
        let (std_data, _) = dataset::standardize(&data);
        let hyper = Hyperparameters::init(&std_data, 4, 9).unwrap();
        let bundle = kernel::build_bundle(&std_data.inputs, &hyper).unwrap();
        let prior = kernel::build_prior(&hyper).unwrap();
        let zero = SiteFactors::init(30);
        let posterior = ep::reconstruct(&bundle, &zero).unwrap();
        // one sweep on every worker, then combine
        for k in [1usize, 2, 4] {
            let parts = partition(30, k, 9).unwrap();
            let mut msgs = Vec::new();
            let mut gathered = SiteFactors::init(30);
            for p in &parts {
                let mut w = LocalWorker::new(p, &std_data.inputs, &std_data.labels);
                let msg = w.sweep(1, &hyper, &posterior, 0.6).unwrap();
                w.finish(&posterior, false).unwrap();
                let (idx, nu, mu, log_s) = w.sites();
                for (j, &i) in idx.iter().enumerate() {
                    gathered.nu[i] = nu[j];
                    gathered.mu[i] = mu[j];
                    gathered.log_s[i] = log_s[j];
                }
                msgs.push(msg);
            }
            let combined = master_combine(&msgs, &prior, k, hyper.version()).unwrap();
            // reference: plain parallel sweep on one node
            let reference = ep::parallel_sweep(&bundle, &zero, &posterior, &std_data.labels, 0.6)
                .unwrap();
            let dmu = (&combined.mu - &reference.posterior.mu).abs().max();
            let dsig = (&combined.sigma - &reference.posterior.sigma).abs().max();
            assert!(dmu < 1e-10, "K={k} mu diff {dmu}");
            assert!(dsig < 1e-10, "K={k} sigma diff {dsig}");
            for i in 0..30 {
                assert!((gathered.nu[i] - reference.sites.nu[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn message_order_does_not_matter() {
        let data = gaussian_blobs(20, 2, 1.0, 13);
        let (std_data, _) = dataset::standardize(&data);
        let hyper = Hyperparameters::init(&std_data, 4, 13).unwrap();
        let prior = kernel::build_prior(&hyper).unwrap();
        let bundle = kernel::build_bundle(&std_data.inputs, &hyper).unwrap();
        let posterior = ep::reconstruct(&bundle, &SiteFactors::init(20)).unwrap();
        let parts = partition(20, 3, 13).unwrap();
        let mut msgs = Vec::new();
        for p in &parts {
            let mut w = LocalWorker::new(p, &std_data.inputs, &std_data.labels);
            msgs.push(w.sweep(1, &hyper, &posterior, 0.5).unwrap());
        }
        let a = master_combine(&msgs, &prior, 3, hyper.version()).unwrap();
        msgs.reverse();
        let b = master_combine(&msgs, &prior, 3, hyper.version()).unwrap();
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.sigma, b.sigma);
    }

    #[test]
    fn missing_and_duplicate_workers_are_rejected() {
        let data = gaussian_blobs(12, 2, 1.0, 17);
        let (std_data, _) = dataset::standardize(&data);
        let hyper = Hyperparameters::init(&std_data, 3, 17).unwrap();
        let prior = kernel::build_prior(&hyper).unwrap();
        let bundle = kernel::build_bundle(&std_data.inputs, &hyper).unwrap();
        let posterior = ep::reconstruct(&bundle, &SiteFactors::init(12)).unwrap();
        let parts = partition(12, 2, 17).unwrap();
        let mut w0 = LocalWorker::new(&parts[0], &std_data.inputs, &std_data.labels);
        let msg0 = w0.sweep(1, &hyper, &posterior, 0.5).unwrap();
        match master_combine(std::slice::from_ref(&msg0), &prior, 2, hyper.version()) {
            Err(SepError::Distributed(text)) => assert!(text.contains("missing")),
            other => panic!("expected missing-worker error, got {:?}", other.map(|_| ())),
        }
        match master_combine(&[msg0.clone(), msg0.clone()], &prior, 2, hyper.version()) {
            Err(SepError::Distributed(text)) => assert!(text.contains("duplicate")),
            other => panic!("expected duplicate error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn degenerate_k1_matches_train_batch_exactly() {
        let data = gaussian_blobs(40, 2, 1.0, 21);
        let mut config = TrainConfig::batch(6);
        config.iterations = 15;
        config.seed = 21;
        let (bm, bc) = train_batch(&data, &config).unwrap();
        let (dm, dc) = distributed_train(&data, &config, 1).unwrap();
        for (a, b) in bc.records.iter().zip(&dc.records) {
            assert!(
                (a.log_zq - b.log_zq).abs() <= 1e-10,
                "iter {}: {} vs {}",
                a.iteration,
                a.log_zq,
                b.log_zq
            );
        }
        let dmu = (&bm.posterior.mu - &dm.posterior.mu).abs().max();
        assert!(dmu < 1e-10, "final mu diff {dmu}");
        for i in 0..40 {
            assert!((bm.sites.nu[i] - dm.sites.nu[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn worker_failure_is_retried_and_training_completes() {
        let data = gaussian_blobs(30, 2, 1.0, 23);
        let mut config = TrainConfig::batch(5);
        config.iterations = 8;
        config.seed = 23;
        let (model, curve) =
            distributed_train_local(&data, &config, 3, None, Some((1, 4))).unwrap();
        assert_eq!(curve.records.len(), 8);
        assert!(model.meta.final_log_zq.is_finite());
    }

    #[test]
    fn fixed_points_agree_across_worker_counts() {
        let data = gaussian_blobs(36, 2, 1.1, 29);
        let mut config = TrainConfig::batch(6);
        config.iterations = 120;
        config.seed = 29;
        config.learn_hyper = false;
        let (m1, _) = distributed_train(&data, &config, 1).unwrap();
        let (m3, _) = distributed_train(&data, &config, 3).unwrap();
        for i in 0..36 {
            assert!(
                (m1.sites.nu[i] - m3.sites.nu[i]).abs() < 1e-8,
                "site {i}: {} vs {}",
                m1.sites.nu[i],
                m3.sites.nu[i]
            );
        }
    }
}
