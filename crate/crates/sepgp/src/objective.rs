//! The EP marginal-likelihood estimate log Z_q and its gradients with
//! respect to every hyper-parameter, in full-batch and stochastic form.
//!
//! log Z_q decomposes as g(θ) − g(θ_prior) + Σ_i log Z̃_i. The prior part
//! reduces to ½log|Σ| + ½μᵀΣ⁻¹μ − ½log|Kmm|; each site term expands in the
//! O(m²) scalars of site i's cavity, so the whole evaluation is O(nm²).
//!
//! The gradient treats the site parameters as fixed (valid at EP
//! convergence, and a good approximation away from it): a prior trace term
//! −½tr(Mᵀ ∂Kmm/∂ξ) plus per-site terms that differentiate log Z_i through
//! its direct kernel dependence. All per-site work is batched into
//! matrix products; nothing loops over m×m objects per instance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ep::{PosteriorApprox, SiteFactors};
use crate::error::{Result, SepError};
use crate::kernel::{self, Hyperparameters, KernelBundle};
use crate::linalg;
use crate::stats;

/// Flat gradient aligned with [`Hyperparameters`]' ξ indexing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientVector {
    pub values: DVector<f64>,
}

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: DVector::zeros(len),
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }
}

/// log Z_q with its exact decomposition.
#[derive(Debug, Clone)]
pub struct LogZqReport {
    pub log_zq: f64,
    pub prior_terms: f64,
    pub per_site_log_ztilde: DVector<f64>,
}

/// Everything the per-site evaluation needs for a set of rows. Borrowed
/// views let the batch path reuse the bundle and the stochastic /
/// distributed paths pass gathered row blocks.
pub struct SiteRows<'a> {
    /// k×d inputs
    pub x: &'a DMatrix<f64>,
    /// k×m kernel rows
    pub knm: &'a DMatrix<f64>,
    /// m×k projection columns
    pub upsilon: &'a DMatrix<f64>,
    /// k FITC corrections
    pub fitc: &'a DVector<f64>,
    /// k labels (±1)
    pub y: &'a DVector<f64>,
    /// k site precisions
    pub nu: &'a DVector<f64>,
    /// k site linear coefficients
    pub mu: &'a DVector<f64>,
    /// global instance indices (for error reporting)
    pub indices: Option<&'a [usize]>,
}

impl<'a> SiteRows<'a> {
    pub fn from_bundle(
        bundle: &'a KernelBundle,
        x: &'a DMatrix<f64>,
        sites: &'a SiteFactors,
        y: &'a DVector<f64>,
    ) -> Self {
        Self {
            x,
            knm: &bundle.knm,
            upsilon: &bundle.upsilon,
            fitc: &bundle.fitc_diag,
            y,
            nu: &sites.nu,
            mu: &sites.mu,
            indices: None,
        }
    }

    fn global_index(&self, i: usize) -> usize {
        self.indices.map_or(i, |ids| ids[i])
    }
}

/// Per-site cavity scalars shared by the objective and its gradient.
struct SiteScalars {
    delta: DVector<f64>,
    cav_var: DVector<f64>,
    a: DVector<f64>,
    b: DVector<f64>,
    z: DVector<f64>,
    proj_var: DVector<f64>,
    proj_mean: DVector<f64>,
}

fn site_scalars(rows: &SiteRows, posterior: &PosteriorApprox) -> Result<(SiteScalars, DMatrix<f64>)> {
    let proj = posterior.project(rows.upsilon);
    let k = rows.y.len();
    let mut s = SiteScalars {
        delta: DVector::zeros(k),
        cav_var: DVector::zeros(k),
        a: DVector::zeros(k),
        b: DVector::zeros(k),
        z: DVector::zeros(k),
        proj_var: proj.proj_var,
        proj_mean: proj.proj_mean,
    };
    for i in 0..k {
        let p = s.proj_var[i];
        let q = s.proj_mean[i];
        let delta = 1.0 - rows.nu[i] * p;
        if !(delta > 0.0) {
            return Err(SepError::InconsistentState {
                index: rows.global_index(i),
                value: delta,
            });
        }
        let pc = p / delta;
        let a = q + pc * (rows.nu[i] * q - rows.mu[i]);
        let b = 1.0 + rows.fitc[i] + pc;
        s.delta[i] = delta;
        s.cav_var[i] = pc;
        s.a[i] = a;
        s.b[i] = b;
        s.z[i] = rows.y[i] * a / b.sqrt();
    }
    Ok((s, proj.sv))
}

/// log Z̃_i = log Z_i + g(θ^{\i}) − g(θ) for each row, expanded in cavity
/// scalars:
///   log Z̃_i = log Φ(z_i) − ½log δ_i − μ̃_i q_i + ½ μ̃_i² p_i
///             + ½ C_i (q_i − μ̃_i p_i)²,     C_i = ν̃_i / δ_i
pub fn site_log_ztilde(rows: &SiteRows, posterior: &PosteriorApprox) -> Result<DVector<f64>> {
    let (s, _) = site_scalars(rows, posterior)?;
    let k = rows.y.len();
    let mut out = DVector::zeros(k);
    for i in 0..k {
        let p = s.proj_var[i];
        let q = s.proj_mean[i];
        let c = rows.nu[i] / s.delta[i];
        let resid = q - rows.mu[i] * p;
        out[i] = stats::log_phi(s.z[i]) - 0.5 * s.delta[i].ln() - rows.mu[i] * q
            + 0.5 * rows.mu[i] * rows.mu[i] * p
            + 0.5 * c * resid * resid;
    }
    Ok(out)
}

/// Full log Z_q report for the current state.
pub fn log_zq(
    bundle: &KernelBundle,
    sites: &SiteFactors,
    posterior: &PosteriorApprox,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<LogZqReport> {
    let prior_terms = posterior.half_log_det_ratio + 0.5 * posterior.mahalanobis();
    let rows = SiteRows::from_bundle(bundle, x, sites, y);
    let per_site = site_log_ztilde(&rows, posterior)?;
    let log_zq = prior_terms + per_site.sum();
    Ok(LogZqReport {
        log_zq,
        prior_terms,
        per_site_log_ztilde: per_site,
    })
}

/// −½ M with M = Kmm⁻¹ − Kmm⁻¹ Σ Kmm⁻¹ − Kmm⁻¹ μ μᵀ Kmm⁻¹: the coefficient
/// matrix of ∂Kmm/∂ξ in the prior part of the gradient.
pub fn prior_coefficient(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    posterior: &PosteriorApprox,
) -> DMatrix<f64> {
    let kinv = chol.inverse();
    let w = chol.solve(&posterior.mu);
    let mut m = &kinv - &kinv * &posterior.sigma * &kinv - &w * w.transpose();
    linalg::symmetrize(&mut m);
    m * (-0.5)
}

/// The ηᵀ∂θ_prior − η_priorᵀ∂θ_prior part of the gradient, contracted over
/// every parameter. Only ∂Kmm enters, so no instance rows are needed.
pub fn prior_gradient_part(
    hyper: &Hyperparameters,
    kmm: &DMatrix<f64>,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    jitter: f64,
    posterior: &PosteriorApprox,
) -> DVector<f64> {
    let amm = prior_coefficient(chol, posterior);
    let d = hyper.dim();
    let m = hyper.num_inducing();
    let empty_x = DMatrix::zeros(0, d);
    let empty_knm = DMatrix::zeros(0, m);
    let empty_h = DMatrix::zeros(m, 0);
    let empty_g = DVector::zeros(0);
    kernel::contract_gradient(&empty_x, &empty_knm, hyper, kmm, jitter, &amm, &empty_h, &empty_g)
}

/// Batched site-term aggregates: the coefficient matrices (Amm, H, g) such
/// that `Σ_i ∂log Z_i/∂ξ_j = tr(∂Kmm_j Amm) + Σ_{i,r} ∂Knm_j[i,r] H[r,i]`
/// + ∂kdiag_j·g, holding every cavity fixed.
pub struct SiteAggregates {
    pub amm: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
}

pub fn site_term_aggregates(
    rows: &SiteRows,
    posterior: &PosteriorApprox,
    bundle_chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
) -> Result<SiteAggregates> {
    let (s, sv) = site_scalars(rows, posterior)?;
    let k = rows.y.len();
    let mm = rows.upsilon.nrows();
    // per-site coefficients
    let mut e = DVector::zeros(k);
    let mut f = DVector::zeros(k);
    let mut g = DVector::zeros(k);
    for i in 0..k {
        let ratio = stats::gauss_over_cdf(s.z[i]);
        let beta = ratio * rows.y[i] / s.b[i].sqrt();
        let c1 = (rows.nu[i] * s.proj_mean[i] - rows.mu[i]) / s.delta[i];
        e[i] = beta;
        f[i] = beta * c1 - beta * s.a[i] / (s.b[i] * s.delta[i]);
        g[i] = -beta * s.a[i] / (2.0 * s.b[i]);
    }
    let w = bundle_chol.solve(&posterior.mu);
    let t = linalg::chol_solve_cols(bundle_chol, &sv);
    // H[r,i] = w[r]·e_i + T[r,i]·f_i − 2Υ[r,i]·g_i
    let mut h = DMatrix::zeros(mm, k);
    for i in 0..k {
        for r in 0..mm {
            h[(r, i)] = w[r] * e[i] + t[(r, i)] * f[i] - 2.0 * rows.upsilon[(r, i)] * g[i];
        }
    }
    // Amm = −w (Υe)ᵀ − (T diag f) Υᵀ + Υ diag(g) Υᵀ, symmetrized
    let ue = rows.upsilon * &e;
    let mut tf = t;
    for i in 0..k {
        tf.column_mut(i).scale_mut(f[i]);
    }
    let mut amm = -&w * ue.transpose();
    amm -= tf * rows.upsilon.transpose();
    amm += linalg::weighted_gram(rows.upsilon, &g);
    linalg::symmetrize(&mut amm);
    Ok(SiteAggregates { amm, h, g })
}

/// Gradient of log Z_q with every site held fixed (the matched-moments
/// form), over all instances.
pub fn grad_log_zq(
    x: &DMatrix<f64>,
    hyper: &Hyperparameters,
    bundle: &KernelBundle,
    sites: &SiteFactors,
    posterior: &PosteriorApprox,
    y: &DVector<f64>,
) -> Result<GradientVector> {
    let rows = SiteRows::from_bundle(bundle, x, sites, y);
    grad_from_rows(&rows, hyper, bundle, posterior, 1.0)
}

/// Site-term gradient contribution (no prior part) for the supplied rows,
/// scaled by `scale`. Workers in distributed mode compute exactly this.
pub fn site_gradient_part(
    rows: &SiteRows,
    hyper: &Hyperparameters,
    kmm: &DMatrix<f64>,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    jitter: f64,
    posterior: &PosteriorApprox,
    scale: f64,
) -> Result<DVector<f64>> {
    let agg = site_term_aggregates(rows, posterior, chol)?;
    let amm = &agg.amm * scale;
    let h = &agg.h * scale;
    let g = &agg.g * scale;
    Ok(kernel::contract_gradient(
        rows.x, rows.knm, hyper, kmm, jitter, &amm, &h, &g,
    ))
}

/// Shared gradient engine: prior trace term plus `scale` × the site terms
/// of the supplied rows. `scale` = n/|minibatch| gives the stochastic
/// estimate; 1 with all rows gives the full gradient.
pub fn grad_from_rows(
    rows: &SiteRows,
    hyper: &Hyperparameters,
    bundle: &KernelBundle,
    posterior: &PosteriorApprox,
    scale: f64,
) -> Result<GradientVector> {
    let prior = prior_gradient_part(hyper, &bundle.kmm, &bundle.chol, bundle.jitter, posterior);
    let site = site_gradient_part(
        rows,
        hyper,
        &bundle.kmm,
        &bundle.chol,
        bundle.jitter,
        posterior,
        scale,
    )?;
    Ok(GradientVector {
        values: prior + site,
    })
}

/// Stochastic gradient (prior terms exact, site sum over the minibatch
/// scaled by n/|minibatch|).
pub fn stochastic_grad(
    minibatch: &[usize],
    x: &DMatrix<f64>,
    hyper: &Hyperparameters,
    bundle: &KernelBundle,
    sites: &SiteFactors,
    posterior: &PosteriorApprox,
    y: &DVector<f64>,
    n_total: usize,
) -> Result<GradientVector> {
    if minibatch.is_empty() {
        return Err(SepError::InvalidArg("empty minibatch".into()));
    }
    let k = minibatch.len();
    let d = x.ncols();
    let m = bundle.m();
    let xg = DMatrix::from_fn(k, d, |i, j| x[(minibatch[i], j)]);
    let knm = DMatrix::from_fn(k, m, |i, r| bundle.knm[(minibatch[i], r)]);
    let upsilon = DMatrix::from_fn(m, k, |r, i| bundle.upsilon[(r, minibatch[i])]);
    let fitc = DVector::from_fn(k, |i, _| bundle.fitc_diag[minibatch[i]]);
    let yg = DVector::from_fn(k, |i, _| y[minibatch[i]]);
    let nug = DVector::from_fn(k, |i, _| sites.nu[minibatch[i]]);
    let mug = DVector::from_fn(k, |i, _| sites.mu[minibatch[i]]);
    let rows = SiteRows {
        x: &xg,
        knm: &knm,
        upsilon: &upsilon,
        fitc: &fitc,
        y: &yg,
        nu: &nug,
        mu: &mug,
        indices: Some(minibatch),
    };
    grad_from_rows(&rows, hyper, bundle, posterior, n_total as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gaussian_blobs;
    use crate::ep::{self, SiteFactors};
    use crate::kernel::build_bundle;
    use approx::assert_relative_eq;

    struct Fixture {
        x: DMatrix<f64>,
        y: DVector<f64>,
        hyper: Hyperparameters,
        bundle: KernelBundle,
        sites: SiteFactors,
        posterior: PosteriorApprox,
    }

    fn converged_fixture(n: usize, m: usize, seed: u64) -> Fixture {
        let data = gaussian_blobs(n, 2, 0.9, seed);
        let hyper = Hyperparameters::init(&data, m, seed).unwrap();
        let bundle = build_bundle(&data.inputs, &hyper).unwrap();
        let sites = SiteFactors::init(n);
        let posterior = ep::reconstruct(&bundle, &sites).unwrap();
        let (sites, posterior, _) =
            ep::sweep_to_convergence(&bundle, sites, posterior, &data.labels, 0.5, 1e-12, 2000)
                .unwrap();
        Fixture {
            x: data.inputs,
            y: data.labels,
            hyper,
            bundle,
            sites,
            posterior,
        }
    }

    /// Naive objective route: explicit Gaussian log-normalizers
    /// g(θ') = (m/2)·log 2π + ½log|S| + ½ mᵀS⁻¹m over q, the prior and
    /// every cavity, with dense inverses throughout.
    fn naive_log_zq(f: &Fixture) -> f64 {
        let m = f.bundle.m();
        let g_of = |sigma: &DMatrix<f64>, mu: &DVector<f64>| -> f64 {
            let sinv = sigma.clone().try_inverse().unwrap();
            0.5 * (m as f64) * (2.0 * std::f64::consts::PI).ln()
                + 0.5 * sigma.determinant().ln()
                + 0.5 * (mu.transpose() * &sinv * mu)[(0, 0)]
        };
        let g_q = g_of(&f.posterior.sigma, &f.posterior.mu);
        let g_prior = g_of(&f.bundle.kmm, &DVector::zeros(m));
        let sinv = f.posterior.sigma.clone().try_inverse().unwrap();
        let mut total = g_q - g_prior;
        for i in 0..f.sites.len() {
            let u = f.bundle.upsilon.column(i).into_owned();
            let cav_prec = &sinv - f.sites.nu[i] * &u * u.transpose();
            let cav_sigma = cav_prec.clone().try_inverse().unwrap();
            let cav_mu = &cav_sigma * (&sinv * &f.posterior.mu - f.sites.mu[i] * &u);
            let a = u.dot(&cav_mu);
            let pc = (u.transpose() * &cav_sigma * &u)[(0, 0)];
            let b = 1.0 + f.bundle.fitc_diag[i] + pc;
            let log_zi = stats::log_phi(f.y[i] * a / b.sqrt());
            total += log_zi + g_of(&cav_sigma, &cav_mu) - g_q;
        }
        total
    }

    #[test]
    fn report_identity_is_exact() {
        let f = converged_fixture(12, 4, 5);
        let rep = log_zq(&f.bundle, &f.sites, &f.posterior, &f.x, &f.y).unwrap();
        let total = rep.prior_terms + rep.per_site_log_ztilde.sum();
        assert!((rep.log_zq - total).abs() < 1e-12);
        assert!(rep.log_zq.is_finite());
    }

    #[test]
    fn expanded_form_matches_naive_normalizers_scalar_toy() {
        let f = converged_fixture(1, 1, 2);
        let rep = log_zq(&f.bundle, &f.sites, &f.posterior, &f.x, &f.y).unwrap();
        let naive = naive_log_zq(&f);
        assert_relative_eq!(rep.log_zq, naive, epsilon = 1e-10);
    }

    #[test]
    fn expanded_form_matches_naive_normalizers_random() {
        let f = converged_fixture(25, 4, 9);
        let rep = log_zq(&f.bundle, &f.sites, &f.posterior, &f.x, &f.y).unwrap();
        let naive = naive_log_zq(&f);
        assert!(
            (rep.log_zq - naive).abs() < 1e-8,
            "expanded {} vs naive {}",
            rep.log_zq,
            naive
        );
    }

    #[test]
    fn prior_coefficient_matches_expected_statistics_form() {
        // −½tr(Mᵀ∂K) must equal ηᵀ∂θ_prior − η_priorᵀ∂θ_prior where
        // η = (μ, Σ+μμᵀ), η_prior = (0, Kmm), θ_prior = (0, −½Kmm⁻¹).
        let f = converged_fixture(15, 4, 13);
        let a_prior = prior_coefficient(&f.bundle.chol, &f.posterior);
        let kinv = f.bundle.kmm.clone().try_inverse().unwrap();
        for j in [0usize, 2, 3, 6] {
            let (dmm, _, _) = kernel::grad_bundle(&f.x, &f.hyper, &f.bundle, j);
            let fast = (dmm.transpose() * &a_prior).trace();
            // d(−½K⁻¹)/dξ = ½ K⁻¹ K̇ K⁻¹
            let dtheta2 = 0.5 * &kinv * &dmm * &kinv;
            let eta2 = &f.posterior.sigma + &f.posterior.mu * f.posterior.mu.transpose();
            let naive = (eta2.transpose() * &dtheta2).trace()
                - (f.bundle.kmm.transpose() * &dtheta2).trace();
            assert_relative_eq!(fast, naive, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_frozen_site_finite_differences() {
        let f = converged_fixture(14, 3, 21);
        let grad = grad_log_zq(&f.x, &f.hyper, &f.bundle, &f.sites, &f.posterior, &f.y).unwrap();
        let eval = |hyper: &Hyperparameters| -> f64 {
            let b = build_bundle(&f.x, hyper).unwrap();
            let p = ep::reconstruct(&b, &f.sites).unwrap();
            log_zq(&b, &f.sites, &p, &f.x, &f.y).unwrap().log_zq
        };
        let h = 1e-6;
        for j in 0..f.hyper.param_count() {
            let mut hp = f.hyper.clone();
            hp.set(j, f.hyper.get(j) + h);
            let mut hm = f.hyper.clone();
            hm.set(j, f.hyper.get(j) - h);
            let fd = (eval(&hp) - eval(&hm)) / (2.0 * h);
            assert_relative_eq!(
                grad.values[j],
                fd,
                max_relative = 1e-5,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn mirror_symmetric_inducing_points_have_mirrored_gradients() {
        // A dataset symmetric about x₁ = 0 with two mirror-image inducing
        // points: the x₁-coordinate gradients must be equal magnitude,
        // opposite sign.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..10 {
            let v = 0.25 + 0.1 * i as f64;
            let w = 0.15 * ((i * 7 % 5) as f64 - 2.0);
            xs.push([v, w]);
            ys.push(1.0);
            xs.push([-v, w]);
            ys.push(-1.0);
        }
        let n = xs.len();
        let x = DMatrix::from_fn(n, 2, |i, j| xs[i][j]);
        let y = DVector::from_vec(ys);
        let inducing = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, -0.8, 0.1]);
        let hyper = Hyperparameters::new(DVector::zeros(2), 0.0, 0.1f64.ln(), inducing).unwrap();
        let bundle = build_bundle(&x, &hyper).unwrap();
        let sites = SiteFactors::init(n);
        let posterior = ep::reconstruct(&bundle, &sites).unwrap();
        let (sites, posterior, _) =
            ep::sweep_to_convergence(&bundle, sites, posterior, &y, 0.5, 1e-12, 2000).unwrap();
        let grad = grad_log_zq(&x, &hyper, &bundle, &sites, &posterior, &y).unwrap();
        let d = 2;
        let g_row0_x = grad.values[d + 2];
        let g_row1_x = grad.values[d + 2 + d];
        assert_relative_eq!(g_row0_x, -g_row1_x, max_relative = 1e-8, epsilon = 1e-12);
        // and the x₂ (non-mirror axis) gradients are equal
        assert_relative_eq!(
            grad.values[d + 3],
            grad.values[d + 2 + d + 1],
            max_relative = 1e-8,
            epsilon = 1e-12
        );
    }

    #[test]
    fn minibatch_cover_reproduces_full_site_sum() {
        let f = converged_fixture(100, 5, 33);
        let full = grad_log_zq(&f.x, &f.hyper, &f.bundle, &f.sites, &f.posterior, &f.y).unwrap();
        let prior = prior_gradient_part(
            &f.hyper,
            &f.bundle.kmm,
            &f.bundle.chol,
            f.bundle.jitter,
            &f.posterior,
        );
        let mut mean = DVector::zeros(full.len());
        for b in 0..10 {
            let batch: Vec<usize> = (b * 10..(b + 1) * 10).collect();
            let g = stochastic_grad(
                &batch,
                &f.x,
                &f.hyper,
                &f.bundle,
                &f.sites,
                &f.posterior,
                &f.y,
                100,
            )
            .unwrap();
            mean += &g.values;
        }
        mean /= 10.0;
        // site-sum terms: subtract the common prior part from both sides
        let full_site = &full.values - &prior;
        let mean_site = mean - &prior;
        for j in 0..full.len() {
            assert_relative_eq!(mean_site[j], full_site[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn incompatible_site_precision_names_the_offending_site() {
        // a site precision large enough that 1 − ν̃·υᵀΣυ ≤ 0 against a
        // posterior built from other parameters
        let f = converged_fixture(10, 3, 41);
        let mut bad = f.sites.clone();
        bad.nu[4] = 1e12;
        match log_zq(&f.bundle, &bad, &f.posterior, &f.x, &f.y) {
            Err(crate::error::SepError::InconsistentState { index, .. }) => {
                assert_eq!(index, 4)
            }
            other => panic!("expected inconsistent-state error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn full_minibatch_equals_full_gradient() {
        let f = converged_fixture(20, 4, 37);
        let full = grad_log_zq(&f.x, &f.hyper, &f.bundle, &f.sites, &f.posterior, &f.y).unwrap();
        let all: Vec<usize> = (0..20).collect();
        let st = stochastic_grad(
            &all,
            &f.x,
            &f.hyper,
            &f.bundle,
            &f.sites,
            &f.posterior,
            &f.y,
            20,
        )
        .unwrap();
        for j in 0..full.len() {
            assert_relative_eq!(st.values[j], full.values[j], epsilon = 1e-12);
        }
    }
}
