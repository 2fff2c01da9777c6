//! Expectation-propagation core: rank-one site factors, posterior
//! reconstruction, cavity scalars, moment-matched site updates with
//! damping, and parallel sweeps.
//!
//! Each likelihood factor is approximated by an un-normalized Gaussian
//! with precision ν̃_i υ_i υ_iᵀ and linear term μ̃_i υ_i along the FITC
//! projection υ_i = K_f̄f̄⁻¹ K_f̄f_i, so three scalars per instance fully
//! describe the approximation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SepError};
use crate::kernel::KernelBundle;
use crate::linalg;
use crate::stats;

/// Cavity validity threshold on δ_i = 1 − ν̃_i υ_iᵀΣυ_i.
pub const CAVITY_FLOOR: f64 = 1e-10;

/// Per-instance EP site parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteFactors {
    pub nu: DVector<f64>,
    pub mu: DVector<f64>,
    pub log_s: DVector<f64>,
}

impl SiteFactors {
    /// All-zero sites: q starts at the prior.
    pub fn init(n: usize) -> Self {
        Self {
            nu: DVector::zeros(n),
            mu: DVector::zeros(n),
            log_s: DVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.len() == 0
    }
}

/// Gaussian posterior over inducing values.
#[derive(Debug, Clone)]
pub struct PosteriorApprox {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Natural linear parameter Σ⁻¹μ = Υ μ̃ (exact by construction).
    pub nat_linear: DVector<f64>,
    pub log_det_sigma: f64,
    /// −½ log|C| with C = I + LᵀΥΔΥᵀL; equals ½(log|Σ| − log|Kmm|).
    pub half_log_det_ratio: f64,
    pub hyper_version: u64,
}

impl PosteriorApprox {
    /// μᵀΣ⁻¹μ without touching Σ⁻¹.
    pub fn mahalanobis(&self) -> f64 {
        self.mu.dot(&self.nat_linear)
    }

    /// υᵀΣυ and υᵀμ for every column of `upsilon`.
    pub fn project(&self, upsilon: &DMatrix<f64>) -> Projections {
        let sv = linalg::par_mul(&self.sigma, upsilon);
        let n = upsilon.ncols();
        let mut proj_var = DVector::zeros(n);
        for i in 0..n {
            proj_var[i] = upsilon.column(i).dot(&sv.column(i));
        }
        let proj_mean = upsilon.transpose() * &self.mu;
        Projections {
            sv,
            proj_var,
            proj_mean,
        }
    }
}

/// Posterior projections shared by a whole sweep.
pub struct Projections {
    /// Σ·Υ, m×n
    pub sv: DMatrix<f64>,
    /// υ_iᵀΣυ_i
    pub proj_var: DVector<f64>,
    /// υ_iᵀμ
    pub proj_mean: DVector<f64>,
}

/// Scalars describing the cavity q^{\i} along site i's projection.
#[derive(Debug, Clone, Copy)]
pub struct CavityScalars {
    /// cavity projected mean a_i = υ_iᵀ μ^{\i}
    pub a: f64,
    /// b_i = 1 + s_i + υ_iᵀ Σ^{\i} υ_i
    pub b: f64,
    /// posterior projected variance υ_iᵀΣυ_i
    pub proj_var: f64,
    /// posterior projected mean υ_iᵀμ
    pub proj_mean: f64,
    /// cavity projected variance υ_iᵀ Σ^{\i} υ_i
    pub cav_var: f64,
    /// δ_i = 1 − ν̃_i·proj_var
    pub delta: f64,
}

/// Cavity scalars from posterior projections; `None` signals a skip
/// (near-singular downdate).
pub fn cavity_from_projections(
    proj_var: f64,
    proj_mean: f64,
    nu: f64,
    mu: f64,
    fitc: f64,
) -> Option<CavityScalars> {
    let delta = 1.0 - nu * proj_var;
    if !(delta > CAVITY_FLOOR) {
        return None;
    }
    let cav_var = proj_var / delta;
    let a = proj_mean + cav_var * (nu * proj_mean - mu);
    let b = 1.0 + fitc + cav_var;
    if !(b > 0.0) || !a.is_finite() {
        return None;
    }
    Some(CavityScalars {
        a,
        b,
        proj_var,
        proj_mean,
        cav_var,
        delta,
    })
}

/// Cavity for a single site (the sweep uses the batched equivalent).
pub fn cavity(
    posterior: &PosteriorApprox,
    bundle: &KernelBundle,
    sites: &SiteFactors,
    i: usize,
) -> Option<CavityScalars> {
    let u = bundle.upsilon.column(i);
    let sv = &posterior.sigma * u;
    let proj_var = u.dot(&sv);
    let proj_mean = u.dot(&posterior.mu);
    cavity_from_projections(proj_var, proj_mean, sites.nu[i], sites.mu[i], bundle.fitc_diag[i])
}

/// Result of one site's moment-matched refinement.
#[derive(Debug, Clone, Copy)]
pub struct SiteUpdate {
    pub nu: f64,
    pub mu: f64,
    pub log_s: f64,
    pub log_zi: f64,
}

/// Moment-matched site update with damping ρ: the returned parameters are
/// ρ·new + (1−ρ)·old. `None` signals a skip (extreme tail or invalid
/// resulting normalizer).
pub fn site_update(
    cav: &CavityScalars,
    y: f64,
    rho: f64,
    old_nu: f64,
    old_mu: f64,
    old_log_s: f64,
) -> Option<SiteUpdate> {
    debug_assert!((0.0..=1.0).contains(&rho));
    let sqrt_b = cav.b.sqrt();
    let z = y * cav.a / sqrt_b;
    let log_zi = stats::log_phi(z);
    let ratio = stats::gauss_over_cdf(z); // N(z)/Φ(z)
    let alpha = ratio * y / sqrt_b;
    // α² + α a / b, written as r(r+z)/b which is positive by construction.
    let w = ratio * (ratio + z) / cav.b;
    if !(w > 0.0) || !w.is_finite() {
        return None;
    }
    let denom = 1.0 / w - cav.cav_var;
    let nu_new = 1.0 / denom;
    let mu_new = alpha * (1.0 + cav.cav_var * nu_new) + cav.a * nu_new;
    if !nu_new.is_finite() || !mu_new.is_finite() {
        return None;
    }
    let nu = rho * nu_new + (1.0 - rho) * old_nu;
    let mu = rho * mu_new + (1.0 - rho) * old_mu;
    // log s̃ makes the damped factor integrate to Z_i against the cavity:
    // ∫ exp(−ν̃t²/2 + μ̃t) N(t | a, c) dt
    //   = (1+ν̃c)^{-1/2} exp((μ̃²c + 2μ̃a − ν̃a²) / (2(1+ν̃c)))
    let one_plus = 1.0 + nu * cav.cav_var;
    if !(one_plus > 0.0) {
        return None;
    }
    let log_integral = -0.5 * one_plus.ln()
        + (mu * mu * cav.cav_var + 2.0 * mu * cav.a - nu * cav.a * cav.a) / (2.0 * one_plus);
    let log_s = if rho == 0.0 {
        old_log_s
    } else {
        log_zi - log_integral
    };
    Some(SiteUpdate {
        nu,
        mu,
        log_s,
        log_zi,
    })
}

/// Mean and variance of the tilted distribution Z_i⁻¹ φ_i q^{\i} along the
/// projection υ_iᵀf̄, from the derivatives of log Z_i.
pub fn tilted_projected_moments(cav: &CavityScalars, y: f64) -> (f64, f64) {
    let sqrt_b = cav.b.sqrt();
    let z = y * cav.a / sqrt_b;
    let ratio = stats::gauss_over_cdf(z);
    let alpha = ratio * y / sqrt_b;
    let w = ratio * (ratio + z) / cav.b;
    let mean = cav.a + alpha * cav.cav_var;
    let var = cav.cav_var * (1.0 - w * cav.cav_var);
    (mean, var)
}

/// Posterior from prior factorization plus natural-parameter aggregates
/// A = Σ_i ν̃_i υ_i υ_iᵀ and h = Σ_i μ̃_i υ_i.
///
/// Σ = (Kmm⁻¹ + A)⁻¹ is formed as Kmm − L(I − C⁻¹)Lᵀ with C = I + LᵀAL,
/// which is exact (bit-for-bit Kmm) when A = 0 and never inverts the m×m
/// natural-parameter sum directly.
pub fn reconstruct_from_natural(
    bundle: &KernelBundle,
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
) -> Result<PosteriorApprox> {
    let m = bundle.m();
    let l = bundle.chol.l();
    let mut c = &l.transpose() * precision * &l;
    for i in 0..m {
        c[(i, i)] += 1.0;
    }
    linalg::symmetrize(&mut c);
    let chol_c = nalgebra::Cholesky::new(c)
        .ok_or(SepError::IndefinitePosterior { indices: vec![] })?;
    let log_det_c = linalg::chol_ln_det(&chol_c);
    let mut t = chol_c.inverse();
    t.neg_mut();
    for i in 0..m {
        t[(i, i)] += 1.0;
    }
    linalg::symmetrize(&mut t);
    let mut sigma = &bundle.kmm - &l * t * l.transpose();
    linalg::symmetrize(&mut sigma);
    let mu = &sigma * linear;
    Ok(PosteriorApprox {
        mu,
        sigma,
        nat_linear: linear.clone(),
        log_det_sigma: bundle.log_det_kmm - log_det_c,
        half_log_det_ratio: -0.5 * log_det_c,
        hyper_version: bundle.hyper_version,
    })
}

/// Posterior q(f̄) from the full site set.
pub fn reconstruct(bundle: &KernelBundle, sites: &SiteFactors) -> Result<PosteriorApprox> {
    let precision = linalg::weighted_gram(&bundle.upsilon, &sites.nu);
    let linear = linalg::weighted_colsum(&bundle.upsilon, &sites.mu);
    reconstruct_from_natural(bundle, &precision, &linear).map_err(|e| match e {
        SepError::IndefinitePosterior { .. } => SepError::IndefinitePosterior {
            indices: (0..sites.len()).filter(|&i| sites.nu[i] < 0.0).collect(),
        },
        other => other,
    })
}

/// Refined site parameters for one block of instances, all computed
/// against the same posterior snapshot.
pub struct SiteRefinement {
    pub nu: DVector<f64>,
    pub mu: DVector<f64>,
    pub log_s: DVector<f64>,
    /// log Z_i per site, NaN where skipped
    pub log_zi: DVector<f64>,
    pub skipped: usize,
    /// max |Δν̃| + |Δμ̃| applied
    pub max_delta: f64,
}

/// Damped updates for a block of sites given their posterior projections.
pub fn refine_sites(
    proj: &Projections,
    fitc: &DVector<f64>,
    labels: &DVector<f64>,
    nu: &DVector<f64>,
    mu: &DVector<f64>,
    log_s: &DVector<f64>,
    rho: f64,
) -> SiteRefinement {
    let n = labels.len();
    let mut out = SiteRefinement {
        nu: nu.clone(),
        mu: mu.clone(),
        log_s: log_s.clone(),
        log_zi: DVector::from_element(n, f64::NAN),
        skipped: 0,
        max_delta: 0.0,
    };
    for i in 0..n {
        let cav = cavity_from_projections(proj.proj_var[i], proj.proj_mean[i], nu[i], mu[i], fitc[i]);
        let update = cav.and_then(|c| site_update(&c, labels[i], rho, nu[i], mu[i], log_s[i]));
        match update {
            Some(u) => {
                out.max_delta = out
                    .max_delta
                    .max((u.nu - nu[i]).abs() + (u.mu - mu[i]).abs());
                out.nu[i] = u.nu;
                out.mu[i] = u.mu;
                out.log_s[i] = u.log_s;
                out.log_zi[i] = u.log_zi;
            }
            None => out.skipped += 1,
        }
    }
    out
}

/// Outcome of one damped parallel sweep.
pub struct SweepResult {
    pub sites: SiteFactors,
    pub posterior: PosteriorApprox,
    /// log Z_i of every non-skipped site, NaN where skipped
    pub log_zi: DVector<f64>,
    pub sum_log_zi: f64,
    pub skipped: usize,
    /// max_i |Δν̃_i| + |Δμ̃_i| actually applied
    pub max_delta: f64,
}

/// One parallel EP sweep: every cavity and site update is computed from the
/// same pre-sweep posterior, then q is reconstructed once from the full
/// updated site set. Failed reconstructions leave the input state untouched.
pub fn parallel_sweep(
    bundle: &KernelBundle,
    sites: &SiteFactors,
    posterior: &PosteriorApprox,
    labels: &DVector<f64>,
    rho: f64,
) -> Result<SweepResult> {
    let proj = posterior.project(&bundle.upsilon);
    let refined = refine_sites(
        &proj,
        &bundle.fitc_diag,
        labels,
        &sites.nu,
        &sites.mu,
        &sites.log_s,
        rho,
    );
    let sum_log_zi = refined.log_zi.iter().filter(|v| v.is_finite()).sum();
    let new_sites = SiteFactors {
        nu: refined.nu,
        mu: refined.mu,
        log_s: refined.log_s,
    };
    let posterior = reconstruct(bundle, &new_sites)?;
    Ok(SweepResult {
        sites: new_sites,
        posterior,
        log_zi: refined.log_zi,
        sum_log_zi,
        skipped: refined.skipped,
        max_delta: refined.max_delta,
    })
}

/// Run damped sweeps until the largest site change drops below `tol` or
/// `max_sweeps` is hit. Returns the final state and the sweep count.
pub fn sweep_to_convergence(
    bundle: &KernelBundle,
    sites: SiteFactors,
    posterior: PosteriorApprox,
    labels: &DVector<f64>,
    rho: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<(SiteFactors, PosteriorApprox, usize)> {
    let mut sites = sites;
    let mut posterior = posterior;
    for sweep in 1..=max_sweeps {
        let out = parallel_sweep(bundle, &sites, &posterior, labels, rho)?;
        let done = out.max_delta < tol;
        sites = out.sites;
        posterior = out.posterior;
        if done {
            return Ok((sites, posterior, sweep));
        }
    }
    Ok((sites, posterior, max_sweeps))
}
