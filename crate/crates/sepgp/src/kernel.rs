//! ARD squared-exponential kernel with amplitude and additive noise, the
//! FITC quantities built from it, and derivatives with respect to every
//! hyper-parameter ξ_j including inducing-point coordinates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, SepError};

pub const JITTER_BASE: f64 = 1e-6;
pub const JITTER_MAX: f64 = 1e-2;
pub const FITC_FLOOR: f64 = 1e-10;

/// All model hyper-parameters, addressable through one flat index:
/// `[log ℓ_1 .. log ℓ_d, log σ², log σ₀², x̄_{1,1} .. x̄_{m,d}]` (row-major
/// inducing coordinates). Scale parameters live in log space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "HyperWire", try_from = "HyperWire")]
pub struct Hyperparameters {
    pub log_lengthscales: DVector<f64>,
    pub log_amplitude: f64,
    pub log_noise: f64,
    pub inducing: DMatrix<f64>,
    version: u64,
}

#[derive(Serialize, Deserialize, Clone)]
struct HyperWire {
    log_lengthscales: Vec<f64>,
    log_amplitude: f64,
    log_noise: f64,
    inducing_points: Vec<Vec<f64>>,
}

impl From<Hyperparameters> for HyperWire {
    fn from(h: Hyperparameters) -> Self {
        HyperWire {
            log_lengthscales: h.log_lengthscales.iter().copied().collect(),
            log_amplitude: h.log_amplitude,
            log_noise: h.log_noise,
            inducing_points: (0..h.inducing.nrows())
                .map(|r| h.inducing.row(r).iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<HyperWire> for Hyperparameters {
    type Error = String;
    fn try_from(w: HyperWire) -> std::result::Result<Self, String> {
        let d = w.log_lengthscales.len();
        let m = w.inducing_points.len();
        if d == 0 || m == 0 {
            return Err("empty hyper-parameter arrays".into());
        }
        if w.inducing_points.iter().any(|row| row.len() != d) {
            return Err("ragged inducing_points rows".into());
        }
        let inducing = DMatrix::from_fn(m, d, |r, c| w.inducing_points[r][c]);
        let h = Hyperparameters {
            log_lengthscales: DVector::from_vec(w.log_lengthscales),
            log_amplitude: w.log_amplitude,
            log_noise: w.log_noise,
            inducing,
            version: 0,
        };
        if !h.all_finite() {
            return Err("non-finite hyper-parameter".into());
        }
        Ok(h)
    }
}

/// Which hyper-parameter a flat ξ index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamIndex {
    Lengthscale(usize),
    Amplitude,
    Noise,
    /// (inducing row, coordinate)
    Inducing(usize, usize),
}

impl Hyperparameters {
    pub fn new(
        log_lengthscales: DVector<f64>,
        log_amplitude: f64,
        log_noise: f64,
        inducing: DMatrix<f64>,
    ) -> Result<Self> {
        if inducing.ncols() != log_lengthscales.len() {
            return Err(SepError::InvalidArg(
                "inducing dimension does not match length-scale count".into(),
            ));
        }
        let h = Self {
            log_lengthscales,
            log_amplitude,
            log_noise,
            inducing,
            version: 0,
        };
        if !h.all_finite() {
            return Err(SepError::InvalidArg("non-finite hyper-parameter".into()));
        }
        Ok(h)
    }

    /// Median-heuristic length-scales, unit amplitude, noise 0.1 and
    /// inducing points drawn from the training rows.
    pub fn init(data: &Dataset, m: usize, seed: u64) -> Result<Self> {
        let inducing = crate::dataset::init_inducing(data, m, seed)?;
        let d = data.dim();
        let n = data.n();
        let mut rows: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51_7c_c1);
        rows.shuffle(&mut rng);
        rows.truncate(256.min(n));
        let mut log_ls = DVector::zeros(d);
        for j in 0..d {
            let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
            for (ai, &a) in rows.iter().enumerate() {
                for &b in rows.iter().skip(ai + 1) {
                    let v = (data.inputs[(a, j)] - data.inputs[(b, j)]).abs();
                    if v > 0.0 {
                        dists.push(v);
                    }
                }
            }
            if dists.is_empty() {
                log_ls[j] = 0.0;
            } else {
                dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let med = dists[dists.len() / 2];
                log_ls[j] = if med.is_finite() && med > 0.0 { med.ln() } else { 0.0 };
            }
        }
        Self::new(log_ls, 0.0, 0.1f64.ln(), inducing)
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.dim() + 2 + self.num_inducing() * self.dim()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Restamp the mutation counter. Deserialized values reset to version
    /// 0, so transports that cache by version must reapply the sender's
    /// counter after decoding.
    #[doc(hidden)]
    pub fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    pub fn amplitude(&self) -> f64 {
        self.log_amplitude.exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn lengthscales(&self) -> DVector<f64> {
        self.log_lengthscales.map(f64::exp)
    }

    pub fn index(&self, j: usize) -> ParamIndex {
        let d = self.dim();
        if j < d {
            ParamIndex::Lengthscale(j)
        } else if j == d {
            ParamIndex::Amplitude
        } else if j == d + 1 {
            ParamIndex::Noise
        } else {
            let k = j - d - 2;
            ParamIndex::Inducing(k / d, k % d)
        }
    }

    pub fn get(&self, j: usize) -> f64 {
        match self.index(j) {
            ParamIndex::Lengthscale(c) => self.log_lengthscales[c],
            ParamIndex::Amplitude => self.log_amplitude,
            ParamIndex::Noise => self.log_noise,
            ParamIndex::Inducing(r, c) => self.inducing[(r, c)],
        }
    }

    pub fn set(&mut self, j: usize, value: f64) {
        match self.index(j) {
            ParamIndex::Lengthscale(c) => self.log_lengthscales[c] = value,
            ParamIndex::Amplitude => self.log_amplitude = value,
            ParamIndex::Noise => self.log_noise = value,
            ParamIndex::Inducing(r, c) => self.inducing[(r, c)] = value,
        }
        self.version += 1;
    }

    /// Ascent step: ξ += δ. Optionally freezes the noise parameter.
    pub fn apply_step(&mut self, delta: &DVector<f64>, freeze_noise: bool) {
        assert_eq!(delta.len(), self.param_count());
        let d = self.dim();
        for j in 0..delta.len() {
            if freeze_noise && j == d + 1 {
                continue;
            }
            let v = self.get(j) + delta[j];
            match self.index(j) {
                ParamIndex::Lengthscale(c) => self.log_lengthscales[c] = v,
                ParamIndex::Amplitude => self.log_amplitude = v,
                ParamIndex::Noise => self.log_noise = v,
                ParamIndex::Inducing(r, c) => self.inducing[(r, c)] = v,
            }
        }
        self.version += 1;
    }

    fn all_finite(&self) -> bool {
        self.log_lengthscales.iter().all(|v| v.is_finite())
            && self.log_amplitude.is_finite()
            && self.log_noise.is_finite()
            && self.inducing.iter().all(|v| v.is_finite())
    }
}

/// Single kernel evaluation k(x, x2) with the noise term iff `same_point`.
pub fn k_eval(x: &[f64], x2: &[f64], same_point: bool, hyper: &Hyperparameters) -> f64 {
    let ls = hyper.lengthscales();
    let mut q = 0.0;
    for j in 0..x.len() {
        let d = (x[j] - x2[j]) / ls[j];
        q += d * d;
    }
    let v = hyper.amplitude() * (-0.5 * q).exp();
    if same_point {
        v + hyper.noise()
    } else {
        v
    }
}

/// Noise-free cross covariance matrix between row sets `a` (na×d) and
/// `b` (nb×d). Parallelized over row blocks of `a`.
pub fn signal_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, hyper: &Hyperparameters) -> DMatrix<f64> {
    let (na, nb, d) = (a.nrows(), b.nrows(), a.ncols());
    let inv_ls2: Vec<f64> = hyper
        .log_lengthscales
        .iter()
        .map(|l| (-2.0 * l).exp())
        .collect();
    let amp = hyper.amplitude();
    let block = 512;
    let blocks: Vec<(usize, Vec<f64>)> = (0..na)
        .step_by(block)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + block).min(na);
            let mut out = vec![0.0; (end - start) * nb];
            for i in start..end {
                for r in 0..nb {
                    let mut q = 0.0;
                    for c in 0..d {
                        let diff = a[(i, c)] - b[(r, c)];
                        q += diff * diff * inv_ls2[c];
                    }
                    out[(i - start) * nb + r] = amp * (-0.5 * q).exp();
                }
            }
            (start, out)
        })
        .collect();
    let mut k = DMatrix::zeros(na, nb);
    for (start, data) in blocks {
        let rows = data.len() / nb;
        for i in 0..rows {
            for r in 0..nb {
                k[(start + i, r)] = data[i * nb + r];
            }
        }
    }
    k
}

/// Kernel rows for a set of inputs relative to a fixed factorized Kmm:
/// cross covariances, diagonal, projections Υ and FITC corrections.
#[derive(Debug, Clone)]
pub struct RowBlock {
    /// k×m cross covariance (rows K_{f_i f̄})
    pub knm: DMatrix<f64>,
    /// k diagonal entries K_{f_i f_i} (includes noise)
    pub kdiag: DVector<f64>,
    /// m×k projections, column i = K_f̄f̄⁻¹ K_f̄f_i
    pub upsilon: DMatrix<f64>,
    /// k FITC diagonal corrections s_i, clamped at [`FITC_FLOOR`]
    pub fitc: DVector<f64>,
}

/// Cached kernel matrices and FITC quantities for one training set and one
/// hyper-parameter setting.
#[derive(Debug, Clone)]
pub struct KernelBundle {
    /// m×m prior covariance over inducing values, noise and jitter included.
    pub kmm: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub log_det_kmm: f64,
    /// jitter actually added to the diagonal (beyond the noise)
    pub jitter: f64,
    pub knm: DMatrix<f64>,
    pub kdiag: DVector<f64>,
    pub upsilon: DMatrix<f64>,
    pub fitc_diag: DVector<f64>,
    pub hyper_version: u64,
}

impl KernelBundle {
    pub fn n(&self) -> usize {
        self.knm.nrows()
    }

    pub fn m(&self) -> usize {
        self.kmm.nrows()
    }
}

/// Factorized prior covariance over the inducing values.
#[derive(Debug, Clone)]
pub struct PriorFactor {
    pub kmm: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
    pub log_det: f64,
}

/// Build and factorize Kmm, escalating jitter ×10 from 1e-6·σ² up to
/// 1e-2·σ² before giving up.
pub fn build_prior(hyper: &Hyperparameters) -> Result<PriorFactor> {
    let m = hyper.num_inducing();
    let amp = hyper.amplitude();
    let noise = hyper.noise();
    let kmm_sig = signal_matrix(&hyper.inducing, &hyper.inducing, hyper);
    let mut factor = JITTER_BASE;
    loop {
        let jitter = factor * amp;
        let mut kmm = kmm_sig.clone();
        for i in 0..m {
            kmm[(i, i)] += noise + jitter;
        }
        for r in 0..m {
            for c in 0..r {
                let v = 0.5 * (kmm[(r, c)] + kmm[(c, r)]);
                kmm[(r, c)] = v;
                kmm[(c, r)] = v;
            }
        }
        if let Some(chol) = Cholesky::new(kmm.clone()) {
            let log_det = crate::linalg::chol_ln_det(&chol);
            return Ok(PriorFactor {
                kmm,
                chol,
                jitter,
                log_det,
            });
        }
        factor *= 10.0;
        if factor > JITTER_MAX {
            let eig = kmm.symmetric_eigenvalues();
            let pivot = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(SepError::Conditioning {
                max_jitter: JITTER_MAX * amp,
                pivot,
            });
        }
    }
}

/// Kernel rows for arbitrary inputs against an existing factorization.
pub fn row_block(
    x_rows: &DMatrix<f64>,
    hyper: &Hyperparameters,
    chol: &Cholesky<f64, Dyn>,
) -> RowBlock {
    let k = x_rows.nrows();
    let knm = signal_matrix(x_rows, &hyper.inducing, hyper);
    let kdiag = DVector::from_element(k, hyper.amplitude() + hyper.noise());
    let upsilon = crate::linalg::chol_solve_cols(chol, &knm.transpose());
    let mut fitc = DVector::zeros(k);
    for i in 0..k {
        let mut proj = 0.0;
        for r in 0..knm.ncols() {
            proj += knm[(i, r)] * upsilon[(r, i)];
        }
        fitc[i] = (kdiag[i] - proj).max(FITC_FLOOR);
    }
    RowBlock {
        knm,
        kdiag,
        upsilon,
        fitc,
    }
}

/// Build every cached kernel quantity for training inputs `x`.
pub fn build_bundle(x: &DMatrix<f64>, hyper: &Hyperparameters) -> Result<KernelBundle> {
    let prior = build_prior(hyper)?;
    let rows = row_block(x, hyper, &prior.chol);
    Ok(KernelBundle {
        kmm: prior.kmm,
        chol: prior.chol,
        log_det_kmm: prior.log_det,
        jitter: prior.jitter,
        knm: rows.knm,
        kdiag: rows.kdiag,
        upsilon: rows.upsilon,
        fitc_diag: rows.fitc,
        hyper_version: hyper.version(),
    })
}

/// Dense derivative triple (∂Kmm, ∂Knm, ∂kdiag) for one flat parameter
/// index. The jitter term scales with σ², so it is differentiated along
/// with the amplitude; this keeps the triple exactly consistent with
/// [`build_bundle`] under finite differences.
pub fn grad_bundle(
    x: &DMatrix<f64>,
    hyper: &Hyperparameters,
    bundle: &KernelBundle,
    j: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let (n, m, _d) = (x.nrows(), hyper.num_inducing(), hyper.dim());
    let noise = hyper.noise();
    let amp = hyper.amplitude();
    let xb = &hyper.inducing;
    let shift = noise + bundle.jitter;
    match hyper.index(j) {
        ParamIndex::Lengthscale(c) => {
            let inv_ls2 = (-2.0 * hyper.log_lengthscales[c]).exp();
            let mut dmm = DMatrix::zeros(m, m);
            for r in 0..m {
                for s in 0..m {
                    let sig = bundle.kmm[(r, s)] - if r == s { shift } else { 0.0 };
                    let diff = xb[(r, c)] - xb[(s, c)];
                    dmm[(r, s)] = sig * diff * diff * inv_ls2;
                }
            }
            let mut dnm = DMatrix::zeros(n, m);
            for i in 0..n {
                for r in 0..m {
                    let diff = x[(i, c)] - xb[(r, c)];
                    dnm[(i, r)] = bundle.knm[(i, r)] * diff * diff * inv_ls2;
                }
            }
            (dmm, dnm, DVector::zeros(n))
        }
        ParamIndex::Amplitude => {
            let mut dmm = bundle.kmm.clone();
            for i in 0..m {
                dmm[(i, i)] -= noise;
            }
            (dmm, bundle.knm.clone(), DVector::from_element(n, amp))
        }
        ParamIndex::Noise => {
            let mut dmm = DMatrix::zeros(m, m);
            for i in 0..m {
                dmm[(i, i)] = noise;
            }
            (dmm, DMatrix::zeros(n, m), DVector::from_element(n, noise))
        }
        ParamIndex::Inducing(r0, c) => {
            let inv_ls2 = (-2.0 * hyper.log_lengthscales[c]).exp();
            let mut dmm = DMatrix::zeros(m, m);
            for s in 0..m {
                if s == r0 {
                    continue;
                }
                let sig = bundle.kmm[(r0, s)];
                let v = sig * (xb[(s, c)] - xb[(r0, c)]) * inv_ls2;
                dmm[(r0, s)] = v;
                dmm[(s, r0)] = v;
            }
            let mut dnm = DMatrix::zeros(n, m);
            for i in 0..n {
                dnm[(i, r0)] = bundle.knm[(i, r0)] * (x[(i, c)] - xb[(r0, c)]) * inv_ls2;
            }
            (dmm, dnm, DVector::zeros(n))
        }
    }
}

/// Contract coefficient matrices against every parameter's kernel
/// derivatives in one pass:
///
///   `grad_j = Σ ∂Kmm_j ∘ Amm + Σ_{i,r} ∂Knm_j[i,r]·H[r,i] + ∂kdiag_j·g`
///
/// `Amm` must be symmetric. Row quantities (`x_rows`, `knm_rows`, `g`) may
/// cover any subset of instances; `H` is m×k over the same subset. Exploits
/// the row/column sparsity of inducing-coordinate derivatives, so the cost
/// is O(m(m+k)d) rather than O(m²kd).
pub fn contract_gradient(
    x_rows: &DMatrix<f64>,
    knm_rows: &DMatrix<f64>,
    hyper: &Hyperparameters,
    kmm: &DMatrix<f64>,
    jitter: f64,
    amm: &DMatrix<f64>,
    h: &DMatrix<f64>,
    g: &DVector<f64>,
) -> DVector<f64> {
    let k = x_rows.nrows();
    let m = hyper.num_inducing();
    let d = hyper.dim();
    let amp = hyper.amplitude();
    let noise = hyper.noise();
    let shift = noise + jitter;
    let xb = &hyper.inducing;
    let mut out = DVector::zeros(hyper.param_count());

    // Signal part of Kmm (shared by several parameter groups).
    let mut kmm_sig = kmm.clone();
    for i in 0..m {
        kmm_sig[(i, i)] -= shift;
    }

    // log length-scales
    for c in 0..d {
        let inv_ls2 = (-2.0 * hyper.log_lengthscales[c]).exp();
        let mut acc = 0.0;
        for r in 0..m {
            for s in 0..m {
                let diff = xb[(r, c)] - xb[(s, c)];
                acc += kmm_sig[(r, s)] * diff * diff * amm[(s, r)];
            }
        }
        let mut acc2 = 0.0;
        for i in 0..k {
            for r in 0..m {
                let diff = x_rows[(i, c)] - xb[(r, c)];
                acc2 += knm_rows[(i, r)] * diff * diff * h[(r, i)];
            }
        }
        out[c] = (acc + acc2) * inv_ls2;
    }

    // log amplitude: ∂Kmm = Kmm − σ₀² I, ∂Knm = Knm, ∂kdiag = σ²·1
    {
        let mut acc = 0.0;
        for r in 0..m {
            for s in 0..m {
                let dm = kmm[(r, s)] - if r == s { noise } else { 0.0 };
                acc += dm * amm[(s, r)];
            }
        }
        for i in 0..k {
            for r in 0..m {
                acc += knm_rows[(i, r)] * h[(r, i)];
            }
        }
        out[d] = acc + amp * g.sum();
    }

    // log noise: ∂Kmm = σ₀² I, ∂kdiag = σ₀²·1
    out[d + 1] = noise * amm.trace() + noise * g.sum();

    // inducing coordinates: ∂Kmm is nonzero on row/column r only, ∂Knm on
    // column r only, ∂kdiag = 0.
    for c in 0..d {
        let inv_ls2 = (-2.0 * hyper.log_lengthscales[c]).exp();
        for r in 0..m {
            let mut acc = 0.0;
            for s in 0..m {
                if s == r {
                    continue;
                }
                acc += 2.0 * kmm_sig[(r, s)] * (xb[(s, c)] - xb[(r, c)]) * amm[(s, r)];
            }
            for i in 0..k {
                acc += knm_rows[(i, r)] * (x_rows[(i, c)] - xb[(r, c)]) * h[(r, i)];
            }
            out[d + 2 + r * d + c] = acc * inv_ls2;
        }
    }
    out
}
