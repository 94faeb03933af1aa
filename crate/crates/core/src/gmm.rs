//! Gaussian-mixture ground truth.
//!
//! The mixture serves three roles: prior to sample training/test data from,
//! closed-form conditional mean estimator (CME) under additive Gaussian noise,
//! and exact posterior sampler. All density work happens in log space with
//! max-subtraction; linear solves go through triangular factorizations, never
//! explicit inverses, because η² spans many orders of magnitude across an SNR
//! sweep.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{master_rng, Rng};
use crate::schedule::NoiseSchedule;

const LN_2PI: f64 = 1.8378770664093453;

/// Mixture of `K` Gaussians in dimension `N` with cached triangular factors.
#[derive(Debug, Clone)]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    factor_ls: Vec<DMatrix<f64>>, // clean lower-triangular factors, L·Lᵀ = C
}

impl Gmm {
    /// Validate and cache factorizations. Weights must be nonnegative and sum
    /// to 1 within 1e−12; covariances must be symmetric (asymmetry ≤ 1e−12)
    /// and positive definite.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::param(
                "K",
                "weights/means/covs lengths must match and be >= 1",
            ));
        }
        let n = means[0].len();
        if n == 0 {
            return Err(Error::param("N", "dimension must be >= 1"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::param("weights", "must be nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::param("weights", format!("must sum to 1, got {sum}")));
        }
        let mut factor_ls = Vec::with_capacity(k);
        for (idx, c) in covs.iter().enumerate() {
            if means[idx].len() != n || c.nrows() != n || c.ncols() != n {
                return Err(Error::param("N", "inconsistent component dimensions"));
            }
            let asym = (c - c.transpose()).abs().max();
            if asym > 1e-12 {
                return Err(Error::numeric(format!(
                    "covariance {idx} asymmetric by {asym:e}"
                )));
            }
            let chol = c
                .clone()
                .cholesky()
                .ok_or_else(|| Error::numeric(format!("covariance {idx} not positive definite")))?;
            factor_ls.push(chol.l());
        }
        Ok(Self {
            weights,
            means,
            covs,
            factor_ls,
        })
    }

    /// Single standard-normal component N(0, I) in dimension `n`.
    pub fn standard_normal(n: usize) -> Self {
        Self::new(
            vec![1.0],
            vec![DVector::zeros(n)],
            vec![DMatrix::identity(n, n)],
        )
        .expect("identity covariance is positive definite")
    }

    /// Random mixture, deterministic in `seed`.
    ///
    /// Means have i.i.d. N(0, 1/√N) entries. A single N×N matrix S with
    /// i.i.d. U(0,1) entries fixes the shared eigenbasis V of SᵀS; each
    /// component then gets C_k = V·diag(1+ξ)·Vᵀ with fresh ξ ~ U(0,1)
    /// entries, so every eigenvalue lies in [1,2]. Weights are U(0,1) draws
    /// normalized to sum 1.
    pub fn random(n: usize, k: usize, seed: u64) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::param("N/K", "must be >= 1"));
        }
        let mut rng = master_rng(seed);
        let mean_std = (1.0 / (n as f64).sqrt()).sqrt();
        let means: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(n, |_, _| mean_std * rng.sample::<f64, _>(StandardNormal)))
            .collect();

        let s = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>());
        let gram = s.transpose() * &s;
        let eig = SymmetricEigen::new(gram);
        // Ascending eigenvalue order for a deterministic basis.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut v = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            v.set_column(dst, &eig.eigenvectors.column(src));
        }

        let covs: Vec<DMatrix<f64>> = (0..k)
            .map(|_| {
                let xi = DVector::from_fn(n, |_, _| 1.0 + rng.gen::<f64>());
                let c = &v * DMatrix::from_diagonal(&xi) * v.transpose();
                // Products leave rounding-level asymmetry; make it exact.
                0.5 * (&c + c.transpose())
            })
            .collect();

        let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Self::new(weights, means, covs)
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &DVector<f64> {
        &self.means[k]
    }

    pub fn cov(&self, k: usize) -> &DMatrix<f64> {
        &self.covs[k]
    }

    /// Mixture mean Σ p(k)·μ_k.
    pub fn mixture_mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m += *w * mu;
        }
        m
    }

    /// Mixture second moment E‖x‖² = Σ p(k)(tr C_k + ‖μ_k‖²).
    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.covs)
            .map(|((w, mu), c)| w * (c.trace() + mu.norm_squared()))
            .sum()
    }

    /// Shift and scale so the mixture mean is 0 and E‖x‖² = N:
    /// μ′_k = c·(μ_k − m), C′_k = c²·C_k with m the mixture mean and
    /// c² = N / Σ p(k)(tr C_k + ‖μ_k − m‖²).
    pub fn normalize(&self) -> Result<Self> {
        let m = self.mixture_mean();
        let centered_moment: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.covs)
            .map(|((w, mu), c)| w * (c.trace() + (mu - &m).norm_squared()))
            .sum();
        if !(centered_moment > 0.0) || !centered_moment.is_finite() {
            return Err(Error::numeric(format!(
                "degenerate mixture: centered second moment {centered_moment}"
            )));
        }
        let c_sq = self.dim() as f64 / centered_moment;
        let c = c_sq.sqrt();
        let means = self.means.iter().map(|mu| c * (mu - &m)).collect();
        let covs = self.covs.iter().map(|cv| c_sq * cv).collect();
        Self::new(self.weights.clone(), means, covs)
    }

    /// One ancestral draw: component index from the weights, then the
    /// component Gaussian via its triangular factor.
    pub fn sample_one(&self, rng: &mut Rng) -> DVector<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.means[k] + &self.factor_ls[k] * z
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<DVector<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Posterior component probabilities p(k|y) under y = x + n, n ~ N(0, η²I).
    pub fn responsibilities(&self, y: &DVector<f64>, eta_sq: f64) -> Result<Vec<f64>> {
        CmeSolver::new(self, eta_sq)?.responsibilities(y)
    }

    /// Conditional mean E[x|y] under y = x + n, n ~ N(0, η²I):
    /// Σ_k p(k|y)·(μ_k + C_k(C_k+η²I)^{−1}(y−μ_k)).
    pub fn cme(&self, y: &DVector<f64>, eta_sq: f64) -> Result<DVector<f64>> {
        CmeSolver::new(self, eta_sq)?.cme(y)
    }

    /// E[x_0 | x_t] for the diffusion marginal x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε:
    /// rescaling by 1/√ᾱ_t reduces it to the additive-noise form with
    /// η² = (1−ᾱ_t)/ᾱ_t.
    pub fn cme_at_step(
        &self,
        x_t: &DVector<f64>,
        s: &NoiseSchedule,
        t: usize,
    ) -> Result<DVector<f64>> {
        let ab = s.alpha_bar(t);
        if !(ab > 0.0) {
            return Err(Error::numeric(format!("alpha_bar({t}) = {ab} underflowed")));
        }
        let scale = ab.sqrt();
        self.cme(&(x_t / scale), (1.0 - ab) / ab)
    }
}

/// Per-noise-level solver caching the factorizations of C_k + η²I.
///
/// Construct once per (mixture, η²) pair and reuse across a batch; the
/// factors do not depend on the observation. The solver owns copies of the
/// component parameters so it can outlive the mixture it was built from.
#[derive(Clone)]
pub struct CmeSolver {
    eta_sq: f64,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    chols: Vec<Cholesky<f64, Dyn>>,
    log_norm: Vec<f64>, // log p(k) − ½(N·ln 2π + ln det(C_k+η²I))
}

impl CmeSolver {
    pub fn new(gmm: &Gmm, eta_sq: f64) -> Result<Self> {
        if !(eta_sq >= 0.0) {
            return Err(Error::param("eta_sq", "must be >= 0"));
        }
        let n = gmm.dim();
        let mut chols = Vec::with_capacity(gmm.num_components());
        let mut log_norm = Vec::with_capacity(gmm.num_components());
        for k in 0..gmm.num_components() {
            let mut a = gmm.covs[k].clone();
            for i in 0..n {
                a[(i, i)] += eta_sq;
            }
            let chol = a.cholesky().ok_or_else(|| {
                Error::numeric(format!(
                    "factorization of C_{k} + {eta_sq}·I failed (not positive definite)"
                ))
            })?;
            let log_det: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
            log_norm.push(gmm.weights[k].ln() - 0.5 * (n as f64 * LN_2PI + log_det));
            chols.push(chol);
        }
        Ok(Self {
            eta_sq,
            means: gmm.means.clone(),
            covs: gmm.covs.clone(),
            chols,
            log_norm,
        })
    }

    pub fn eta_sq(&self) -> f64 {
        self.eta_sq
    }

    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_posteriors(&self, y: &DVector<f64>) -> Result<Vec<f64>> {
        let k = self.means.len();
        let mut logs = Vec::with_capacity(k);
        for i in 0..k {
            let d = y - &self.means[i];
            let q = d.dot(&self.chols[i].solve(&d));
            logs.push(self.log_norm[i] - 0.5 * q);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::numeric(
                "all component log-likelihoods are non-finite",
            ));
        }
        Ok(logs)
    }

    /// p(k|y) via log-sum-exp with max subtraction; sums to 1 within 1e−12.
    pub fn responsibilities(&self, y: &DVector<f64>) -> Result<Vec<f64>> {
        let logs = self.log_posteriors(y)?;
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = r.iter().sum();
        for v in &mut r {
            *v /= sum;
        }
        Ok(r)
    }

    /// E[x|y] = Σ_k p(k|y)·(μ_k + C_k(C_k+η²I)^{−1}(y−μ_k)).
    pub fn cme(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.responsibilities(y)?;
        let mut out = DVector::zeros(self.dim());
        for (k, rk) in r.iter().enumerate() {
            if *rk == 0.0 {
                continue;
            }
            let d = y - &self.means[k];
            let w = self.chols[k].solve(&d);
            out += *rk * (&self.means[k] + &self.covs[k] * w);
        }
        Ok(out)
    }
}

/// Exact sampler for the posterior p(x|y) under y = x + n, n ~ N(0, η²I).
///
/// The posterior is again a mixture: weights are the responsibilities and each
/// component is Gaussian with mean μ_k + C_k A_k^{−1}(y−μ_k) and covariance
/// C_k − C_k A_k^{−1} C_k, A_k = C_k + η²I.
pub struct PosteriorSampler {
    solver: CmeSolver,
    factors: Vec<DMatrix<f64>>, // F_k with F_k·F_kᵀ = posterior covariance
}

impl PosteriorSampler {
    pub fn new(gmm: &Gmm, eta_sq: f64) -> Result<Self> {
        let solver = CmeSolver::new(gmm, eta_sq)?;
        let n = gmm.dim();
        let mut factors = Vec::with_capacity(gmm.num_components());
        for k in 0..gmm.num_components() {
            let c = &gmm.covs[k];
            let x = solver.chols[k].solve(c); // A_k^{-1} C_k
            let mut post = c - c * x;
            post = 0.5 * (&post + post.transpose());
            let factor = match post.clone().cholesky() {
                Some(ch) => ch.unpack(),
                None => {
                    // Rounding can push tiny posterior covariances indefinite;
                    // clamp the spectrum at zero.
                    let eig = SymmetricEigen::new(post);
                    let sqrt = DVector::from_iterator(
                        n,
                        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
                    );
                    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
                }
            };
            factors.push(factor);
        }
        Ok(Self { solver, factors })
    }

    /// One exact draw from p(x|y).
    pub fn sample(&self, y: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
        let r = self.solver.responsibilities(y)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = r.len() - 1;
        for (i, w) in r.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let d = y - &self.solver.means[k];
        let mean = &self.solver.means[k] + &self.solver.covs[k] * self.solver.chols[k].solve(&d);
        let z = DVector::from_fn(self.solver.dim(), |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        Ok(mean + &self.factors[k] * z)
    }
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

/// Serialize to the `DMDEN-GMM v1` text format. Values use the shortest
/// round-trip decimal representation, so reload is bit-exact.
pub fn to_text(gmm: &Gmm) -> String {
    let mut out = String::new();
    out.push_str("DMDEN-GMM v1\n");
    let _ = writeln!(out, "{} {}", gmm.num_components(), gmm.dim());
    let _ = writeln!(out, "{}", join_floats(gmm.weights()));
    for k in 0..gmm.num_components() {
        let _ = writeln!(out, "{}", join_floats(gmm.mean(k).as_slice()));
        for i in 0..gmm.dim() {
            let row: Vec<f64> = gmm.cov(k).row(i).iter().cloned().collect();
            let _ = writeln!(out, "{}", join_floats(&row));
        }
    }
    out
}

pub fn from_text(text: &str, origin: &str) -> Result<Gmm> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "DMDEN-GMM v1" {
        return Err(Error::parse(origin, format!("bad header `{header}`")));
    }
    let dims = parse_floats(lines.next().unwrap_or_default(), origin, "K N line")?;
    if dims.len() != 2 {
        return Err(Error::parse(origin, "expected `K N` on line 2"));
    }
    let (k, n) = (dims[0] as usize, dims[1] as usize);
    let weights = parse_floats(lines.next().unwrap_or_default(), origin, "weights")?;
    if weights.len() != k {
        return Err(Error::parse(origin, format!("expected {k} weights")));
    }
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for comp in 0..k {
        let mu = parse_floats(
            lines.next().unwrap_or_default(),
            origin,
            &format!("mean {comp}"),
        )?;
        if mu.len() != n {
            return Err(Error::parse(origin, format!("mean {comp} length != {n}")));
        }
        means.push(DVector::from_vec(mu));
        let mut c = DMatrix::zeros(n, n);
        for row in 0..n {
            let vals = parse_floats(
                lines.next().unwrap_or_default(),
                origin,
                &format!("cov {comp} row {row}"),
            )?;
            if vals.len() != n {
                return Err(Error::parse(
                    origin,
                    format!("cov {comp} row {row} length != {n}"),
                ));
            }
            for (col, v) in vals.into_iter().enumerate() {
                c[(row, col)] = v;
            }
        }
        covs.push(c);
    }
    Gmm::new(weights, means, covs)
}

pub fn save(gmm: &Gmm, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(gmm)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<Gmm> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_text(&text, &path.display().to_string())
}

/// Write a batch of vectors in the `DMDEN-SAMPLES v1` text format.
pub fn samples_to_text(samples: &[DVector<f64>], dim: usize) -> String {
    let mut out = String::new();
    out.push_str("DMDEN-SAMPLES v1\n");
    let _ = writeln!(out, "{} {}", samples.len(), dim);
    for s in samples {
        let _ = writeln!(out, "{}", join_floats(s.as_slice()));
    }
    out
}

pub fn samples_from_text(text: &str, origin: &str) -> Result<Vec<DVector<f64>>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "DMDEN-SAMPLES v1" {
        return Err(Error::parse(origin, format!("bad header `{header}`")));
    }
    let dims = parse_floats(lines.next().unwrap_or_default(), origin, "count line")?;
    if dims.len() != 2 {
        return Err(Error::parse(origin, "expected `n N` on line 2"));
    }
    let (count, n) = (dims[0] as usize, dims[1] as usize);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let vals = parse_floats(
            lines.next().unwrap_or_default(),
            origin,
            &format!("sample {i}"),
        )?;
        if vals.len() != n {
            return Err(Error::parse(origin, format!("sample {i} length != {n}")));
        }
        samples.push(DVector::from_vec(vals));
    }
    Ok(samples)
}

fn join_floats(vals: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s
}

fn parse_floats(line: &str, origin: &str, what: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::parse(origin, format!("{what}: bad number `{tok}`")))
        })
        .collect()
}
