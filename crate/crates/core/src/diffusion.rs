//! Forward process, ground-truth posterior statistics, stepwise denoisers,
//! deterministic denoising stepping only conditional means, and the stochastic
//! reverse process.
//!
//! The deterministic denoiser normalizes the observation to unit per-entry
//! energy, matches its SNR to a diffusion step t̂, identifies the normalized
//! observation with x_{t̂}, and walks the reverse chain down to x_0 forwarding
//! only the stepwise conditional means. No randomness is consumed anywhere on
//! that path. The stochastic reverse process is the same walk plus σ_t·z
//! re-sampling noise; started at t = T from a standard-normal draw it
//! generates, started at t̂ from the normalized observation it is the
//! posterior-sampling baseline the deterministic walk is compared against.

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gmm::{CmeSolver, Gmm, PosteriorSampler};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;

/// One reverse step: the mean of x_{t−1} given x_t.
///
/// Implementations must be deterministic (same input, same output) and
/// preserve the input dimension.
pub trait StepwiseDenoiser: Send + Sync {
    fn schedule(&self) -> &NoiseSchedule;
    fn step(&self, x_t: &DVector<f64>, t: usize) -> DVector<f64>;
}

/// Noisy observation y = x + n with n ~ N(0, η²I).
///
/// `eta_sq_assumed` is the variance the denoiser believes in; it differs from
/// `eta_sq` only in SNR-mismatch ablations.
#[derive(Debug, Clone)]
pub struct Observation {
    pub y: DVector<f64>,
    pub eta_sq: f64,
    pub eta_sq_assumed: f64,
}

impl Observation {
    pub fn new(y: DVector<f64>, eta_sq: f64, eta_sq_assumed: f64) -> Result<Self> {
        if !(eta_sq > 0.0) {
            return Err(Error::param("eta_sq", "must be > 0"));
        }
        if !(eta_sq_assumed > 0.0) {
            return Err(Error::param("eta_sq_assumed", "must be > 0"));
        }
        Ok(Self {
            y,
            eta_sq,
            eta_sq_assumed,
        })
    }

    /// Observation whose assumed noise variance equals the true one.
    pub fn matched(y: DVector<f64>, eta_sq: f64) -> Result<Self> {
        Self::new(y, eta_sq, eta_sq)
    }
}

/// Draw x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε with ε ~ N(0, I).
pub fn forward_sample(
    x0: &DVector<f64>,
    s: &NoiseSchedule,
    t: usize,
    rng: &mut Rng,
) -> DVector<f64> {
    let ab = s.alpha_bar(t);
    let noise = DVector::from_fn(x0.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise
}

/// Coefficients (a_t, b_t) of the posterior mean a_t·x_0 + b_t·x_t, with
/// ᾱ_0 = 1 so that (a_1, b_1) = (1, 0).
pub fn posterior_mean_coeffs(s: &NoiseSchedule, t: usize) -> (f64, f64) {
    if t == 1 {
        return (1.0, 0.0);
    }
    let ab_prev = s.alpha_bar(t - 1);
    let ab = s.alpha_bar(t);
    let a = ab_prev.sqrt() * s.beta(t) / (1.0 - ab);
    let b = s.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    (a, b)
}

/// Posterior mean of x_{t−1} given (x_t, x_0).
pub fn posterior_mean(
    x_t: &DVector<f64>,
    x0: &DVector<f64>,
    s: &NoiseSchedule,
    t: usize,
) -> DVector<f64> {
    let (a, b) = posterior_mean_coeffs(s, t);
    a * x0 + b * x_t
}

/// Conditional mean reparameterized through a noise estimate:
/// μ = (x_t − (1−α_t)/√(1−ᾱ_t)·ε̂) / √α_t.
pub fn mu_from_eps(
    eps_hat: &DVector<f64>,
    x_t: &DVector<f64>,
    s: &NoiseSchedule,
    t: usize,
) -> DVector<f64> {
    let c = (1.0 - s.alpha(t)) / (1.0 - s.alpha_bar(t)).sqrt();
    (x_t - c * eps_hat) / s.alpha(t).sqrt()
}

/// Inverse of [`mu_from_eps`]: the noise estimate a conditional mean implies.
pub fn eps_from_mu(
    mu: &DVector<f64>,
    x_t: &DVector<f64>,
    s: &NoiseSchedule,
    t: usize,
) -> DVector<f64> {
    let c = (1.0 - s.alpha(t)) / (1.0 - s.alpha_bar(t)).sqrt();
    (x_t - s.alpha(t).sqrt() * mu) / c
}

/// Exact stepwise conditional mean E[x_{t−1} | x_t] under a mixture prior.
///
/// By the law of total expectation and the linearity of the posterior mean,
/// E[x_{t−1}|x_t] = a_t·E[x_0|x_t] + b_t·x_t with (a_t, b_t) the posterior
/// coefficients. E[x_0|x_t] is the closed-form CME at the rescaled noise
/// level, so this realizes a zero-stepwise-error denoiser.
pub struct OracleDenoiser {
    gmm: Gmm,
    schedule: NoiseSchedule,
    solvers: Vec<CmeSolver>, // index t−1, built at η² = (1−ᾱ_t)/ᾱ_t
    coeffs: Vec<(f64, f64)>,
    inv_sqrt_ab: Vec<f64>,
}

impl OracleDenoiser {
    pub fn new(gmm: &Gmm, schedule: &NoiseSchedule) -> Result<Self> {
        let mut solvers = Vec::with_capacity(schedule.len());
        let mut coeffs = Vec::with_capacity(schedule.len());
        let mut inv_sqrt_ab = Vec::with_capacity(schedule.len());
        for t in 1..=schedule.len() {
            let ab = schedule.alpha_bar(t);
            if !(ab > 0.0) {
                return Err(Error::numeric(format!("alpha_bar({t}) underflowed")));
            }
            solvers.push(CmeSolver::new(gmm, (1.0 - ab) / ab)?);
            coeffs.push(posterior_mean_coeffs(schedule, t));
            inv_sqrt_ab.push(1.0 / ab.sqrt());
        }
        Ok(Self {
            gmm: gmm.clone(),
            schedule: schedule.clone(),
            solvers,
            coeffs,
            inv_sqrt_ab,
        })
    }

    pub fn gmm(&self) -> &Gmm {
        &self.gmm
    }

    /// E[x_0 | x_t] through the per-step cached solver.
    pub fn cme_at_step(&self, x_t: &DVector<f64>, t: usize) -> DVector<f64> {
        let y = self.inv_sqrt_ab[t - 1] * x_t;
        self.solvers[t - 1]
            .cme(&y)
            .expect("cached CME solve failed on finite input")
    }
}

impl StepwiseDenoiser for OracleDenoiser {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn step(&self, x_t: &DVector<f64>, t: usize) -> DVector<f64> {
        let (a, b) = self.coeffs[t - 1];
        a * self.cme_at_step(x_t, t) + b * x_t
    }
}

/// Deterministic denoising: normalize, match the timestep, then forward only
/// conditional means down to x_0. Returns (x̂_0, t̂). Consumes no randomness.
pub fn deterministic_denoise<D: StepwiseDenoiser + ?Sized>(
    d: &D,
    obs: &Observation,
) -> Result<(DVector<f64>, usize)> {
    let t_hat = d.schedule().match_timestep(obs.eta_sq_assumed)?;
    let mut x = (1.0 + obs.eta_sq_assumed).powf(-0.5) * &obs.y;
    for t in (1..=t_hat).rev() {
        x = d.step(&x, t);
    }
    Ok((x, t_hat))
}

/// Like [`deterministic_denoise`] but records every intermediate estimate:
/// the returned vector holds x̂_{t̂} = ỹ first and x̂_0 last.
pub fn deterministic_denoise_trajectory<D: StepwiseDenoiser + ?Sized>(
    d: &D,
    obs: &Observation,
) -> Result<(Vec<DVector<f64>>, usize)> {
    let t_hat = d.schedule().match_timestep(obs.eta_sq_assumed)?;
    let mut traj = Vec::with_capacity(t_hat + 1);
    let mut x = (1.0 + obs.eta_sq_assumed).powf(-0.5) * &obs.y;
    traj.push(x.clone());
    for t in (1..=t_hat).rev() {
        x = d.step(&x, t);
        traj.push(x.clone());
    }
    Ok((traj, t_hat))
}

/// Stochastic reverse process from `start_t`: x_{t−1} = step(x_t) + σ_t·z with
/// z ~ N(0, I) for t > 1 and z = 0 at t = 1.
pub fn stochastic_reverse<D: StepwiseDenoiser + ?Sized>(
    d: &D,
    start_t: usize,
    x_start: &DVector<f64>,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    let s = d.schedule();
    if start_t < 1 || start_t > s.len() {
        return Err(Error::param("start_t", format!("outside 1..={}", s.len())));
    }
    let mut x = x_start.clone();
    for t in (1..=start_t).rev() {
        x = d.step(&x, t);
        if t > 1 {
            let sigma = s.sigma(t);
            for i in 0..x.len() {
                x[i] += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(x)
}

/// Monte-Carlo Jensen-gap estimate at step t.
#[derive(Debug, Clone, Copy)]
pub struct JensenGapEstimate {
    /// Mean over outer draws of ‖inner-mean − g_t(E[x_t|x_{t+1}])‖.
    pub gap: f64,
    /// Standard error of `gap`.
    pub gap_se: f64,
    /// Inner-noise-corrected estimate of E‖true gap‖²: the squared-norm
    /// estimator minus the inner sampling variance, unbiased and allowed to
    /// go negative when the true gap is zero.
    pub gap_sq_corrected: f64,
    /// Standard error of `gap_sq_corrected`.
    pub gap_sq_corrected_se: f64,
}

/// Estimate E_{x_{t+1}} ‖E[g_t(x_t)|x_{t+1}] − g_t(E[x_t|x_{t+1}])‖ for the
/// exact stepwise conditional mean g_t under a mixture prior.
///
/// Outer draws sample x_{t+1} from the forward marginal. The inner
/// expectation draws x_t from the true conditional q(x_t | x_{t+1}) by first
/// sampling x_0 from the exact posterior given x_{t+1} and then x_t from the
/// Gaussian posterior given (x_0, x_{t+1}). `gap` keeps an inner-noise floor
/// of order 1/√n_inner even when the true gap vanishes; `gap_sq_corrected`
/// removes that floor and is the statistic to test against zero.
pub fn jensen_gap_estimate(
    g: &Gmm,
    s: &NoiseSchedule,
    t: usize,
    n_outer: usize,
    n_inner: usize,
    rng: &mut Rng,
) -> Result<JensenGapEstimate> {
    if t < 1 || t >= s.len() {
        return Err(Error::param("t", format!("must be in 1..{}", s.len())));
    }
    if n_outer == 0 {
        return Err(Error::param("n_outer", "must be >= 1"));
    }
    if n_inner < 2 {
        return Err(Error::param("n_inner", "must be >= 2"));
    }
    let oracle = OracleDenoiser::new(g, s)?;
    let ab_next = s.alpha_bar(t + 1);
    let sampler = PosteriorSampler::new(g, (1.0 - ab_next) / ab_next)?;
    let inv_sqrt_ab_next = 1.0 / ab_next.sqrt();
    let sigma_next = s.sigma(t + 1);
    let n = g.dim();

    let mut gaps = Vec::with_capacity(n_outer);
    let mut corrected = Vec::with_capacity(n_outer);
    for _ in 0..n_outer {
        let x0 = g.sample_one(rng);
        let x_next = forward_sample(&x0, s, t + 1, rng);
        let target = oracle.step(&oracle.step(&x_next, t + 1), t);

        let y = inv_sqrt_ab_next * &x_next;
        let mut inner = Vec::with_capacity(n_inner);
        let mut inner_mean: DVector<f64> = DVector::zeros(n);
        for _ in 0..n_inner {
            let x0_post = sampler.sample(&y, rng)?;
            let mut x_t = posterior_mean(&x_next, &x0_post, s, t + 1);
            for i in 0..n {
                x_t[i] += sigma_next * rng.sample::<f64, _>(StandardNormal);
            }
            let v = oracle.step(&x_t, t);
            inner_mean += &v;
            inner.push(v);
        }
        inner_mean /= n_inner as f64;
        let var_trace: f64 = inner
            .iter()
            .map(|v| (v - &inner_mean).norm_squared())
            .sum::<f64>()
            / (n_inner - 1) as f64;
        let gap_sq = (&inner_mean - &target).norm_squared();
        gaps.push(gap_sq.sqrt());
        corrected.push(gap_sq - var_trace / n_inner as f64);
    }

    let (gap, gap_se) = mean_and_se(&gaps);
    let (gap_sq_corrected, gap_sq_corrected_se) = mean_and_se(&corrected);
    Ok(JensenGapEstimate {
        gap,
        gap_se,
        gap_sq_corrected,
        gap_sq_corrected_se,
    })
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
