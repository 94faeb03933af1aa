//! Variance-preserving noise schedules.
//!
//! A schedule holds the per-step hyperparameters β_t, α_t = 1−β_t, the
//! cumulative products ᾱ_t, and the reverse-transition variances
//! σ_t² = (1−α_t)(1−ᾱ_{t−1})/(1−ᾱ_t) with the convention ᾱ_0 = 1 (so σ_1² = 0).
//! Steps are 1-indexed: t = 1..=T.
//!
//! The per-step SNR is ᾱ_t/(1−ᾱ_t); it decreases strictly in t, which lets an
//! observation with noise variance η² be mapped to the step whose SNR is
//! closest to 1/η².

use crate::error::{Error, Result};

/// All per-step diffusion hyperparameters and derived quantities.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas_sq: Vec<f64>,
    gamma: f64,
}

impl NoiseSchedule {
    /// Linear ramp of β_t with inclusive endpoints: β_1 at t = 1 and β_T at t = T.
    pub fn linear(t_steps: usize, beta_1: f64, beta_t: f64, gamma: f64) -> Result<Self> {
        if t_steps < 1 {
            return Err(Error::param("T", "must be at least 1"));
        }
        if !(beta_1 > 0.0) {
            return Err(Error::param("beta1", "must be > 0"));
        }
        if !(beta_t < 1.0) {
            return Err(Error::param("betaT", "must be < 1"));
        }
        if beta_1 > beta_t {
            return Err(Error::param("beta1", "must be <= betaT"));
        }
        let betas = if t_steps == 1 {
            vec![beta_1]
        } else {
            let step = (beta_t - beta_1) / (t_steps - 1) as f64;
            (0..t_steps).map(|i| beta_1 + i as f64 * step).collect()
        };
        Self::from_betas(betas, gamma)
    }

    /// Constant β_t = β schedule.
    pub fn constant(t_steps: usize, beta: f64, gamma: f64) -> Result<Self> {
        Self::linear(t_steps, beta, beta, gamma)
    }

    /// Build from explicit β values; betas must be nondecreasing and inside (0,1).
    pub fn from_betas(betas: Vec<f64>, gamma: f64) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("T", "must be at least 1"));
        }
        if !(gamma > 0.0) {
            return Err(Error::param("gamma", "must be > 0"));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::param(
                    "betas",
                    format!("beta[{}] = {} outside (0,1)", i + 1, b),
                ));
            }
            if i > 0 && b < betas[i - 1] {
                return Err(Error::param("betas", "must be nondecreasing"));
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for (i, &a) in alphas.iter().enumerate() {
            let next = prod * a;
            // The cumulative product must stay inside (0,1) and strictly
            // decrease, or the SNR ladder degenerates in floating point.
            if !(next > 0.0) || next >= prod {
                return Err(Error::numeric(format!(
                    "alpha_bar degenerates at step {} (value {next})",
                    i + 1
                )));
            }
            prod = next;
            alpha_bars.push(prod);
        }
        // sigma_t^2 with alpha_bar_0 = 1; the t = 1 entry is exactly 0.
        // 1 - alpha_t is beta_t by definition; using beta_t directly avoids
        // the cancellation 1 - (1 - beta) for tiny beta.
        let mut sigmas_sq = Vec::with_capacity(betas.len());
        for t in 1..=betas.len() {
            let abar_prev = if t == 1 { 1.0 } else { alpha_bars[t - 2] };
            sigmas_sq.push(betas[t - 1] * (1.0 - abar_prev) / (1.0 - alpha_bars[t - 1]));
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas_sq,
            gamma,
        })
    }

    /// Number of diffusion steps T.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Asymptotic decay exponent tag consumed by the bound evaluators.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn check(&self, t: usize) {
        assert!(
            t >= 1 && t <= self.len(),
            "step index {} outside 1..={}",
            t,
            self.len()
        );
    }

    /// β_t, 1-indexed.
    pub fn beta(&self, t: usize) -> f64 {
        self.check(t);
        self.betas[t - 1]
    }

    /// α_t = 1 − β_t.
    pub fn alpha(&self, t: usize) -> f64 {
        self.check(t);
        self.alphas[t - 1]
    }

    /// ᾱ_t = Π_{i≤t} α_i; accepts t = 0 and returns 1 by convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 1.0;
        }
        self.check(t);
        self.alpha_bars[t - 1]
    }

    /// Reverse-transition variance σ_t²; σ_1² = 0.
    pub fn sigma_sq(&self, t: usize) -> f64 {
        self.check(t);
        self.sigmas_sq[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma_sq(t).sqrt()
    }

    /// Per-step SNR ᾱ_t/(1−ᾱ_t).
    pub fn snr_dm(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        self.check(t);
        ab / (1.0 - ab)
    }

    /// Per-step SNR in decibels.
    pub fn snr_dm_db(&self, t: usize) -> f64 {
        10.0 * self.snr_dm(t).log10()
    }

    /// Step whose SNR best matches an observation with noise variance η²:
    /// argmin_t |1/η² − ᾱ_t/(1−ᾱ_t)|, ties broken toward the smaller t.
    pub fn match_timestep(&self, eta_sq: f64) -> Result<usize> {
        if !(eta_sq > 0.0) {
            return Err(Error::param("eta_sq", "must be > 0"));
        }
        let target = 1.0 / eta_sq;
        let mut best_t = 1;
        let mut best = f64::INFINITY;
        for t in 1..=self.len() {
            let d = (target - self.snr_dm(t)).abs();
            if d < best {
                best = d;
                best_t = t;
            }
        }
        Ok(best_t)
    }
}

/// Real-valued inference-step count for a constant-β schedule at a given SNR:
/// t̂ = log(snr/(1+snr)) / log(1−β). Cross-checks `match_timestep`.
pub fn constant_beta_inference_steps(beta: f64, snr: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param("beta", "must be in (0,1)"));
    }
    if !(snr > 0.0) {
        return Err(Error::param("snr", "must be > 0"));
    }
    Ok((snr / (1.0 + snr)).ln() / (1.0 - beta).ln())
}

/// β_T presets for common step counts. Each linear schedule with β_1 = 1e−4
/// spans roughly the same SNR range (≈ 40 dB down to ≈ −22 dB).
pub fn preset_beta_t(t_steps: usize) -> Option<f64> {
    match t_steps {
        5 => Some(0.95),
        10 => Some(0.7),
        50 => Some(0.2),
        100 => Some(0.1),
        300 => Some(0.035),
        1000 => Some(0.01),
        _ => None,
    }
}

/// Default β_1 used by the preset schedules.
pub const PRESET_BETA_1: f64 = 1e-4;

/// Solve for β_T such that the linear schedule's SNR at step T is `target_db`,
/// by bisection over β_T in (beta_1, 1).
pub fn solve_beta_t(t_steps: usize, beta_1: f64, target_db: f64) -> Result<f64> {
    if t_steps < 2 {
        return Err(Error::param("T", "solve_beta_t needs T >= 2"));
    }
    // A probe whose cumulative product underflows sits below any target.
    let snr_at = |beta_t: f64| -> f64 {
        match NoiseSchedule::linear(t_steps, beta_1, beta_t, 1.0) {
            Ok(s) => s.snr_dm_db(t_steps),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let mut lo = beta_1;
    let mut hi = 1.0 - 1e-9;
    if snr_at(hi) > target_db {
        return Err(Error::param("target_db", "below reachable SNR range"));
    }
    if snr_at(lo) < target_db {
        return Err(Error::param("target_db", "above reachable SNR range"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if snr_at(mid) > target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Linear schedule for `t_steps` covering the standard SNR range: exact preset
/// β_T when one exists, otherwise solved so SNR at step T is −22 dB.
pub fn linear_matched(t_steps: usize, gamma: f64) -> Result<NoiseSchedule> {
    let beta_t = match preset_beta_t(t_steps) {
        Some(b) => b,
        None => solve_beta_t(t_steps, PRESET_BETA_1, -22.0)?,
    };
    NoiseSchedule::linear(t_steps, PRESET_BETA_1, beta_t, gamma)
}
