//! Closed-form Lipschitz constants of the reverse steps, their algebraic
//! identities, empirical Jacobian probes, and the error-bound evaluators.

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;

use crate::diffusion::{forward_sample, OracleDenoiser, StepwiseDenoiser};
use crate::error::{Error, Result};
use crate::gmm::Gmm;
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use rand::Rng as _;

/// Per-step contraction factor of the reverse-transition conditional mean:
/// L_t = √α_t·(1−ᾱ_{t−1})/(1−ᾱ_t), valid for t ≥ 2 and always in (0,1).
///
/// The first step is excluded: its ground-truth transition has no analytic
/// form, so L_1 must be supplied or estimated (see [`estimate_l1`]).
pub fn lipschitz_step(s: &NoiseSchedule, t: usize) -> Result<f64> {
    if t < 2 || t > s.len() {
        return Err(Error::param("t", format!("must be in 2..={}", s.len())));
    }
    Ok(s.alpha(t).sqrt() * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)))
}

/// Contraction factor of the composed steps τ1..τ2, the telescoped product of
/// the per-step factors: (1−ᾱ_{τ1−1})·√ᾱ_{τ2} / ((1−ᾱ_{τ2})·√ᾱ_{τ1−1}).
pub fn lipschitz_range(s: &NoiseSchedule, tau1: usize, tau2: usize) -> Result<f64> {
    if tau1 < 2 || tau1 > tau2 || tau2 > s.len() {
        return Err(Error::param(
            "tau",
            format!("need 2 <= tau1 <= tau2 <= {}", s.len()),
        ));
    }
    let ab_before = s.alpha_bar(tau1 - 1);
    let ab_end = s.alpha_bar(tau2);
    Ok((1.0 - ab_before) * ab_end.sqrt() / ((1.0 - ab_end) * ab_before.sqrt()))
}

/// Lipschitz constant of the noise-prediction parameterization:
/// tilde-L_t = √(1−ᾱ_t)/(1−α_t)·(√α_t·L_t + 1). Can exceed 1 by a wide
/// margin, most of all at small t.
pub fn lipschitz_eps(s: &NoiseSchedule, t: usize) -> Result<f64> {
    let l = lipschitz_step(s, t)?;
    Ok((1.0 - s.alpha_bar(t)).sqrt() / (1.0 - s.alpha(t)) * (s.alpha(t).sqrt() * l + 1.0))
}

/// SNR form of the composed constant over steps 2..t̂:
/// ((1−α_1)/√α_1)·√(SNR(t̂)·(SNR(t̂)+1)); algebraically equal to
/// [`lipschitz_range`] at (2, t̂).
pub fn lipschitz_snr_form(s: &NoiseSchedule, t_hat: usize) -> Result<f64> {
    if t_hat < 2 || t_hat > s.len() {
        return Err(Error::param("t_hat", format!("must be in 2..={}", s.len())));
    }
    let snr = s.snr_dm(t_hat);
    Ok((1.0 - s.alpha(1)) / s.alpha(1).sqrt() * (snr * (snr + 1.0)).sqrt())
}

/// Inputs to the error-bound evaluators.
///
/// `envelope_c` is the explicit constant standing in for the O(T^{−γ})
/// envelope on β_t; the default c = β_T·T^γ is the tightest constant for
/// which β_t ≤ c·T^{−γ} holds on a linear schedule. `omega` is the assumed
/// stepwise-error decay exponent, carried as metadata only.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub t_total: usize,
    pub t_hat: usize,
    pub l1: f64,
    pub delta: f64,
    pub xi: f64,
    pub n_dim: usize,
    pub gamma: f64,
    pub envelope_c: f64,
    pub omega: f64,
}

impl BoundParams {
    /// Fill schedule-derived fields, defaulting the envelope constant.
    pub fn from_schedule(s: &NoiseSchedule, t_hat: usize, l1: f64, delta: f64, xi: f64) -> Self {
        let t_total = s.len();
        Self {
            t_total,
            t_hat,
            l1,
            delta,
            xi,
            n_dim: 0,
            gamma: s.gamma(),
            envelope_c: s.beta(t_total) * (t_total as f64).powf(s.gamma()),
            omega: f64::NAN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_hat < 1 || self.t_hat > self.t_total {
            return Err(Error::param("t_hat", "must be in 1..=T"));
        }
        if !(self.l1 >= 0.0 && self.delta >= 0.0 && self.xi >= 0.0 && self.envelope_c >= 0.0) {
            return Err(Error::param("bounds", "constants must be nonnegative"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::param("gamma", "must be > 0"));
        }
        Ok(())
    }
}

/// Distance bound to the exact conditional mean under a bounded stepwise
/// error Δ (natural logarithms):
/// 2N·L_1·(1+log t̂)·c·T^{−γ/2}
///   + (4L_1·t̂·log t̂ + (4L_1+2)·t̂ + 2L_1·log t̂ + 2L_1 − 1)·Δ.
pub fn theorem2_bound(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    let n = p.n_dim as f64;
    let t_hat = p.t_hat as f64;
    let log_t = t_hat.ln();
    let envelope = p.envelope_c * (p.t_total as f64).powf(-p.gamma / 2.0);
    let term1 = 2.0 * n * p.l1 * (1.0 + log_t) * envelope;
    let term2 =
        (4.0 * p.l1 * t_hat * log_t + (4.0 * p.l1 + 2.0) * t_hat + 2.0 * p.l1 * log_t + 2.0 * p.l1
            - 1.0)
            * p.delta;
    Ok(term1 + term2)
}

/// Distance bound under a bounded observation-score error Ξ:
/// 2N·L_1·c·T^{−γ/2}·(1+log t̂) + Ξ·η².
pub fn theorem1_bound(p: &BoundParams, eta_sq: f64) -> Result<f64> {
    p.validate()?;
    if !(eta_sq >= 0.0) {
        return Err(Error::param("eta_sq", "must be >= 0"));
    }
    let n = p.n_dim as f64;
    let log_t = (p.t_hat as f64).ln();
    let envelope = p.envelope_c * (p.t_total as f64).powf(-p.gamma / 2.0);
    Ok(2.0 * n * p.l1 * (1.0 + log_t) * envelope + p.xi * eta_sq)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct GapEstimate {
    pub mean: f64,
    pub se: f64,
}

/// Mean distance between a denoiser's step and the exact stepwise
/// conditional mean, over x_t drawn from the forward marginal. A lower
/// estimate for any feasible stepwise error bound Δ.
pub fn estimate_stepwise_gap<D: StepwiseDenoiser + ?Sized>(
    learned: &D,
    g: &Gmm,
    s: &NoiseSchedule,
    t: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<GapEstimate> {
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    if t < 1 || t > s.len() {
        return Err(Error::param("t", format!("must be in 1..={}", s.len())));
    }
    let oracle = OracleDenoiser::new(g, s)?;
    let mut gaps = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = g.sample_one(rng);
        let x_t = forward_sample(&x0, s, t, rng);
        gaps.push((oracle.step(&x_t, t) - learned.step(&x_t, t)).norm());
    }
    let m = gaps.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = gaps.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(GapEstimate { mean: m, se })
}

/// Dense Jacobian of a vector map by central finite differences with step h.
pub fn finite_difference_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let probe = f(x);
    let mut jac = DMatrix::zeros(probe.len(), n);
    for j in 0..n {
        let mut plus = x.clone();
        plus[j] += h;
        let mut minus = x.clone();
        minus[j] -= h;
        let col = (f(&plus) - f(&minus)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Spectral norm by power iteration on MᵀM with two fixed deterministic
/// starting vectors (all-ones and alternating signs).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut best: f64 = 0.0;
    for start in 0..2 {
        let mut v = DVector::from_fn(n, |i, _| if start == 0 || i % 2 == 0 { 1.0 } else { -1.0 });
        v /= v.norm();
        let mut sigma_sq = 0.0;
        for _ in 0..500 {
            let w = m.transpose() * (m * &v);
            let new_sigma_sq = v.dot(&w);
            let norm = w.norm();
            if norm == 0.0 {
                sigma_sq = 0.0;
                break;
            }
            v = w / norm;
            if (new_sigma_sq - sigma_sq).abs() <= 1e-14 * new_sigma_sq.abs() {
                sigma_sq = new_sigma_sq;
                break;
            }
            sigma_sq = new_sigma_sq;
        }
        best = best.max(sigma_sq.max(0.0).sqrt());
    }
    best
}

/// Spectral norm of the finite-difference Jacobian of a denoiser step at x_t.
pub fn empirical_jacobian_norm<D: StepwiseDenoiser + ?Sized>(
    d: &D,
    x_t: &DVector<f64>,
    t: usize,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::param("h", "must be > 0"));
    }
    let jac = finite_difference_jacobian(|v| d.step(v, t), x_t, h);
    Ok(spectral_norm(&jac))
}

/// Default estimate of the first step's Lipschitz constant: the maximum
/// finite-difference Jacobian norm of step 1 over random standard-normal
/// probe inputs.
pub fn estimate_l1<D: StepwiseDenoiser + ?Sized>(
    d: &D,
    dim: usize,
    n_probes: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_probes == 0 {
        return Err(Error::param("n_probes", "must be >= 1"));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..n_probes {
        let x = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        worst = worst.max(empirical_jacobian_norm(d, &x, 1, 1e-5)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::posterior_mean;
    use crate::rng::stream_rng;
    use crate::schedule::{linear_matched, preset_beta_t};
    use approx::assert_relative_eq;

    fn preset_schedules() -> Vec<NoiseSchedule> {
        [5usize, 10, 50, 100, 300, 1000]
            .iter()
            .map(|&t| NoiseSchedule::linear(t, 1e-4, preset_beta_t(t).unwrap(), 1.0).unwrap())
            .collect()
    }

    #[test]
    fn step_constant_closed_forms() {
        // Constant beta: L_2 = sqrt(1-beta)/(2-beta).
        let s = NoiseSchedule::constant(5, 0.5, 1.0).unwrap();
        assert_relative_eq!(
            lipschitz_step(&s, 2).unwrap(),
            0.47140452079103173,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            lipschitz_step(&s, 2).unwrap(),
            (1.0f64 - 0.5).sqrt() / (2.0 - 0.5),
            max_relative = 1e-14
        );
        assert!(lipschitz_step(&s, 1).is_err());
        assert!(lipschitz_step(&s, 6).is_err());
    }

    #[test]
    fn step_below_one_on_all_presets() {
        for s in preset_schedules() {
            for t in 2..=s.len() {
                let l = lipschitz_step(&s, t).unwrap();
                assert!(l > 0.0 && l < 1.0, "T={} t={t} L={l}", s.len());
            }
        }
    }

    #[test]
    fn posterior_mean_jacobian_matches_step_constant() {
        let s = linear_matched(100, 1.0).unwrap();
        let mut rng = stream_rng(41, 0);
        for (i, t) in [2usize, 17, 60, 100].into_iter().enumerate() {
            let x0 = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x_t = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let jac = finite_difference_jacobian(|v| posterior_mean(v, &x0, &s, t), &x_t, 1e-6);
            let l = lipschitz_step(&s, t).unwrap();
            // The Jacobian is L_t * I.
            for r in 0..3 {
                for c in 0..3 {
                    let expect = if r == c { l } else { 0.0 };
                    assert!(
                        (jac[(r, c)] - expect).abs() <= 1e-6 * l.max(1.0),
                        "probe {i}: entry ({r},{c}) = {} vs {expect}",
                        jac[(r, c)]
                    );
                }
            }
            assert_relative_eq!(spectral_norm(&jac), l, max_relative = 1e-6);
        }
    }

    #[test]
    fn range_telescopes_the_stepwise_product() {
        let mut state = 7u64;
        let mut next = |hi: usize| {
            state = crate::rng::splitmix64(state);
            2 + (state as usize) % (hi - 1)
        };
        for s in preset_schedules() {
            if s.len() < 3 {
                continue;
            }
            for _ in 0..200 {
                let a = next(s.len());
                let b = next(s.len());
                let (tau1, tau2) = (a.min(b), a.max(b));
                let product: f64 = (tau1..=tau2)
                    .map(|t| lipschitz_step(&s, t).unwrap())
                    .product();
                assert_relative_eq!(
                    lipschitz_range(&s, tau1, tau2).unwrap(),
                    product,
                    max_relative = 1e-12
                );
            }
            assert_relative_eq!(
                lipschitz_range(&s, 2, 2).unwrap(),
                lipschitz_step(&s, 2).unwrap(),
                epsilon = 0.0
            );
            let full = lipschitz_range(&s, 2, s.len()).unwrap();
            assert!(full > 0.0 && full < 1.0);
        }
        let s = linear_matched(100, 1.0).unwrap();
        assert!(lipschitz_range(&s, 1, 5).is_err());
        assert!(lipschitz_range(&s, 6, 5).is_err());
        assert!(lipschitz_range(&s, 2, 101).is_err());
    }

    #[test]
    fn eps_constant_closed_form_and_shape() {
        // Constant beta = 0.5 at t = 2: sqrt(1-ab_2)/beta*(sqrt(alpha)L_2+1)
        // = sqrt(3) * 4/3 = 4/sqrt(3).
        let s = NoiseSchedule::constant(5, 0.5, 1.0).unwrap();
        assert_relative_eq!(
            lipschitz_eps(&s, 2).unwrap(),
            2.3094010767585034,
            max_relative = 1e-14
        );

        // Shape on the 300-step schedule: a hump near the start, then strict
        // decay; the small-t side dominates the large-t side.
        let s = linear_matched(300, 1.0).unwrap();
        let vals: Vec<f64> = (2..=300).map(|t| lipschitz_eps(&s, t).unwrap()).collect();
        for w in vals[28..].windows(2) {
            assert!(w[1] < w[0], "decay after the hump");
        }
        assert!(vals[0] > *vals.last().unwrap());
        assert!(vals.iter().all(|&v| v > 1.0));
    }

    #[test]
    fn eps_bound_holds_for_induced_linear_maps() {
        // If the mean map is linear with operator norm <= L_t, the induced
        // noise map has operator norm <= tilde-L_t.
        let s = linear_matched(50, 1.0).unwrap();
        let mut rng = stream_rng(43, 0);
        for t in [2usize, 10, 30, 50] {
            let l = lipschitz_step(&s, t).unwrap();
            let tilde = lipschitz_eps(&s, t).unwrap();
            for _ in 0..20 {
                let raw = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
                let m = raw.clone() * (l / spectral_norm(&raw));
                let a = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
                let b = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
                let c = (1.0 - s.alpha(t)) / (1.0 - s.alpha_bar(t)).sqrt();
                let eps_of = |x: &DVector<f64>| (x - s.alpha(t).sqrt() * (&m * x)) / c;
                let lhs = (eps_of(&a) - eps_of(&b)).norm();
                assert!(
                    lhs <= tilde * (&a - &b).norm() * (1.0 + 1e-12),
                    "t={t}: {lhs} vs {}",
                    tilde * (&a - &b).norm()
                );
            }
        }
    }

    #[test]
    fn snr_form_equals_range_from_two() {
        let s = linear_matched(300, 1.0).unwrap();
        let mut prev = 0.0;
        for t_hat in 2..=300 {
            let snr_form = lipschitz_snr_form(&s, t_hat).unwrap();
            assert_relative_eq!(
                snr_form,
                lipschitz_range(&s, 2, t_hat).unwrap(),
                max_relative = 1e-10
            );
            if t_hat > 2 {
                // Monotone increasing in SNR, i.e. decreasing in t.
                assert!(snr_form < prev);
            }
            prev = snr_form;
        }
        // Deep schedule: the composed constant at t = T is tiny.
        let deep = linear_matched(1000, 1.0).unwrap();
        assert!(lipschitz_snr_form(&deep, 1000).unwrap() < 1e-2);
    }

    #[test]
    fn bound_closed_forms_match_hand_arithmetic() {
        // t_hat = 1 kills the logarithms: with N=2, L1=1, c=1, T=4, gamma=2,
        // delta=0.5 the bound is 2*2*1*1*0.25 + ((4+2)+2-1)*0.5 = 4.5.
        let p = BoundParams {
            t_total: 4,
            t_hat: 1,
            l1: 1.0,
            delta: 0.5,
            xi: 0.0,
            n_dim: 2,
            gamma: 2.0,
            envelope_c: 1.0,
            omega: f64::NAN,
        };
        assert!((theorem2_bound(&p).unwrap() - 4.5).abs() <= 1e-12);

        // Quadrupling T at gamma = 1 and delta = 0 exactly halves the bound.
        let mut a = p.clone();
        a.delta = 0.0;
        a.gamma = 1.0;
        a.t_hat = 7;
        a.t_total = 100;
        let mut b = a.clone();
        b.t_total = 400;
        assert_eq!(
            theorem2_bound(&a).unwrap(),
            2.0 * theorem2_bound(&b).unwrap()
        );

        // Direct evaluation at a nontrivial parameter point.
        let p = BoundParams {
            t_total: 1000,
            t_hat: 100,
            l1: 1.0,
            delta: 0.01,
            xi: 0.0,
            n_dim: 8,
            gamma: 1.0,
            envelope_c: 10.0,
            omega: f64::NAN,
        };
        assert_relative_eq!(
            theorem2_bound(&p).unwrap(),
            52.8829512846193,
            max_relative = 1e-12
        );
    }

    #[test]
    fn theorem1_reductions() {
        let p = BoundParams {
            t_total: 100,
            t_hat: 9,
            l1: 0.8,
            delta: 0.0,
            xi: 0.0,
            n_dim: 4,
            gamma: 1.0,
            envelope_c: 7.0,
            omega: f64::NAN,
        };
        // Xi = 0 reduces to the delta = 0 first term of the main bound.
        assert_relative_eq!(
            theorem1_bound(&p, 3.0).unwrap(),
            theorem2_bound(&p).unwrap(),
            epsilon = 0.0
        );
        // eta = 0 removes the score term.
        let mut q = p.clone();
        q.xi = 2.5;
        assert_relative_eq!(
            theorem1_bound(&q, 0.0).unwrap(),
            theorem2_bound(&p).unwrap(),
            epsilon = 0.0
        );
        // Direct arithmetic: 2*4*0.8*(1+ln 9)*7*100^{-1/2} + 2.5*3.
        let expect = 2.0 * 4.0 * 0.8 * (1.0 + 9f64.ln()) * 7.0 * 0.1 + 7.5;
        assert_relative_eq!(
            theorem1_bound(&q, 3.0).unwrap(),
            expect,
            max_relative = 1e-14
        );
    }

    #[test]
    fn bounds_are_monotone_in_t_and_delta() {
        let mut prev = f64::INFINITY;
        for t_total in [50usize, 100, 200, 400, 800] {
            let p = BoundParams {
                t_total,
                t_hat: 10,
                l1: 1.0,
                delta: 0.0,
                xi: 0.0,
                n_dim: 8,
                gamma: 1.0,
                envelope_c: 10.0,
                omega: f64::NAN,
            };
            let b = theorem2_bound(&p).unwrap();
            assert!(b < prev);
            prev = b;
        }
        let mut prev = -1.0;
        for delta in [0.0, 1e-3, 1e-2, 1e-1, 1.0] {
            let p = BoundParams {
                t_total: 100,
                t_hat: 10,
                l1: 1.0,
                delta,
                xi: 0.0,
                n_dim: 8,
                gamma: 1.0,
                envelope_c: 10.0,
                omega: f64::NAN,
            };
            let b = theorem2_bound(&p).unwrap();
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn stepwise_gap_zero_for_oracle_positive_for_zero_net() {
        let g = Gmm::random(3, 2, 13).unwrap().normalize().unwrap();
        let s = linear_matched(50, 1.0).unwrap();
        let oracle = OracleDenoiser::new(&g, &s).unwrap();
        let mut rng = stream_rng(13, 0);
        let e = estimate_stepwise_gap(&oracle, &g, &s, 20, 64, &mut rng).unwrap();
        assert!(e.mean <= 1e-10, "oracle vs itself: {}", e.mean);

        let zero =
            crate::model::as_denoiser(crate::model::MlpNetwork::zeros(3, &[8], 4).unwrap(), &s)
                .unwrap();
        let e = estimate_stepwise_gap(&zero, &g, &s, 20, 64, &mut rng).unwrap();
        assert!(e.mean > 0.0);
        assert!(estimate_stepwise_gap(&zero, &g, &s, 20, 0, &mut rng).is_err());
    }

    #[test]
    fn jacobian_norm_probes() {
        // Oracle on a standard-normal prior is the linear map sqrt(alpha_t)x.
        let s = linear_matched(50, 1.0).unwrap();
        let oracle = OracleDenoiser::new(&Gmm::standard_normal(3), &s).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        for t in [2usize, 25, 50] {
            assert_relative_eq!(
                empirical_jacobian_norm(&oracle, &x, t, 1e-5).unwrap(),
                s.alpha(t).sqrt(),
                max_relative = 1e-4
            );
        }

        // Arbitrary linear maps against the dense SVD.
        let mut rng = stream_rng(47, 0);
        for n in [2usize, 4, 6] {
            let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let svd_norm = m.clone().svd(false, false).singular_values[0];
            assert_relative_eq!(spectral_norm(&m), svd_norm, max_relative = 1e-6);
        }
        assert!(empirical_jacobian_norm(&oracle, &x, 2, 0.0).is_err());
    }

    #[test]
    fn l1_estimate_matches_linear_oracle() {
        let s = linear_matched(50, 1.0).unwrap();
        let oracle = OracleDenoiser::new(&Gmm::standard_normal(4), &s).unwrap();
        let mut rng = stream_rng(53, 0);
        let l1 = estimate_l1(&oracle, 4, 16, &mut rng).unwrap();
        assert_relative_eq!(l1, s.alpha(1).sqrt(), max_relative = 1e-4);
    }
}
