//! Experiment drivers behind the `dmden` CLI: batched estimator evaluation,
//! SNR and step-count sweeps, trajectory recording, SNR-mismatch ablation,
//! the re-sampling comparison, Lipschitz/bound tables, the runtime benchmark,
//! and sample generation.
//!
//! Determinism contract: every experiment derives one RNG stream per test
//! element from (master seed, grid-point index, element index) through the
//! documented mix rule, and reduces shard results in element order. Re-running
//! a config re-emits byte-identical CSV. Wall-clock times are inherently
//! non-deterministic, so only the benchmark fills the `time_ms_*` fields; the
//! statistical experiments leave them empty.

pub mod config;
pub mod report;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::analysis::{
    estimate_l1, lipschitz_eps, lipschitz_range, lipschitz_step, theorem1_bound, theorem2_bound,
    BoundParams,
};
use crate::diffusion::{
    deterministic_denoise, deterministic_denoise_trajectory, stochastic_reverse, Observation,
    OracleDenoiser, StepwiseDenoiser,
};
use crate::error::{Error, Result};
use crate::gmm::{self, CmeSolver, Gmm};
use crate::model::{self, as_denoiser, train, MlpNetwork};
use crate::rng::{master_rng, splitmix64, stream_rng};
use crate::schedule::NoiseSchedule;

use config::{DenoiserSpec, ExperimentConfig};
use report::{Cell, Estimator, ExperimentReport, ReportRow, Table};

/// Normalized mean square error Σ‖x_i − x̂_i‖² / Σ‖x_i‖².
pub fn nmse(truth: &[DVector<f64>], estimates: &[DVector<f64>]) -> Result<f64> {
    if truth.is_empty() || truth.len() != estimates.len() {
        return Err(Error::param("batch", "need equal nonempty batches"));
    }
    let num: f64 = truth
        .iter()
        .zip(estimates)
        .map(|(x, e)| (x - e).norm_squared())
        .sum();
    let den: f64 = truth.iter().map(|x| x.norm_squared()).sum();
    if !(den > 0.0) {
        return Err(Error::numeric("zero signal energy in NMSE denominator"));
    }
    Ok(num / den)
}

/// Observation noise variance for an SNR in dB on unit-energy-per-entry data.
pub fn snr_db_to_eta_sq(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Which quantities [`evaluate_point`] computes.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointOptions {
    pub with_ls: bool,
    pub with_cme: bool,
    pub with_det: bool,
    pub with_resamp: bool,
    /// Uniform mismatch half-range in dB; `Some(0.0)` applies a zero offset.
    pub mismatch_db: Option<f64>,
    /// Record the mean distance between the exact CME and the deterministic
    /// walk output.
    pub with_gap: bool,
}

impl PointOptions {
    pub fn standard() -> Self {
        Self {
            with_ls: true,
            with_cme: true,
            with_det: true,
            with_resamp: true,
            ..Self::default()
        }
    }
}

/// An estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct Stat {
    pub value: f64,
    pub se: f64,
}

/// Per-grid-point estimator statistics.
///
/// Standard errors use the delta approximation: the NMSE denominator is
/// treated as constant, se = sd(per-sample error energy)/√m / mean energy.
#[derive(Debug, Clone)]
pub struct PointStats {
    pub snr_db: f64,
    pub eta_sq: f64,
    pub t_hat: usize,
    pub ls: Option<Stat>,
    pub cme: Option<Stat>,
    pub dm_det: Option<Stat>,
    pub dm_resamp: Option<Stat>,
    pub dm_mismatch: Option<Stat>,
    /// Mean ‖CME − deterministic output‖ with standard error.
    pub gap: Option<Stat>,
    /// Paired NMSE difference resampling − deterministic (positive when the
    /// re-sampling walk is worse), with the paired standard error.
    pub resamp_minus_det: Option<Stat>,
}

struct ElementRecord {
    norm_sq: f64,
    ls: f64,
    cme: f64,
    det: f64,
    resamp: f64,
    mismatch: f64,
    gap: f64,
}

/// Evaluate the configured estimators at one observation SNR over `m`
/// elements, element i on stream (point_seed, i).
pub fn evaluate_point<D: StepwiseDenoiser + ?Sized>(
    g: &Gmm,
    s: &NoiseSchedule,
    d: &D,
    snr_db: f64,
    m: usize,
    point_seed: u64,
    opts: PointOptions,
) -> Result<PointStats> {
    if m == 0 {
        return Err(Error::param("test_size", "must be >= 1"));
    }
    let eta_sq = snr_db_to_eta_sq(snr_db);
    let eta = eta_sq.sqrt();
    let n = g.dim();
    let t_hat = s.match_timestep(eta_sq)?;
    let needs_cme = opts.with_cme || opts.with_gap;
    let solver = if needs_cme {
        Some(CmeSolver::new(g, eta_sq)?)
    } else {
        None
    };
    let y_scale = (1.0 + eta_sq).powf(-0.5);

    let records: Vec<Result<ElementRecord>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(point_seed, i as u64);
            let x0 = g.sample_one(&mut rng);
            let noise = DVector::from_fn(n, |_, _| eta * rng.sample::<f64, _>(StandardNormal));
            let y = &x0 + &noise;
            let mut rec = ElementRecord {
                norm_sq: x0.norm_squared(),
                ls: 0.0,
                cme: 0.0,
                det: 0.0,
                resamp: 0.0,
                mismatch: 0.0,
                gap: 0.0,
            };
            if opts.with_ls {
                rec.ls = noise.norm_squared();
            }
            let cme_est = match &solver {
                Some(sol) => Some(sol.cme(&y)?),
                None => None,
            };
            if let Some(est) = &cme_est {
                rec.cme = (&x0 - est).norm_squared();
            }
            let mut det_est = None;
            if opts.with_det || opts.with_gap {
                let obs = Observation::matched(y.clone(), eta_sq)?;
                let (est, _) = deterministic_denoise(d, &obs)?;
                rec.det = (&x0 - &est).norm_squared();
                det_est = Some(est);
            }
            if opts.with_gap {
                rec.gap = (cme_est.as_ref().unwrap() - det_est.as_ref().unwrap()).norm();
            }
            if let Some(range_db) = opts.mismatch_db {
                let offset_db = if range_db > 0.0 {
                    rng.gen_range(-range_db..=range_db)
                } else {
                    0.0
                };
                let assumed = eta_sq * 10f64.powf(offset_db / 10.0);
                let obs = Observation::new(y.clone(), eta_sq, assumed)?;
                let (est, _) = deterministic_denoise(d, &obs)?;
                rec.mismatch = (&x0 - &est).norm_squared();
            }
            if opts.with_resamp {
                let y_tilde = y_scale * &y;
                let est = stochastic_reverse(d, t_hat, &y_tilde, &mut rng)?;
                rec.resamp = (&x0 - &est).norm_squared();
            }
            Ok(rec)
        })
        .collect();
    let mut recs = Vec::with_capacity(m);
    for r in records {
        recs.push(r?);
    }

    let mean_norm = recs.iter().map(|r| r.norm_sq).sum::<f64>() / m as f64;
    if !(mean_norm > 0.0) {
        return Err(Error::numeric("zero signal energy in NMSE denominator"));
    }
    let stat_of = |select: &dyn Fn(&ElementRecord) -> f64| -> Stat {
        let vals: Vec<f64> = recs.iter().map(select).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = if m > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64
        } else {
            f64::INFINITY
        };
        Stat {
            value: mean / mean_norm,
            se: (var / m as f64).sqrt() / mean_norm,
        }
    };

    let mut stats = PointStats {
        snr_db,
        eta_sq,
        t_hat,
        ls: None,
        cme: None,
        dm_det: None,
        dm_resamp: None,
        dm_mismatch: None,
        gap: None,
        resamp_minus_det: None,
    };
    if opts.with_ls {
        stats.ls = Some(stat_of(&|r| r.ls));
    }
    if opts.with_cme {
        stats.cme = Some(stat_of(&|r| r.cme));
    }
    if opts.with_det {
        stats.dm_det = Some(stat_of(&|r| r.det));
    }
    if opts.with_resamp {
        stats.dm_resamp = Some(stat_of(&|r| r.resamp));
        if opts.with_det {
            stats.resamp_minus_det = Some(stat_of(&|r| r.resamp - r.det));
        }
    }
    if opts.mismatch_db.is_some() {
        stats.dm_mismatch = Some(stat_of(&|r| r.mismatch));
    }
    if opts.with_gap {
        let gaps: Vec<f64> = recs.iter().map(|r| r.gap).collect();
        let mean = gaps.iter().sum::<f64>() / m as f64;
        let var = if m > 1 {
            gaps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64
        } else {
            f64::INFINITY
        };
        stats.gap = Some(Stat {
            value: mean,
            se: (var / m as f64).sqrt(),
        });
    }
    Ok(stats)
}

/// Construct the configured denoiser over a given prior and schedule.
pub fn build_denoiser(
    cfg: &ExperimentConfig,
    g: &Gmm,
    s: &NoiseSchedule,
) -> Result<Box<dyn StepwiseDenoiser>> {
    match &cfg.denoiser {
        DenoiserSpec::Oracle => Ok(Box::new(OracleDenoiser::new(g, s)?)),
        DenoiserSpec::Checkpoint(path) => {
            let net = model::load(path)?;
            if net.data_dim() != g.dim() {
                return Err(Error::param(
                    "experiment.checkpoint",
                    format!(
                        "checkpoint dimension {} does not match prior dimension {}",
                        net.data_dim(),
                        g.dim()
                    ),
                ));
            }
            Ok(Box::new(as_denoiser(net, s)?))
        }
        DenoiserSpec::Train => {
            let net = train_network(cfg, g, s)?;
            Ok(Box::new(as_denoiser(net, s)?))
        }
    }
}

/// Train a fresh network per the config (deterministic in `train.seed`).
pub fn train_network(cfg: &ExperimentConfig, g: &Gmm, s: &NoiseSchedule) -> Result<MlpNetwork> {
    let mut rng = master_rng(cfg.train.seed);
    let net = MlpNetwork::random(g.dim(), &cfg.model.hidden, cfg.model.embed, &mut rng)?;
    Ok(train(net, g, s, &cfg.train, &mut rng)?.net)
}

fn meta_lines(cfg: &ExperimentConfig, kind: &str) -> Vec<String> {
    let mut meta = vec![
        format!("dmden v{}", env!("CARGO_PKG_VERSION")),
        format!("experiment = {kind}"),
        format!("seed = {}", cfg.master_seed),
    ];
    meta.extend(cfg.echo_lines());
    meta
}

fn point_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ index as u64)
}

fn cell(stat: Stat) -> Cell {
    Cell {
        nmse: stat.value,
        se: stat.se,
        time_ms: None,
    }
}

/// NMSE of LS, exact CME, deterministic walk, and re-sampling walk across the
/// SNR grid.
pub fn run_snr_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let g = cfg.build_gmm()?;
    let s = cfg.build_schedule()?;
    let d = build_denoiser(cfg, &g, &s)?;
    let mut report = ExperimentReport::new(meta_lines(cfg, "snr-sweep"));
    for (pi, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let stats = evaluate_point(
            &g,
            &s,
            d.as_ref(),
            snr_db,
            cfg.test_size,
            point_seed(cfg.master_seed, pi),
            PointOptions::standard(),
        )?;
        let mut row = ReportRow::new(snr_db);
        row.set(Estimator::Ls, cell(stats.ls.unwrap()));
        row.set(Estimator::Cme, cell(stats.cme.unwrap()));
        row.set(Estimator::DmDet, cell(stats.dm_det.unwrap()));
        row.set(Estimator::DmResamp, cell(stats.dm_resamp.unwrap()));
        report.rows.push(row);
    }
    Ok(report)
}

/// NMSE versus the number of diffusion steps at each configured SNR; with the
/// oracle denoiser the trailing columns carry the mean distance to the exact
/// CME. Returns one report per SNR grid entry.
pub fn run_t_sweep(cfg: &ExperimentConfig) -> Result<Vec<(f64, ExperimentReport)>> {
    let g = cfg.build_gmm()?;
    if matches!(cfg.denoiser, DenoiserSpec::Checkpoint(_))
        && cfg.t_list != vec![cfg.schedule.t_steps]
    {
        return Err(Error::param(
            "experiment.t_list",
            "a fixed checkpoint only supports its own schedule length",
        ));
    }
    let with_gap = matches!(cfg.denoiser, DenoiserSpec::Oracle);
    let mut out = Vec::new();
    for (pi, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let mut report = ExperimentReport::new(meta_lines(cfg, "t-sweep"));
        report.meta.push(format!("snr_db = {snr_db}"));
        if with_gap {
            report.extra_columns = vec!["gap_mean".into(), "gap_se".into()];
        }
        for &t_steps in &cfg.t_list {
            let s = cfg.schedule_for(t_steps)?;
            let d = build_denoiser(cfg, &g, &s)?;
            let stats = evaluate_point(
                &g,
                &s,
                d.as_ref(),
                snr_db,
                cfg.test_size,
                point_seed(cfg.master_seed, pi),
                PointOptions {
                    with_ls: true,
                    with_cme: true,
                    with_det: true,
                    with_gap,
                    ..PointOptions::default()
                },
            )?;
            let mut row = ReportRow::new(t_steps as f64);
            row.set(Estimator::Ls, cell(stats.ls.unwrap()));
            row.set(Estimator::Cme, cell(stats.cme.unwrap()));
            row.set(Estimator::DmDet, cell(stats.dm_det.unwrap()));
            if let Some(gap) = stats.gap {
                row.extras = vec![gap.value, gap.se];
            }
            report.rows.push(row);
        }
        out.push((snr_db, report));
    }
    Ok(out)
}

/// NMSE of the intermediate estimates x̂_t against x_0 for t = t̂ down to 0,
/// one report per configured SNR. The deterministic column of the final row
/// (x = 0) reproduces the SNR sweep's value for the same seed.
pub fn run_trajectory(cfg: &ExperimentConfig) -> Result<Vec<(f64, ExperimentReport)>> {
    let g = cfg.build_gmm()?;
    let s = cfg.build_schedule()?;
    let d = build_denoiser(cfg, &g, &s)?;
    let n = g.dim();
    let mut out = Vec::new();
    for (pi, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let eta_sq = snr_db_to_eta_sq(snr_db);
        let eta = eta_sq.sqrt();
        let seed = point_seed(cfg.master_seed, pi);
        let m = cfg.test_size;
        let solver = CmeSolver::new(&g, eta_sq)?;
        type ElemTrajectory = (f64, Vec<f64>, f64, f64); // (||x0||^2, step errors, cme err, ls err)
        let per_elem: Vec<Result<ElemTrajectory>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let x0 = g.sample_one(&mut rng);
                let noise = DVector::from_fn(n, |_, _| eta * rng.sample::<f64, _>(StandardNormal));
                let y = &x0 + &noise;
                let obs = Observation::matched(y.clone(), eta_sq)?;
                let (traj, _) = deterministic_denoise_trajectory(d.as_ref(), &obs)?;
                let errs: Vec<f64> = traj.iter().map(|est| (&x0 - est).norm_squared()).collect();
                let cme_err = (&x0 - &solver.cme(&y)?).norm_squared();
                Ok((x0.norm_squared(), errs, cme_err, noise.norm_squared()))
            })
            .collect();
        let mut norm_sum = 0.0;
        let mut cme_sum = 0.0;
        let mut ls_sum = 0.0;
        let mut err_sums: Option<Vec<f64>> = None;
        for r in per_elem {
            let (norm_sq, errs, cme_err, ls_err) = r?;
            norm_sum += norm_sq;
            cme_sum += cme_err;
            ls_sum += ls_err;
            match &mut err_sums {
                None => err_sums = Some(errs),
                Some(acc) => {
                    for (a, e) in acc.iter_mut().zip(&errs) {
                        *a += e;
                    }
                }
            }
        }
        let err_sums = err_sums.expect("test_size >= 1");
        let t_hat = err_sums.len() - 1;
        let mut report = ExperimentReport::new(meta_lines(cfg, "trajectory"));
        report.meta.push(format!("snr_db = {snr_db}"));
        report.meta.push(format!("t_hat = {t_hat}"));
        for (k, err) in err_sums.iter().enumerate() {
            // Row x is the remaining step index: t_hat at the start, 0 at the end.
            let mut row = ReportRow::new((t_hat - k) as f64);
            row.set(
                Estimator::DmDet,
                Cell {
                    nmse: err / norm_sum,
                    se: 0.0,
                    time_ms: None,
                },
            );
            row.set(
                Estimator::Cme,
                Cell {
                    nmse: cme_sum / norm_sum,
                    se: 0.0,
                    time_ms: None,
                },
            );
            row.set(
                Estimator::Ls,
                Cell {
                    nmse: ls_sum / norm_sum,
                    se: 0.0,
                    time_ms: None,
                },
            );
            report.rows.push(row);
        }
        out.push((snr_db, report));
    }
    Ok(out)
}

/// Matched versus SNR-mismatched deterministic denoising across the grid.
pub fn run_mismatch(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let g = cfg.build_gmm()?;
    let s = cfg.build_schedule()?;
    let d = build_denoiser(cfg, &g, &s)?;
    let mut report = ExperimentReport::new(meta_lines(cfg, "mismatch"));
    for (pi, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let stats = evaluate_point(
            &g,
            &s,
            d.as_ref(),
            snr_db,
            cfg.test_size,
            point_seed(cfg.master_seed, pi),
            PointOptions {
                with_ls: true,
                with_cme: true,
                with_det: true,
                mismatch_db: Some(cfg.mismatch_db),
                ..PointOptions::default()
            },
        )?;
        let mut row = ReportRow::new(snr_db);
        row.set(Estimator::Ls, cell(stats.ls.unwrap()));
        row.set(Estimator::Cme, cell(stats.cme.unwrap()));
        row.set(Estimator::DmDet, cell(stats.dm_det.unwrap()));
        row.set(Estimator::DmMismatch, cell(stats.dm_mismatch.unwrap()));
        report.rows.push(row);
    }
    Ok(report)
}

/// Deterministic versus re-sampling reverse walks, with the paired NMSE
/// difference in the trailing columns.
pub fn run_resample_compare(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let g = cfg.build_gmm()?;
    let s = cfg.build_schedule()?;
    let d = build_denoiser(cfg, &g, &s)?;
    let mut report = ExperimentReport::new(meta_lines(cfg, "resample-compare"));
    report.extra_columns = vec!["resamp_minus_det_mean".into(), "resamp_minus_det_se".into()];
    for (pi, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let stats = evaluate_point(
            &g,
            &s,
            d.as_ref(),
            snr_db,
            cfg.test_size,
            point_seed(cfg.master_seed, pi),
            PointOptions::standard(),
        )?;
        let mut row = ReportRow::new(snr_db);
        row.set(Estimator::Ls, cell(stats.ls.unwrap()));
        row.set(Estimator::Cme, cell(stats.cme.unwrap()));
        row.set(Estimator::DmDet, cell(stats.dm_det.unwrap()));
        row.set(Estimator::DmResamp, cell(stats.dm_resamp.unwrap()));
        let paired = stats.resamp_minus_det.unwrap();
        row.extras = vec![paired.value, paired.se];
        report.rows.push(row);
    }
    Ok(report)
}

/// Per-step Lipschitz table: t, L_t, tilde-L_t, L_{2:t}, and the step SNR.
pub fn run_lipschitz(cfg: &ExperimentConfig) -> Result<Table> {
    let s = cfg.build_schedule()?;
    if s.len() < 2 {
        return Err(Error::param(
            "schedule.T",
            "need T >= 2 for Lipschitz curves",
        ));
    }
    let mut table = Table::new(
        meta_lines(cfg, "lipschitz"),
        vec![
            "t".into(),
            "L_t".into(),
            "tilde_L_t".into(),
            "L_2_t".into(),
            "snr_dm_db".into(),
        ],
    );
    for t in 2..=s.len() {
        table.rows.push(vec![
            t as f64,
            lipschitz_step(&s, t)?,
            lipschitz_eps(&s, t)?,
            lipschitz_range(&s, 2, t)?,
            s.snr_dm_db(t),
        ]);
    }
    Ok(table)
}

/// Bound-evaluator table across the configured step counts at the target SNR.
pub fn run_bounds(cfg: &ExperimentConfig) -> Result<Table> {
    let g = cfg.build_gmm()?;
    let eta_sq = snr_db_to_eta_sq(cfg.analysis.target_snr_db);
    let mut table = Table::new(
        meta_lines(cfg, "bounds"),
        vec![
            "T".into(),
            "t_hat".into(),
            "l1".into(),
            "envelope_c".into(),
            "theorem1".into(),
            "theorem2".into(),
        ],
    );
    for &t_steps in &cfg.t_list {
        let s = cfg.schedule_for(t_steps)?;
        let t_hat = s.match_timestep(eta_sq)?;
        let l1 = match cfg.analysis.l1 {
            Some(v) => v,
            None => {
                let oracle = OracleDenoiser::new(&g, &s)?;
                let mut rng = stream_rng(cfg.master_seed, 0xB0D5);
                estimate_l1(&oracle, g.dim(), 16, &mut rng)?
            }
        };
        let mut p = BoundParams::from_schedule(&s, t_hat, l1, cfg.analysis.delta, cfg.analysis.xi);
        p.n_dim = g.dim();
        p.omega = cfg.analysis.omega;
        table.rows.push(vec![
            t_steps as f64,
            t_hat as f64,
            l1,
            p.envelope_c,
            theorem1_bound(&p, eta_sq)?,
            theorem2_bound(&p)?,
        ]);
    }
    Ok(table)
}

/// Wall-time per denoised batch at each SNR; the only experiment that fills
/// the `time_ms_*` fields. Batches run sequentially for stable timings.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let g = cfg.build_gmm()?;
    let s = cfg.build_schedule()?;
    let d = build_denoiser(cfg, &g, &s)?;
    let n = g.dim();
    let mut report = ExperimentReport::new(meta_lines(cfg, "bench"));
    let param_count = match &cfg.denoiser {
        DenoiserSpec::Oracle => None,
        _ => {
            // Parameter count from the configured architecture.
            let probe = MlpNetwork::zeros(g.dim(), &cfg.model.hidden, cfg.model.embed)?;
            Some(probe.param_count())
        }
    };
    match param_count {
        Some(c) => report.meta.push(format!("parameter_count = {c}")),
        None => report
            .meta
            .push("parameter_count = oracle (closed form)".into()),
    }
    for (pi, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let eta_sq = snr_db_to_eta_sq(snr_db);
        let eta = eta_sq.sqrt();
        let seed = point_seed(cfg.master_seed, pi);
        let mut truth = Vec::with_capacity(cfg.test_size);
        let mut obs = Vec::with_capacity(cfg.test_size);
        for i in 0..cfg.test_size {
            let mut rng = stream_rng(seed, i as u64);
            let x0 = g.sample_one(&mut rng);
            let noise = DVector::from_fn(n, |_, _| eta * rng.sample::<f64, _>(StandardNormal));
            obs.push(Observation::matched(&x0 + noise, eta_sq)?);
            truth.push(x0);
        }
        let mut estimates = Vec::with_capacity(cfg.test_size);
        let mut elapsed = std::time::Duration::ZERO;
        let mut batches = 0usize;
        for chunk in obs.chunks(cfg.bench_batch) {
            let start = std::time::Instant::now();
            for o in chunk {
                estimates.push(deterministic_denoise(d.as_ref(), o)?.0);
            }
            elapsed += start.elapsed();
            batches += 1;
        }
        let time_per_batch_ms = elapsed.as_secs_f64() * 1e3 / batches as f64;
        let nmse_val = nmse(&truth, &estimates)?;
        let mut row = ReportRow::new(snr_db);
        row.set(
            Estimator::DmDet,
            Cell {
                nmse: nmse_val,
                se: 0.0,
                time_ms: Some(time_per_batch_ms),
            },
        );
        report.rows.push(row);
    }
    Ok(report)
}

/// Result of a generation run.
pub struct GenerateOutput {
    /// Sample file text (`DMDEN-SAMPLES v1`).
    pub file_text: String,
    pub mean_norm: f64,
    /// Empirical E‖x‖²/N.
    pub energy_per_dim: f64,
}

/// Full-length stochastic reverse generation from standard-normal starts.
pub fn run_generate(cfg: &ExperimentConfig) -> Result<GenerateOutput> {
    let g = cfg.build_gmm()?;
    let s = cfg.build_schedule()?;
    let d = build_denoiser(cfg, &g, &s)?;
    let n = g.dim();
    let samples: Vec<Result<DVector<f64>>> = (0..cfg.generate_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.master_seed, i as u64);
            let x_start = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            stochastic_reverse(d.as_ref(), s.len(), &x_start, &mut rng)
        })
        .collect();
    let mut collected = Vec::with_capacity(cfg.generate_count);
    for s in samples {
        collected.push(s?);
    }
    let count = collected.len().max(1) as f64;
    let mut mean = DVector::zeros(n);
    let mut energy = 0.0;
    for x in &collected {
        mean += x;
        energy += x.norm_squared();
    }
    mean /= count;
    Ok(GenerateOutput {
        file_text: gmm::samples_to_text(&collected, n),
        mean_norm: mean.norm(),
        energy_per_dim: energy / count / n as f64,
    })
}
