//! Plain-text experiment configuration: `section.key = value` lines with `#`
//! comments, parsed onto defaults.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gmm::{self, Gmm};
use crate::model::{LossKind, TrainConfig};
use crate::schedule::{self, NoiseSchedule};

/// Prior distribution source.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Random { n: usize, k: usize, seed: u64 },
    StandardNormal { n: usize },
    File { path: PathBuf },
}

/// Schedule hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub t_steps: usize,
    pub beta1: f64,
    pub beta_t: f64,
    pub gamma: f64,
}

/// Which denoiser the experiment drives.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    Oracle,
    Checkpoint(PathBuf),
    Train,
}

/// Network architecture knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub embed: usize,
}

/// Inputs for the bound evaluators.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSpec {
    pub delta: f64,
    pub xi: f64,
    pub l1: Option<f64>,
    pub omega: f64,
    pub target_snr_db: f64,
}

/// Full experiment configuration with defaults for every field.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub prior: PriorSpec,
    pub normalize_prior: bool,
    pub schedule: ScheduleSpec,
    pub snr_grid_db: Vec<f64>,
    pub test_size: usize,
    pub mismatch_db: f64,
    pub t_list: Vec<usize>,
    pub master_seed: u64,
    pub out: Option<PathBuf>,
    pub denoiser: DenoiserSpec,
    pub bench_batch: usize,
    pub generate_count: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub analysis: AnalysisSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            prior: PriorSpec::Random {
                n: 8,
                k: 4,
                seed: 7,
            },
            normalize_prior: true,
            schedule: ScheduleSpec {
                t_steps: 300,
                beta1: 1e-4,
                beta_t: 0.035,
                gamma: 1.0,
            },
            snr_grid_db: vec![
                -20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0,
            ],
            test_size: 10_000,
            mismatch_db: 3.0,
            t_list: vec![5, 10, 50, 100, 300, 1000],
            master_seed: 1,
            out: None,
            denoiser: DenoiserSpec::Oracle,
            bench_batch: 512,
            generate_count: 1000,
            model: ModelSpec {
                hidden: vec![128, 128],
                embed: 32,
            },
            train: TrainConfig::default(),
            analysis: AnalysisSpec {
                delta: 0.0,
                xi: 0.0,
                l1: None,
                omega: f64::NAN,
                target_snr_db: 10.0,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(
                    origin,
                    format!("line {}: expected `key = value`", lineno + 1),
                ));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(origin, format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "prior.kind" => match value {
                "random" => {
                    if !matches!(self.prior, PriorSpec::Random { .. }) {
                        self.prior = PriorSpec::Random {
                            n: 8,
                            k: 4,
                            seed: 7,
                        };
                    }
                }
                "standard-normal" => {
                    let n = self.prior_dim().unwrap_or(8);
                    self.prior = PriorSpec::StandardNormal { n };
                }
                "file" => {
                    self.prior = PriorSpec::File {
                        path: PathBuf::new(),
                    };
                }
                other => {
                    return Err(Error::param(
                        "prior.kind",
                        format!("unknown kind `{other}`"),
                    ))
                }
            },
            "prior.N" => {
                let n = parse_usize(key, value)?;
                match &mut self.prior {
                    PriorSpec::Random { n: slot, .. } => *slot = n,
                    PriorSpec::StandardNormal { n: slot } => *slot = n,
                    PriorSpec::File { .. } => {
                        return Err(Error::param(key, "not applicable to a file prior"))
                    }
                }
            }
            "prior.K" => match &mut self.prior {
                PriorSpec::Random { k, .. } => *k = parse_usize(key, value)?,
                _ => return Err(Error::param(key, "only applies to a random prior")),
            },
            "prior.seed" => match &mut self.prior {
                PriorSpec::Random { seed, .. } => *seed = parse_u64(key, value)?,
                _ => return Err(Error::param(key, "only applies to a random prior")),
            },
            "prior.file" => {
                self.prior = PriorSpec::File {
                    path: PathBuf::from(value),
                }
            }
            "prior.normalize" => self.normalize_prior = parse_bool(key, value)?,
            "schedule.T" => self.schedule.t_steps = parse_usize(key, value)?,
            "schedule.beta1" => self.schedule.beta1 = parse_f64(key, value)?,
            "schedule.betaT" => self.schedule.beta_t = parse_f64(key, value)?,
            "schedule.gamma" => self.schedule.gamma = parse_f64(key, value)?,
            "experiment.snr_grid_db" => self.snr_grid_db = parse_f64_list(key, value)?,
            "experiment.test_size" => self.test_size = parse_usize(key, value)?,
            "experiment.mismatch_db" => self.mismatch_db = parse_f64(key, value)?,
            "experiment.t_list" => self.t_list = parse_usize_list(key, value)?,
            "experiment.seed" => self.master_seed = parse_u64(key, value)?,
            "experiment.out" => self.out = Some(PathBuf::from(value)),
            "experiment.denoiser" => {
                self.denoiser = match value {
                    "oracle" => DenoiserSpec::Oracle,
                    "train" => DenoiserSpec::Train,
                    "checkpoint" => DenoiserSpec::Checkpoint(PathBuf::new()),
                    other => return Err(Error::param(key, format!("unknown denoiser `{other}`"))),
                }
            }
            "experiment.checkpoint" => {
                self.denoiser = DenoiserSpec::Checkpoint(PathBuf::from(value))
            }
            "experiment.bench_batch" => self.bench_batch = parse_usize(key, value)?,
            "experiment.generate_count" => {
                // generate_count may legitimately be 0 (header-only file).
                self.generate_count = value
                    .parse::<usize>()
                    .map_err(|_| Error::param(key, format!("bad integer `{value}`")))?
            }
            "model.hidden" => self.model.hidden = parse_usize_list(key, value)?,
            "model.embed" => self.model.embed = parse_usize(key, value)?,
            "train.batch" => self.train.batch_size = parse_usize(key, value)?,
            "train.epochs" => self.train.epochs = parse_usize(key, value)?,
            "train.lr" => self.train.learning_rate = parse_f64(key, value)?,
            "train.beta1" => self.train.beta1 = parse_f64(key, value)?,
            "train.beta2" => self.train.beta2 = parse_f64(key, value)?,
            "train.eps" => self.train.eps = parse_f64(key, value)?,
            "train.dataset" => self.train.dataset_size = parse_usize(key, value)?,
            "train.seed" => self.train.seed = parse_u64(key, value)?,
            "train.loss" => self.train.loss = LossKind::parse(value)?,
            "analysis.delta" => self.analysis.delta = parse_f64(key, value)?,
            "analysis.xi" => self.analysis.xi = parse_f64(key, value)?,
            "analysis.l1" => {
                self.analysis.l1 = if value.is_empty() || value == "estimate" {
                    None
                } else {
                    Some(parse_f64(key, value)?)
                }
            }
            "analysis.omega" => self.analysis.omega = parse_f64(key, value)?,
            "analysis.target_snr_db" => self.analysis.target_snr_db = parse_f64(key, value)?,
            other => return Err(Error::param(other, "unknown configuration key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_grid_db.is_empty() {
            return Err(Error::param("experiment.snr_grid_db", "must be nonempty"));
        }
        if self.test_size == 0 {
            return Err(Error::param("experiment.test_size", "must be >= 1"));
        }
        if !(self.mismatch_db >= 0.0) {
            return Err(Error::param("experiment.mismatch_db", "must be >= 0"));
        }
        if self.t_list.is_empty() {
            return Err(Error::param("experiment.t_list", "must be nonempty"));
        }
        if let PriorSpec::File { path } = &self.prior {
            if path.as_os_str().is_empty() {
                return Err(Error::param("prior.file", "path required for a file prior"));
            }
        }
        if let DenoiserSpec::Checkpoint(path) = &self.denoiser {
            if path.as_os_str().is_empty() {
                return Err(Error::param(
                    "experiment.checkpoint",
                    "path required for a checkpoint denoiser",
                ));
            }
        }
        self.train.validate()?;
        Ok(())
    }

    fn prior_dim(&self) -> Option<usize> {
        match &self.prior {
            PriorSpec::Random { n, .. } | PriorSpec::StandardNormal { n } => Some(*n),
            PriorSpec::File { .. } => None,
        }
    }

    /// Construct the prior, applying normalization when configured.
    pub fn build_gmm(&self) -> Result<Gmm> {
        let g = match &self.prior {
            PriorSpec::Random { n, k, seed } => Gmm::random(*n, *k, *seed)?,
            PriorSpec::StandardNormal { n } => Gmm::standard_normal(*n),
            PriorSpec::File { path } => gmm::load(path)?,
        };
        if self.normalize_prior {
            g.normalize()
        } else {
            Ok(g)
        }
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(
            self.schedule.t_steps,
            self.schedule.beta1,
            self.schedule.beta_t,
            self.schedule.gamma,
        )
    }

    /// Schedule for a sweep point: the configured one when T matches,
    /// otherwise the standard-range schedule for that T.
    pub fn schedule_for(&self, t_steps: usize) -> Result<NoiseSchedule> {
        if t_steps == self.schedule.t_steps {
            self.build_schedule()
        } else {
            schedule::linear_matched(t_steps, self.schedule.gamma)
        }
    }

    /// Canonical `key = value` echo of the full configuration.
    pub fn echo_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        match &self.prior {
            PriorSpec::Random { n, k, seed } => {
                lines.push("prior.kind = random".into());
                lines.push(format!("prior.N = {n}"));
                lines.push(format!("prior.K = {k}"));
                lines.push(format!("prior.seed = {seed}"));
            }
            PriorSpec::StandardNormal { n } => {
                lines.push("prior.kind = standard-normal".into());
                lines.push(format!("prior.N = {n}"));
            }
            PriorSpec::File { path } => {
                lines.push("prior.kind = file".into());
                lines.push(format!("prior.file = {}", path.display()));
            }
        }
        lines.push(format!("prior.normalize = {}", self.normalize_prior));
        lines.push(format!("schedule.T = {}", self.schedule.t_steps));
        lines.push(format!("schedule.beta1 = {}", self.schedule.beta1));
        lines.push(format!("schedule.betaT = {}", self.schedule.beta_t));
        lines.push(format!("schedule.gamma = {}", self.schedule.gamma));
        lines.push(format!(
            "experiment.snr_grid_db = {}",
            join(&self.snr_grid_db)
        ));
        lines.push(format!("experiment.test_size = {}", self.test_size));
        lines.push(format!("experiment.mismatch_db = {}", self.mismatch_db));
        lines.push(format!("experiment.t_list = {}", join(&self.t_list)));
        lines.push(format!("experiment.seed = {}", self.master_seed));
        match &self.denoiser {
            DenoiserSpec::Oracle => lines.push("experiment.denoiser = oracle".into()),
            DenoiserSpec::Train => lines.push("experiment.denoiser = train".into()),
            DenoiserSpec::Checkpoint(p) => {
                lines.push(format!("experiment.checkpoint = {}", p.display()))
            }
        }
        lines.push(format!("experiment.bench_batch = {}", self.bench_batch));
        lines.push(format!(
            "experiment.generate_count = {}",
            self.generate_count
        ));
        lines.push(format!("model.hidden = {}", join(&self.model.hidden)));
        lines.push(format!("model.embed = {}", self.model.embed));
        lines.push(format!("train.batch = {}", self.train.batch_size));
        lines.push(format!("train.epochs = {}", self.train.epochs));
        lines.push(format!("train.lr = {}", self.train.learning_rate));
        lines.push(format!("train.beta1 = {}", self.train.beta1));
        lines.push(format!("train.beta2 = {}", self.train.beta2));
        lines.push(format!("train.eps = {}", self.train.eps));
        lines.push(format!("train.dataset = {}", self.train.dataset_size));
        lines.push(format!("train.seed = {}", self.train.seed));
        lines.push(format!(
            "train.loss = {}",
            match self.train.loss {
                LossKind::Eps => "eps",
                LossKind::Mu => "mu",
            }
        ));
        lines.push(format!("analysis.delta = {}", self.analysis.delta));
        lines.push(format!("analysis.xi = {}", self.analysis.xi));
        match self.analysis.l1 {
            Some(v) => lines.push(format!("analysis.l1 = {v}")),
            None => lines.push("analysis.l1 = estimate".into()),
        }
        lines.push(format!(
            "analysis.target_snr_db = {}",
            self.analysis.target_snr_db
        ));
        lines
    }
}

fn join<T: std::fmt::Display>(vals: &[T]) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    let v = value
        .parse::<usize>()
        .map_err(|_| Error::param(key, format!("bad integer `{value}`")))?;
    if v == 0 {
        return Err(Error::param(key, "must be >= 1"));
    }
    Ok(v)
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| Error::param(key, format!("bad integer `{value}`")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::param(key, format!("bad number `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::param(key, format!("bad boolean `{value}`"))),
    }
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split([' ', ','])
        .filter(|t| !t.is_empty())
        .map(|t| parse_f64(key, t))
        .collect()
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split([' ', ','])
        .filter(|t| !t.is_empty())
        .map(|t| parse_usize(key, t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_lists() {
        let text = "\
# comment line
prior.kind = random
prior.N = 4
prior.K = 2
prior.seed = 11

schedule.T = 100   # trailing comment
schedule.betaT = 0.1
experiment.snr_grid_db = -10 0 10
experiment.test_size = 500
train.loss = mu
";
        let cfg = ExperimentConfig::from_text(text, "mem").unwrap();
        assert_eq!(
            cfg.prior,
            PriorSpec::Random {
                n: 4,
                k: 2,
                seed: 11
            }
        );
        assert_eq!(cfg.schedule.t_steps, 100);
        assert_eq!(cfg.schedule.beta_t, 0.1);
        assert_eq!(cfg.snr_grid_db, vec![-10.0, 0.0, 10.0]);
        assert_eq!(cfg.test_size, 500);
        assert_eq!(cfg.train.loss, LossKind::Mu);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_text("bogus.key = 1", "mem").is_err());
        assert!(ExperimentConfig::from_text("schedule.T = zero", "mem").is_err());
        assert!(ExperimentConfig::from_text("experiment.test_size = 0", "mem").is_err());
        assert!(ExperimentConfig::from_text("no equals sign", "mem").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = "prior.N = 5\nprior.K = 3\nschedule.T = 50\nschedule.betaT = 0.2\n";
        let cfg = ExperimentConfig::from_text(text, "mem").unwrap();
        let echoed = cfg.echo_lines().join("\n");
        let back = ExperimentConfig::from_text(&echoed, "mem").unwrap();
        assert_eq!(back.echo_lines(), cfg.echo_lines());
    }

    #[test]
    fn builds_prior_and_schedule() {
        let cfg = ExperimentConfig::default();
        let g = cfg.build_gmm().unwrap();
        assert_eq!(g.dim(), 8);
        assert_eq!(g.num_components(), 4);
        assert!(g.mixture_mean().norm() < 1e-10);
        let s = cfg.build_schedule().unwrap();
        assert_eq!(s.len(), 300);
        // Sweep schedules reuse presets for known T.
        assert_eq!(cfg.schedule_for(300).unwrap().beta(300), 0.035);
        assert_eq!(cfg.schedule_for(1000).unwrap().beta(1000), 0.01);
    }
}
