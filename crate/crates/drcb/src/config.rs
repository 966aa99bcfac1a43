//! Experiment configuration: a flat key=value file (every key overridable
//! from the command line), defaults matching the deployed constants, and
//! validation before any run starts.

use crate::numeric::Activation;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for key '{key}': {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("config line {0} is not 'key = value': '{1}'")]
    BadLine(usize, String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The three experimental groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    /// No regulatory intervention; observers log accuracy passively.
    Baseline,
    /// Singleton observer, fixed thresholds, suppression/break enabled but
    /// no dynamic threshold, no pool refresh, no auto-calibration.
    Static,
    /// The full stack.
    Drcb,
}

impl Group {
    pub fn parse(s: &str) -> Option<Group> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Some(Group::Baseline),
            "static" => Some(Group::Static),
            "drcb" => Some(Group::Drcb),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Baseline => "baseline",
            Group::Static => "static",
            Group::Drcb => "drcb",
        }
    }

    pub fn all() -> [Group; 3] {
        [Group::Baseline, Group::Static, Group::Drcb]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub group: Group,
    pub seeds: Vec<u64>,
    pub rounds: u64,

    // environment
    pub context_source: String, // "synthetic" or "idx"
    pub idx_path: Option<PathBuf>,

    // governor
    pub tp: f64,
    pub ts_base: f64,
    pub lambda: f64,
    pub penalty_base: f64,
    pub penalty_exponent: f64,
    pub suppress_rounds: u32,
    pub cooldown_rounds: u32,
    pub exploration_rounds: u32,
    pub survival_reward: f64,
    pub warmup_rounds: u64,
    pub calib_var_ratio: f64,
    pub calib_jsd_ratio: f64,

    // observer pool
    pub pool_size: usize,
    pub subset_size: usize,
    pub refresh_period: u64,

    // probes
    pub window: usize,
    pub alpha: f64,
    pub eps_train: f64,
    pub eps_analysis: f64,
    pub eps_smooth: f64,
    pub plateau_tol: f64,
    pub gradfail_tol: f64,
    /// Experimental smooth-transform evasion flag threshold; None means the
    /// 95th percentile of calibration-window drift.
    pub tau_l2: Option<f64>,

    // bottleneck
    pub codebook_k: usize,
    pub codebook_d: usize,
    pub msg_len: usize,
    pub u_min: f64,
    pub vq_beta: f64,
    /// Temperature on the speaker's distance-derived symbol logits.
    pub symbol_temp: f64,
    /// Output gain on both critics' value heads.
    pub value_scale: f64,
    /// Gain on the agents' one-hot context features.
    pub feat_gain: f64,
    /// Gain on the quantized-message features at the action heads.
    pub msg_gain: f64,

    // networks / optimizers
    pub hidden: usize,
    pub activation: Activation,
    pub agent_lr: f64,
    pub observer_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub entropy_coeff: f64,
    pub entropy_boost_coeff: f64,

    // logging
    pub log_codebook: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            group: Group::Drcb,
            seeds: vec![0, 1, 2, 3, 4],
            rounds: 1500,
            context_source: "synthetic".into(),
            idx_path: None,
            tp: 12.0,
            ts_base: 18.0,
            lambda: 2.5,
            penalty_base: 1.0,
            penalty_exponent: 1.0,
            suppress_rounds: 15,
            cooldown_rounds: 20,
            exploration_rounds: 30,
            survival_reward: 0.1,
            warmup_rounds: 50,
            calib_var_ratio: 0.8,
            calib_jsd_ratio: 0.5,
            pool_size: 8,
            subset_size: 3,
            refresh_period: 100,
            window: 50,
            alpha: 0.02,
            eps_train: 0.1,
            eps_analysis: 1e-5,
            eps_smooth: 1.0,
            plateau_tol: 1e-3,
            gradfail_tol: 1e-6,
            tau_l2: None,
            codebook_k: 32,
            codebook_d: 64,
            msg_len: 2,
            u_min: 0.6,
            vq_beta: 0.25,
            symbol_temp: 0.03,
            value_scale: 10.0,
            feat_gain: 4.0,
            msg_gain: 4.0,
            hidden: 64,
            activation: Activation::Tanh,
            agent_lr: 1e-4,
            observer_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            entropy_coeff: 0.01,
            entropy_boost_coeff: 0.05,
            log_codebook: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

impl ExperimentConfig {
    /// Apply one `key = value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "group" => {
                self.group = Group::parse(v).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                    reason: "expected baseline|static|drcb".into(),
                })?
            }
            "seeds" => {
                let mut seeds = Vec::new();
                for part in v.split(',') {
                    seeds.push(parse::<u64>(key, part)?);
                }
                self.seeds = seeds;
            }
            "rounds" => self.rounds = parse(key, v)?,
            "context_source" => self.context_source = v.to_string(),
            "idx_path" => self.idx_path = Some(PathBuf::from(v)),
            "tp" => self.tp = parse(key, v)?,
            "ts_base" => self.ts_base = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "penalty_base" => self.penalty_base = parse(key, v)?,
            "penalty_exponent" => self.penalty_exponent = parse(key, v)?,
            "suppress_rounds" => self.suppress_rounds = parse(key, v)?,
            "cooldown_rounds" => self.cooldown_rounds = parse(key, v)?,
            "exploration_rounds" => self.exploration_rounds = parse(key, v)?,
            "survival_reward" => self.survival_reward = parse(key, v)?,
            "warmup_rounds" => self.warmup_rounds = parse(key, v)?,
            "calib_var_ratio" => self.calib_var_ratio = parse(key, v)?,
            "calib_jsd_ratio" => self.calib_jsd_ratio = parse(key, v)?,
            "pool_size" => self.pool_size = parse(key, v)?,
            "subset_size" => self.subset_size = parse(key, v)?,
            "refresh_period" => self.refresh_period = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "eps_train" => self.eps_train = parse(key, v)?,
            "eps_analysis" => self.eps_analysis = parse(key, v)?,
            "eps_smooth" => self.eps_smooth = parse(key, v)?,
            "plateau_tol" => self.plateau_tol = parse(key, v)?,
            "gradfail_tol" => self.gradfail_tol = parse(key, v)?,
            "tau_l2" => {
                self.tau_l2 = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "codebook_k" => self.codebook_k = parse(key, v)?,
            "codebook_d" => self.codebook_d = parse(key, v)?,
            "msg_len" => self.msg_len = parse(key, v)?,
            "u_min" => self.u_min = parse(key, v)?,
            "vq_beta" => self.vq_beta = parse(key, v)?,
            "symbol_temp" => self.symbol_temp = parse(key, v)?,
            "value_scale" => self.value_scale = parse(key, v)?,
            "feat_gain" => self.feat_gain = parse(key, v)?,
            "msg_gain" => self.msg_gain = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "activation" => {
                self.activation = match v.to_ascii_lowercase().as_str() {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: v.into(),
                            reason: "expected tanh|relu".into(),
                        })
                    }
                }
            }
            "agent_lr" => self.agent_lr = parse(key, v)?,
            "observer_lr" => self.observer_lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps_adam" => self.eps_adam = parse(key, v)?,
            "entropy_coeff" => self.entropy_coeff = parse(key, v)?,
            "entropy_boost_coeff" => self.entropy_boost_coeff = parse(key, v)?,
            "log_codebook" => self.log_codebook = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Parse a plain-text key=value file ('#' starts a comment).
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine(lineno + 1, raw.to_string()))?;
            self.apply_kv(key, value)?;
        }
        Ok(())
    }

    /// Reject impossible configurations before any run starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.rounds <= self.warmup_rounds {
            return fail(format!(
                "rounds ({}) must exceed warmup_rounds ({})",
                self.rounds, self.warmup_rounds
            ));
        }
        if self.seeds.is_empty() {
            return fail("at least one seed required".into());
        }
        if self.codebook_k < 2 {
            return fail("codebook_k must be >= 2".into());
        }
        if self.msg_len == 0 {
            return fail("msg_len must be >= 1".into());
        }
        if self.pool_size == 0 || self.pool_size > 32 {
            return fail("pool_size must be in 1..=32".into());
        }
        if self.subset_size == 0 || self.subset_size > self.pool_size {
            return fail("subset_size must be in 1..=pool_size".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail("alpha must be in (0, 1]".into());
        }
        if self.eps_train <= 0.0 || self.eps_analysis <= 0.0 || self.eps_smooth <= 0.0 {
            return fail("eps_train, eps_analysis, eps_smooth must be positive".into());
        }
        if self.vq_beta <= 0.0 {
            return fail("vq_beta must be positive".into());
        }
        if self.symbol_temp <= 0.0 {
            return fail("symbol_temp must be positive".into());
        }
        if self.value_scale <= 0.0 {
            return fail("value_scale must be positive".into());
        }
        if self.feat_gain <= 0.0 {
            return fail("feat_gain must be positive".into());
        }
        if self.msg_gain <= 0.0 {
            return fail("msg_gain must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.u_min) {
            return fail("u_min must be in [0, 1]".into());
        }
        if self.window == 0 {
            return fail("window must be >= 1".into());
        }
        if self.tp <= 0.0 || self.ts_base <= 0.0 {
            return fail("tp and ts_base must be positive".into());
        }
        if self.agent_lr <= 0.0 || self.observer_lr <= 0.0 {
            return fail("learning rates must be positive".into());
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail("adam betas must be in (0, 1)".into());
        }
        if self.survival_reward < 0.0 {
            return fail("survival_reward must be >= 0".into());
        }
        if self.warmup_rounds < self.window as u64 {
            return fail(format!(
                "warmup_rounds ({}) must be >= window ({}) so calibration sees full windows",
                self.warmup_rounds, self.window
            ));
        }
        match self.context_source.as_str() {
            "synthetic" => {}
            "idx" => {
                if self.idx_path.is_none() {
                    return fail("context_source=idx requires idx_path".into());
                }
            }
            other => return fail(format!("unknown context_source '{other}'")),
        }
        Ok(())
    }

    /// Render as the key=value file format (used by `--dump-config`).
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        push("group", self.group.name().into());
        push(
            "seeds",
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        push("rounds", self.rounds.to_string());
        push("context_source", self.context_source.clone());
        if let Some(p) = &self.idx_path {
            push("idx_path", p.display().to_string());
        }
        push("tp", self.tp.to_string());
        push("ts_base", self.ts_base.to_string());
        push("lambda", self.lambda.to_string());
        push("penalty_base", self.penalty_base.to_string());
        push("penalty_exponent", self.penalty_exponent.to_string());
        push("suppress_rounds", self.suppress_rounds.to_string());
        push("cooldown_rounds", self.cooldown_rounds.to_string());
        push("exploration_rounds", self.exploration_rounds.to_string());
        push("survival_reward", self.survival_reward.to_string());
        push("warmup_rounds", self.warmup_rounds.to_string());
        push("calib_var_ratio", self.calib_var_ratio.to_string());
        push("calib_jsd_ratio", self.calib_jsd_ratio.to_string());
        push("pool_size", self.pool_size.to_string());
        push("subset_size", self.subset_size.to_string());
        push("refresh_period", self.refresh_period.to_string());
        push("window", self.window.to_string());
        push("alpha", self.alpha.to_string());
        push("eps_train", self.eps_train.to_string());
        push("eps_analysis", self.eps_analysis.to_string());
        push("eps_smooth", self.eps_smooth.to_string());
        push("plateau_tol", self.plateau_tol.to_string());
        push("gradfail_tol", self.gradfail_tol.to_string());
        push(
            "tau_l2",
            self.tau_l2.map_or("auto".into(), |v| v.to_string()),
        );
        push("codebook_k", self.codebook_k.to_string());
        push("codebook_d", self.codebook_d.to_string());
        push("msg_len", self.msg_len.to_string());
        push("u_min", self.u_min.to_string());
        push("vq_beta", self.vq_beta.to_string());
        push("symbol_temp", self.symbol_temp.to_string());
        push("value_scale", self.value_scale.to_string());
        push("feat_gain", self.feat_gain.to_string());
        push("msg_gain", self.msg_gain.to_string());
        push("hidden", self.hidden.to_string());
        push(
            "activation",
            match self.activation {
                Activation::Tanh => "tanh".into(),
                Activation::Relu => "relu".into(),
            },
        );
        push("agent_lr", self.agent_lr.to_string());
        push("observer_lr", self.observer_lr.to_string());
        push("beta1", self.beta1.to_string());
        push("beta2", self.beta2.to_string());
        push("eps_adam", self.eps_adam.to_string());
        push("entropy_coeff", self.entropy_coeff.to_string());
        push("entropy_boost_coeff", self.entropy_boost_coeff.to_string());
        push("log_codebook", self.log_codebook.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn kv_overrides_and_file_parsing() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment").unwrap();
        writeln!(f, "rounds = 800").unwrap();
        writeln!(f, "tp = 7.5   # inline comment").unwrap();
        writeln!(f, "seeds = 1,2,3").unwrap();
        writeln!(f, "group = static").unwrap();
        f.flush().unwrap();

        let cfg = ExperimentConfig::from_file(f.path()).unwrap();
        assert_eq!(cfg.rounds, 800);
        assert_eq!(cfg.tp, 7.5);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.group, Group::Static);

        let mut cfg = cfg;
        cfg.apply_kv("ts_base", "11.0").unwrap();
        assert_eq!(cfg.ts_base, 11.0);
        assert!(cfg.apply_kv("no_such_key", "1").is_err());
    }

    #[test]
    fn round_trip_through_kv_string() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_kv("rounds", "777").unwrap();
        cfg.apply_kv("activation", "relu").unwrap();
        let text = cfg.to_kv_string();

        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f.flush().unwrap();
        let parsed = ExperimentConfig::from_file(f.path()).unwrap();
        assert_eq!(parsed.rounds, 777);
        assert_eq!(parsed.activation, Activation::Relu);
        assert_eq!(parsed.to_kv_string(), text);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = ExperimentConfig::default();
        cfg.rounds = 10; // below warmup
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.subset_size = 99;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.context_source = "idx".into();
        assert!(cfg.validate().is_err(), "idx source without a path");

        let mut cfg = ExperimentConfig::default();
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
    }
}
