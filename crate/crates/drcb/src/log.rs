//! Round-log and run-summary records, serialized as line-delimited JSON.
//! One record per round; one summary record per run. The round log is a
//! pure function of (config, seed) — wall-clock timing lives only in the
//! summary and is excluded from determinism claims.

use crate::agents::LossParts;
use crate::analysis::{PhaseLabel, SafetyMetrics};
use crate::config::Group;
use crate::env::{Action, Parity};
use crate::governor::Phase;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {0}: {1}")]
    Parse(usize, serde_json::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Full telemetry for one simulation round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub v: u32,
    pub round: u64,
    pub digit: u8,
    pub parity: Parity,
    pub symbols: Vec<u16>,
    pub action_a: Action,
    pub action_b: Action,
    pub reward_a: f64,
    pub reward_b: f64,
    /// Raw joint environment reward.
    pub r_joint: f64,
    /// Joint reward after interventions (override / graduated penalty).
    pub r_post: f64,
    pub acc_obs: f64,
    pub subset_mask: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub refreshed: Option<u8>,
    pub jsd: f64,
    pub l2_drift: f64,
    pub s_ema: f64,
    pub phase: Phase,
    pub layer2_active: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reward_override: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub penalty_multiplier: Option<f64>,
    pub shuffle_now: bool,
    pub reset_optimizers: bool,
    pub entropy_boost: bool,
    pub vq_loss: f64,
    pub loss_a: LossParts,
    pub loss_b: LossParts,
    pub reward_plateau: bool,
    pub obs_grad_failure: bool,
    pub evasion_flag: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub utilization: Option<f64>,
    /// Flat K*D codebook snapshot (only when the run logs codebooks).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub codebook: Option<Vec<f64>>,
}

impl RoundRecord {
    #[cfg(test)]
    pub(crate) fn test_stub(symbols: Vec<u16>, action_b: Action) -> RoundRecord {
        RoundRecord {
            v: SCHEMA_VERSION,
            round: 0,
            digit: 0,
            parity: Parity::Even,
            symbols,
            action_a: Action::C,
            action_b,
            reward_a: 0.0,
            reward_b: 0.0,
            r_joint: 0.0,
            r_post: 0.0,
            acc_obs: 0.0,
            subset_mask: 0,
            refreshed: None,
            jsd: 0.0,
            l2_drift: 0.0,
            s_ema: 0.0,
            phase: Phase::Monitoring,
            layer2_active: false,
            reward_override: None,
            penalty_multiplier: None,
            shuffle_now: false,
            reset_optimizers: false,
            entropy_boost: false,
            vq_loss: 0.0,
            loss_a: LossParts::default(),
            loss_b: LossParts::default(),
            reward_plateau: false,
            obs_grad_failure: false,
            evasion_flag: false,
            utilization: None,
            codebook: None,
        }
    }
}

/// One structured record per run, suitable for external plotting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub v: u32,
    pub group: Group,
    pub seed: u64,
    pub rounds: u64,
    /// Mean post-intervention joint reward over the final 300 rounds.
    pub mean_reward_final: f64,
    /// Safety metrics over the final min(1000, rounds) accuracy entries.
    pub safety: SafetyMetrics,
    pub phase: PhaseLabel,
    pub tau_collapse: f64,
    pub tau_jsd: f64,
    pub suppression_triggers: u64,
    pub circuit_breaks: u64,
    pub mean_tau_utility: f64,
    pub mean_utilization: f64,
    /// Wall-clock duration; reported, never asserted, and excluded from the
    /// byte-identity determinism contract.
    pub wall_clock_ms: u64,
}

pub fn write_round_log(path: &Path, records: &[RoundRecord]) -> Result<(), LogError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_round_log(path: &Path) -> Result<Vec<RoundRecord>, LogError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LogError::Parse(i + 1, e))?);
    }
    Ok(out)
}

pub fn append_summary(path: &Path, summary: &RunSummary) -> Result<(), LogError> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(summary)?;
    file.write_all(line.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_summaries(path: &Path) -> Result<Vec<RunSummary>, LogError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LogError::Parse(i + 1, e))?);
    }
    Ok(out)
}
