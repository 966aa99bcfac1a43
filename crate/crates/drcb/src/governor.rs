//! The intervention state machine. Once per round the governor consumes the
//! collusion score and observer accuracy and emits which layers act:
//!
//! * Layer 1 — the break threshold scales with observer accuracy,
//!   `ts_dyn = ts_base * (1 - 0.5 * acc)`.
//! * Layer 2 — a continuous gradient penalty signal whenever the score
//!   exceeds `tp` (injected into the advantage by the caller).
//! * Layer 3 — on breach, a graduated penalty magnitude plus a mandatory
//!   15-round severe reward suppression (survival reward 0.1), followed by a
//!   20-round cooldown; a 35-round lockout spaces suppression windows.
//! * Layer 4 — when the score exceeds the dynamic break threshold, a full
//!   circuit break: codebook shuffle, optimizer reset, score reset, then a
//!   30-round forced-exploration window.
//!
//! Timing convention: a trigger round arms its counters and reports the new
//! phase; the armed effects (reward override / entropy boost) apply on the
//! following ticks while the counters drain. "Next 15 rounds" therefore
//! means exactly the 15 ticks after the trigger round.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GovernorError {
    #[error("calibration deferred: need exactly {expected} samples, got {got}")]
    CalibrationDeferred { expected: usize, got: usize },
}

/// Runtime phase labels (serialized into every round record).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "S0")]
    Warmup,
    #[serde(rename = "S1")]
    Monitoring,
    #[serde(rename = "S2")]
    Suppression,
    #[serde(rename = "S3")]
    Cooldown,
    #[serde(rename = "S4")]
    CircuitBreak,
    #[serde(rename = "S5")]
    Exploration,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Warmup => "S0",
            Phase::Monitoring => "S1",
            Phase::Suppression => "S2",
            Phase::Cooldown => "S3",
            Phase::CircuitBreak => "S4",
            Phase::Exploration => "S5",
        };
        f.write_str(s)
    }
}

/// Tunables for the state machine. `dynamic_ts` off reproduces the static
/// monitor's fixed break threshold.
#[derive(Clone, Copy, Debug)]
pub struct GovernorParams {
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
    pub dynamic_ts: bool,
}

/// What the governor tells the harness to do this round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub layer2_active: bool,
    /// Survival reward replacing the environment reward (suppression only).
    pub reward_override: Option<f64>,
    /// Shuffle the codebook after this round's updates. Always paired with
    /// `reset_optimizers` and a score reset by the caller.
    pub shuffle_now: bool,
    pub reset_optimizers: bool,
    pub entropy_boost: bool,
    /// Graduated-penalty multiplier `1 + lambda * overshoot^exponent`,
    /// emitted on the breach round that arms a suppression (log-only
    /// subtraction downstream, never fed to actor or critic).
    pub penalty_multiplier: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GovernorState {
    pub phase: Phase,
    pub suppression_left: u32,
    pub cooldown_left: u32,
    pub exploration_left: u32,
    /// Rounds until a new suppression may begin (armed at 35 on trigger).
    pub lockout_left: u32,
    pub tp: f64,
    pub ts_base: f64,
    pub tau_collapse: Option<f64>,
    pub tau_jsd: Option<f64>,
    pub calibrated: bool,
}

/// Per-round inputs to [`GovernorState::tick`].
#[derive(Clone, Copy, Debug)]
pub struct Signals {
    pub s_ema: f64,
    pub acc_obs: f64,
    pub round: u64,
}

/// Layer-1 dynamic threshold: `ts_base * (1.0 - 0.5 * acc_obs)`.
pub fn dynamic_ts(ts_base: f64, acc_obs: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&acc_obs));
    ts_base * (1.0 - 0.5 * acc_obs)
}

/// Layer-3 graduated penalty magnitude, linear in the overshoot ratio:
/// `r_base * (1 + lambda * (s_ema - tp) / tp)`. Callers only invoke this on
/// a breach (`s_ema >= tp`).
pub fn graduated_penalty(r_base: f64, s_ema: f64, tp: f64, lambda: f64) -> f64 {
    debug_assert!(s_ema >= tp, "graduated penalty is only defined on breach");
    r_base * (1.0 + lambda * (s_ema - tp) / tp)
}

/// Auto-boundary calibration from the natural-state window: the collapse
/// threshold is 80% of the initial reward variance (population), the JSD
/// stability threshold 50% of the initial mean JSD. Ratios are caller
/// supplied so sweeps can vary them.
pub fn auto_calibrate(
    rewards: &[f64],
    jsds: &[f64],
    window: usize,
    var_ratio: f64,
    jsd_ratio: f64,
) -> Result<(f64, f64), GovernorError> {
    if rewards.len() != window || jsds.len() != window {
        return Err(GovernorError::CalibrationDeferred {
            expected: window,
            got: rewards.len().min(jsds.len()),
        });
    }
    let n = window as f64;
    let mean_r = rewards.iter().sum::<f64>() / n;
    let var_r = rewards.iter().map(|r| (r - mean_r) * (r - mean_r)).sum::<f64>() / n;
    let mean_jsd = jsds.iter().sum::<f64>() / n;
    Ok((var_ratio * var_r, jsd_ratio * mean_jsd))
}

impl GovernorState {
    pub fn new(params: &GovernorParams) -> Self {
        GovernorState {
            phase: Phase::Warmup,
            suppression_left: 0,
            cooldown_left: 0,
            exploration_left: 0,
            lockout_left: 0,
            tp: params.tp,
            ts_base: params.ts_base,
            tau_collapse: None,
            tau_jsd: None,
            calibrated: false,
        }
    }

    pub fn apply_calibration(&mut self, tau_collapse: f64, tau_jsd: f64) {
        self.tau_collapse = Some(tau_collapse);
        self.tau_jsd = Some(tau_jsd);
        self.calibrated = true;
    }

    fn breach_multiplier(&self, params: &GovernorParams, s_ema: f64) -> f64 {
        let overshoot = ((s_ema - self.tp) / self.tp).max(0.0);
        1.0 + params.lambda * overshoot.powf(params.penalty_exponent)
    }

    /// Advance one round. Resolution order: exploration window, then
    /// suppression window, then cooldown, then fresh trigger evaluation.
    /// During warm-up only the layer-2 signal is computed.
    pub fn tick(&mut self, params: &GovernorParams, sig: &Signals) -> Intervention {
        let mut iv = Intervention::default();

        if sig.round < params.warmup_rounds {
            self.phase = Phase::Warmup;
            iv.layer2_active = sig.s_ema > self.tp;
            return iv;
        }

        if self.lockout_left > 0 {
            self.lockout_left -= 1;
        }

        if self.exploration_left > 0 {
            self.exploration_left -= 1;
            self.phase = Phase::Exploration;
            iv.entropy_boost = true;
            return iv;
        }

        if self.suppression_left > 0 {
            self.suppression_left -= 1;
            self.phase = Phase::Suppression;
            iv.reward_override = Some(params.survival_reward);
            if self.suppression_left == 0 {
                self.cooldown_left = params.cooldown_rounds;
            }
            return iv;
        }

        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.phase = Phase::Cooldown;
            // suppression trigger locked; the continuous gradient penalty
            // stays available
            iv.layer2_active = sig.s_ema > self.tp;
            return iv;
        }

        // S1: fresh trigger evaluation
        iv.layer2_active = sig.s_ema > self.tp;
        let ts = if params.dynamic_ts {
            dynamic_ts(self.ts_base, sig.acc_obs)
        } else {
            self.ts_base
        };
        let break_now = sig.s_ema > ts;
        let suppress_now = iv.layer2_active && self.lockout_left == 0;

        if break_now {
            self.phase = Phase::CircuitBreak;
            iv.shuffle_now = true;
            iv.reset_optimizers = true;
            self.exploration_left = params.exploration_rounds;
            if suppress_now {
                // co-occurrence: the break supersedes the suppression window
                // but the re-arm lockout is still honored
                self.lockout_left = params.suppress_rounds + params.cooldown_rounds;
                iv.penalty_multiplier = Some(self.breach_multiplier(params, sig.s_ema));
            }
        } else if suppress_now {
            self.phase = Phase::Suppression;
            self.suppression_left = params.suppress_rounds;
            self.lockout_left = params.suppress_rounds + params.cooldown_rounds;
            iv.penalty_multiplier = Some(self.breach_multiplier(params, sig.s_ema));
        } else {
            self.phase = Phase::Monitoring;
        }
        iv
    }
}
