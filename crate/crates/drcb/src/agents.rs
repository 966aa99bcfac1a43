//! The two A2C agents. The speaker (agent A) encodes its context into
//! encoder vectors, turns the negative squared distances to the codebook
//! entries into per-position symbol logits, samples a message and an action,
//! and trains actor + critic + encoder + codebook with one optimizer. The
//! listener (agent B) maps the quantized message plus its own context parity
//! to an action.
//!
//! Anti-collusion signals enter exclusively through the advantage handed to
//! [`a2c signal`](TrainSignal): the critic's regression target is always the
//! raw joint reward.

use crate::aim::{vq_loss, vq_loss_grads, Codebook, SymbolMessage};
use crate::env::{Action, ContextLabel, Parity};
use crate::numeric::{
    categorical_entropy, categorical_sample, policy_logit_grad, softmax, Activation, AdamState,
    Linear, NumericError,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// What one act produced, kept around for the learning step.
#[derive(Clone, Debug)]
pub struct PolicyOutput {
    /// Per-position K-way logits (speaker only; empty for the listener).
    pub symbol_logits: Vec<Vec<f64>>,
    pub action_logits: Vec<f64>,
    pub value: f64,
    pub log_prob: f64,
    pub entropy: f64,
}

/// Learning signal for one A2C update. `value_target` is the raw joint
/// reward of the round, never penalty-adjusted.
#[derive(Clone, Copy, Debug)]
pub struct TrainSignal {
    pub advantage: f64,
    pub value_target: f64,
    pub entropy_coeff: f64,
}

/// Loss components returned for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Layer-2 gradient-space intervention: shifts the advantage by
/// `-lambda * s_ema / tp`. Applied only when the governor signals the layer
/// active.
pub fn inject_penalty(advantage: f64, s_ema: f64, tp: f64, lambda: f64) -> f64 {
    debug_assert!(tp > 0.0);
    advantage - lambda * s_ema / tp
}

fn context_features(ctx: ContextLabel, gain: f64) -> Vec<f64> {
    // parity one-hot followed by digit one-hot
    let mut x = vec![0.0; 12];
    match ctx.parity() {
        Parity::Even => x[0] = gain,
        Parity::Odd => x[1] = gain,
    }
    x[2 + ctx.digit() as usize] = gain;
    x
}

struct SpeakerCache {
    x: Vec<f64>,
    h_pre: Vec<f64>,
    h: Vec<f64>,
    z_e: Vec<f64>, // flat msg_len * d
    sym_probs: Vec<Vec<f64>>,
    indices: Vec<usize>,
    z_q: Vec<f64>, // flat msg_len * d
    act_in: Vec<f64>,
    act_probs: Vec<f64>,
    action: usize,
    value: f64,
}

/// Agent A: speaker. Owns the trunk, the encoder head, the action head
/// (which consumes the quantized message through a straight-through
/// estimator) and the critic head. The codebook is passed in per call; its
/// entries train through this agent's optimizer.
pub struct SpeakerAgent {
    trunk: Linear,
    enc: Linear,
    act_head: Linear,
    val_head: Linear,
    activation: Activation,
    msg_len: usize,
    d: usize,
    hidden: usize,
    /// Temperature on the distance logits. Small values concentrate the
    /// sampled symbol on the nearest entries, which is what lets the
    /// commitment loss specialize the codebook instead of smearing every
    /// entry toward the same encoder cloud.
    symbol_temp: f64,
    /// Output gain on the critic head so the value estimate spans the
    /// reward scale while the head weights stay in the fan-in init regime.
    value_scale: f64,
    /// Gain on the one-hot context features.
    feat_gain: f64,
    /// Gain on the quantized-message features seen by the action heads.
    msg_gain: f64,
    cache: Option<SpeakerCache>,
}

impl SpeakerAgent {
    pub fn new<R: Rng>(
        hidden: usize,
        msg_len: usize,
        d: usize,
        activation: Activation,
        symbol_temp: f64,
        value_scale: f64,
        feat_gain: f64,
        msg_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(symbol_temp > 0.0);
        let in_dim = 12;
        SpeakerAgent {
            trunk: Linear::new(in_dim, hidden, rng),
            enc: Linear::new(hidden, msg_len * d, rng),
            // skip connection: the action head also sees the raw context
            act_head: Linear::new(hidden + msg_len * d + in_dim, 2, rng),
            val_head: Linear::new(hidden, 1, rng),
            activation,
            msg_len,
            d,
            hidden,
            symbol_temp,
            value_scale,
            feat_gain,
            msg_gain,
            cache: None,
        }
    }

    /// Optimizer block layout: trunk, enc, act, val weights/biases, then the
    /// codebook entries. Order must stay stable for the optimizer moments.
    pub fn optimizer(&mut self, book: &mut Codebook, lr: f64, b1: f64, b2: f64, eps: f64) -> AdamState {
        let sizes = [
            self.trunk.w.len(),
            self.trunk.b.len(),
            self.enc.w.len(),
            self.enc.b.len(),
            self.act_head.w.len(),
            self.act_head.b.len(),
            self.val_head.w.len(),
            self.val_head.b.len(),
            book.entries_tensor_mut().len(),
        ];
        AdamState::new(&sizes, lr, b1, b2, eps)
    }

    /// Encoder outputs for a context (used by drift diagnostics and tests).
    pub fn encode(&self, ctx: ContextLabel) -> Vec<f64> {
        let x = context_features(ctx, self.feat_gain);
        let h_pre = self.trunk.forward(&x);
        let h: Vec<f64> = h_pre.iter().map(|&v| self.activation.apply(v)).collect();
        self.enc.forward(&h)
    }

    /// Sample a message and an action. Symbol logits are the negative
    /// squared distances from each position's encoder vector to the codebook
    /// entries, so nearest-neighbor quantization is the mode of the policy.
    pub fn act<R: Rng>(
        &mut self,
        ctx: ContextLabel,
        book: &mut Codebook,
        rng: &mut R,
    ) -> (SymbolMessage, Action, PolicyOutput) {
        let x = context_features(ctx, self.feat_gain);
        let h_pre = self.trunk.forward(&x);
        let h: Vec<f64> = h_pre.iter().map(|&v| self.activation.apply(v)).collect();
        let z_e = self.enc.forward(&h);

        let mut symbol_logits = Vec::with_capacity(self.msg_len);
        let mut sym_probs = Vec::with_capacity(self.msg_len);
        let mut indices = Vec::with_capacity(self.msg_len);
        let mut z_q = Vec::with_capacity(self.msg_len * self.d);
        let mut log_prob = 0.0;
        let mut entropy = 0.0;

        for pos in 0..self.msg_len {
            let z = &z_e[pos * self.d..(pos + 1) * self.d];
            let logits: Vec<f64> = book
                .squared_distances(z)
                .iter()
                .map(|&d2| -d2 / self.symbol_temp)
                .collect();
            let probs = softmax(&logits);
            let idx = categorical_sample(&probs, rng);
            book.record_usage(idx);
            log_prob += probs[idx].ln();
            entropy += categorical_entropy(&probs);
            z_q.extend_from_slice(book.entry(idx));
            indices.push(idx);
            symbol_logits.push(logits);
            sym_probs.push(probs);
        }

        let mut act_in = h.clone();
        act_in.extend(z_q.iter().map(|v| v * self.msg_gain));
        act_in.extend_from_slice(&x);
        let action_logits = self.act_head.forward(&act_in);
        let act_probs = softmax(&action_logits);
        let action_idx = categorical_sample(&act_probs, rng);
        log_prob += act_probs[action_idx].ln();
        entropy += categorical_entropy(&act_probs);

        let value = self.val_head.forward(&h)[0] * self.value_scale;

        self.cache = Some(SpeakerCache {
            x,
            h_pre,
            h,
            z_e,
            sym_probs,
            indices: indices.clone(),
            z_q: z_q.clone(),
            act_in,
            act_probs: act_probs.clone(),
            action: action_idx,
            value,
        });

        (
            SymbolMessage {
                indices,
                quantized: z_q,
            },
            Action::from_index(action_idx),
            PolicyOutput {
                symbol_logits,
                action_logits,
                value,
                log_prob,
                entropy,
            },
        )
    }

    /// One A2C update (plus the commitment loss) on the cached round.
    /// Loss = -log_prob * advantage + 1/2 (value - target)^2
    ///        - entropy_coeff * entropy + sum_pos vq_loss.
    /// Returns (loss components, vq loss) for logging.
    pub fn update(
        &mut self,
        book: &mut Codebook,
        sig: &TrainSignal,
        vq_beta: f64,
        opt: &mut AdamState,
    ) -> Result<(LossParts, f64), NumericError> {
        let cache = self.cache.take().expect("act() must precede update()");
        let d = self.d;

        // scalar components for logging
        let mut log_prob = cache.act_probs[cache.action].ln();
        let mut entropy = categorical_entropy(&cache.act_probs);
        let mut vq_total = 0.0;
        for pos in 0..self.msg_len {
            log_prob += cache.sym_probs[pos][cache.indices[pos]].ln();
            entropy += categorical_entropy(&cache.sym_probs[pos]);
            let z = &cache.z_e[pos * d..(pos + 1) * d];
            let e = &cache.z_q[pos * d..(pos + 1) * d];
            vq_total += vq_loss(z, e, vq_beta);
        }
        let parts = LossParts {
            policy: -log_prob * sig.advantage,
            value: 0.5 * (cache.value - sig.value_target) * (cache.value - sig.value_target),
            entropy,
        };
        let total = parts.policy + parts.value - sig.entropy_coeff * parts.entropy + vq_total;
        if !total.is_finite() {
            return Err(NumericError::NonFinite {
                what: "loss",
                context: "speaker a2c update".into(),
            });
        }

        let mut g_h = vec![0.0; self.hidden];
        let mut g_ze = vec![0.0; self.msg_len * d];

        // critic: d/dvalue of 1/2 (v - target)^2, through the output gain
        let g_value = [(cache.value - sig.value_target) * self.value_scale];
        self.val_head.backward(&cache.h, &g_value, Some(&mut g_h));

        // action head; the z_q slice of its input gradient passes straight
        // through to z_e (identity), the codebook sees none of it
        let g_act_logits =
            policy_logit_grad(&cache.act_probs, cache.action, sig.advantage, sig.entropy_coeff);
        let mut g_act_in = vec![0.0; cache.act_in.len()];
        self.act_head
            .backward(&cache.act_in, &g_act_logits, Some(&mut g_act_in));
        g_h.iter_mut().zip(&g_act_in[..self.hidden]).for_each(|(a, b)| *a += b);
        let zq_grad = &g_act_in[self.hidden..self.hidden + self.msg_len * d];
        // straight-through: identity into z_e, scaled by the input gain
        g_ze
            .iter_mut()
            .zip(zq_grad)
            .for_each(|(a, b)| *a += b * self.msg_gain);
        // the raw-context slice of the skip connection needs no backprop

        // symbol policies and commitment loss
        let book_grad_len = book.entries_tensor_mut().len();
        let mut g_book = vec![0.0; book_grad_len];
        for pos in 0..self.msg_len {
            let probs = &cache.sym_probs[pos];
            let chosen = cache.indices[pos];
            let z = &cache.z_e[pos * d..(pos + 1) * d];
            let g_logits = policy_logit_grad(probs, chosen, sig.advantage, sig.entropy_coeff);
            // logit_k = -||z - e_k||^2 / temp; codebook held constant here
            let gz = &mut g_ze[pos * d..(pos + 1) * d];
            for (k, &gl) in g_logits.iter().enumerate() {
                if gl == 0.0 {
                    continue;
                }
                let e = book.entry(k);
                let scale = gl * (-2.0) / self.symbol_temp;
                for j in 0..d {
                    gz[j] += scale * (z[j] - e[j]);
                }
            }
            let e = book.entry(chosen);
            let (g_e, g_z) = vq_loss_grads(z, e, vq_beta);
            for j in 0..d {
                gz[j] += g_z[j];
                g_book[chosen * d + j] += g_e[j];
            }
        }
        book.entries_tensor_mut()
            .grad
            .iter_mut()
            .zip(&g_book)
            .for_each(|(a, b)| *a += b);

        // encoder and trunk
        self.enc.backward(&cache.h, &g_ze, Some(&mut g_h));
        let g_h_pre: Vec<f64> = g_h
            .iter()
            .zip(&cache.h_pre)
            .map(|(g, &pre)| g * self.activation.derivative(pre))
            .collect();
        self.trunk.backward(&cache.x, &g_h_pre, None);

        let [tw, tb] = self.trunk.blocks_mut();
        let [ew, eb] = self.enc.blocks_mut();
        let [aw, ab] = self.act_head.blocks_mut();
        let [vw, vb] = self.val_head.blocks_mut();
        opt.step(&mut [tw, tb, ew, eb, aw, ab, vw, vb, book.entries_tensor_mut()])?;
        Ok((parts, vq_total))
    }
}

struct ListenerCache {
    x: Vec<f64>,
    h_pre: Vec<f64>,
    h: Vec<f64>,
    act_probs: Vec<f64>,
    action: usize,
    value: f64,
}

/// Agent B: listener. Conditions on the quantized message rows plus its
/// context parity one-hot.
pub struct ListenerAgent {
    trunk: Linear,
    act_head: Linear,
    val_head: Linear,
    activation: Activation,
    in_dim: usize,
    value_scale: f64,
    feat_gain: f64,
    msg_gain: f64,
    cache: Option<ListenerCache>,
}

impl ListenerAgent {
    pub fn new<R: Rng>(
        hidden: usize,
        msg_len: usize,
        d: usize,
        activation: Activation,
        value_scale: f64,
        feat_gain: f64,
        msg_gain: f64,
        rng: &mut R,
    ) -> Self {
        let in_dim = msg_len * d + 2;
        ListenerAgent {
            trunk: Linear::new(in_dim, hidden, rng),
            // skip connection: quantized message and parity feed the action
            // head directly alongside the trunk features
            act_head: Linear::new(hidden + in_dim, 2, rng),
            val_head: Linear::new(hidden, 1, rng),
            activation,
            in_dim,
            value_scale,
            feat_gain,
            msg_gain,
            cache: None,
        }
    }

    pub fn optimizer(&mut self, lr: f64, b1: f64, b2: f64, eps: f64) -> AdamState {
        let sizes = [
            self.trunk.w.len(),
            self.trunk.b.len(),
            self.act_head.w.len(),
            self.act_head.b.len(),
            self.val_head.w.len(),
            self.val_head.b.len(),
        ];
        AdamState::new(&sizes, lr, b1, b2, eps)
    }

    pub fn act<R: Rng>(
        &mut self,
        msg: &SymbolMessage,
        ctx: ContextLabel,
        rng: &mut R,
    ) -> (Action, PolicyOutput) {
        let mut x = Vec::with_capacity(self.in_dim);
        x.extend(msg.quantized.iter().map(|v| v * self.msg_gain));
        match ctx.parity() {
            Parity::Even => x.extend_from_slice(&[self.feat_gain, 0.0]),
            Parity::Odd => x.extend_from_slice(&[0.0, self.feat_gain]),
        }
        debug_assert_eq!(x.len(), self.in_dim);

        let h_pre = self.trunk.forward(&x);
        let h: Vec<f64> = h_pre.iter().map(|&v| self.activation.apply(v)).collect();
        let mut act_in = h.clone();
        act_in.extend_from_slice(&x);
        let action_logits = self.act_head.forward(&act_in);
        let act_probs = softmax(&action_logits);
        let action_idx = categorical_sample(&act_probs, rng);
        let value = self.val_head.forward(&h)[0] * self.value_scale;
        let log_prob = act_probs[action_idx].ln();
        let entropy = categorical_entropy(&act_probs);

        self.cache = Some(ListenerCache {
            x,
            h_pre,
            h,
            act_probs,
            action: action_idx,
            value,
        });

        (
            Action::from_index(action_idx),
            PolicyOutput {
                symbol_logits: Vec::new(),
                action_logits,
                value,
                log_prob,
                entropy,
            },
        )
    }

    pub fn update(&mut self, sig: &TrainSignal, opt: &mut AdamState) -> Result<LossParts, NumericError> {
        let cache = self.cache.take().expect("act() must precede update()");
        let parts = LossParts {
            policy: -cache.act_probs[cache.action].ln() * sig.advantage,
            value: 0.5 * (cache.value - sig.value_target) * (cache.value - sig.value_target),
            entropy: categorical_entropy(&cache.act_probs),
        };
        let total = parts.policy + parts.value - sig.entropy_coeff * parts.entropy;
        if !total.is_finite() {
            return Err(NumericError::NonFinite {
                what: "loss",
                context: "listener a2c update".into(),
            });
        }

        let mut g_h = vec![0.0; cache.h.len()];
        let g_value = [(cache.value - sig.value_target) * self.value_scale];
        self.val_head.backward(&cache.h, &g_value, Some(&mut g_h));
        let g_logits =
            policy_logit_grad(&cache.act_probs, cache.action, sig.advantage, sig.entropy_coeff);
        let mut act_in = cache.h.clone();
        act_in.extend_from_slice(&cache.x);
        let mut g_act_in = vec![0.0; act_in.len()];
        self.act_head.backward(&act_in, &g_logits, Some(&mut g_act_in));
        g_h.iter_mut().zip(&g_act_in[..cache.h.len()]).for_each(|(a, b)| *a += b);
        let g_h_pre: Vec<f64> = g_h
            .iter()
            .zip(&cache.h_pre)
            .map(|(g, &pre)| g * self.activation.derivative(pre))
            .collect();
        self.trunk.backward(&cache.x, &g_h_pre, None);

        let [tw, tb] = self.trunk.blocks_mut();
        let [aw, ab] = self.act_head.blocks_mut();
        let [vw, vb] = self.val_head.blocks_mut();
        opt.step(&mut [tw, tb, aw, ab, vw, vb])?;
        Ok(parts)
    }
}
