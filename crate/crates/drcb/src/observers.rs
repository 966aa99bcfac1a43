//! Randomized observer pool: N independently initialized binary classifiers
//! that predict the listener's action from the speaker's symbol indices.
//! Each round a random subset trains on the single current pair (no replay
//! buffer); the rest stay frozen. Periodically one member is replaced
//! wholesale with a fresh model — a moving-target defense that keeps the
//! monitoring surface non-learnable.

use crate::aim::SymbolMessage;
use crate::env::Action;
use crate::numeric::{softmax, Activation, AdamState, Linear, NumericError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One pool member: two-layer MLP over one-hot symbol indices.
pub struct Observer {
    l1: Linear,
    l2: Linear,
    activation: Activation,
    k: usize,
    msg_len: usize,
}

impl Observer {
    pub fn new<R: Rng>(k: usize, msg_len: usize, hidden: usize, activation: Activation, rng: &mut R) -> Self {
        Observer {
            l1: Linear::new(msg_len * k, hidden, rng),
            l2: Linear::new(hidden, 2, rng),
            activation,
            k,
            msg_len,
        }
    }

    fn features(&self, msg: &SymbolMessage) -> Vec<f64> {
        let mut x = vec![0.0; self.msg_len * self.k];
        for (pos, &idx) in msg.indices.iter().enumerate() {
            x[pos * self.k + idx] = 1.0;
        }
        x
    }

    pub fn logits(&self, msg: &SymbolMessage) -> Vec<f64> {
        let x = self.features(msg);
        let h: Vec<f64> = self
            .l1
            .forward(&x)
            .into_iter()
            .map(|v| self.activation.apply(v))
            .collect();
        self.l2.forward(&h)
    }

    /// Argmax prediction; ties break to the lowest action index.
    pub fn predict(&self, msg: &SymbolMessage) -> Action {
        let logits = self.logits(msg);
        if logits[1] > logits[0] {
            Action::D
        } else {
            Action::C
        }
    }

    /// One cross-entropy gradient step on the single (msg, action) pair.
    /// Returns the L2 norm of the full parameter gradient (pre-update),
    /// which the probes track as the observer-gradient-failure signal.
    pub fn train_step(
        &mut self,
        msg: &SymbolMessage,
        target: Action,
        opt: &mut AdamState,
    ) -> Result<f64, NumericError> {
        let x = self.features(msg);
        let h_pre = self.l1.forward(&x);
        let h: Vec<f64> = h_pre.iter().map(|&v| self.activation.apply(v)).collect();
        let logits = self.l2.forward(&h);
        let probs = softmax(&logits);

        let mut g_logits = probs.clone();
        g_logits[target.index()] -= 1.0;

        let mut g_h = vec![0.0; h.len()];
        self.l2.backward(&h, &g_logits, Some(&mut g_h));
        let g_h_pre: Vec<f64> = g_h
            .iter()
            .zip(&h_pre)
            .map(|(g, &pre)| g * self.activation.derivative(pre))
            .collect();
        self.l1.backward(&x, &g_h_pre, None);

        let norm_sq: f64 = self
            .l1
            .w
            .grad
            .iter()
            .chain(&self.l1.b.grad)
            .chain(&self.l2.w.grad)
            .chain(&self.l2.b.grad)
            .map(|g| g * g)
            .sum();

        let [w1, b1] = self.l1.blocks_mut();
        let [w2, b2] = self.l2.blocks_mut();
        opt.step(&mut [w1, b1, w2, b2])?;
        Ok(norm_sq.sqrt())
    }

    fn optimizer(&self, lr: f64, b1: f64, b2: f64, eps: f64) -> AdamState {
        AdamState::new(
            &[self.l1.w.len(), self.l1.b.len(), self.l2.w.len(), self.l2.b.len()],
            lr,
            b1,
            b2,
            eps,
        )
    }

    /// Flat copy of all parameters, for bit-identity audits.
    pub fn parameter_snapshot(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.l1.w.values);
        v.extend_from_slice(&self.l1.b.values);
        v.extend_from_slice(&self.l2.w.values);
        v.extend_from_slice(&self.l2.b.values);
        v
    }
}

/// Cross-entropy of a member's 2-way output against the true action.
pub fn observer_loss(member: &Observer, msg: &SymbolMessage, action_b: Action) -> f64 {
    let probs = softmax(&member.logits(msg));
    -probs[action_b.index()].ln()
}

/// What one pool step reports back to the harness.
#[derive(Clone, Copy, Debug)]
pub struct PoolStepInfo {
    /// Mean pre-update 0/1 correctness over the trained subset.
    pub acc: f64,
    /// Bit i set when member i was in the subset.
    pub subset_mask: u32,
    /// Member replaced this round, if a refresh fired.
    pub refreshed: Option<usize>,
    /// Mean gradient norm over the subset's updates.
    pub mean_grad_norm: f64,
}

pub struct PoolConfig {
    pub pool_size: usize,
    pub subset_size: usize,
    /// 0 disables refresh (static-monitor mode).
    pub refresh_period: u64,
    pub hidden: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub activation: Activation,
}

pub struct ObserverPool {
    members: Vec<Observer>,
    opts: Vec<AdamState>,
    cfg: PoolConfig,
    k: usize,
    msg_len: usize,
    rng: ChaCha8Rng,
}

impl ObserverPool {
    /// Builds the pool; the pool keeps its own generator seeded from the
    /// run's master stream so subset draws don't interleave with agent
    /// sampling.
    pub fn new<R: Rng>(k: usize, msg_len: usize, cfg: PoolConfig, master: &mut R) -> Self {
        assert!(cfg.pool_size >= 1 && cfg.pool_size <= 32);
        assert!(cfg.subset_size >= 1 && cfg.subset_size <= cfg.pool_size);
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let members: Vec<Observer> = (0..cfg.pool_size)
            .map(|_| Observer::new(k, msg_len, cfg.hidden, cfg.activation, &mut rng))
            .collect();
        let opts = members
            .iter()
            .map(|m| m.optimizer(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam))
            .collect();
        ObserverPool {
            members,
            opts,
            cfg,
            k,
            msg_len,
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, i: usize) -> &Observer {
        &self.members[i]
    }

    /// One monitoring round:
    /// 1. at refresh boundaries (round > 0, round % period == 0) replace one
    ///    uniformly chosen member *before* subset sampling — the fresh member
    ///    is eligible in the round it enters;
    /// 2. draw the training subset uniformly without replacement;
    /// 3. grade each selected member on the current pair pre-update, then
    ///    apply one cross-entropy step on that pair only;
    /// 4. report the mean pre-update correctness.
    pub fn pool_step(
        &mut self,
        msg: &SymbolMessage,
        action_b: Action,
        round: u64,
    ) -> Result<PoolStepInfo, NumericError> {
        let mut refreshed = None;
        if self.cfg.refresh_period > 0 && round > 0 && round % self.cfg.refresh_period == 0 {
            let victim = self.rng.random_range(0..self.members.len());
            self.members[victim] = Observer::new(
                self.k,
                self.msg_len,
                self.cfg.hidden,
                self.cfg.activation,
                &mut self.rng,
            );
            self.opts[victim] = self.members[victim].optimizer(
                self.cfg.lr,
                self.cfg.beta1,
                self.cfg.beta2,
                self.cfg.eps_adam,
            );
            refreshed = Some(victim);
        }

        let subset = self.sample_subset();
        let mut mask = 0u32;
        let mut correct = 0usize;
        let mut norm_sum = 0.0;
        for &i in &subset {
            mask |= 1 << i;
            if self.members[i].predict(msg) == action_b {
                correct += 1;
            }
            norm_sum += self.members[i].train_step(msg, action_b, &mut self.opts[i])?;
        }

        Ok(PoolStepInfo {
            acc: correct as f64 / subset.len() as f64,
            subset_mask: mask,
            refreshed,
            mean_grad_norm: norm_sum / subset.len() as f64,
        })
    }

    /// Partial Fisher-Yates: uniform subset without replacement.
    fn sample_subset(&mut self) -> Vec<usize> {
        let n = self.members.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let take = self.cfg.subset_size;
        for i in 0..take {
            let j = self.rng.random_range(i..n);
            idx.swap(i, j);
        }
        idx.truncate(take);
        idx
    }
}
