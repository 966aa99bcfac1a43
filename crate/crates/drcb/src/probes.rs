//! Statistical monitoring over the symbol channel: windowed Laplace-smoothed
//! histograms, Jensen-Shannon drift between consecutive windows, mean L2
//! displacement of the codebook over a window lag, the EMA collusion score,
//! and two log-only diagnostics (reward plateau, observer gradient failure).

use crate::aim::Codebook;
use std::collections::VecDeque;

/// Laplace-smoothed probability vector over the K symbol bins. Every entry
/// is strictly positive and the whole thing sums to 1 within 1e-12.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `p_k = (c_k + eps_s) / sum_j (c_j + eps_s)`.
pub fn smooth(counts: &[u64], eps_s: f64) -> Distribution {
    assert!(eps_s > 0.0, "smoothing constant must be positive");
    let total: f64 = counts.iter().map(|&c| c as f64 + eps_s).sum();
    let probs: Vec<f64> = counts.iter().map(|&c| (c as f64 + eps_s) / total).collect();
    debug_assert!(probs.iter().all(|&p| p > 0.0));
    debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    Distribution { probs }
}

/// Jensen-Shannon divergence in nats: `1/2 KL(p||m) + 1/2 KL(q||m)` with
/// `m = (p+q)/2`. Symmetric and bounded by ln 2.
pub fn jsd(p: &Distribution, q: &Distribution) -> f64 {
    assert_eq!(p.probs.len(), q.probs.len());
    let mut acc = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        let m = 0.5 * (pi + qi);
        acc += 0.5 * pi * (pi / m).ln();
        acc += 0.5 * qi * (qi / m).ln();
    }
    // clamp the tiny negative that roundoff can produce at p == q
    acc.max(0.0)
}

/// Mean per-entry L2 displacement between two codebook snapshots:
/// `(1/K) sum_k ||e_k(now) - e_k(then)||_2` over flat K x D arrays.
pub fn l2_drift(now: &[f64], then: &[f64], k: usize, d: usize) -> f64 {
    assert_eq!(now.len(), k * d);
    assert_eq!(then.len(), k * d);
    let mut total = 0.0;
    for row in 0..k {
        let mut sq = 0.0;
        for j in 0..d {
            let diff = now[row * d + j] - then[row * d + j];
            sq += diff * diff;
        }
        total += sq.sqrt();
    }
    total / k as f64
}

/// Sliding symbol-frequency window. Both positions of each message pool into
/// one K-bin histogram; the drift statistic compares the most recent W
/// rounds against the W rounds before them (partially filled early windows
/// are allowed — smoothing maps an empty window to uniform).
pub struct SymbolWindow {
    window: usize,
    k: usize,
    ring: VecDeque<Vec<u16>>,
}

impl SymbolWindow {
    pub fn new(window: usize, k: usize) -> Self {
        SymbolWindow {
            window,
            k,
            ring: VecDeque::with_capacity(2 * window + 1),
        }
    }

    pub fn push(&mut self, indices: &[usize]) {
        self.ring.push_back(indices.iter().map(|&i| i as u16).collect());
        while self.ring.len() > 2 * self.window {
            self.ring.pop_front();
        }
    }

    fn counts(&self, range: std::ops::Range<usize>) -> Vec<u64> {
        let mut c = vec![0u64; self.k];
        for row in range {
            for &idx in &self.ring[row] {
                c[idx as usize] += 1;
            }
        }
        c
    }

    /// (current-window, previous-window) smoothed distributions.
    pub fn window_pair(&self, eps_s: f64) -> (Distribution, Distribution) {
        let n = self.ring.len();
        let cur_start = n.saturating_sub(self.window);
        let prev_start = n.saturating_sub(2 * self.window);
        let cur = self.counts(cur_start..n);
        let prev = self.counts(prev_start..cur_start);
        (smooth(&cur, eps_s), smooth(&prev, eps_s))
    }

    /// JSD between the current and previous windows.
    pub fn drift(&self, eps_s: f64) -> f64 {
        let (cur, prev) = self.window_pair(eps_s);
        jsd(&cur, &prev)
    }
}

/// Ring of codebook snapshots for the lag-W drift probe.
pub struct DriftTracker {
    window: usize,
    k: usize,
    d: usize,
    snaps: VecDeque<Vec<f64>>,
}

impl DriftTracker {
    pub fn new(window: usize, k: usize, d: usize) -> Self {
        DriftTracker {
            window,
            k,
            d,
            snaps: VecDeque::with_capacity(window + 1),
        }
    }

    /// Drift of the current book against the snapshot min(W, history)
    /// rounds back, then records the current state. Returns 0 on the first
    /// call.
    pub fn observe(&mut self, book: &Codebook) -> f64 {
        let now = book.entries_flat();
        let drift = if self.snaps.is_empty() {
            0.0
        } else {
            let lag = self.window.min(self.snaps.len());
            let then = &self.snaps[self.snaps.len() - lag];
            l2_drift(now, then, self.k, self.d)
        };
        self.snaps.push_back(now.to_vec());
        while self.snaps.len() > self.window {
            self.snaps.pop_front();
        }
        drift
    }
}

/// EMA-smoothed collusion score. The instantaneous value is the zero-clipped
/// joint reward over (observer accuracy + eps); negative rewards therefore
/// never deflate the score, they only let the EMA decay.
#[derive(Clone, Copy, Debug)]
pub struct CollusionScore {
    pub s_ema: f64,
    pub alpha: f64,
    pub eps_train: f64,
    pub warmup: u64,
}

impl CollusionScore {
    pub fn new(alpha: f64, eps_train: f64, warmup: u64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0);
        CollusionScore {
            s_ema: 0.0,
            alpha,
            eps_train,
            warmup,
        }
    }

    /// One EMA update; returns the new score. The score is always updated —
    /// during warm-up (round < warmup) the *caller* suppresses governor
    /// triggers, not the update itself.
    pub fn update(&mut self, r_joint: f64, acc_obs: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&acc_obs));
        let instantaneous = r_joint.max(0.0) / (acc_obs + self.eps_train);
        self.s_ema = self.alpha * instantaneous + (1.0 - self.alpha) * self.s_ema;
        self.s_ema
    }

    /// Circuit-break reset.
    pub fn reset(&mut self) {
        self.s_ema = 0.0;
    }
}

/// Recompute an EMA score trace offline from logged (r_joint, acc) pairs
/// with an arbitrary epsilon (the analysis tool uses 1e-5 where training
/// uses 0.1).
pub fn recompute_score_trace(pairs: &[(f64, f64)], alpha: f64, eps: f64) -> Vec<f64> {
    let mut s = 0.0;
    pairs
        .iter()
        .map(|&(r, acc)| {
            s = alpha * (r.max(0.0) / (acc + eps)) + (1.0 - alpha) * s;
            s
        })
        .collect()
}

/// Log-only collusion signatures: a reward plateau (windowed least-squares
/// slope below tolerance) and observer gradient failure (mean gradient norm
/// below tolerance). Neither gates any intervention.
pub struct Diagnostics {
    window: usize,
    plateau_tol: f64,
    gradfail_tol: f64,
    rewards: VecDeque<f64>,
    grad_norms: VecDeque<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DiagnosticFlags {
    pub reward_plateau: bool,
    pub observer_grad_failure: bool,
}

impl Diagnostics {
    pub fn new(window: usize, plateau_tol: f64, gradfail_tol: f64) -> Self {
        Diagnostics {
            window,
            plateau_tol,
            gradfail_tol,
            rewards: VecDeque::with_capacity(window + 1),
            grad_norms: VecDeque::with_capacity(window + 1),
        }
    }

    pub fn push(&mut self, reward: f64, obs_grad_norm: f64) {
        self.rewards.push_back(reward);
        self.grad_norms.push_back(obs_grad_norm);
        while self.rewards.len() > self.window {
            self.rewards.pop_front();
        }
        while self.grad_norms.len() > self.window {
            self.grad_norms.pop_front();
        }
    }

    pub fn flags(&self) -> DiagnosticFlags {
        if self.rewards.len() < self.window {
            return DiagnosticFlags::default();
        }
        let mean_norm = self.grad_norms.iter().sum::<f64>() / self.grad_norms.len() as f64;
        DiagnosticFlags {
            reward_plateau: lsq_slope(&self.rewards).abs() < self.plateau_tol,
            observer_grad_failure: mean_norm < self.gradfail_tol,
        }
    }
}

fn lsq_slope(ys: &VecDeque<f64>) -> f64 {
    let n = ys.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_examples() {
        let d = smooth(&[0, 0], 1.0);
        assert_eq!(d.probs(), &[0.5, 0.5]);

        let d = smooth(&[3, 1], 1.0);
        assert!((d.probs()[0] - 4.0 / 6.0).abs() < 1e-15);
        assert!((d.probs()[1] - 2.0 / 6.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let counts: Vec<u64> = (0..32).map(|_| rng.random_range(0..100u64)).collect();
            let d = smooth(&counts, 1.0);
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.probs().iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn jsd_identity_symmetry_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let ca: Vec<u64> = (0..16).map(|_| rng.random_range(0..50u64)).collect();
            let cb: Vec<u64> = (0..16).map(|_| rng.random_range(0..50u64)).collect();
            let p = smooth(&ca, 1.0);
            let q = smooth(&cb, 1.0);
            assert!(jsd(&p, &p) == 0.0 || jsd(&p, &p) < 1e-15);
            assert!((jsd(&p, &q) - jsd(&q, &p)).abs() < 1e-15);
            assert!(jsd(&p, &q) >= 0.0);
            assert!(jsd(&p, &q) <= std::f64::consts::LN_2 + 1e-12);
        }
    }

    #[test]
    fn near_disjoint_supports_approach_ln2() {
        // smoothed deltas at different indices with eps 1e-6
        let p = smooth(&[1_000_000, 0], 1e-6);
        let q = smooth(&[0, 1_000_000], 1e-6);
        let v = jsd(&p, &q);
        assert!(v < std::f64::consts::LN_2);
        assert!((std::f64::consts::LN_2 - v) < 1e-3);
    }

    #[test]
    fn l2_drift_examples() {
        let k = 32;
        let d = 4;
        let a = vec![0.25; k * d];
        assert_eq!(l2_drift(&a, &a, k, d), 0.0);

        // one entry displaced by a unit vector -> 1/32, no matter which
        for row in [0usize, 13, 31] {
            let mut b = a.clone();
            b[row * d] += 1.0;
            assert!((l2_drift(&b, &a, k, d) - 1.0 / 32.0).abs() < 1e-15);
        }
    }

    #[test]
    fn score_update_examples() {
        let mut sc = CollusionScore::new(0.1, 0.1, 50);
        sc.s_ema = 5.0;
        // negative reward: instantaneous clips to 0, EMA decays by (1-alpha)
        let s = sc.update(-5.0, 0.5);
        assert!((s - 4.5).abs() < 1e-15);

        let mut sc = CollusionScore::new(1.0, 0.1, 50);
        assert!((sc.update(10.0, 0.0) - 100.0).abs() < 1e-12);

        let mut sc = CollusionScore::new(1.0, 0.1, 50);
        assert!((sc.update(10.0, 0.9) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn score_is_monotone_decreasing_in_accuracy() {
        for r in [0.5, 3.0, 10.0] {
            let mut prev = f64::INFINITY;
            for i in 0..=10 {
                let acc = i as f64 / 10.0;
                let mut sc = CollusionScore::new(1.0, 0.1, 50);
                let s = sc.update(r, acc);
                assert!(s <= prev, "score must fall as accuracy rises");
                prev = s;
            }
        }
    }

    #[test]
    fn window_pair_pools_both_positions() {
        let mut w = SymbolWindow::new(2, 4);
        w.push(&[0, 1]);
        w.push(&[1, 1]);
        let (cur, _) = w.window_pair(1.0);
        // counts: [1, 3, 0, 0] + 1 smoothing -> [2, 4, 1, 1] / 8
        assert_eq!(cur.probs(), &[0.25, 0.5, 0.125, 0.125]);
    }

    #[test]
    fn drift_zero_for_stationary_stream_and_positive_on_rotation() {
        let mut w = SymbolWindow::new(10, 4);
        for _ in 0..20 {
            w.push(&[0, 1]);
        }
        assert!(w.drift(1.0) < 1e-12);
        for _ in 0..10 {
            w.push(&[2, 3]);
        }
        assert!(w.drift(1.0) > 0.1);
    }

    #[test]
    fn drift_tracker_lag_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut book = Codebook::init(4, 2, &mut rng);
        let mut tracker = DriftTracker::new(3, 4, 2);
        assert_eq!(tracker.observe(&book), 0.0);
        assert_eq!(tracker.observe(&book), 0.0);
        // displace one entry by a unit vector: drift = 1/4
        book.entries_tensor_mut().values[0] += 1.0;
        let d = tracker.observe(&book);
        assert!((d - 0.25).abs() < 1e-15);
        // stays visible until the lag window slides past it
        assert!((tracker.observe(&book) - 0.25).abs() < 1e-15);
        assert!((tracker.observe(&book) - 0.25).abs() < 1e-15);
        assert_eq!(tracker.observe(&book), 0.0);
    }

    #[test]
    fn diagnostics_flags() {
        let mut d = Diagnostics::new(10, 1e-3, 1e-6);
        for _ in 0..10 {
            d.push(4.0, 1.0);
        }
        let f = d.flags();
        assert!(f.reward_plateau);
        assert!(!f.observer_grad_failure);

        let mut d = Diagnostics::new(10, 1e-3, 1e-6);
        for i in 0..10 {
            d.push(i as f64, 1e-7);
        }
        let f = d.flags();
        assert!(!f.reward_plateau, "linear growth is not a plateau");
        assert!(f.observer_grad_failure);

        // under-filled windows report nothing
        let mut d = Diagnostics::new(10, 1e-3, 1e-6);
        d.push(1.0, 0.0);
        assert_eq!(d.flags(), DiagnosticFlags::default());
    }

    #[test]
    fn offline_recompute_matches_online_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random_range(-2.0..10.0), rng.random_range(0.0..1.0)))
            .collect();
        let mut sc = CollusionScore::new(0.1, 0.1, 50);
        let online: Vec<f64> = pairs.iter().map(|&(r, a)| sc.update(r, a)).collect();
        let offline = recompute_score_trace(&pairs, 0.1, 0.1);
        for (a, b) in online.iter().zip(&offline) {
            assert_eq!(a, b);
        }
    }
}
