//! The discrete-symbol communication bottleneck: a learned codebook against
//! which encoder outputs are quantized, with a commitment loss, per-window
//! utilization tracking, targeted re-initialization of dead entries, and the
//! full shuffle used by the circuit breaker.

use crate::numeric::ParamTensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// K x D codebook plus per-entry usage counts for the current monitoring
/// window. Entries live in a [`ParamTensor`] so the speaker's optimizer can
/// train them through the commitment loss.
#[derive(Clone, Debug)]
pub struct Codebook {
    entries: ParamTensor,
    usage: Vec<u64>,
}

/// One round's message: the chosen entry index per position plus the
/// quantized rows (copies of the codebook entries at emission time).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolMessage {
    pub indices: Vec<usize>,
    /// Flat len = indices.len() * d.
    pub quantized: Vec<f64>,
}

impl Codebook {
    /// Fresh codebook with entries drawn U(-1/K, +1/K).
    pub fn init<R: Rng>(k: usize, d: usize, rng: &mut R) -> Self {
        assert!(k >= 2, "codebook needs at least 2 entries");
        let bound = 1.0 / k as f64;
        let mut entries = ParamTensor::zeros(k, d);
        for v in &mut entries.values {
            *v = rng.random_range(-bound..bound);
        }
        Codebook {
            entries,
            usage: vec![0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.entries.rows
    }

    pub fn d(&self) -> usize {
        self.entries.cols
    }

    pub fn entry(&self, idx: usize) -> &[f64] {
        let d = self.d();
        &self.entries.values[idx * d..(idx + 1) * d]
    }

    pub fn usage(&self) -> &[u64] {
        &self.usage
    }

    pub fn entries_flat(&self) -> &[f64] {
        &self.entries.values
    }

    pub fn entries_tensor_mut(&mut self) -> &mut ParamTensor {
        &mut self.entries
    }

    /// Squared L2 distance from `z_e` to every entry.
    pub fn squared_distances(&self, z_e: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z_e.len(), self.d());
        (0..self.k())
            .map(|k| {
                self.entry(k)
                    .iter()
                    .zip(z_e)
                    .map(|(e, z)| (z - e) * (z - e))
                    .sum()
            })
            .collect()
    }

    /// Nearest-neighbor quantization: index of the closest entry (ties break
    /// to the lowest index) and a copy of that entry. Increments the entry's
    /// usage count.
    pub fn quantize(&mut self, z_e: &[f64]) -> (usize, Vec<f64>) {
        let d2 = self.squared_distances(z_e);
        let mut best = 0usize;
        for (k, &dist) in d2.iter().enumerate() {
            if dist < d2[best] {
                best = k;
            }
        }
        // independent oracle: exhaustive scan via plain L2 norms
        debug_assert_eq!(best, {
            let mut arg = 0usize;
            let norm = |k: usize| -> f64 {
                self.entry(k)
                    .iter()
                    .zip(z_e)
                    .map(|(e, z)| (z - e).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            for k in 1..self.k() {
                if norm(k) < norm(arg) {
                    arg = k;
                }
            }
            arg
        });
        self.usage[best] += 1;
        (best, self.entry(best).to_vec())
    }

    /// Count an emission of `idx` (used when the symbol was sampled from the
    /// policy rather than taken by nearest neighbor).
    pub fn record_usage(&mut self, idx: usize) {
        self.usage[idx] += 1;
    }

    /// Fraction of entries used at least once in the current window.
    pub fn utilization(&self) -> f64 {
        let used = self.usage.iter().filter(|&&c| c > 0).count();
        used as f64 / self.k() as f64
    }

    /// Redraw every entry U(-1/K, +1/K) and zero the usage counts. This
    /// invalidates all learned symbol mappings at once.
    pub fn shuffle<R: Rng>(&mut self, rng: &mut R) {
        let bound = 1.0 / self.k() as f64;
        for v in &mut self.entries.values {
            *v = rng.random_range(-bound..bound);
        }
        self.entries.zero_grad();
        self.usage.iter_mut().for_each(|c| *c = 0);
    }

    /// Redraw only entries with zero usage this window; used entries stay
    /// bit-identical. Returns the indices that were re-initialized.
    pub fn reinit_unused<R: Rng>(&mut self, rng: &mut R) -> Vec<usize> {
        let bound = 1.0 / self.k() as f64;
        let d = self.d();
        let mut touched = Vec::new();
        for k in 0..self.k() {
            if self.usage[k] == 0 {
                for v in &mut self.entries.values[k * d..(k + 1) * d] {
                    *v = rng.random_range(-bound..bound);
                }
                touched.push(k);
            }
        }
        touched
    }

    /// Zero usage counts at a monitoring-window boundary so utilization
    /// reflects the current window only.
    pub fn reset_usage(&mut self) {
        self.usage.iter_mut().for_each(|c| *c = 0);
    }
}

/// Commitment loss `||sg[z_e] - e||^2 + beta * ||z_e - sg[e]||^2`.
/// With the stop-gradients, the first term trains the entry toward the
/// encoder output and only the beta term pushes the encoder toward the
/// entry; [`vq_loss_grads`] carries that split.
pub fn vq_loss(z_e: &[f64], e: &[f64], beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    let sq: f64 = z_e.iter().zip(e).map(|(z, ev)| (z - ev) * (z - ev)).sum();
    sq + beta * sq
}

/// Gradient split of [`vq_loss`]: (d/de from term 1 only, d/dz_e from the
/// beta term only).
pub fn vq_loss_grads(z_e: &[f64], e: &[f64], beta: f64) -> (Vec<f64>, Vec<f64>) {
    let g_e: Vec<f64> = e.iter().zip(z_e).map(|(ev, z)| 2.0 * (ev - z)).collect();
    let g_z: Vec<f64> = z_e.iter().zip(e).map(|(z, ev)| 2.0 * beta * (z - ev)).collect();
    (g_e, g_z)
}
