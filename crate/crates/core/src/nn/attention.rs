//! View aggregation: positional encoding plus attention-weighted summing.
//!
//! Per-view features are tagged with a fixed sinusoidal position row for
//! the capturing view, scored by a small network, and combined by a
//! softmax-weighted sum into one fused representation.

use crate::error::{Error, Result};
use crate::math::dot;
use crate::nn::mlp::{Mlp, MlpCache, MlpGrads};
use serde::{Deserialize, Serialize};

/// Fixed sinusoidal positional table, one row per view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosEncoding {
    pub n_views: usize,
    pub dim: usize,
    /// Row-major `n_views x dim`.
    pub table: Vec<f64>,
}

impl PosEncoding {
    /// Standard sinusoidal table: row i holds interleaved
    /// `sin(i * w_k), cos(i * w_k)` pairs, so every row has squared norm
    /// exactly `dim / 2`.
    pub fn sinusoidal(n_views: usize, dim: usize) -> Self {
        assert!(dim >= 2 && dim % 2 == 0, "positional dim must be even");
        let mut table = vec![0.0; n_views * dim];
        for i in 0..n_views {
            for k in 0..dim / 2 {
                let omega = 1.0 / 10000f64.powf(2.0 * k as f64 / dim as f64);
                let arg = i as f64 * omega;
                table[i * dim + 2 * k] = arg.sin();
                table[i * dim + 2 * k + 1] = arg.cos();
            }
        }
        PosEncoding {
            n_views,
            dim,
            table,
        }
    }

    /// All-zero table (kills positional information; used in symmetry tests).
    pub fn zeros(n_views: usize, dim: usize) -> Self {
        PosEncoding {
            n_views,
            dim,
            table: vec![0.0; n_views * dim],
        }
    }

    pub fn row(&self, view: usize) -> &[f64] {
        &self.table[view * self.dim..(view + 1) * self.dim]
    }
}

/// Attention over per-view features: softmax-normalized scores from a
/// shared scoring network, then a weighted sum of position-tagged features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionAggregator {
    /// Maps `(feature_dim + pos_dim) -> 1`.
    pub score_net: Mlp,
    /// Softmax temperature; scores are divided by it before normalizing.
    pub temperature: f64,
    pub pos: PosEncoding,
}

/// Intermediates for the aggregation backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// Position-tagged per-view inputs `h'_i`.
    pub tagged: Vec<Vec<f64>>,
    pub score_caches: Vec<MlpCache>,
    pub raw_scores: Vec<f64>,
    /// Softmax weights; always sum to 1.
    pub scores: Vec<f64>,
    pub fused: Vec<f64>,
}

impl AttentionAggregator {
    pub fn fused_dim(&self) -> usize {
        self.score_net.input_dim()
    }

    /// Weighted-sum aggregation. Returns the fused vector and the
    /// normalized scores.
    pub fn aggregate(&self, views: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let cache = self.aggregate_cache(views)?;
        Ok((cache.fused, cache.scores))
    }

    pub fn aggregate_cache(&self, views: &[Vec<f64>]) -> Result<AttentionCache> {
        if views.len() != self.pos.n_views {
            return Err(Error::dim(format!(
                "expected {} views, got {}",
                self.pos.n_views,
                views.len()
            )));
        }
        let m = views.len();
        let mut tagged = Vec::with_capacity(m);
        let mut score_caches = Vec::with_capacity(m);
        let mut raw_scores = Vec::with_capacity(m);
        for (i, h) in views.iter().enumerate() {
            let mut hp = Vec::with_capacity(h.len() + self.pos.dim);
            hp.extend_from_slice(h);
            hp.extend_from_slice(self.pos.row(i));
            let cache = self.score_net.forward_cache(&hp)?;
            raw_scores.push(cache.output()[0]);
            score_caches.push(cache);
            tagged.push(hp);
        }
        let scores = softmax_scaled(&raw_scores, self.temperature);
        let dim = tagged[0].len();
        let mut fused = vec![0.0; dim];
        for (p, hp) in scores.iter().zip(&tagged) {
            for (f, h) in fused.iter_mut().zip(hp) {
                *f += p * h;
            }
        }
        Ok(AttentionCache {
            tagged,
            score_caches,
            raw_scores,
            scores,
            fused,
        })
    }

    /// Gradients of `fused . upstream` with respect to the scoring-network
    /// parameters. Per-view features are frozen inputs, so no gradient is
    /// propagated into them.
    pub fn backward(&self, cache: &AttentionCache, upstream: &[f64]) -> MlpGrads {
        let m = cache.tagged.len();
        // d/d score_i of the weighted sum.
        let d_prob: Vec<f64> = cache.tagged.iter().map(|hp| dot(hp, upstream)).collect();
        let mean: f64 = cache
            .scores
            .iter()
            .zip(&d_prob)
            .map(|(p, d)| p * d)
            .sum();
        let mut grads = MlpGrads::zeros_like(&self.score_net);
        for i in 0..m {
            let d_raw = cache.scores[i] * (d_prob[i] - mean) / self.temperature;
            let (g, _) = self.score_net.backward(&cache.score_caches[i], &[d_raw]);
            grads.add_scaled(&g, 1.0);
        }
        grads
    }
}

/// Numerically stable softmax of `s / temperature`.
pub fn softmax_scaled(s: &[f64], temperature: f64) -> Vec<f64> {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}
