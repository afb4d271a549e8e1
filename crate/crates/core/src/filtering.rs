//! Consistency-guided filtering of synthesized rollouts.
//!
//! Each synthesized trajectory is scored by the cosine similarity between
//! the embedding of its terminal frame (the most hallucination-prone one)
//! and the embedding of the real expert frame at the same viewing pose.
//! A batch keeps exactly the trajectories scoring at or above the batch
//! mean — the adaptive threshold.
//!
//! The embedder is deterministic and handcrafted (block statistics plus
//! edge-orientation histograms) behind the [`FrameEmbedder`] trait, leaving
//! a slot for a learned encoder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::Frame;
use crate::par;

pub const EMBED_DIM: usize = 128;
const BLOCK_GRID: usize = 4;
const HIST_GRID: usize = 2;
const HIST_BINS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("frame is {got_h}x{got_w}, embedder configured for {want_h}x{want_w}")]
    ResolutionMismatch {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("filter batch is empty")]
    EmptyBatch,
}

/// L2-normalized feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Frame-to-embedding interface; implementations must be deterministic.
pub trait FrameEmbedder: Sync {
    fn embed(&self, frame: &Frame) -> Result<Embedding, FilterError>;
    fn dim(&self) -> usize;
}

/// Handcrafted embedder: 4x4 block means (16), 8-bin edge-orientation
/// histograms over a 2x2 grid (32), 4x4 block variances (16), zero-padded
/// to 128 dims and L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandcraftedEmbedder {
    pub height: usize,
    pub width: usize,
}

impl HandcraftedEmbedder {
    pub fn new(height: usize, width: usize) -> HandcraftedEmbedder {
        assert!(
            height % BLOCK_GRID == 0 && width % BLOCK_GRID == 0,
            "resolution must divide the {BLOCK_GRID}x{BLOCK_GRID} block grid"
        );
        HandcraftedEmbedder { height, width }
    }
}

impl FrameEmbedder for HandcraftedEmbedder {
    fn dim(&self) -> usize {
        EMBED_DIM
    }

    fn embed(&self, frame: &Frame) -> Result<Embedding, FilterError> {
        if frame.height() != self.height || frame.width() != self.width {
            return Err(FilterError::ResolutionMismatch {
                got_h: frame.height(),
                got_w: frame.width(),
                want_h: self.height,
                want_w: self.width,
            });
        }
        let (h, w) = (self.height, self.width);
        let (bh, bw) = (h / BLOCK_GRID, w / BLOCK_GRID);

        let mut features = Vec::with_capacity(EMBED_DIM);

        // Block means.
        let mut means = [[0.0f64; BLOCK_GRID]; BLOCK_GRID];
        for bv in 0..BLOCK_GRID {
            for bu in 0..BLOCK_GRID {
                let mut sum = 0.0;
                for v in bv * bh..(bv + 1) * bh {
                    for u in bu * bw..(bu + 1) * bw {
                        sum += f64::from(frame.get(v, u));
                    }
                }
                means[bv][bu] = sum / (bh * bw) as f64;
                features.push(means[bv][bu]);
            }
        }

        // Edge-orientation histograms over a 2x2 grid of cells, weighted by
        // gradient magnitude and L1-normalized per cell; a cell with no
        // gradient mass splits uniformly across bins.
        let mut hist = [[0.0f64; HIST_BINS]; HIST_GRID * HIST_GRID];
        for v in 1..h - 1 {
            for u in 1..w - 1 {
                let gx = f64::from(frame.get(v, u + 1)) - f64::from(frame.get(v, u - 1));
                let gy = f64::from(frame.get(v + 1, u)) - f64::from(frame.get(v - 1, u));
                let mag = (gx * gx + gy * gy).sqrt();
                if mag < 1e-12 {
                    continue;
                }
                let theta = gy.atan2(gx); // (-pi, pi]
                let frac = (theta + std::f64::consts::PI) / std::f64::consts::TAU;
                let bin = ((frac * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
                let cell = (v * HIST_GRID / h) * HIST_GRID + (u * HIST_GRID / w);
                hist[cell][bin] += mag;
            }
        }
        for cell in &mut hist {
            let total: f64 = cell.iter().sum();
            if total < 1e-12 {
                *cell = [1.0 / HIST_BINS as f64; HIST_BINS];
            } else {
                for b in cell.iter_mut() {
                    *b /= total;
                }
            }
            features.extend_from_slice(cell);
        }

        // Block variances (population).
        for bv in 0..BLOCK_GRID {
            for bu in 0..BLOCK_GRID {
                let mut sq = 0.0;
                for v in bv * bh..(bv + 1) * bh {
                    for u in bu * bw..(bu + 1) * bw {
                        let d = f64::from(frame.get(v, u)) - means[bv][bu];
                        sq += d * d;
                    }
                }
                features.push(sq / (bh * bw) as f64);
            }
        }

        features.resize(EMBED_DIM, 0.0);
        let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
        debug_assert!(norm > 0.0, "histogram mass keeps the norm positive");
        for f in &mut features {
            *f /= norm;
        }
        Ok(Embedding { vector: features })
    }
}

/// Dot product of two unit embeddings, clamped into [-1, 1].
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, FilterError> {
    if a.dim() != b.dim() {
        return Err(FilterError::DimensionMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// One trajectory to score: its terminal synthesized frame and the real
/// expert frame at the same viewing pose.
#[derive(Debug, Clone, Copy)]
pub struct FilterCandidate<'a> {
    pub id: u64,
    pub terminal: &'a Frame,
    pub anchor: &'a Frame,
}

/// Audit record of one filtering round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    /// `(id, score)` in input order.
    pub scores: Vec<(u64, f64)>,
    pub threshold: f64,
    pub retained: Vec<u64>,
    pub discarded: Vec<u64>,
    /// What this batch spans (task, round).
    pub scope: String,
    /// Set when a singleton batch was retained unconditionally.
    pub singleton_warning: bool,
}

impl FilterReport {
    pub fn retained_fraction(&self) -> f64 {
        self.retained.len() as f64 / self.scores.len().max(1) as f64
    }
}

/// Score every candidate, set the threshold to the batch-mean score, and
/// retain candidates scoring at or above it (ties retained). Scoring runs
/// in parallel; thresholding is the fan-in.
pub fn filter_batch(
    embedder: &dyn FrameEmbedder,
    candidates: &[FilterCandidate],
    scope: &str,
) -> Result<FilterReport, FilterError> {
    if candidates.is_empty() {
        return Err(FilterError::EmptyBatch);
    }
    let scored: Vec<Result<(u64, f64), FilterError>> = par::map_slice(candidates, |c| {
        let a = embedder.embed(c.terminal)?;
        let b = embedder.embed(c.anchor)?;
        Ok((c.id, cosine_similarity(&a, &b)?))
    });
    let mut scores = Vec::with_capacity(scored.len());
    for s in scored {
        scores.push(s?);
    }
    let threshold = scores.iter().map(|(_, s)| s).sum::<f64>() / scores.len() as f64;
    let mut retained = Vec::new();
    let mut discarded = Vec::new();
    for (id, s) in &scores {
        if *s >= threshold {
            retained.push(*id);
        } else {
            discarded.push(*id);
        }
    }
    Ok(FilterReport {
        scores,
        threshold,
        retained,
        discarded,
        scope: scope.to_string(),
        singleton_warning: candidates.len() == 1,
    })
}
