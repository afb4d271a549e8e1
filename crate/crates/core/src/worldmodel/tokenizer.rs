//! Deterministic down-sampling tokenizer: frames enter the flow model as
//! block averages, and decode replicates blocks back to full resolution.
//! `decode(encode(f))` is exactly the block-averaged frame.

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::envsim::Frame;

#[derive(Debug, Error, PartialEq)]
pub enum TokenizerError {
    #[error("frame {h}x{w} not divisible by stride {stride}")]
    IndivisibleResolution { h: usize, w: usize, stride: usize },
}

/// Latent frame: `h x w` block means in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrame {
    pub tokens: Array2<f64>,
}

impl LatentFrame {
    pub fn flat(&self) -> Vec<f64> {
        self.tokens.iter().copied().collect()
    }

    pub fn from_flat(values: &[f64], h: usize, w: usize) -> LatentFrame {
        LatentFrame {
            tokens: Array2::from_shape_vec((h, w), values.to_vec()).expect("shape matches"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tokenizer {
    pub stride: usize,
}

impl Tokenizer {
    pub fn new(stride: usize) -> Tokenizer {
        assert!(stride >= 1);
        Tokenizer { stride }
    }

    pub fn latent_dims(&self, frame_h: usize, frame_w: usize) -> (usize, usize) {
        (frame_h / self.stride, frame_w / self.stride)
    }

    /// Block-mean the frame; accumulation is row-major `f64`.
    pub fn encode(&self, frame: &Frame) -> Result<LatentFrame, TokenizerError> {
        let (h, w) = (frame.height(), frame.width());
        let s = self.stride;
        if h % s != 0 || w % s != 0 {
            return Err(TokenizerError::IndivisibleResolution { h, w, stride: s });
        }
        let (lh, lw) = (h / s, w / s);
        let mut tokens = Array2::zeros((lh, lw));
        let count = (s * s) as f64;
        for bv in 0..lh {
            for bu in 0..lw {
                let mut sum = 0.0f64;
                for v in bv * s..(bv + 1) * s {
                    for u in bu * s..(bu + 1) * s {
                        sum += f64::from(frame.get(v, u));
                    }
                }
                tokens[(bv, bu)] = sum / count;
            }
        }
        Ok(LatentFrame { tokens })
    }

    /// Replicate each token over its block, clamped into [0, 1].
    pub fn decode(&self, latent: &LatentFrame) -> Frame {
        let (lh, lw) = latent.tokens.dim();
        let s = self.stride;
        let mut pixels = Array3::zeros((lh * s, lw * s, 1));
        for bv in 0..lh {
            for bu in 0..lw {
                let value = latent.tokens[(bv, bu)].clamp(0.0, 1.0) as f32;
                for v in bv * s..(bv + 1) * s {
                    for u in bu * s..(bu + 1) * s {
                        pixels[(v, u, 0)] = value;
                    }
                }
            }
        }
        Frame::new(pixels)
    }
}
