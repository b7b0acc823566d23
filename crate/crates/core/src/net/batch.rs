//! Stacked training inputs.
//!
//! A batch of `B` trajectories padded to `T` steps. Per-step tensors are
//! `[B, ·]`; stacked tensors are `[T * B, ·]` with row `s * B + b` holding
//! step `s` (0-based) of trajectory `b`.

use super::{decoder_row, encoder_row, ModelConfig};
use crate::autodiff::Tensor;
use crate::data::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStep {
    /// `[a_{s+j-1}, v_{s+j}]` for decoder step `j`.
    pub rest: Tensor,
    /// `a_{s+j}`.
    pub a: Tensor,
    /// `y_{s+j+1}`.
    pub target: Tensor,
    pub mask: Tensor,
}

/// Encoder inputs and treatment bits of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub inputs: Vec<Tensor>,
    /// `a_s` per stacked row.
    pub a: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub steps: usize,
    pub lens: Vec<usize>,
    pub factual: Stream,
    pub corrupted: Option<Stream>,
    /// Rows that exist.
    pub step_mask: Tensor,
    /// `y_{s+1}` and whether it exists.
    pub next_y: Tensor,
    pub next_mask: Tensor,
    /// Decoder steps `j = 1 .. tau_max - 1`.
    pub decoder: Vec<DecoderStep>,
}

fn stream(trajs: &[&Trajectory], steps: usize, config: &ModelConfig) -> Stream {
    let b = trajs.len();
    let width = config.encoder_input();
    let mut inputs = Vec::with_capacity(steps);
    let mut a = Tensor::zeros(steps * b, config.k);
    for s in 0..steps {
        let mut m = Tensor::zeros(b, width);
        for (i, tr) in trajs.iter().enumerate() {
            if let Some(st) = tr.steps.get(s) {
                let prev = s.checked_sub(1).map(|p| tr.steps[p].a.as_slice());
                let row = encoder_row(&st.x, &st.v, prev, st.y, config.k);
                m.values_mut()[i * width..(i + 1) * width].copy_from_slice(&row);
                for (k, &bit) in st.a.iter().enumerate() {
                    a.set(s * b + i, k, bit as f64);
                }
            }
        }
        inputs.push(m);
    }
    Stream { inputs, a }
}

impl Batch {
    /// `corrupted[i]` must be the corruption of `factual[i]`.
    pub fn new(factual: &[&Trajectory], corrupted: Option<&[&Trajectory]>, config: &ModelConfig) -> Self {
        let b = factual.len();
        let steps = factual.iter().map(|t| t.len()).max().unwrap_or(0);
        let lens: Vec<usize> = factual.iter().map(|t| t.len()).collect();
        let n = steps * b;
        let mut step_mask = Tensor::zeros(n, 1);
        let mut next_y = Tensor::zeros(n, 1);
        let mut next_mask = Tensor::zeros(n, 1);
        for (i, tr) in factual.iter().enumerate() {
            for s in 0..tr.len() {
                step_mask.set(s * b + i, 0, 1.0);
                if s + 1 < tr.len() {
                    next_y.set(s * b + i, 0, tr.steps[s + 1].y);
                    next_mask.set(s * b + i, 0, 1.0);
                }
            }
        }
        let tail = config.decoder_input() - 1;
        let decoder = (1..config.tau_max)
            .map(|j| {
                let mut d = DecoderStep {
                    rest: Tensor::zeros(n, tail),
                    a: Tensor::zeros(n, config.k),
                    target: Tensor::zeros(n, 1),
                    mask: Tensor::zeros(n, 1),
                };
                for (i, tr) in factual.iter().enumerate() {
                    for s in 0..tr.len() {
                        let r = s * b + i;
                        if s + j + 1 >= tr.len() {
                            continue;
                        }
                        let row = decoder_row(&tr.steps[s + j - 1].a, &tr.steps[s + j].v);
                        d.rest.values_mut()[r * tail..(r + 1) * tail].copy_from_slice(&row);
                        for (k, &bit) in tr.steps[s + j].a.iter().enumerate() {
                            d.a.set(r, k, bit as f64);
                        }
                        d.target.set(r, 0, tr.steps[s + j + 1].y);
                        d.mask.set(r, 0, 1.0);
                    }
                }
                d
            })
            .collect();
        Self {
            rows: b,
            steps,
            lens,
            factual: stream(factual, steps, config),
            corrupted: corrupted.map(|c| stream(c, steps, config)),
            step_mask,
            next_y,
            next_mask,
            decoder,
        }
    }
}
