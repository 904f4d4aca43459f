//! Adafactor optimizer with factored second moments.
//!
//! Matrices keep one running row mean and one column mean of the squared
//! gradients instead of a full second-moment table; vectors keep the full
//! accumulator. Relative step sizing and parameter scaling are disabled:
//! the learning rate is supplied externally and ramped linearly over
//! `warmup_steps`. Weight decay is decoupled (applied to the parameter
//! directly, scaled by the current learning rate).

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdafactorConfig {
    /// (eps1, eps2): eps1 regularizes the squared-gradient accumulators;
    /// eps2 is the parameter-scale floor, unused while `scale_parameter`
    /// stays disabled but kept for config compatibility.
    pub eps: (f64, f64),
    /// Updates with RMS above this are rescaled down to it.
    pub clip_threshold: f64,
    /// Exponent c in beta2_t = 1 - t^c (negative).
    pub decay_rate: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    /// Base learning rate (constant after warmup).
    pub learning_rate: f64,
    /// Linear warmup horizon in steps; 0 disables warmup.
    pub warmup_steps: u64,
}

impl Default for AdafactorConfig {
    fn default() -> Self {
        AdafactorConfig {
            eps: (1e-30, 1e-3),
            clip_threshold: 1.0,
            decay_rate: -0.8,
            weight_decay: 0.1,
            learning_rate: 0.15,
            warmup_steps: 500,
        }
    }
}

enum Accumulator {
    /// Row and column means of squared gradients for rank-2 parameters.
    Factored { rows: Vec<f64>, cols: Vec<f64> },
    /// Dense accumulator for rank-0/1 parameters.
    Full(Vec<f64>),
}

/// Optimizer state bound to a fixed set of parameters.
pub struct AdafactorState {
    params: Vec<Tensor>,
    accumulators: Vec<Accumulator>,
    step_counter: u64,
    config: AdafactorConfig,
}

impl AdafactorState {
    pub fn new(params: Vec<Tensor>, config: AdafactorConfig) -> AdafactorState {
        let accumulators = params
            .iter()
            .map(|p| {
                let s = p.shape();
                if s.len() == 2 && s[0] > 1 && s[1] > 1 {
                    Accumulator::Factored {
                        rows: vec![0.0; s[0]],
                        cols: vec![0.0; s[1]],
                    }
                } else {
                    Accumulator::Full(vec![0.0; p.numel()])
                }
            })
            .collect();
        AdafactorState {
            params,
            accumulators,
            step_counter: 0,
            config,
        }
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn config(&self) -> &AdafactorConfig {
        &self.config
    }

    /// Learning rate at step `t` (1-indexed) under linear warmup.
    fn lr_at(&self, t: u64) -> f64 {
        let base = self.config.learning_rate;
        if self.config.warmup_steps == 0 {
            base
        } else {
            base * ((t as f64) / (self.config.warmup_steps as f64)).min(1.0)
        }
    }

    /// One optimizer step over all bound parameters: update from factored
    /// second moments, RMS clipping, decoupled weight decay, then gradient
    /// clearing. Errors if any parameter is missing its gradient.
    pub fn step(&mut self) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(Error::contract(format!(
                    "adafactor step: parameter {i} has no gradient"
                )));
            }
        }
        self.step_counter += 1;
        let t = self.step_counter;
        let lr = self.lr_at(t);
        let beta2t = 1.0 - (t as f64).powf(self.config.decay_rate);
        let eps1 = self.config.eps.0;

        for (p, acc) in self.params.iter().zip(self.accumulators.iter_mut()) {
            let grad = p.grad().expect("checked above");
            let update = match acc {
                Accumulator::Factored { rows, cols } => {
                    let s = p.shape();
                    let (r, c) = (s[0], s[1]);
                    // squared gradient with regularizer
                    let mut row_mean = vec![0.0; r];
                    let mut col_mean = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            let g2 = grad[i * c + j] * grad[i * c + j] + eps1;
                            row_mean[i] += g2 / c as f64;
                            col_mean[j] += g2 / r as f64;
                        }
                    }
                    for i in 0..r {
                        rows[i] = beta2t * rows[i] + (1.0 - beta2t) * row_mean[i];
                    }
                    for j in 0..c {
                        cols[j] = beta2t * cols[j] + (1.0 - beta2t) * col_mean[j];
                    }
                    // rank-1 reconstruction: v_ij = rows_i * cols_j / mean(rows)
                    let row_total: f64 = rows.iter().sum();
                    let row_mean_all = row_total / r as f64;
                    let mut u = vec![0.0; r * c];
                    for i in 0..r {
                        let rf = (rows[i] / row_mean_all).sqrt();
                        for j in 0..c {
                            u[i * c + j] = grad[i * c + j] / (rf * cols[j].sqrt());
                        }
                    }
                    u
                }
                Accumulator::Full(v) => {
                    let mut u = vec![0.0; grad.len()];
                    for (j, g) in grad.iter().enumerate() {
                        let g2 = g * g + eps1;
                        v[j] = beta2t * v[j] + (1.0 - beta2t) * g2;
                        u[j] = g / v[j].sqrt();
                    }
                    u
                }
            };

            // clip update RMS to the threshold
            let rms =
                (update.iter().map(|x| x * x).sum::<f64>() / update.len() as f64).sqrt();
            let denom = (rms / self.config.clip_threshold).max(1.0);

            let wd = self.config.weight_decay;
            p.apply_update(|i, v| {
                if wd != 0.0 {
                    *v -= lr * wd * *v;
                }
                *v -= lr * update[i] / denom;
            });
            p.zero_grad();
        }
        Ok(())
    }
}
