//! L2-regularized hinge-loss linear classifier trained by averaged
//! stochastic subgradient descent.
//!
//! Objective: `lambda/2 * (|w|^2 + b^2) + mean_i max(0, 1 - y_i (w.x_i + b))`
//! with `lambda = 1 / (C m)`. Steps follow `eta_t = 1 / (1 + lambda t)`, so
//! the shrink factor telescopes to `1 / (1 + lambda T)` and never underflows.
//! Weights are kept as `scale * u` to make shrinking O(1); the running
//! average is maintained lazily per coordinate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DisambigError, SparseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            epochs: 20,
            seed: 0,
        }
    }
}

/// Objective after each epoch. `averaged` is the objective of the running
/// average at that epoch; `kept` is the objective of the iterate returned so
/// far (the best average seen).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub averaged: Vec<f64>,
    pub kept: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trace: TrainTrace,
}

impl LinearSvm {
    pub fn decision(&self, x: &SparseVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }
}

pub fn objective(data: &[(SparseVector, i8)], weights: &[f64], bias: f64, lambda: f64) -> f64 {
    let reg = weights.iter().map(|w| w * w).sum::<f64>() + bias * bias;
    let hinge: f64 = data
        .iter()
        .map(|(x, y)| (1.0 - f64::from(*y) * (x.dot(weights) + bias)).max(0.0))
        .sum();
    0.5 * lambda * reg + hinge / data.len() as f64
}

struct Averaged {
    u: Vec<f64>,
    acc: Vec<f64>,
    last: Vec<f64>,
    scale: f64,
    scale_sum: f64,
    steps: u64,
}

impl Averaged {
    fn new(dim: usize) -> Self {
        Averaged {
            u: vec![0.0; dim],
            acc: vec![0.0; dim],
            last: vec![0.0; dim],
            scale: 1.0,
            scale_sum: 0.0,
            steps: 0,
        }
    }

    fn add(&mut self, j: usize, delta: f64) {
        self.acc[j] += self.u[j] * (self.scale_sum - self.last[j]);
        self.last[j] = self.scale_sum;
        self.u[j] += delta / self.scale;
    }

    fn current(&self, j: usize) -> f64 {
        self.scale * self.u[j]
    }

    fn average(&self) -> Vec<f64> {
        let t = self.steps.max(1) as f64;
        (0..self.u.len())
            .map(|j| (self.acc[j] + self.u[j] * (self.scale_sum - self.last[j])) / t)
            .collect()
    }
}

/// `dim` is the feature dimension; the bias is kept as one extra
/// coordinate.
pub fn train_linear_svm(
    data: &[(SparseVector, i8)],
    dim: usize,
    config: &SvmConfig,
) -> Result<LinearSvm, DisambigError> {
    let has_pos = data.iter().any(|(_, y)| *y > 0);
    let has_neg = data.iter().any(|(_, y)| *y < 0);
    if !has_pos || !has_neg {
        return Err(DisambigError::DegenerateTrainingSet);
    }
    assert!(config.c > 0.0, "C must be positive");
    let lambda = 1.0 / (config.c * data.len() as f64);
    let bias_ix = dim;
    let mut state = Averaged::new(dim + 1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut trace = TrainTrace::default();
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &data[i];
            let y = f64::from(*y);
            let t = state.steps as f64 + 1.0;
            let eta = 1.0 / (1.0 + lambda * t);
            let margin = y
                * (x.entries()
                    .iter()
                    .map(|&(j, v)| state.current(j as usize) * v)
                    .sum::<f64>()
                    + state.current(bias_ix));
            state.scale *= 1.0 - eta * lambda;
            if margin < 1.0 {
                for &(j, v) in x.entries() {
                    state.add(j as usize, eta * y * v);
                }
                state.add(bias_ix, eta * y);
            }
            state.scale_sum += state.scale;
            state.steps += 1;
        }
        let mut avg = state.average();
        let b = avg.pop().expect("bias coordinate");
        let obj = objective(data, &avg, b, lambda);
        trace.averaged.push(obj);
        if best.as_ref().is_none_or(|(_, _, o)| obj <= *o) {
            best = Some((avg, b, obj));
        }
        trace.kept.push(best.as_ref().expect("set above").2);
    }
    let (weights, bias) = match best {
        Some((w, b, _)) => (w, b),
        None => (vec![0.0; dim], 0.0),
    };
    Ok(LinearSvm {
        weights,
        bias,
        trace,
    })
}
