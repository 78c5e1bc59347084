//! Single-machine SAGA with a per-example stored-gradient memory.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::diagnostics::{excess_error, NodeLabel, TraceRecord};
use crate::losses::{full_gradient, objective_value, smoothness_constants, GradientStat, Objective};
use crate::{sampler, Error, Result};

/// The stored-gradient sum is rebuilt from memory every this many passes.
const REFRESH_PASSES: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `γ = 1/(3L)` with `L` the largest single-example smoothness constant.
    Auto,
    Explicit(f64),
}

impl StepRule {
    pub fn resolve(self, obj: &Objective, data: &Dataset) -> Result<f64> {
        let step = match self {
            StepRule::Auto => 1.0 / (3.0 * smoothness_constants(obj, data)?.l),
            StepRule::Explicit(g) => g,
        };
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {step}")));
        }
        Ok(step)
    }
}

/// Iterate, memory of per-example statistics and their running sum `Σ a_i x_i`.
#[derive(Debug, Clone)]
pub struct SagaState {
    w: Vec<f64>,
    memory: Vec<GradientStat>,
    grad_sum: Vec<f64>,
    step: f64,
    rng: ChaCha8Rng,
    steps: u64,
}

/// Fills the memory with gradients at `w0` and seeds the sampler (stream 0).
pub fn init_saga(obj: &Objective, data: &Dataset, w0: &[f64], rule: StepRule, seed: u64) -> Result<SagaState> {
    SagaState::new(obj, data, w0, rule, sampler(seed, 0))
}

impl SagaState {
    pub fn new(obj: &Objective, data: &Dataset, w0: &[f64], rule: StepRule, rng: ChaCha8Rng) -> Result<Self> {
        obj.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("SAGA needs at least one example".into()));
        }
        if w0.len() != data.dim() {
            return Err(Error::DimensionMismatch { expected: data.dim(), got: w0.len() });
        }
        let step = rule.resolve(obj, data)?;
        let mut state = Self {
            w: w0.to_vec(),
            memory: vec![GradientStat(0.0); data.len()],
            grad_sum: vec![0.0; data.dim()],
            step,
            rng,
            steps: 0,
        };
        state.refresh_memory(obj, data);
        Ok(state)
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn memory(&self) -> &[GradientStat] {
        &self.memory
    }

    pub fn grad_sum(&self) -> &[f64] {
        &self.grad_sum
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub(crate) fn set_w(&mut self, w: &[f64]) {
        self.w.copy_from_slice(w);
    }

    /// Replaces the memory and rebuilds the running sum.
    pub fn set_memory(&mut self, data: &Dataset, memory: Vec<GradientStat>) -> Result<()> {
        if memory.len() != data.len() {
            return Err(Error::DimensionMismatch { expected: data.len(), got: memory.len() });
        }
        self.memory = memory;
        self.rebuild_sum(data);
        Ok(())
    }

    /// Every memory cell set to the gradient at the current iterate (one data pass).
    pub fn refresh_memory(&mut self, obj: &Objective, data: &Dataset) {
        for (cell, ex) in self.memory.iter_mut().zip(data.examples()) {
            *cell = GradientStat(obj.stat(ex, &self.w));
        }
        self.rebuild_sum(data);
    }

    /// Recomputes `Σ a_i x_i` from memory, dropping accumulated rounding drift.
    pub fn rebuild_sum(&mut self, data: &Dataset) {
        self.grad_sum.iter_mut().for_each(|v| *v = 0.0);
        for (a, ex) in self.memory.iter().zip(data.examples()) {
            ex.axpy(a.0, &mut self.grad_sum);
        }
    }

    /// Memory-based gradient estimate `(1/N) Σ a_i x_i + λw` (plus linear term).
    pub fn gradient_estimate(&self, obj: &Objective) -> Vec<f64> {
        obj.assemble_gradient(&self.grad_sum, self.memory.len(), &self.w)
    }

    /// One SAGA update with a uniformly sampled index.
    pub fn step(&mut self, obj: &Objective, data: &Dataset) {
        let j = self.rng.random_range(0..data.len());
        self.step_at(obj, data, j);
    }

    /// One SAGA update on example `j`:
    /// `w ← w - γ[g_j(w) - g_j(φ_j) + (1/N)Σ g_i(φ_i)]`, then `φ_j ← w`.
    pub fn step_at(&mut self, obj: &Objective, data: &Dataset, j: usize) {
        let n = data.len();
        let ex = &data.examples()[j];
        let a_new = obj.stat(ex, &self.w);
        let delta = a_new - self.memory[j].0;
        let inv_n = 1.0 / n as f64;
        let gamma = self.step;
        match obj.linear_term() {
            None => {
                for (wi, si) in self.w.iter_mut().zip(&self.grad_sum) {
                    *wi -= gamma * (si * inv_n + obj.lambda * *wi);
                }
            }
            Some(c) => {
                for ((wi, si), ci) in self.w.iter_mut().zip(&self.grad_sum).zip(c) {
                    *wi -= gamma * (si * inv_n + obj.lambda * *wi + ci);
                }
            }
        }
        ex.axpy(-gamma * delta, &mut self.w);
        ex.axpy(delta, &mut self.grad_sum);
        self.memory[j] = GradientStat(a_new);
        self.steps += 1;
        if self.steps % (REFRESH_PASSES * n as u64) == 0 {
            self.rebuild_sum(data);
        }
    }

    pub fn run_steps(&mut self, obj: &Objective, data: &Dataset, steps: usize) {
        for _ in 0..steps {
            self.step(obj, data);
        }
    }
}

/// Runs `passes·N` sampled steps, recording objective and gradient norm every
/// `trace_every` passes.
pub fn run_saga(
    state: &mut SagaState,
    obj: &Objective,
    data: &Dataset,
    passes: usize,
    trace_every: usize,
) -> Result<Vec<TraceRecord>> {
    run_saga_with_reference(state, obj, data, passes, trace_every, None)
}

/// As [`run_saga`], also recording the excess error over `w_star` when given.
pub fn run_saga_with_reference(
    state: &mut SagaState,
    obj: &Objective,
    data: &Dataset,
    passes: usize,
    trace_every: usize,
    w_star: Option<&[f64]>,
) -> Result<Vec<TraceRecord>> {
    if passes == 0 || trace_every == 0 {
        return Err(Error::InvalidArgument("passes and trace_every must be at least 1".into()));
    }
    let mut records = Vec::new();
    for pass in 1..=passes {
        state.run_steps(obj, data, data.len());
        if pass % trace_every == 0 {
            let g = full_gradient(obj, data, state.w())?;
            records.push(TraceRecord {
                pass_opt: pass,
                pass_total: pass,
                f: objective_value(obj, data, state.w())?,
                grad_norm: Some(crate::vecops::norm(&g)),
                excess: w_star.map(|ws| excess_error(obj, data, ws, state.w())).transpose()?,
                ..TraceRecord::new(0, NodeLabel::Avg)
            });
        }
    }
    Ok(records)
}

/// Sum of reconstructed stored gradients recomputed from scratch (for consistency checks).
pub fn recomputed_sum(state: &SagaState, data: &Dataset) -> Vec<f64> {
    let mut sum = vec![0.0; data.dim()];
    for (a, ex) in state.memory().iter().zip(data.examples()) {
        ex.axpy(a.0, &mut sum);
    }
    sum
}
