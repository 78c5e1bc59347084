//! Distributed SAGA on a simulated synchronous cluster.
//!
//! Each round every node
//!
//! 1. restarts from the average `w^{t,0}` of the previous round's end points,
//! 2. runs the *local gradient pass*, computing its exact shard gradient `g_k(w^{t,0})`,
//! 3. runs SAGA on the corrected local objective
//!    `f_k^t(w) = f_k(w) + (ḡ - g_k(w^{t,0}))·w`, where `ḡ` is the average of the
//!    gradient estimates received at the last synchronisation,
//! 4. sends its parameters and gradient estimate ([`SyncMessage`]).
//!
//! Node loops may run in parallel; each node owns its sampler stream, so results do not
//! depend on scheduling.

use rayon::prelude::*;

use crate::data::Shard;
use crate::losses::{full_gradient, Objective, QuadraticForm};
use crate::saga::{SagaState, StepRule};
use crate::{sampler, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolve {
    /// `U` passes of sampled SAGA steps.
    Iterative,
    /// Jump to the stationary point of the corrected local objective (quadratic losses only).
    Exact,
}

/// Which gradient a node reports at synchronisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncGradient {
    /// Average of the node's stored gradients, `ĝ_k`. Costs nothing.
    StoredAverage,
    /// Exact shard gradient at the node's end point. Costs one extra pass per round.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    /// Optimisation passes over the local shard between synchronisations.
    pub u: usize,
    pub rounds: usize,
    pub seed: u64,
    pub step_rule: StepRule,
    pub inner: InnerSolve,
    /// Local gradient pass also resets every memory cell to the round's start point.
    pub refresh_memory: bool,
    pub sync_gradient: SyncGradient,
    /// Worker threads for node loops; `None` means one per node.
    pub threads: Option<usize>,
    /// Keep every node's iterate after each local pass (needed by the rate report).
    pub record_passes: bool,
}

impl ClusterConfig {
    pub fn new(k: usize, u: usize, rounds: usize, seed: u64) -> Self {
        Self {
            k,
            u,
            rounds,
            seed,
            step_rule: StepRule::Auto,
            inner: InnerSolve::Iterative,
            refresh_memory: true,
            sync_gradient: SyncGradient::StoredAverage,
            threads: None,
            record_passes: false,
        }
    }

    pub fn validate(&self, obj: &Objective) -> Result<()> {
        if self.k == 0 || self.u == 0 || self.rounds == 0 {
            return Err(Error::InvalidArgument(format!(
                "K, U and T must be at least 1 (got K={}, U={}, T={})",
                self.k, self.u, self.rounds
            )));
        }
        if self.inner == InnerSolve::Exact && !obj.is_quadratic() {
            return Err(Error::RequiresQuadratic { what: "exact inner solve" });
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        Ok(())
    }

    /// Data passes charged per round: `U` optimisation passes plus the local gradient
    /// pass, plus one more when exact gradients are sent.
    pub fn passes_per_round(&self) -> usize {
        self.u + 1 + usize::from(self.sync_gradient == SyncGradient::Exact)
    }
}

/// What a node sends at a synchronisation barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncMessage {
    pub node_id: usize,
    pub params: Vec<f64>,
    pub grad_estimate: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    inner: SagaState,
    anchor_grad: Vec<f64>,
    global_avg_grad: Vec<f64>,
    refresh_memory: bool,
    quadratic: Option<QuadraticForm>,
}

impl NodeState {
    /// Memory filled at `w0`; the sampler is stream `node_id` of `config.seed`.
    pub fn new(obj: &Objective, shard: &Shard, w0: &[f64], config: &ClusterConfig) -> Result<Self> {
        let inner = SagaState::new(obj, &shard.data, w0, config.step_rule, sampler(config.seed, shard.node_id as u64))?;
        let quadratic = match config.inner {
            InnerSolve::Exact => {
                if !obj.is_quadratic() || obj.linear_term().is_some() {
                    return Err(Error::RequiresQuadratic { what: "exact inner solve" });
                }
                Some(QuadraticForm::from_least_squares(&shard.data, obj.lambda)?)
            }
            InnerSolve::Iterative => None,
        };
        let d = w0.len();
        Ok(Self {
            node_id: shard.node_id,
            inner,
            anchor_grad: vec![0.0; d],
            global_avg_grad: vec![0.0; d],
            refresh_memory: config.refresh_memory,
            quadratic,
        })
    }

    pub fn w(&self) -> &[f64] {
        self.inner.w()
    }

    pub fn saga(&self) -> &SagaState {
        &self.inner
    }

    pub fn anchor_grad(&self) -> &[f64] {
        &self.anchor_grad
    }

    pub fn global_avg_grad(&self) -> &[f64] {
        &self.global_avg_grad
    }

    /// Installs the broadcast start point and gradient average.
    pub fn begin_round(&mut self, w_start: &[f64], global_avg_grad: &[f64]) {
        self.inner.set_w(w_start);
        self.global_avg_grad.copy_from_slice(global_avg_grad);
    }

    /// Recomputes `g_k(w^{t,0})` exactly (one pass over the shard).
    pub fn local_gradient_pass(&mut self, obj: &Objective, shard: &Shard) -> Result<()> {
        if self.refresh_memory {
            self.inner.refresh_memory(obj, &shard.data);
            self.anchor_grad = self.inner.gradient_estimate(obj);
        } else {
            self.anchor_grad = full_gradient(obj, &shard.data, self.inner.w())?;
        }
        Ok(())
    }

    /// `ḡ - g_k(w^{t,0})`, the constant added to every local gradient this round.
    pub fn correction(&self) -> Vec<f64> {
        self.global_avg_grad.iter().zip(&self.anchor_grad).map(|(g, a)| g - a).collect()
    }

    /// The corrected local objective `f_k^t` (up to an additive constant).
    pub fn surrogate(&self, obj: &Objective) -> Objective {
        surrogate_objective(obj, &self.anchor_grad, &self.global_avg_grad)
    }

    /// One dSAGA update with a sampled index.
    pub fn dsaga_step(&mut self, obj: &Objective, shard: &Shard) {
        let surrogate = self.surrogate(obj);
        self.inner.step(&surrogate, &shard.data);
    }

    /// One dSAGA update on example `j`:
    /// `w ← w + γ g_k(w^{t,0}) - γ ḡ - γ[g_j(w) - g_j(φ_j) + ĝ_k(w)]`.
    pub fn dsaga_step_at(&mut self, obj: &Objective, shard: &Shard, j: usize) {
        let surrogate = self.surrogate(obj);
        self.inner.step_at(&surrogate, &shard.data, j);
    }

    /// Inner optimisation for one round; returns the iterate after each local pass
    /// when `record` is set (a single entry in exact mode).
    pub fn run_inner_round(&mut self, obj: &Objective, shard: &Shard, passes: usize, record: bool) -> Result<Vec<Vec<f64>>> {
        let mut trail = Vec::new();
        match &self.quadratic {
            Some(q) => {
                let target: Vec<f64> = self.anchor_grad.iter().zip(&self.global_avg_grad).map(|(a, g)| a - g).collect();
                let w = q.stationary_point(&target);
                self.inner.set_w(&w);
                // a converged inner loop has every memory cell at the end point
                self.inner.refresh_memory(obj, &shard.data);
                if record {
                    trail.push(w);
                }
            }
            None => {
                let surrogate = self.surrogate(obj);
                let n = shard.local_count();
                for _ in 0..passes {
                    self.inner.run_steps(&surrogate, &shard.data, n);
                    if record {
                        trail.push(self.inner.w().to_vec());
                    }
                }
            }
        }
        Ok(trail)
    }

    pub fn message(&self, obj: &Objective, shard: &Shard, mode: SyncGradient) -> Result<SyncMessage> {
        let grad_estimate = match mode {
            SyncGradient::StoredAverage => self.inner.gradient_estimate(obj),
            SyncGradient::Exact => full_gradient(obj, &shard.data, self.inner.w())?,
        };
        Ok(SyncMessage { node_id: self.node_id, params: self.inner.w().to_vec(), grad_estimate })
    }
}

/// `f_k + (ḡ - g_k(w^{t,0}))·w`: the objective a node's inner loop minimises.
pub fn surrogate_objective(obj: &Objective, anchor_grad: &[f64], global_avg_grad: &[f64]) -> Objective {
    let mut c: Vec<f64> = global_avg_grad.iter().zip(anchor_grad).map(|(g, a)| g - a).collect();
    if let Some(base) = obj.linear_term() {
        c.iter_mut().zip(base).for_each(|(ci, b)| *ci += b);
    }
    obj.clone().with_linear_term(c)
}

/// Coordinate-wise averages of parameters and gradient estimates over exactly one
/// message per node `0..k`.
pub fn synchronize(messages: &[SyncMessage], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if messages.len() != k {
        return Err(Error::Sync(format!("expected {k} messages, got {}", messages.len())));
    }
    let mut by_node: Vec<Option<&SyncMessage>> = vec![None; k];
    for m in messages {
        let slot = by_node
            .get_mut(m.node_id)
            .ok_or_else(|| Error::Sync(format!("unknown node id {}", m.node_id)))?;
        if slot.is_some() {
            return Err(Error::Sync(format!("duplicate message from node {}", m.node_id)));
        }
        *slot = Some(m);
    }
    let d = messages[0].params.len();
    let mut w = vec![0.0; d];
    let mut g = vec![0.0; d];
    for m in by_node.into_iter().flatten() {
        if m.params.len() != d || m.grad_estimate.len() != d {
            return Err(Error::Sync(format!("node {} sent vectors of the wrong dimension", m.node_id)));
        }
        w.iter_mut().zip(&m.params).for_each(|(a, b)| *a += b);
        g.iter_mut().zip(&m.grad_estimate).for_each(|(a, b)| *a += b);
    }
    let kf = k as f64;
    w.iter_mut().for_each(|v| *v /= kf);
    g.iter_mut().for_each(|v| *v /= kf);
    Ok((w, g))
}

/// Everything observed during one synchronisation round.
#[derive(Debug, Clone)]
pub struct RoundSnapshot {
    /// 1-based round index.
    pub round: usize,
    /// `w^{t,0}`, identical on every node.
    pub start: Vec<f64>,
    /// Gradient average used by every node this round.
    pub global_avg_grad: Vec<f64>,
    /// `g_k(w^{t,0})` per node.
    pub anchors: Vec<Vec<f64>>,
    /// Per node, the iterate after each local pass (empty unless recorded).
    pub passes: Vec<Vec<Vec<f64>>>,
    /// Per node end-of-round parameters `w_k^{t,U}`.
    pub ends: Vec<Vec<f64>>,
    /// Messages exchanged at the end of the round.
    pub messages: Vec<SyncMessage>,
    /// Average of the end points, the next round's start.
    pub next_start: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DsagaRun {
    pub config: ClusterConfig,
    /// Final averaged parameters.
    pub w: Vec<f64>,
    pub rounds: Vec<RoundSnapshot>,
}

impl DsagaRun {
    /// Cumulative optimisation passes after round `t` (1-based).
    pub fn passes_opt(&self, t: usize) -> usize {
        self.config.u * t
    }

    /// Cumulative passes after round `t`, including local gradient passes.
    pub fn passes_total(&self, t: usize) -> usize {
        self.config.passes_per_round() * t
    }
}

/// Runs `config.rounds` dSAGA rounds from the shared start point `w0`.
///
/// Before round 1 every node reports `(w0, g_k(w0))`, so the first round has the same
/// structure as all later ones.
pub fn run_dsaga(obj: &Objective, shards: &[Shard], config: &ClusterConfig, w0: &[f64]) -> Result<DsagaRun> {
    config.validate(obj)?;
    if shards.len() != config.k {
        return Err(Error::InvalidArgument(format!("{} shards for K = {}", shards.len(), config.k)));
    }
    for (i, s) in shards.iter().enumerate() {
        if s.node_id != i {
            return Err(Error::InvalidArgument(format!("shard {i} has node id {}", s.node_id)));
        }
        if s.data.dim() != w0.len() {
            return Err(Error::DimensionMismatch { expected: w0.len(), got: s.data.dim() });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(config.k).max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    pool.install(|| {
        let mut nodes = shards
            .par_iter()
            .map(|s| NodeState::new(obj, s, w0, config))
            .collect::<Result<Vec<_>>>()?;
        let bootstrap = shards
            .par_iter()
            .map(|s| {
                Ok(SyncMessage { node_id: s.node_id, params: w0.to_vec(), grad_estimate: full_gradient(obj, &s.data, w0)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut w_start, mut global) = synchronize(&bootstrap, config.k)?;

        let mut rounds = Vec::with_capacity(config.rounds);
        for round in 1..=config.rounds {
            let outcomes = nodes
                .par_iter_mut()
                .zip(shards.par_iter())
                .map(|(node, shard)| {
                    node.begin_round(&w_start, &global);
                    node.local_gradient_pass(obj, shard)?;
                    let trail = node.run_inner_round(obj, shard, config.u, config.record_passes)?;
                    let msg = node.message(obj, shard, config.sync_gradient)?;
                    Ok((node.anchor_grad.clone(), trail, msg))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut anchors = Vec::with_capacity(config.k);
            let mut passes = Vec::with_capacity(config.k);
            let mut messages = Vec::with_capacity(config.k);
            for (a, p, m) in outcomes {
                anchors.push(a);
                passes.push(p);
                messages.push(m);
            }
            let (next_start, next_global) = synchronize(&messages, config.k)?;
            rounds.push(RoundSnapshot {
                round,
                start: w_start,
                global_avg_grad: global,
                anchors,
                passes,
                ends: messages.iter().map(|m| m.params.clone()).collect(),
                messages,
                next_start: next_start.clone(),
            });
            w_start = next_start;
            global = next_global;
        }
        Ok(DsagaRun { config: config.clone(), w: w_start, rounds })
    })
}
