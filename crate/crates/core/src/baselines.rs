//! Deterministic full-gradient solvers: gradient descent, L-BFGS with backtracking,
//! and the one-pass SGD warm start.

use std::collections::VecDeque;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::losses::{full_gradient, objective_change, objective_value, smoothness_constants, Objective};
use crate::vecops::{dot, norm};
use crate::{sampler, Error, Result};

/// Sufficient-decrease constant of the Armijo test.
pub const ARMIJO_C1: f64 = 1e-4;
/// Backtracking gives up after this many halvings.
pub const MAX_HALVINGS: usize = 60;
/// Relative curvature threshold for keeping a correction pair.
pub const CURVATURE_TOL: f64 = 1e-12;
/// Stream reserved for the warm-start permutation.
const WARMSTART_STREAM: u64 = 1 << 41;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GdStep {
    /// `1 / L` with `L` the smoothness of the averaged objective.
    InverseL,
    Explicit(f64),
    /// Backtracking from a unit step.
    Armijo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdRun {
    pub w: Vec<f64>,
    /// Objective before the first step and after every step.
    pub trace: Vec<f64>,
    /// Accepted step lengths.
    pub steps: Vec<f64>,
}

/// Plain gradient descent for `steps` iterations.
///
/// Fails with [`Error::Diverged`] once the objective exceeds ten times its starting
/// magnitude.
pub fn gd_run(obj: &Objective, data: &Dataset, w0: &[f64], steps: usize, rule: GdStep) -> Result<GdRun> {
    obj.validate()?;
    let fixed = match rule {
        GdStep::InverseL => Some(1.0 / smoothness_constants(obj, data)?.l_full),
        GdStep::Explicit(g) if g > 0.0 && g.is_finite() => Some(g),
        GdStep::Explicit(g) => return Err(Error::InvalidArgument(format!("step size must be positive, got {g}"))),
        GdStep::Armijo => None,
    };
    let mut w = w0.to_vec();
    let f0 = objective_value(obj, data, &w)?;
    let mut trace = vec![f0];
    let mut lengths = Vec::with_capacity(steps);
    for step in 1..=steps {
        let g = full_gradient(obj, data, &w)?;
        let d: Vec<f64> = g.iter().map(|v| -v).collect();
        let alpha = match fixed {
            Some(a) => a,
            None => {
                if norm(&g) == 0.0 {
                    trace.push(*trace.last().unwrap());
                    lengths.push(0.0);
                    continue;
                }
                backtrack(obj, data, &w, &g, &d, step)?.0
            }
        };
        w.iter_mut().zip(&d).for_each(|(wi, di)| *wi += alpha * di);
        let f = objective_value(obj, data, &w)?;
        if !f.is_finite() || f > 10.0 * f0.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { step, value: f, start: f0 });
        }
        trace.push(f);
        lengths.push(alpha);
    }
    Ok(GdRun { w, trace, steps: lengths })
}

/// Armijo backtracking from a unit step. Returns the accepted step, the objective
/// change it produced and the number of trial evaluations.
fn backtrack(obj: &Objective, data: &Dataset, w: &[f64], g: &[f64], d: &[f64], iteration: usize) -> Result<(f64, f64, usize)> {
    let slope = dot(g, d);
    let mut alpha = 1.0;
    for trial in 0..=MAX_HALVINGS {
        let change = objective_change(obj, data, w, d, alpha)?;
        if change <= ARMIJO_C1 * alpha * slope {
            return Ok((alpha, change, trial + 1));
        }
        alpha *= 0.5;
    }
    Err(Error::LineSearch { iteration, halvings: MAX_HALVINGS, grad_norm: norm(g), w: w.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored correction pairs; 0 gives line-searched gradient descent.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the gradient norm is at or below this.
    pub tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, max_iters: 1000, tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsState {
    pub w: Vec<f64>,
    history: VecDeque<(Vec<f64>, Vec<f64>)>,
    pub m: usize,
    pub iteration: usize,
}

impl LbfgsState {
    pub fn new(w0: &[f64], m: usize) -> Self {
        Self { w: w0.to_vec(), history: VecDeque::with_capacity(m), m, iteration: 0 }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Keeps the pair only if it has positive curvature, `sᵀy > 1e-12·‖s‖‖y‖`.
    ///
    /// The test is relative so that pairs from tiny steps near the optimum still count.
    pub fn push_pair(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        if self.m == 0 || dot(&s, &y) <= CURVATURE_TOL * norm(&s) * norm(&y) {
            return false;
        }
        if self.history.len() == self.m {
            self.history.pop_front();
        }
        self.history.push_back((s, y));
        true
    }

    /// Two-loop recursion: `-H g` for the implicit inverse-Hessian approximation.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y) in self.history.iter().rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        let h0 = match self.history.back() {
            Some((s, y)) => dot(s, y) / dot(y, y),
            None => 1.0,
        };
        let mut r: Vec<f64> = q.iter().map(|v| v * h0).collect();
        for ((s, y), (a, rho)) in self.history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &r);
            r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (a - b) * si);
        }
        r.iter_mut().for_each(|v| *v = -*v);
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsIteration {
    pub iteration: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step: f64,
    /// `gᵀd` of the accepted direction.
    pub slope: f64,
    /// `f(w + αd) - f(w)` of the accepted step.
    pub decrease: f64,
    /// Cumulative data passes, counting every function trial and gradient.
    pub passes: usize,
}

#[derive(Debug, Clone)]
pub struct LbfgsRun {
    pub w: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub passes: usize,
    pub trace: Vec<LbfgsIteration>,
}

/// L-BFGS with Armijo backtracking. Stops when `‖g‖ ≤ tol` or after `max_iters`
/// iterations (reported through `converged`).
pub fn lbfgs_run(obj: &Objective, data: &Dataset, w0: &[f64], config: LbfgsConfig) -> Result<LbfgsRun> {
    obj.validate()?;
    let mut state = LbfgsState::new(w0, config.memory);
    let mut f = objective_value(obj, data, &state.w)?;
    let mut g = full_gradient(obj, data, &state.w)?;
    let mut passes = 2;
    let mut trace = Vec::new();
    while norm(&g) > config.tol && state.iteration < config.max_iters {
        state.iteration += 1;
        let mut d = state.direction(&g);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // lost descent through round-off; restart from steepest descent
            state.history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let (alpha, change, trials) = backtrack(obj, data, &state.w, &g, &d, state.iteration)?;
        passes += trials;
        let s: Vec<f64> = d.iter().map(|di| alpha * di).collect();
        state.w.iter_mut().zip(&s).for_each(|(wi, si)| *wi += si);
        let g_new = full_gradient(obj, data, &state.w)?;
        passes += 1;
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        state.push_pair(s, y);
        g = g_new;
        f += change;
        trace.push(LbfgsIteration {
            iteration: state.iteration,
            f,
            grad_norm: norm(&g),
            step: alpha,
            slope,
            decrease: change,
            passes,
        });
    }
    let f = objective_value(obj, data, &state.w)?;
    let grad_norm = norm(&g);
    Ok(LbfgsRun { converged: grad_norm <= config.tol, w: state.w, f, grad_norm, passes, trace })
}

/// One pass of plain SGD over a seeded permutation, step `1/(3L)/√(i+1)`.
pub fn sgd_warmstart(obj: &Objective, data: &Dataset, w0: &[f64], seed: u64) -> Result<Vec<f64>> {
    obj.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if w0.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: w0.len() });
    }
    let base = 1.0 / (3.0 * smoothness_constants(obj, data)?.l);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut sampler(seed, WARMSTART_STREAM));
    let mut w = w0.to_vec();
    for (i, &j) in order.iter().enumerate() {
        let ex = &data.examples()[j];
        let gamma = base / ((i + 1) as f64).sqrt();
        let a = obj.stat_at_margin(ex.label, ex.dot(&w));
        for (k, wk) in w.iter_mut().enumerate() {
            let lin = obj.linear_term().map_or(0.0, |c| c[k]);
            *wk -= gamma * (obj.lambda * *wk + lin);
        }
        ex.axpy(-gamma * a, &mut w);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian, Covariance, Example, Labeling};
    use crate::losses::QuadraticForm;
    use crate::vecops::dist;
    use nalgebra::{DMatrix, DVector};

    fn scalar(h: f64, center: f64) -> Dataset {
        // ½(√h w - √h c)² has curvature h and minimiser c
        let r = h.sqrt();
        Dataset::new(vec![Example::dense(r * center, &[r]).unwrap()], None).unwrap()
    }

    /// Least-squares data whose Hessian is exactly `h` (rows of the symmetric root, scaled).
    fn data_with_hessian(h: &DMatrix<f64>, center: &DVector<f64>) -> Dataset {
        let d = h.nrows();
        let root = nalgebra::SymmetricEigen::new(h.clone());
        let s = &root.eigenvectors * DMatrix::from_diagonal(&root.eigenvalues.map(f64::sqrt)) * root.eigenvectors.transpose();
        let scale = (d as f64).sqrt();
        let rows: Vec<Example> = (0..d)
            .map(|i| {
                let x: Vec<f64> = (0..d).map(|j| s[(i, j)] * scale).collect();
                let y: f64 = x.iter().zip(center.iter()).map(|(a, b)| a * b).sum();
                Example::dense(y, &x).unwrap()
            })
            .collect();
        Dataset::new(rows, Some(d)).unwrap()
    }

    fn random_pd(d: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        use rand::Rng;
        let mut rng = sampler(seed, 99);
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let h = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
        let c = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        (h, c)
    }

    #[test]
    fn gd_stays_at_optimum() {
        let data = scalar(3.0, 1.5);
        let run = gd_run(&Objective::quadratic(0.0), &data, &[1.5], 5, GdStep::InverseL).unwrap();
        assert_eq!(run.w, vec![1.5]);
    }

    #[test]
    fn gd_newton_sized_step() {
        let data = scalar(2.0, 4.0);
        let run = gd_run(&Objective::quadratic(0.0), &data, &[0.0], 1, GdStep::Explicit(0.5)).unwrap();
        assert!((run.w[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn gd_rate_on_ill_conditioned_quadratic() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 10.0]));
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let data = data_with_hessian(&h, &c);
        let obj = Objective::quadratic(0.0);
        let q = QuadraticForm::from_least_squares(&data, 0.0).unwrap();
        let f_star = q.value(q.center().as_slice());
        let run = gd_run(&obj, &data, &[5.0, 5.0, 5.0], 60, GdStep::InverseL).unwrap();
        let kappa: f64 = 10.0;
        let bound = (1.0 - 1.0 / kappa).powi(2);
        let excess: Vec<f64> = run.trace.iter().map(|f| f - f_star).collect();
        for w in excess[40..].windows(2) {
            assert!(w[1] / w[0] <= bound + 1e-6, "{} > {bound}", w[1] / w[0]);
        }
    }

    #[test]
    fn gd_detects_divergence() {
        let data = scalar(2.0, 1.0);
        let err = gd_run(&Objective::quadratic(0.0), &data, &[0.0], 50, GdStep::Explicit(5.0)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn lbfgs_identity_hessian_one_iteration() {
        let h = DMatrix::identity(4, 4);
        let c = DVector::from_vec(vec![1.0, 2.0, -3.0, 0.5]);
        let data = data_with_hessian(&h, &c);
        let run = lbfgs_run(&Objective::quadratic(0.0), &data, &[0.0; 4], LbfgsConfig::default()).unwrap();
        assert_eq!(run.trace.len(), 1);
        assert_eq!(run.trace[0].step, 1.0);
        assert!(dist(&run.w, c.as_slice()) < 1e-10);
    }

    #[test]
    fn lbfgs_returns_start_when_already_converged() {
        let data = scalar(2.0, 1.0);
        let run = lbfgs_run(&Objective::quadratic(0.0), &data, &[1.0], LbfgsConfig::default()).unwrap();
        assert!(run.trace.is_empty());
        assert_eq!(run.w, vec![1.0]);
        assert!(run.converged);
    }

    #[test]
    fn lbfgs_random_quadratic_matches_linear_solve() {
        for seed in 0..20 {
            let (h, c) = random_pd(10, seed);
            let data = data_with_hessian(&h, &c);
            let oracle = h.clone().cholesky().unwrap().solve(&(&h * &c));
            let run = lbfgs_run(&Objective::quadratic(0.0), &data, &[0.0; 10], LbfgsConfig::default()).unwrap();
            assert!(run.converged);
            assert!(run.trace.len() <= 20, "seed {seed}: {} iterations", run.trace.len());
            
            assert!(dist(&run.w, oracle.as_slice()) < 1e-8);
        }
    }

    #[test]
    fn lbfgs_iterations_descend_and_satisfy_armijo() {
        let data = generate_gaussian(300, 8, &Covariance::Identity, &Labeling::Classification, 2).unwrap();
        let obj = Objective::logistic(1e-3);
        let run = lbfgs_run(&obj, &data, &[0.0; 8], LbfgsConfig::default()).unwrap();
        assert!(run.converged);
        for it in &run.trace {
            assert!(it.slope < 0.0);
            assert!(it.decrease <= ARMIJO_C1 * it.step * it.slope);
        }
    }

    #[test]
    fn lbfgs_without_memory_is_armijo_gd() {
        let (h, c) = random_pd(6, 7);
        let data = data_with_hessian(&h, &c);
        let obj = Objective::quadratic(0.0);
        let w0 = [1.0; 6];
        let lb = lbfgs_run(&obj, &data, &w0, LbfgsConfig { memory: 0, max_iters: 25, tol: 0.0 }).unwrap();
        let gd = gd_run(&obj, &data, &w0, 25, GdStep::Armijo).unwrap();
        assert_eq!(lb.w, gd.w);
        let steps: Vec<f64> = lb.trace.iter().map(|t| t.step).collect();
        assert_eq!(steps, gd.steps);
    }

    #[test]
    fn curvature_filter() {
        let mut s = LbfgsState::new(&[0.0, 0.0], 2);
        assert!(!s.push_pair(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(s.push_pair(vec![1.0, 0.0], vec![1.0, 0.0]));
        assert!(s.push_pair(vec![0.0, 1.0], vec![0.0, 2.0]));
        assert!(s.push_pair(vec![1.0, 1.0], vec![1.0, 1.0]));
        assert_eq!(s.history_len(), 2);
        // tiny but well-curved pairs survive
        assert!(s.push_pair(vec![1e-9, 0.0], vec![2e-9, 0.0]));
        assert!(!s.push_pair(vec![1.0, 0.0], vec![0.0, 1.0]));
    }

    #[test]
    fn warmstart_single_example_is_one_gradient_step() {
        let data = Dataset::new(vec![Example::dense(1.0, &[1.0, 2.0]).unwrap()], None).unwrap();
        let obj = Objective::logistic(0.1);
        let w0 = [0.3, -0.2];
        let w = sgd_warmstart(&obj, &data, &w0, 4).unwrap();
        let gamma = 1.0 / (3.0 * smoothness_constants(&obj, &data).unwrap().l);
        let g = full_gradient(&obj, &data, &w0).unwrap();
        for i in 0..2 {
            assert!((w[i] - (w0[i] - gamma * g[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn warmstart_is_deterministic_and_helps() {
        let data = generate_gaussian(500, 10, &Covariance::Identity, &Labeling::Classification, 6).unwrap();
        let obj = Objective::logistic(0.05);
        let a = sgd_warmstart(&obj, &data, &[0.0; 10], 3).unwrap();
        let b = sgd_warmstart(&obj, &data, &[0.0; 10], 3).unwrap();
        assert_eq!(a, b);
        assert!(objective_value(&obj, &data, &a).unwrap() <= objective_value(&obj, &data, &[0.0; 10]).unwrap());
    }
}
