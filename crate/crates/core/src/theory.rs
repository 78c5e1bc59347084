//! Quadratic-case theory: shard Hessians, the pairwise contraction constant and
//! Wishart random-matrix limits.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::Shard;
use crate::losses::{check_symmetric, hessian_of_least_squares, Objective};
use crate::{sampler, Error, Result};

/// Dense matrices are formed explicitly; beyond this dimension the module refuses.
pub const MAX_DIM: usize = 2000;

const POWER_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ShardHessian {
    pub node_id: usize,
    /// `(1/N_k) Σ x xᵀ + λI`.
    pub h: DMatrix<f64>,
    /// Local minimiser, when the shard Hessian is invertible.
    pub center: Option<DVector<f64>>,
}

impl ShardHessian {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        self.h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite { context: Some(format!("Hessian of node {}", self.node_id)) })
    }
}

/// Hessians and local minimisers of every shard under a least-squares objective.
pub fn shard_hessians(obj: &Objective, shards: &[Shard]) -> Result<Vec<ShardHessian>> {
    if !obj.is_quadratic() {
        return Err(Error::RequiresQuadratic { what: "shard Hessians" });
    }
    if let Some(s) = shards.first() {
        check_dim(s.data.dim())?;
    }
    Ok(shards
        .iter()
        .map(|s| {
            let h = hessian_of_least_squares(&s.data, obj.lambda);
            let center = h.clone().cholesky().map(|c| {
                let mut b = DVector::zeros(s.data.dim());
                for ex in s.data.examples() {
                    for (i, v) in ex.features() {
                        b[i] += ex.label * v;
                    }
                }
                c.solve(&(b / s.data.len() as f64))
            });
            ShardHessian { node_id: s.node_id, h, center }
        })
        .collect())
}

fn check_dim(d: usize) -> Result<()> {
    if d > MAX_DIM {
        return Err(Error::InvalidArgument(format!("dense theory limited to d ≤ {MAX_DIM}, got {d}")));
    }
    Ok(())
}

/// The minimiser of `Σ_l ½(w - w_l*)ᵀ H_l (w - w_l*)`, i.e. the solution of
/// `(Σ H_l) w = Σ H_l w_l*`.
pub fn global_optimum(hessians: &[ShardHessian]) -> Result<DVector<f64>> {
    let first = hessians.first().ok_or_else(|| Error::InvalidArgument("no Hessians".into()))?;
    let d = first.dim();
    let mut sum = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for s in hessians {
        let c = s
            .center
            .as_ref()
            .ok_or_else(|| Error::NotPositiveDefinite { context: Some(format!("Hessian of node {}", s.node_id)) })?;
        sum += &s.h;
        rhs += &s.h * c;
    }
    let chol = sum.cholesky().ok_or_else(|| Error::NotPositiveDefinite { context: Some("global Hessian".into()) })?;
    Ok(chol.solve(&rhs))
}

/// Largest singular value, by power iteration on `MᵀM` from a fixed start vector.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let mtm = m.tr_mul(m);
    // slightly uneven start so it is not orthogonal to the top singular vector by symmetry
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let next = &mtm * &v;
        // Rayleigh quotient: converges at twice the rate of the iterate itself
        let rq = v.dot(&next);
        let nn = next.norm();
        if nn == 0.0 {
            return 0.0;
        }
        let done = (rq - lambda).abs() <= POWER_TOL * rq;
        lambda = rq;
        v = next / nn;
        if done {
            break;
        }
    }
    lambda.sqrt()
}

/// `I - H_k⁻¹ H_l`, applying `H_k⁻¹` through its Cholesky factor.
pub fn pair_matrix(h_k: &Cholesky<f64, Dyn>, h_l: &DMatrix<f64>) -> DMatrix<f64> {
    let d = h_l.nrows();
    DMatrix::identity(d, d) - h_k.solve(h_l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    /// Aspect ratio `dK/N`, when known.
    pub gamma_mp: Option<f64>,
    pub rho: f64,
    /// `(1 - 1/K) ρ`.
    pub contraction: f64,
}

/// `max_{k≠l} ‖I - H_k⁻¹H_l‖` over ordered pairs; zero for a single node.
pub fn rho_bound(hessians: &[ShardHessian]) -> Result<TheoryParams> {
    let k = hessians.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no Hessians".into()));
    }
    check_dim(hessians[0].dim())?;
    for s in hessians {
        check_symmetric(&s.h)?;
    }
    let chols = hessians.iter().map(ShardHessian::cholesky).collect::<Result<Vec<_>>>()?;
    let rho = (0..k)
        .into_par_iter()
        .flat_map_iter(|a| (0..k).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| spectral_norm(&pair_matrix(&chols[a], &hessians[b].h)))
        .reduce(|| 0.0, f64::max);
    Ok(TheoryParams { gamma_mp: None, rho, contraction: (1.0 - 1.0 / k as f64) * rho })
}

/// `dK/N`.
pub fn aspect_ratio(d: usize, n: usize, k: usize) -> f64 {
    (d * k) as f64 / n as f64
}

/// Predicted `‖I - H_i⁻¹H_j‖` for independent Wishart matrices: `2√γ/(1-√γ)`.
pub fn wishart_limit(gamma_mp: f64) -> Result<f64> {
    if !(gamma_mp > 0.0 && gamma_mp < 1.0) {
        return Err(Error::InvalidArgument(format!("aspect ratio must lie in (0, 1), got {gamma_mp}")));
    }
    let r = gamma_mp.sqrt();
    Ok(2.0 * r / (1.0 - r))
}

/// Predicted contraction `(1 - 1/K)·2√γ/(1-√γ)` with `γ = dK/N`.
pub fn rho_hat(d: usize, n: usize, k: usize) -> Result<f64> {
    Ok((1.0 - 1.0 / k as f64) * wishart_limit(aspect_ratio(d, n, k))?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WishartStats {
    pub gamma_mp: f64,
    /// Mean `‖H‖`.
    pub norm_stat: f64,
    /// Mean `Tr(H⁻¹)/d`.
    pub trace_inv_stat: f64,
    /// Mean `‖I - H_i⁻¹H_j‖` over independent pairs.
    pub rho_stat: f64,
}

impl WishartStats {
    pub fn predicted_norm(&self) -> f64 {
        (1.0 + self.gamma_mp.sqrt()).powi(2)
    }

    pub fn predicted_trace_inv(&self) -> f64 {
        1.0 / (1.0 - self.gamma_mp)
    }

    pub fn predicted_rho(&self) -> f64 {
        let r = self.gamma_mp.sqrt();
        2.0 * r / (1.0 - r)
    }
}

/// `XᵀX/n` for an `n × d` standard Gaussian `X` drawn from its own stream.
pub fn sample_wishart(d: usize, n: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = sampler(seed, stream);
    let x = DMatrix::<f64>::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    x.tr_mul(&x) / n as f64
}

/// Monte-Carlo estimates over `pairs` independent pairs of Wishart samples
/// (`2·pairs` matrices for the single-matrix statistics).
pub fn wishart_empirics(d: usize, n_per_node: usize, pairs: usize, seed: u64) -> Result<WishartStats> {
    if n_per_node <= d {
        return Err(Error::InvalidArgument(format!("need more samples than dimensions (n = {n_per_node}, d = {d})")));
    }
    if pairs == 0 || d == 0 {
        return Err(Error::InvalidArgument("need at least one pair and d ≥ 1".into()));
    }
    check_dim(d)?;
    let per_pair: Vec<(f64, f64, f64)> = (0..pairs as u64)
        .into_par_iter()
        .map(|p| -> Result<(f64, f64, f64)> {
            let hi = sample_wishart(d, n_per_node, seed, 2 * p);
            let hj = sample_wishart(d, n_per_node, seed, 2 * p + 1);
            let ci = hi.clone().cholesky().ok_or(Error::NotPositiveDefinite { context: Some("Wishart sample".into()) })?;
            let cj = hj.clone().cholesky().ok_or(Error::NotPositiveDefinite { context: Some("Wishart sample".into()) })?;
            let norms = spectral_norm(&hi) + spectral_norm(&hj);
            let traces = ci.inverse().trace() + cj.inverse().trace();
            let rho = spectral_norm(&pair_matrix(&ci, &hj));
            Ok((norms, traces / d as f64, rho))
        })
        .collect::<Result<_>>()?;
    let m = 2.0 * pairs as f64;
    Ok(WishartStats {
        gamma_mp: d as f64 / n_per_node as f64,
        norm_stat: per_pair.iter().map(|t| t.0).sum::<f64>() / m,
        trace_inv_stat: per_pair.iter().map(|t| t.1).sum::<f64>() / m,
        rho_stat: per_pair.iter().map(|t| t.2).sum::<f64>() / pairs as f64,
    })
}

/// One step of the exact-inner-solve error recursion:
/// `e_k' = (1/K) Σ_{l≠k} (I - H_k⁻¹H_l) e_l`.
pub fn predict_errors(hessians: &[ShardHessian], errors: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let k = hessians.len();
    if errors.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: errors.len() });
    }
    let chols = hessians.iter().map(ShardHessian::cholesky).collect::<Result<Vec<_>>>()?;
    Ok((0..k)
        .map(|a| {
            let mut acc = DVector::zeros(hessians[a].dim());
            for b in (0..k).filter(|&b| b != a) {
                acc += &errors[b] - chols[a].solve(&(&hessians[b].h * &errors[b]));
            }
            acc / k as f64
        })
        .collect())
}
