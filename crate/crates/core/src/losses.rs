//! Objectives over sparse data.
//!
//! All objectives are averages over examples plus `λ/2‖w‖²`:
//!
//! - logistic: `ℓ(y, m) = log(1 + exp(-y m))`
//! - quadratic (least squares): `ℓ(y, m) = ½(m - y)²`
//!
//! with `m = x·w`. The per-example gradient of the data-fit term is `a·x` for a scalar
//! `a = ∂ℓ/∂m`, the [`GradientStat`]; SAGA memories store only this scalar. The
//! regulariser (and an optional linear term used for surrogate objectives) is applied
//! densely and never enters the stored statistic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::data::{Dataset, Example};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Logistic,
    /// Squared error `½(x·w - y)²`.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: Loss,
    pub lambda: f64,
    linear: Option<Vec<f64>>,
}

/// Scalar sufficient statistic `a` with `∇ℓ(y, x·w) = a·x`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct GradientStat(pub f64);

impl Objective {
    pub fn logistic(lambda: f64) -> Self {
        Self { loss: Loss::Logistic, lambda, linear: None }
    }

    pub fn quadratic(lambda: f64) -> Self {
        Self { loss: Loss::Quadratic, lambda, linear: None }
    }

    /// Adds `c·w` to the objective.
    pub fn with_linear_term(mut self, c: Vec<f64>) -> Self {
        self.linear = Some(c);
        self
    }

    pub fn linear_term(&self) -> Option<&[f64]> {
        self.linear.as_deref()
    }

    pub fn is_quadratic(&self) -> bool {
        self.loss == Loss::Quadratic
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    #[inline]
    pub fn loss_at_margin(&self, y: f64, m: f64) -> f64 {
        match self.loss {
            Loss::Logistic => softplus(-y * m),
            Loss::Quadratic => 0.5 * (m - y) * (m - y),
        }
    }

    #[inline]
    pub fn stat_at_margin(&self, y: f64, m: f64) -> f64 {
        match self.loss {
            Loss::Logistic => -y * sigmoid(-y * m),
            Loss::Quadratic => m - y,
        }
    }

    #[inline]
    pub(crate) fn stat(&self, ex: &Example, w: &[f64]) -> f64 {
        self.stat_at_margin(ex.label, ex.dot(w))
    }

    fn check_dim(&self, data: &Dataset, w: &[f64]) -> Result<()> {
        if w.len() != data.dim() {
            return Err(Error::DimensionMismatch { expected: data.dim(), got: w.len() });
        }
        if let Some(c) = &self.linear {
            if c.len() != w.len() {
                return Err(Error::DimensionMismatch { expected: w.len(), got: c.len() });
            }
        }
        Ok(())
    }

    /// Turns a data-fit sum `Σ a_i x_i` into the objective gradient at `w`.
    pub(crate) fn assemble_gradient(&self, sum: &[f64], n: usize, w: &[f64]) -> Vec<f64> {
        let inv_n = 1.0 / n as f64;
        let mut g: Vec<f64> =
            sum.iter().zip(w).map(|(s, wi)| s * inv_n + self.lambda * wi).collect();
        if let Some(c) = &self.linear {
            g.iter_mut().zip(c).for_each(|(gi, ci)| *gi += ci);
        }
        g
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Average loss plus `λ/2‖w‖²` (plus the linear term when present).
pub fn objective_value(obj: &Objective, data: &Dataset, w: &[f64]) -> Result<f64> {
    obj.check_dim(data, w)?;
    let fit: f64 = data.examples().iter().map(|ex| obj.loss_at_margin(ex.label, ex.dot(w))).sum();
    let mut value = fit / data.len() as f64 + 0.5 * obj.lambda * crate::vecops::dot(w, w);
    if let Some(c) = &obj.linear {
        value += crate::vecops::dot(c, w);
    }
    Ok(value)
}

/// Loss of one example including the regulariser, `ℓ(y, x·w) + λ/2‖w‖²`.
pub fn example_loss(obj: &Objective, ex: &Example, w: &[f64]) -> f64 {
    obj.loss_at_margin(ex.label, ex.dot(w)) + 0.5 * obj.lambda * crate::vecops::dot(w, w)
}

pub fn example_gradient(obj: &Objective, ex: &Example, w: &[f64]) -> Result<GradientStat> {
    if let Some(m) = ex.max_index() {
        if m >= w.len() {
            return Err(Error::DimensionMismatch { expected: m + 1, got: w.len() });
        }
    }
    Ok(GradientStat(obj.stat(ex, w)))
}

/// Full per-example gradient `a·x + λw` rebuilt from a stored statistic.
pub fn reconstruct_gradient(obj: &Objective, stat: GradientStat, ex: &Example, w: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = w.iter().map(|wi| obj.lambda * wi).collect();
    ex.axpy(stat.0, &mut g);
    g
}

/// `Σ_i a_i x_i` evaluated at `w`.
pub(crate) fn data_gradient_sum(obj: &Objective, data: &Dataset, w: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; data.dim()];
    for ex in data.examples() {
        ex.axpy(obj.stat(ex, w), &mut sum);
    }
    sum
}

pub fn full_gradient(obj: &Objective, data: &Dataset, w: &[f64]) -> Result<Vec<f64>> {
    obj.check_dim(data, w)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let sum = data_gradient_sum(obj, data, w);
    Ok(obj.assemble_gradient(&sum, data.len(), w))
}

/// `f(w + step·dir) - f(w)`, computed without cancellation between the two values.
///
/// Per-example differences are formed from the margin increment `step·x·dir`, so the
/// result keeps full relative precision even when the change is far below `ulp(f)`.
pub fn objective_change(obj: &Objective, data: &Dataset, w: &[f64], dir: &[f64], step: f64) -> Result<f64> {
    obj.check_dim(data, w)?;
    if dir.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), got: dir.len() });
    }
    let mut fit = 0.0;
    for ex in data.examples() {
        let m = ex.dot(w);
        let delta = step * ex.dot(dir);
        let y = ex.label;
        fit += match obj.loss {
            Loss::Logistic => {
                let z = -y * m;
                let dz = -y * delta;
                if dz.abs() < 30.0 {
                    (sigmoid(z) * dz.exp_m1()).ln_1p()
                } else {
                    softplus(z + dz) - softplus(z)
                }
            }
            Loss::Quadratic => delta * (m - y + 0.5 * delta),
        };
    }
    let wd = crate::vecops::dot(w, dir);
    let dd = crate::vecops::dot(dir, dir);
    let mut change = fit / data.len() as f64 + obj.lambda * step * (wd + 0.5 * step * dd);
    if let Some(c) = &obj.linear {
        change += step * crate::vecops::dot(c, dir);
    }
    Ok(change)
}

/// Smoothness and strong-convexity constants.
///
/// `l` bounds the smoothness of every single-example loss (what SAGA's step size needs);
/// `l_full` bounds the smoothness of the averaged objective (what gradient descent needs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    pub l: f64,
    pub l_full: f64,
    pub mu: f64,
}

impl Smoothness {
    pub fn condition_number(&self) -> f64 {
        self.l_full / self.mu
    }
}

/// Logistic: `l = max‖x‖²/4 + λ`, `μ = λ`. Quadratic: `l = max‖x‖² + λ`, `(l_full, μ)` the
/// extreme eigenvalues of the Hessian.
pub fn smoothness_constants(obj: &Objective, data: &Dataset) -> Result<Smoothness> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let max_sq = data.examples().iter().map(Example::norm_sq).fold(0.0, f64::max);
    match obj.loss {
        Loss::Logistic => Ok(Smoothness {
            l: max_sq / 4.0 + obj.lambda,
            l_full: second_moment_norm(data) / 4.0 + obj.lambda,
            mu: obj.lambda,
        }),
        Loss::Quadratic => {
            let h = hessian_of_least_squares(data, obj.lambda);
            let (hi, lo) = extreme_eigenvalues(&h);
            Ok(Smoothness { l: max_sq + obj.lambda, l_full: hi, mu: lo.max(0.0) })
        }
    }
}

/// Largest eigenvalue of `(1/N) Σ x xᵀ` by power iteration over the sparse data.
fn second_moment_norm(data: &Dataset) -> f64 {
    let d = data.dim();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut estimate = 0.0;
    for _ in 0..1000 {
        let mut next = vec![0.0; d];
        for ex in data.examples() {
            ex.axpy(ex.dot(&v), &mut next);
        }
        next.iter_mut().for_each(|x| *x /= data.len() as f64);
        let n = crate::vecops::norm(&next);
        if n == 0.0 {
            return 0.0;
        }
        next.iter_mut().for_each(|x| *x /= n);
        let done = (n - estimate).abs() <= 1e-10 * n;
        estimate = n;
        v = next;
        if done {
            break;
        }
    }
    estimate
}

fn extreme_eigenvalues(h: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(h.clone());
    (eig.eigenvalues.max(), eig.eigenvalues.min())
}

/// `(1/N) Σ x xᵀ + λI`, accumulated over nonzeros.
pub fn hessian_of_least_squares(data: &Dataset, lambda: f64) -> DMatrix<f64> {
    let d = data.dim();
    let mut h = DMatrix::<f64>::zeros(d, d);
    for ex in data.examples() {
        for (i, vi) in ex.features() {
            for (j, vj) in ex.features() {
                h[(i, j)] += vi * vj;
            }
        }
    }
    h /= data.len() as f64;
    for i in 0..d {
        h[(i, i)] += lambda;
    }
    h
}

/// Explicit quadratic `½(w - c)ᵀ H (w - c)` with `H` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    h: DMatrix<f64>,
    center: DVector<f64>,
    // H c, kept so that gradients of least-squares forms are H w - b without re-deriving b.
    rhs: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl QuadraticForm {
    pub fn new(h: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        check_symmetric(&h)?;
        if center.len() != h.nrows() {
            return Err(Error::DimensionMismatch { expected: h.nrows(), got: center.len() });
        }
        let chol = Cholesky::new(h.clone()).ok_or(Error::NotPositiveDefinite { context: None })?;
        let rhs = &h * &center;
        Ok(Self { h, center, rhs, chol })
    }

    /// The quadratic whose gradient matches the least-squares objective over `data`.
    pub fn from_least_squares(data: &Dataset, lambda: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let h = hessian_of_least_squares(data, lambda);
        let mut b = DVector::zeros(data.dim());
        for ex in data.examples() {
            for (i, v) in ex.features() {
                b[i] += ex.label * v;
            }
        }
        b /= data.len() as f64;
        let chol = Cholesky::new(h.clone())
            .ok_or(Error::NotPositiveDefinite { context: Some("least-squares Hessian".into()) })?;
        let center = chol.solve(&b);
        Ok(Self { h, center, rhs: b, chol })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let e = DVector::from_column_slice(w) - &self.center;
        0.5 * e.dot(&(&self.h * &e))
    }

    /// `H w - H c`.
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let g = &self.h * DVector::from_column_slice(w) - &self.rhs;
        g.as_slice().to_vec()
    }

    /// The point where the gradient equals `target`.
    pub fn stationary_point(&self, target: &[f64]) -> Vec<f64> {
        let rhs = &self.rhs + DVector::from_column_slice(target);
        self.chol.solve(&rhs).as_slice().to_vec()
    }

    /// `(l_full, μ)` are the extreme eigenvalues of `H`; `l` is set to `l_full`.
    pub fn smoothness_constants(&self) -> Smoothness {
        let (hi, lo) = extreme_eigenvalues(&self.h);
        Smoothness { l: hi, l_full: hi, mu: lo }
    }
}

pub(crate) fn check_symmetric(h: &DMatrix<f64>) -> Result<()> {
    if !h.is_square() {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    let scale = h.abs().max().max(1.0);
    if (h - h.transpose()).abs().max() > 1e-12 * scale {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    Ok(())
}
