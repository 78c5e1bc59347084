//! Sparse labelled examples, LIBSVM text I/O, synthetic Gaussian data and sharding.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{sampler, Error, Result};

// Streams reserved for data generation; node samplers use 0..K.
const FEATURE_STREAM: u64 = 1 << 40;
const TEACHER_STREAM: u64 = (1 << 40) + 1;
const LABEL_STREAM: u64 = (1 << 40) + 2;
const PARTITION_STREAM: u64 = (1 << 40) + 3;

/// One labelled example with a sparse feature vector (0-based, strictly increasing indices).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub label: f64,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Example {
    pub fn new(label: f64, features: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        if !label.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite label {label}")));
        }
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, v) in features {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite value at index {i}")));
            }
            if let Some(&last) = indices.last() {
                if i <= last {
                    return Err(Error::InvalidArgument(format!(
                        "feature indices not strictly increasing ({last} then {i})"
                    )));
                }
            }
            indices.push(i);
            values.push(v);
        }
        Ok(Self { label, indices, values })
    }

    /// Example with every coordinate of `x` stored.
    pub fn dense(label: f64, x: &[f64]) -> Result<Self> {
        Self::new(label, x.iter().copied().enumerate())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn features(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * w[i]).sum()
    }

    /// `out += scale * x`
    #[inline]
    pub fn axpy(&self, scale: f64, out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] += scale * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut x = vec![0.0; dim];
        self.axpy(1.0, &mut x);
        x
    }
}

/// An ordered collection of examples sharing a feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset; `dim` defaults to one past the largest feature index (at least 1).
    pub fn new(examples: Vec<Example>, dim: Option<usize>) -> Result<Self> {
        let needed = examples
            .iter()
            .filter_map(Example::max_index)
            .max()
            .map_or(1, |m| m + 1);
        let dim = match dim {
            Some(d) if d < needed => {
                return Err(Error::InvalidArgument(format!(
                    "dimension {d} too small for feature index {}",
                    needed - 1
                )))
            }
            Some(0) => return Err(Error::InvalidArgument("dimension must be positive".into())),
            Some(d) => d,
            None => needed,
        };
        Ok(Self { examples, dim })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn from_libsvm_path(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        parse_libsvm_with_dim(&text, dim)
    }

    /// Dense design matrix, one row per example.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.len(), self.dim);
        for (r, ex) in self.examples.iter().enumerate() {
            for (c, v) in ex.features() {
                x[(r, c)] = v;
            }
        }
        x
    }
}

/// The examples held by one node of the cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub node_id: usize,
    pub data: Dataset,
}

impl Shard {
    pub fn local_count(&self) -> usize {
        self.data.len()
    }
}

pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    parse_libsvm_with_dim(text, None)
}

/// Parses LIBSVM / SVMlight text: `<label> <idx>:<val> ...` with 1-based indices.
///
/// Blank lines are skipped and `#` starts a comment. Indices are stored 0-based.
pub fn parse_libsvm_with_dim(text: &str, dim: Option<usize>) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line, message };
        let mut tokens = content.split_ascii_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label {label_tok:?}")))?;
        if !label.is_finite() {
            return Err(err(format!("non-finite label {label_tok:?}")));
        }
        let mut features = Vec::new();
        let mut last: Option<usize> = None;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed feature {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad index in {tok:?}")))?;
            if idx == 0 {
                return Err(err(format!("indices are 1-based, got 0 in {tok:?}")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("bad value in {tok:?}")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite value in {tok:?}")));
            }
            let idx = idx - 1;
            if last.is_some_and(|l| idx <= l) {
                return Err(err(format!("duplicate or non-increasing index in {tok:?}")));
            }
            last = Some(idx);
            features.push((idx, val));
        }
        examples.push(Example::new(label, features).map_err(|e| err(e.to_string()))?);
    }
    Dataset::new(examples, dim).map_err(|e| Error::Parse { line: 0, message: e.to_string() })
}

/// Serialises back to LIBSVM text (1-based indices, shortest round-trip floats).
pub fn to_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    for ex in data.examples() {
        let _ = write!(out, "{}", ex.label);
        for (i, v) in ex.features() {
            let _ = write!(out, " {}:{}", i + 1, v);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub enum Covariance {
    Identity,
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

/// How labels are attached to generated features.
#[derive(Debug, Clone, PartialEq)]
pub enum Labeling {
    /// Every label equals the given value.
    Constant(f64),
    /// `y = ±1` drawn with `P(y = 1) = σ(x·w_teacher)`.
    Classification,
    /// `y = x·w_teacher + noise·ε`.
    Regression { noise: f64 },
}

/// Teacher vector used by the synthetic labelings, `N(0, I/d)` scaled by 2.
pub fn teacher(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = sampler(seed, TEACHER_STREAM);
    let scale = 2.0 / (d as f64).sqrt();
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draws `n` points `x = Σ^{1/2} u`, `u ~ N(0, I_d)`, deterministically from `seed`.
pub fn generate_gaussian(
    n: usize,
    d: usize,
    covariance: &Covariance,
    labeling: &Labeling,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be at least 1".into()));
    }
    let root = covariance_root(covariance, d)?;
    let mut rng = sampler(seed, FEATURE_STREAM);
    let mut label_rng = sampler(seed, LABEL_STREAM);
    let w_teacher = match labeling {
        Labeling::Constant(_) => Vec::new(),
        _ => teacher(d, seed),
    };
    let mut examples = Vec::with_capacity(n);
    let mut u = vec![0.0; d];
    for _ in 0..n {
        u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let x: Vec<f64> = match &root {
            None => u.clone(),
            Some(Root::Diagonal(s)) => u.iter().zip(s).map(|(a, b)| a * b).collect(),
            Some(Root::Dense(s)) => (s * DVector::from_column_slice(&u)).as_slice().to_vec(),
        };
        let label = match labeling {
            Labeling::Constant(c) => *c,
            Labeling::Classification => {
                let m = crate::vecops::dot(&x, &w_teacher);
                let p = 1.0 / (1.0 + (-m).exp());
                if label_rng.random::<f64>() < p {
                    1.0
                } else {
                    -1.0
                }
            }
            Labeling::Regression { noise } => {
                let eps: f64 = label_rng.sample(StandardNormal);
                crate::vecops::dot(&x, &w_teacher) + noise * eps
            }
        };
        examples.push(Example::dense(label, &x)?);
    }
    Dataset::new(examples, Some(d))
}

enum Root {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

fn covariance_root(cov: &Covariance, d: usize) -> Result<Option<Root>> {
    match cov {
        Covariance::Identity => Ok(None),
        Covariance::Diagonal(diag) => {
            if diag.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: diag.len() });
            }
            if diag.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::NotPositiveDefinite { context: Some("diagonal covariance".into()) });
            }
            Ok(Some(Root::Diagonal(diag.iter().map(|v| v.sqrt()).collect())))
        }
        Covariance::Dense(m) => {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: m.nrows() });
            }
            let asym = (m - m.transpose()).abs().max();
            if asym > 1e-12 * m.abs().max().max(1.0) {
                return Err(Error::InvalidArgument("covariance is not symmetric".into()));
            }
            let eig = SymmetricEigen::new(m.clone());
            if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::NotPositiveDefinite { context: Some("covariance".into()) });
            }
            let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
            Ok(Some(Root::Dense(&eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose())))
        }
    }
}

/// Seeded shuffle followed by a contiguous split into `k` shards whose sizes differ by at most one.
///
/// With `k = 1` the single shard keeps the original order, so a one-node cluster sees
/// exactly the dataset plain SAGA sees.
pub fn partition(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Shard>> {
    if k == 0 || k > data.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} examples into {k} shards",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if k > 1 {
        order.shuffle(&mut sampler(seed, PARTITION_STREAM));
    }
    let base = data.len() / k;
    let extra = data.len() % k;
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for node_id in 0..k {
        let size = base + usize::from(node_id < extra);
        let examples = order[start..start + size]
            .iter()
            .map(|&i| data.examples()[i].clone())
            .collect();
        start += size;
        shards.push(Shard { node_id, data: Dataset::new(examples, Some(data.dim()))? });
    }
    Ok(shards)
}
