//! Dataset selection: LIBSVM files or `gaussian:n=..,d=..` synthetic specs.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use dsaga::data::{generate_gaussian, Covariance, Labeling};
use dsaga::{Dataset, Objective};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    /// Per-coordinate variances; identity when absent.
    pub diag: Option<Vec<f64>>,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `gaussian:n=1000,d=20[,noise=0.5][,seed=3][,diag=1;2;4]`.
    pub fn parse(text: &str) -> Result<Self> {
        let Some(body) = text.strip_prefix("gaussian:") else {
            bail!("unknown synthetic family in {text:?} (expected gaussian:n=..,d=..)");
        };
        let mut spec = SyntheticSpec { n: 0, d: 0, diag: None, noise: 0.5, seed: 0 };
        for part in body.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').with_context(|| format!("expected key=value, got {part:?}"))?;
            match k.trim() {
                "n" => spec.n = v.parse().with_context(|| format!("bad n {v:?}"))?,
                "d" => spec.d = v.parse().with_context(|| format!("bad d {v:?}"))?,
                "noise" => spec.noise = v.parse().with_context(|| format!("bad noise {v:?}"))?,
                "seed" => spec.seed = v.parse().with_context(|| format!("bad seed {v:?}"))?,
                "diag" => {
                    let vals = v.split(';').map(str::parse).collect::<Result<Vec<f64>, _>>();
                    spec.diag = Some(vals.with_context(|| format!("bad diag {v:?}"))?);
                }
                other => bail!("unknown synthetic key {other:?}"),
            }
        }
        if spec.n == 0 || spec.d == 0 {
            bail!("synthetic spec needs positive n and d");
        }
        if let Some(diag) = &spec.diag {
            if diag.len() != spec.d {
                bail!("diag has {} entries for d = {}", diag.len(), spec.d);
            }
        }
        Ok(spec)
    }

    pub fn generate(&self, obj: &Objective) -> Result<Dataset> {
        let cov = match &self.diag {
            Some(v) => Covariance::Diagonal(v.clone()),
            None => Covariance::Identity,
        };
        let labeling = if obj.is_quadratic() { Labeling::Regression { noise: self.noise } } else { Labeling::Classification };
        Ok(generate_gaussian(self.n, self.d, &cov, &labeling, self.seed)?)
    }
}

#[derive(Debug, Clone)]
pub enum Source {
    File { path: PathBuf, dim: Option<usize> },
    Synthetic(SyntheticSpec),
}

impl Source {
    pub fn load(&self, obj: &Objective) -> Result<Dataset> {
        match self {
            Source::File { path, dim } => {
                Dataset::from_libsvm_path(path, *dim).with_context(|| format!("loading {}", path.display()))
            }
            Source::Synthetic(spec) => spec.generate(obj),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_spec() {
        let s = SyntheticSpec::parse("gaussian:n=10,d=3,noise=0.1,seed=4,diag=1;2;3").unwrap();
        assert_eq!(s, SyntheticSpec { n: 10, d: 3, diag: Some(vec![1.0, 2.0, 3.0]), noise: 0.1, seed: 4 });
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in ["uniform:n=1,d=1", "gaussian:n=0,d=2", "gaussian:n=3", "gaussian:n=3,d=2,diag=1", "gaussian:n=3,d=2,q=1"] {
            assert!(SyntheticSpec::parse(bad).is_err(), "{bad}");
        }
    }
}
