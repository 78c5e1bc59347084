//! Excess-error bookkeeping, the inner/discrepancy error split, empirical rates and
//! CSV traces.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lbfgs_run, LbfgsConfig};
use crate::data::{Dataset, Shard};
use crate::dsaga::{surrogate_objective, DsagaRun, InnerSolve};
use crate::losses::{full_gradient, objective_change, objective_value, Objective, QuadraticForm};
use crate::theory::rho_hat;
use crate::vecops::{dist, norm, sub};
use crate::{Error, Result};

/// Ratios with an excess-error denominator at or below this are reported as absent.
pub const RATE_FLOOR: f64 = 1e-14;
/// Gradient-norm target for logistic reference optima.
pub const REFERENCE_TOL: f64 = 1e-12;
/// Gradient-norm target for logistic inner optima.
pub const INNER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeLabel {
    /// The averaged parameters.
    Avg,
    /// The worst node for per-pass rate rows.
    Worst,
    Node(usize),
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeLabel::Avg => f.write_str("avg"),
            NodeLabel::Worst => f.write_str("worst"),
            NodeLabel::Node(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for NodeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(NodeLabel::Avg),
            "worst" => Ok(NodeLabel::Worst),
            _ => s
                .parse()
                .map(NodeLabel::Node)
                .map_err(|_| Error::InvalidArgument(format!("bad node label {s:?}"))),
        }
    }
}

/// One row of a convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub round: usize,
    /// Cumulative optimisation passes.
    pub pass_opt: usize,
    /// Cumulative passes including local gradient passes and line-search trials.
    pub pass_total: usize,
    pub node: NodeLabel,
    pub f: f64,
    pub excess: Option<f64>,
    pub grad_norm: Option<f64>,
    pub inner_err: Option<f64>,
    pub disc_err: Option<f64>,
    pub rho_tilde: Option<f64>,
    pub alpha_tilde: Option<f64>,
    pub omega_tilde: Option<f64>,
}

impl TraceRecord {
    /// Empty record; `f` starts as NaN.
    pub fn new(round: usize, node: NodeLabel) -> Self {
        Self {
            round,
            pass_opt: 0,
            pass_total: 0,
            node,
            f: f64::NAN,
            excess: None,
            grad_norm: None,
            inner_err: None,
            disc_err: None,
            rho_tilde: None,
            alpha_tilde: None,
            omega_tilde: None,
        }
    }
}

/// Fills `excess = f - f*` on records that lack it.
pub fn fill_excess(records: &mut [TraceRecord], f_star: f64) {
    for r in records.iter_mut().filter(|r| r.excess.is_none()) {
        r.excess = Some(r.f - f_star);
    }
}

/// `f(w) - f(w*)` without cancellation between the two objective values.
pub fn excess_error(obj: &Objective, data: &Dataset, w_star: &[f64], w: &[f64]) -> Result<f64> {
    objective_change(obj, data, w_star, &sub(w, w_star), 1.0)
}

/// Certified minimiser and minimum of a strongly convex objective.
pub fn reference_optimum(obj: &Objective, data: &Dataset) -> Result<(Vec<f64>, f64)> {
    reference_optimum_from(obj, data, &vec![0.0; data.dim()])
}

/// As [`reference_optimum`], starting the iterative solver at `w0`.
///
/// Least squares is solved in closed form; everything else by L-BFGS to
/// `‖∇f‖ ≤ 1e-12`. Failure returns [`Error::NoConvergence`] carrying the best point.
pub fn reference_optimum_from(obj: &Objective, data: &Dataset, w0: &[f64]) -> Result<(Vec<f64>, f64)> {
    obj.validate()?;
    if obj.is_quadratic() && obj.linear_term().is_none() {
        let q = QuadraticForm::from_least_squares(data, obj.lambda)?;
        let w = q.center().as_slice().to_vec();
        let f = objective_value(obj, data, &w)?;
        return Ok((w, f));
    }
    let w = minimise(obj, data, w0, REFERENCE_TOL)?;
    let f = objective_value(obj, data, &w)?;
    Ok((w, f))
}

fn minimise(obj: &Objective, data: &Dataset, w0: &[f64], tol: f64) -> Result<Vec<f64>> {
    let config = LbfgsConfig { memory: 10, max_iters: 20_000, tol };
    match lbfgs_run(obj, data, w0, config) {
        Ok(run) if run.converged => Ok(run.w),
        Ok(run) => Err(Error::NoConvergence { iterations: config.max_iters, grad_norm: run.grad_norm, tol, best: run.w }),
        Err(Error::LineSearch { iteration, grad_norm, w, .. }) => {
            Err(Error::NoConvergence { iterations: iteration, grad_norm, tol, best: w })
        }
        Err(e) => Err(e),
    }
}

/// Stationary point of the corrected local objective of one node for one round.
pub fn inner_optimum(obj: &Objective, shard: &Shard, anchor: &[f64], global: &[f64], start: &[f64]) -> Result<Vec<f64>> {
    if obj.is_quadratic() && obj.linear_term().is_none() {
        let q = QuadraticForm::from_least_squares(&shard.data, obj.lambda)?;
        return Ok(q.stationary_point(&sub(anchor, global)));
    }
    minimise(&surrogate_objective(obj, anchor, global), &shard.data, start, INNER_TOL)
}

/// The two terms bounding the mean node distance to the optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// `(1/K) Σ ‖w_k - w_k^∞‖`.
    pub inner: f64,
    /// `(1/K) Σ ‖w_k^∞ - w*‖`.
    pub discrepancy: f64,
    /// `(1/K) Σ ‖w_k - w*‖`.
    pub mean_distance: f64,
    /// `‖(1/K) Σ w_k - w*‖`.
    pub average_distance: f64,
}

impl Decomposition {
    /// How far the chain `‖avg - w*‖ ≤ mean ≤ inner + discrepancy` is violated (≤ 0 if it holds).
    pub fn violation(&self) -> f64 {
        (self.average_distance - self.mean_distance).max(self.mean_distance - self.inner - self.discrepancy)
    }
}

pub fn decompose_error(points: &[Vec<f64>], inner_optima: &[Vec<f64>], w_star: &[f64]) -> Result<Decomposition> {
    let k = points.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no node points".into()));
    }
    if inner_optima.len() != k {
        return Err(Error::InvalidArgument(format!("{} inner optima for {k} nodes", inner_optima.len())));
    }
    let kf = k as f64;
    let mut avg = vec![0.0; w_star.len()];
    for p in points {
        avg.iter_mut().zip(p).for_each(|(a, b)| *a += b / kf);
    }
    Ok(Decomposition {
        inner: points.iter().zip(inner_optima).map(|(p, o)| dist(p, o)).sum::<f64>() / kf,
        discrepancy: inner_optima.iter().map(|o| dist(o, w_star)).sum::<f64>() / kf,
        mean_distance: points.iter().map(|p| dist(p, w_star)).sum::<f64>() / kf,
        average_distance: dist(&avg, w_star),
    })
}

/// Empirical rates of one dSAGA run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub k: usize,
    /// Excess error of the averaged point before round 1 and after every round.
    pub excess: Vec<f64>,
    /// Per round: excess after over excess before.
    pub rho_tilde: Vec<Option<f64>>,
    /// `(1 - 1/K)·2√γ/(1-√γ)`, absent when `γ = dK/N ≥ 1`.
    pub rho_hat: Option<f64>,
    /// Per round and local pass: worst-node progress of `f` toward `f(w_k^∞)`.
    pub alpha_tilde: Vec<Vec<Option<f64>>>,
    /// Per round and local pass: worst-node progress of `f_k^t` toward its minimum.
    pub omega_tilde: Vec<Vec<Option<f64>>>,
    /// Per round, inner error at pass `0..=passes`.
    pub inner_error: Vec<Vec<f64>>,
    pub discrepancy_error: Vec<f64>,
    /// Per round, node inner optima `w_k^{t,∞}`.
    pub inner_optima: Vec<Vec<Vec<f64>>>,
    /// Largest violation of the decomposition chain over all rounds and passes.
    pub decomposition_violation: f64,
}

impl MetricReport {
    pub fn rho_tilde_summary(&self) -> Option<f64> {
        geometric_mean(self.rho_tilde.iter().copied())
    }

    pub fn alpha_summary(&self) -> Option<f64> {
        geometric_mean(self.alpha_tilde.iter().flatten().copied())
    }

    pub fn omega_summary(&self) -> Option<f64> {
        geometric_mean(self.omega_tilde.iter().flatten().copied())
    }
}

/// Geometric mean of the present values; zero if any is zero.
pub fn geometric_mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    if v.iter().any(|&x| x <= 0.0) {
        return Some(0.0);
    }
    Some((v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp())
}

fn ratio(after: f64, before: f64) -> Option<f64> {
    (before > RATE_FLOOR).then(|| after.max(0.0) / before)
}

/// Computes every empirical rate of `run`, which must have recorded per-pass iterates.
///
/// `data` is the full dataset and `optimum` its reference `(w*, f*)`.
pub fn rate_report(run: &DsagaRun, obj: &Objective, data: &Dataset, shards: &[Shard], optimum: (&[f64], f64)) -> Result<MetricReport> {
    let k = run.config.k;
    let (w_star, _) = optimum;
    if !run.config.record_passes {
        return Err(Error::InvalidArgument("rate report needs a run with per-pass records".into()));
    }
    if shards.len() != k {
        return Err(Error::InvalidArgument(format!("{} shards for K = {k}", shards.len())));
    }
    let mut points = vec![run.rounds[0].start.clone()];
    points.extend(run.rounds.iter().map(|r| r.next_start.clone()));
    let excess = points.iter().map(|p| excess_error(obj, data, w_star, p)).collect::<Result<Vec<_>>>()?;
    let rho_tilde = excess.windows(2).map(|w| ratio(w[1], w[0])).collect();
    let rho_hat = rho_hat(data.dim(), data.len(), k).ok().or((k == 1).then_some(0.0));

    let mut report = MetricReport {
        k,
        excess,
        rho_tilde,
        rho_hat,
        alpha_tilde: Vec::new(),
        omega_tilde: Vec::new(),
        inner_error: Vec::new(),
        discrepancy_error: Vec::new(),
        inner_optima: Vec::new(),
        decomposition_violation: f64::NEG_INFINITY,
    };
    for round in &run.rounds {
        let per_node = (0..k)
            .into_par_iter()
            .map(|n| -> Result<NodeRound> {
                let shard = &shards[n];
                let trail = &round.passes[n];
                let optimum = match run.config.inner {
                    InnerSolve::Exact => trail.last().cloned().unwrap_or_else(|| round.ends[n].clone()),
                    InnerSolve::Iterative => {
                        inner_optimum(obj, shard, &round.anchors[n], &round.global_avg_grad, &round.ends[n])?
                    }
                };
                let surrogate = surrogate_objective(obj, &round.anchors[n], &round.global_avg_grad);
                let mut path = vec![round.start.clone()];
                path.extend(trail.iter().cloned());
                let outer = path.iter().map(|p| gap(obj, data, &optimum, p)).collect::<Result<Vec<_>>>()?;
                let inner = path.iter().map(|p| gap(&surrogate, &shard.data, &optimum, p)).collect::<Result<Vec<_>>>()?;
                Ok(NodeRound { path, optimum, outer, inner })
            })
            .collect::<Result<Vec<_>>>()?;
        let passes = per_node[0].path.len() - 1;
        let optima: Vec<Vec<f64>> = per_node.iter().map(|n| n.optimum.clone()).collect();
        let mut inner_err = Vec::with_capacity(passes + 1);
        let mut disc = 0.0;
        for u in 0..=passes {
            let pts: Vec<Vec<f64>> = per_node.iter().map(|n| n.path[u].clone()).collect();
            let dec = decompose_error(&pts, &optima, w_star)?;
            report.decomposition_violation = report.decomposition_violation.max(dec.violation());
            inner_err.push(dec.inner);
            disc = dec.discrepancy;
        }
        let worst = |series: fn(&NodeRound) -> &Vec<f64>, u: usize| -> Option<f64> {
            per_node.iter().filter_map(|n| ratio(series(n)[u + 1], series(n)[u])).reduce(f64::max)
        };
        report.alpha_tilde.push((0..passes).map(|u| worst(|n| &n.outer, u)).collect());
        report.omega_tilde.push((0..passes).map(|u| worst(|n| &n.inner, u)).collect());
        report.inner_error.push(inner_err);
        report.discrepancy_error.push(disc);
        report.inner_optima.push(optima);
    }
    Ok(report)
}

struct NodeRound {
    path: Vec<Vec<f64>>,
    optimum: Vec<f64>,
    /// `f(w_k^u) - f(w_k^∞)`.
    outer: Vec<f64>,
    /// `f_k^t(w_k^u) - f_k^t(w_k^∞)`.
    inner: Vec<f64>,
}

fn gap(obj: &Objective, data: &Dataset, base: &[f64], w: &[f64]) -> Result<f64> {
    objective_change(obj, data, base, &sub(w, base), 1.0)
}

/// Trace rows of a dSAGA run: the averaged point before round 1 and after every round,
/// each node's end point, and (with a report) one worst-node row per local pass.
pub fn dsaga_trace(run: &DsagaRun, obj: &Objective, data: &Dataset, optimum: (&[f64], f64), report: Option<&MetricReport>) -> Result<Vec<TraceRecord>> {
    let (w_star, _) = optimum;
    let cfg = &run.config;
    let avg_row = |round: usize, w: &[f64]| -> Result<TraceRecord> {
        Ok(TraceRecord {
            pass_opt: run.passes_opt(round),
            pass_total: run.passes_total(round),
            f: objective_value(obj, data, w)?,
            excess: Some(excess_error(obj, data, w_star, w)?),
            grad_norm: Some(norm(&full_gradient(obj, data, w)?)),
            ..TraceRecord::new(round, NodeLabel::Avg)
        })
    };
    let mut rows = vec![avg_row(0, &run.rounds[0].start)?];
    for (i, r) in run.rounds.iter().enumerate() {
        let t = r.round;
        if let Some(rep) = report {
            let passes = rep.alpha_tilde[i].len();
            for u in 0..passes {
                let mut worst_f = f64::NEG_INFINITY;
                let mut worst_excess = f64::NEG_INFINITY;
                for trail in &r.passes {
                    worst_f = worst_f.max(objective_value(obj, data, &trail[u])?);
                    worst_excess = worst_excess.max(excess_error(obj, data, w_star, &trail[u])?);
                }
                // exact inner solves are charged the nominal U passes
                let done = if cfg.inner == InnerSolve::Exact { cfg.u } else { u + 1 };
                rows.push(TraceRecord {
                    pass_opt: cfg.u * (t - 1) + done,
                    pass_total: cfg.passes_per_round() * (t - 1) + 1 + done,
                    f: worst_f,
                    excess: Some(worst_excess),
                    inner_err: Some(rep.inner_error[i][u + 1]),
                    disc_err: Some(rep.discrepancy_error[i]),
                    alpha_tilde: rep.alpha_tilde[i][u],
                    omega_tilde: rep.omega_tilde[i][u],
                    ..TraceRecord::new(t, NodeLabel::Worst)
                });
            }
        }
        for (n, end) in r.ends.iter().enumerate() {
            rows.push(TraceRecord {
                pass_opt: run.passes_opt(t),
                pass_total: run.passes_total(t),
                f: objective_value(obj, data, end)?,
                excess: Some(excess_error(obj, data, w_star, end)?),
                ..TraceRecord::new(t, NodeLabel::Node(n))
            });
        }
        let mut row = avg_row(t, &r.next_start)?;
        if let Some(rep) = report {
            row.rho_tilde = rep.rho_tilde[i];
            row.inner_err = rep.inner_error[i].last().copied();
            row.disc_err = Some(rep.discrepancy_error[i]);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Column order of every trace CSV.
pub const CSV_COLUMNS: [&str; 16] = [
    "run_id", "algo", "K", "U", "round", "pass_opt", "pass_total", "node", "f", "excess", "grad_norm", "inner_err",
    "disc_err", "rho_tilde", "alpha_tilde", "omega_tilde",
];

/// Identifies the run a record belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunInfo {
    pub run_id: String,
    pub algo: String,
    pub k: usize,
    /// Passes between synchronisations; absent for single-machine algorithms.
    pub u: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub algo: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "U")]
    pub u: Option<usize>,
    pub round: usize,
    pub pass_opt: usize,
    pub pass_total: usize,
    pub node: String,
    pub f: f64,
    pub excess: Option<f64>,
    pub grad_norm: Option<f64>,
    pub inner_err: Option<f64>,
    pub disc_err: Option<f64>,
    pub rho_tilde: Option<f64>,
    pub alpha_tilde: Option<f64>,
    pub omega_tilde: Option<f64>,
}

impl CsvRow {
    pub fn new(info: &RunInfo, r: &TraceRecord) -> Self {
        Self {
            run_id: info.run_id.clone(),
            algo: info.algo.clone(),
            k: info.k,
            u: info.u,
            round: r.round,
            pass_opt: r.pass_opt,
            pass_total: r.pass_total,
            node: r.node.to_string(),
            f: r.f,
            excess: r.excess,
            grad_norm: r.grad_norm,
            inner_err: r.inner_err,
            disc_err: r.disc_err,
            rho_tilde: r.rho_tilde,
            alpha_tilde: r.alpha_tilde,
            omega_tilde: r.omega_tilde,
        }
    }

    pub fn split(&self) -> Result<(RunInfo, TraceRecord)> {
        let info = RunInfo { run_id: self.run_id.clone(), algo: self.algo.clone(), k: self.k, u: self.u };
        let rec = TraceRecord {
            pass_opt: self.pass_opt,
            pass_total: self.pass_total,
            f: self.f,
            excess: self.excess,
            grad_norm: self.grad_norm,
            inner_err: self.inner_err,
            disc_err: self.disc_err,
            rho_tilde: self.rho_tilde,
            alpha_tilde: self.alpha_tilde,
            omega_tilde: self.omega_tilde,
            ..TraceRecord::new(self.round, self.node.parse()?)
        };
        Ok((info, rec))
    }
}

pub fn rows_for(info: &RunInfo, records: &[TraceRecord]) -> Vec<CsvRow> {
    records.iter().map(|r| CsvRow::new(info, r)).collect()
}

/// Header then one line per row; floats in shortest round-trip form, absent values empty.
pub fn write_csv<W: Write>(out: W, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(Error::InvalidArgument(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Column order of a rate-report CSV.
pub const REPORT_COLUMNS: [&str; 11] = [
    "run_id", "K", "U", "round", "pass", "rho_tilde", "rho_hat", "alpha_tilde", "omega_tilde", "inner_err", "disc_err",
];

/// One line of a rate report: either a per-pass line (`pass` set) or a per-round summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "U")]
    pub u: usize,
    pub round: usize,
    pub pass: Option<usize>,
    pub rho_tilde: Option<f64>,
    pub rho_hat: Option<f64>,
    pub alpha_tilde: Option<f64>,
    pub omega_tilde: Option<f64>,
    pub inner_err: Option<f64>,
    pub disc_err: Option<f64>,
}

pub fn report_rows(run_id: &str, u: usize, report: &MetricReport) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    let blank = |round, pass| ReportRow {
        run_id: run_id.to_owned(),
        k: report.k,
        u,
        round,
        pass,
        rho_tilde: None,
        rho_hat: None,
        alpha_tilde: None,
        omega_tilde: None,
        inner_err: None,
        disc_err: None,
    };
    for (i, rho) in report.rho_tilde.iter().enumerate() {
        for (p, (a, o)) in report.alpha_tilde[i].iter().zip(&report.omega_tilde[i]).enumerate() {
            rows.push(ReportRow {
                alpha_tilde: *a,
                omega_tilde: *o,
                inner_err: Some(report.inner_error[i][p + 1]),
                ..blank(i + 1, Some(p + 1))
            });
        }
        rows.push(ReportRow {
            rho_tilde: *rho,
            rho_hat: report.rho_hat,
            inner_err: report.inner_error[i].last().copied(),
            disc_err: Some(report.discrepancy_error[i]),
            ..blank(i + 1, None)
        });
    }
    rows
}

pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian, partition, Covariance, Example, Labeling};
    use crate::dsaga::{run_dsaga, ClusterConfig};
    use proptest::prelude::*;

    fn two_node_scalar() -> Vec<Shard> {
        let s2 = 2f64.sqrt();
        vec![
            Shard { node_id: 0, data: Dataset::new(vec![Example::dense(0.0, &[1.0]).unwrap()], None).unwrap() },
            Shard { node_id: 1, data: Dataset::new(vec![Example::dense(3.0 * s2, &[s2]).unwrap()], None).unwrap() },
        ]
    }

    fn union(shards: &[Shard]) -> Dataset {
        let ex = shards.iter().flat_map(|s| s.data.examples().iter().cloned()).collect();
        Dataset::new(ex, Some(shards[0].data.dim())).unwrap()
    }

    #[test]
    fn node_labels_round_trip() {
        for l in [NodeLabel::Avg, NodeLabel::Worst, NodeLabel::Node(0), NodeLabel::Node(31)] {
            assert_eq!(l.to_string().parse::<NodeLabel>().unwrap(), l);
        }
        assert!("x".parse::<NodeLabel>().is_err());
    }

    #[test]
    fn quadratic_reference_is_closed_form() {
        // f = ½(w - c)ᵀ diag(1, 2) (w - c) up to a constant, c = (3, -1)
        let s2 = 2f64.sqrt();
        let rows = vec![
            Example::dense(3.0 * 2f64.sqrt(), &[s2, 0.0]).unwrap(),
            Example::dense(-2.0, &[0.0, 2.0]).unwrap(),
        ];
        let data = Dataset::new(rows, None).unwrap();
        let (w, f) = reference_optimum(&Objective::quadratic(0.0), &data).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-14 && (w[1] + 1.0).abs() < 1e-14, "{w:?}");
        assert!(f.abs() < 1e-14);
    }

    #[test]
    fn logistic_reference_is_certified_and_unique() {
        let data = generate_gaussian(400, 6, &Covariance::Identity, &Labeling::Classification, 8).unwrap();
        let obj = Objective::logistic(0.01);
        let (w1, f1) = reference_optimum(&obj, &data).unwrap();
        assert!(norm(&full_gradient(&obj, &data, &w1).unwrap()) <= REFERENCE_TOL);
        let (_, f2) = reference_optimum_from(&obj, &data, &[1.0, -1.0, 2.0, 0.0, 0.5, -3.0]).unwrap();
        assert!((f1 - f2).abs() <= 1e-12);
    }

    #[test]
    fn decomposition_terms() {
        let w_star = [0.0, 0.0];
        let opt = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = decompose_error(&opt, &opt, &w_star).unwrap();
        assert_eq!(d.inner, 0.0);
        assert_eq!(d.discrepancy, 1.0);
        let at_star = vec![vec![0.0, 0.0]];
        let d = decompose_error(&at_star, &at_star, &w_star).unwrap();
        assert_eq!((d.inner, d.discrepancy), (0.0, 0.0));
        assert!(decompose_error(&opt, &opt[..1], &w_star).is_err());
    }

    proptest! {
        #[test]
        fn decomposition_chain_holds(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
            shift in prop::collection::vec(-5.0f64..5.0, 3),
            star in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let opt: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
            let d = decompose_error(&pts, &opt, &star).unwrap();
            prop_assert!(d.violation() <= 1e-12);
        }
    }

    #[test]
    fn rates_on_scalar_two_node_example() {
        let shards = two_node_scalar();
        let data = union(&shards);
        let obj = Objective::quadratic(0.0);
        let config = ClusterConfig { inner: InnerSolve::Exact, record_passes: true, ..ClusterConfig::new(2, 1, 3, 0) };
        let run = run_dsaga(&obj, &shards, &config, &[0.0]).unwrap();
        let (w, f) = reference_optimum(&obj, &data).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-14);
        let rep = rate_report(&run, &obj, &data, &shards, (&w, f)).unwrap();
        // hand recursion: node errors (-2,-2) → (1,-0.5) → (0.25,0.25) → (-0.125, 0.0625),
        // so the averaged point sits at -2, 0.25, 0.25, -0.03125 from w*
        let errs = [-2.0f64, 0.25, 0.25, -0.03125];
        // f - f* = ½ H e² with H = 3/2 for the union (mean of 1 and 2)
        for t in 0..3 {
            let expect = (errs[t + 1] / errs[t]).powi(2);
            assert!((rep.rho_tilde[t].unwrap() - expect).abs() < 1e-10, "round {t}: {:?} vs {expect}", rep.rho_tilde[t]);
        }
        assert!(rep.decomposition_violation <= 1e-12);
        assert!(rep.inner_error.iter().all(|r| r[1] == 0.0));
    }

    #[test]
    fn rho_tilde_edge_cases() {
        assert_eq!(ratio(0.3, 0.3), Some(1.0));
        assert_eq!(ratio(0.0, 0.3), Some(0.0));
        assert_eq!(ratio(0.1, 1e-15), None);
        let data = generate_gaussian(200, 3, &Covariance::Identity, &Labeling::Regression { noise: 0.2 }, 1).unwrap();
        let shards = partition(&data, 1, 0).unwrap();
        let obj = Objective::quadratic(0.0);
        let config = ClusterConfig { inner: InnerSolve::Exact, record_passes: true, ..ClusterConfig::new(1, 1, 2, 0) };
        let run = run_dsaga(&obj, &shards, &config, &[1.0, 1.0, 1.0]).unwrap();
        let (w, f) = reference_optimum(&obj, &data).unwrap();
        let rep = rate_report(&run, &obj, &data, &shards, (&w, f)).unwrap();
        assert!(rep.rho_tilde[0].unwrap() < 1e-20);
        assert_eq!(rep.rho_tilde[1], None);
        assert_eq!(rep.rho_hat, Some(0.0));
    }

    #[test]
    fn iterative_report_and_trace_shapes() {
        let data = generate_gaussian(600, 4, &Covariance::Identity, &Labeling::Classification, 2).unwrap();
        let shards = partition(&data, 3, 1).unwrap();
        let obj = Objective::logistic(0.01);
        let config = ClusterConfig { record_passes: true, ..ClusterConfig::new(3, 2, 2, 4) };
        let run = run_dsaga(&obj, &shards, &config, &[0.0; 4]).unwrap();
        let (w, f) = reference_optimum(&obj, &data).unwrap();
        let rep = rate_report(&run, &obj, &data, &shards, (&w, f)).unwrap();
        assert_eq!(rep.alpha_tilde.len(), 2);
        assert!(rep.alpha_tilde.iter().all(|r| r.len() == 2));
        assert!(rep.omega_tilde.iter().flatten().flatten().all(|&v| (0.0..1.0).contains(&v)));
        assert!(rep.decomposition_violation <= 1e-12);
        let rows = dsaga_trace(&run, &obj, &data, (&w, f), Some(&rep)).unwrap();
        // start row, then per round: 2 worst rows, 3 node rows, 1 avg row
        assert_eq!(rows.len(), 1 + 2 * (2 + 3 + 1));
        assert!(rows.iter().all(|r| r.excess.unwrap() >= -1e-12));
        let avg: Vec<_> = rows.iter().filter(|r| r.node == NodeLabel::Avg).map(|r| r.pass_total).collect();
        assert_eq!(avg, vec![0, 3, 6]);
    }

    #[test]
    fn report_csv_layout() {
        let shards = two_node_scalar();
        let data = union(&shards);
        let obj = Objective::quadratic(0.0);
        let config = ClusterConfig { inner: InnerSolve::Exact, record_passes: true, ..ClusterConfig::new(2, 1, 2, 0) };
        let run = run_dsaga(&obj, &shards, &config, &[0.0]).unwrap();
        let (w, f) = reference_optimum(&obj, &data).unwrap();
        let rep = rate_report(&run, &obj, &data, &shards, (&w, f)).unwrap();
        let rows = report_rows("x", 1, &rep);
        // one pass line and one summary line per round
        assert_eq!(rows.len(), 4);
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&REPORT_COLUMNS.join(",")));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn geometric_mean_cases() {
        assert_eq!(geometric_mean([None, None]), None);
        assert!((geometric_mean([Some(0.25), None, Some(1.0)]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(geometric_mean([Some(0.0), Some(1.0)]), Some(0.0));
    }

    fn sample_rows(n: usize) -> Vec<CsvRow> {
        let info = RunInfo { run_id: "r1".into(), algo: "dsaga".into(), k: 4, u: Some(2) };
        (0..n)
            .map(|i| {
                let rec = TraceRecord {
                    pass_opt: i,
                    pass_total: 2 * i,
                    f: 0.1 + i as f64 / 3.0,
                    excess: Some(1e-10 / (i + 1) as f64),
                    rho_tilde: (i % 2 == 0).then_some(0.123456789012345),
                    ..TraceRecord::new(i, if i == 0 { NodeLabel::Avg } else { NodeLabel::Node(i) })
                };
                CsvRow::new(&info, &rec)
            })
            .collect()
    }

    #[test]
    fn csv_header_only_when_empty() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{}\n", CSV_COLUMNS.join(",")));
    }

    #[test]
    fn csv_round_trip() {
        let rows = sample_rows(3);
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().contains(",,"));
        let back = read_csv(&buf[..]).unwrap();
        assert_eq!(back, rows);
        let (info, rec) = back[1].split().unwrap();
        assert_eq!(info.k, 4);
        assert_eq!(rec.node, NodeLabel::Node(1));
    }
}
