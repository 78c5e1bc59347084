use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dsaga::baselines::{gd_run, lbfgs_run, sgd_warmstart, GdStep, LbfgsConfig};
use dsaga::data::partition;
use dsaga::diagnostics::{
    dsaga_trace, fill_excess, rate_report, reference_optimum, report_rows, rows_for, write_csv, write_report_csv,
    CsvRow, NodeLabel, ReportRow, RunInfo, TraceRecord,
};
use dsaga::dsaga::run_dsaga;
use dsaga::saga::run_saga_with_reference;
use dsaga::theory::{global_optimum, predict_errors, rho_bound, shard_hessians, wishart_empirics};
use dsaga::{sampler, ClusterConfig, Dataset, Example, InnerSolve, Objective, SagaState, Shard, StepRule, SyncGradient};
use nalgebra::DVector;

use crate::source::{Source, SyntheticSpec};
use crate::{Algo, AlgoArgs, Axis, DataArgs, Lemma, ObjectiveKind, OptimumArgs, Preset, RunArgs, SweepArgs, SyncGrad, VerifyArgs};

/// Relative tolerances of the Wishart checks: norm, inverse trace, pairwise contraction.
const LEMMA2_TOL: [f64; 3] = [0.05, 0.05, 0.20];

fn objective(args: &DataArgs) -> Result<Objective> {
    ensure!(args.lambda >= 0.0 && args.lambda.is_finite(), "--lambda must be a finite number ≥ 0");
    let obj = match args.objective {
        ObjectiveKind::Logistic => Objective::logistic(args.lambda),
        ObjectiveKind::Quadratic => Objective::quadratic(args.lambda),
    };
    obj.validate()?;
    Ok(obj)
}

fn load(args: &DataArgs, obj: &Objective) -> Result<Dataset> {
    let source = match (&args.data, &args.synthetic) {
        (Some(path), None) => Source::File { path: path.clone(), dim: args.dim },
        (None, Some(spec)) => Source::Synthetic(SyntheticSpec::parse(spec)?),
        _ => bail!("give exactly one of --data or --synthetic"),
    };
    let data = source.load(obj)?;
    ensure!(!data.is_empty(), "dataset is empty");
    Ok(data)
}

/// Worker threads from `DSAGA_THREADS`, if set.
fn threads() -> Result<Option<usize>> {
    match std::env::var("DSAGA_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("DSAGA_THREADS={v:?} is not a count"))?;
            ensure!(n > 0, "DSAGA_THREADS must be positive");
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn validate(args: &AlgoArgs, obj: &Objective, algo: Algo) -> Result<()> {
    ensure!(args.k >= 1, "--k must be at least 1");
    ensure!(args.u >= 1, "--u must be at least 1");
    ensure!(args.rounds >= 1, "--rounds must be at least 1");
    ensure!(args.passes >= 1, "--passes must be at least 1");
    if args.exact_inner {
        ensure!(obj.is_quadratic(), "--exact-inner requires --objective quadratic");
        ensure!(algo == Algo::Dsaga, "--exact-inner only applies to dsaga");
    }
    if let Some(s) = args.step {
        ensure!(s > 0.0 && s.is_finite(), "--step must be positive");
    }
    Ok(())
}

fn start_point(args: &AlgoArgs, obj: &Objective, data: &Dataset) -> Result<Vec<f64>> {
    let zero = vec![0.0; data.dim()];
    if args.warmstart {
        Ok(sgd_warmstart(obj, data, &zero, args.seed)?)
    } else {
        Ok(zero)
    }
}

fn cluster_config(args: &AlgoArgs, record_passes: bool) -> Result<ClusterConfig> {
    Ok(ClusterConfig {
        step_rule: args.step.map_or(StepRule::Auto, StepRule::Explicit),
        inner: if args.exact_inner { InnerSolve::Exact } else { InnerSolve::Iterative },
        refresh_memory: !args.no_refresh,
        sync_gradient: match args.sync_grad {
            SyncGrad::Stored => SyncGradient::StoredAverage,
            SyncGrad::Exact => SyncGradient::Exact,
        },
        threads: threads()?,
        record_passes,
        ..ClusterConfig::new(args.k, args.u, args.rounds, args.seed)
    })
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_trace(path: Option<&Path>, rows: &[CsvRow]) -> Result<()> {
    write_csv(open_out(path)?, rows).with_context(|| "writing trace CSV")
}

fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_report_csv(BufWriter::new(file), rows).with_context(|| "writing report CSV")
}

struct DsagaOutcome {
    trace: Vec<TraceRecord>,
    report: Option<Vec<ReportRow>>,
    summary: String,
}

fn dsaga_once(args: &AlgoArgs, obj: &Objective, data: &Dataset, optimum: (&[f64], f64), with_report: bool, run_id: &str) -> Result<DsagaOutcome> {
    let shards = partition(data, args.k, args.seed)?;
    let config = cluster_config(args, with_report)?;
    let w0 = start_point(args, obj, data)?;
    let run = run_dsaga(obj, &shards, &config, &w0)?;
    let (report, summary) = if with_report {
        let rep = rate_report(&run, obj, data, &shards, optimum)?;
        let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:.4e}"));
        let summary = format!(
            "{run_id}: rho_tilde {} rho_hat {} alpha_tilde {} omega_tilde {}",
            fmt(rep.rho_tilde_summary()),
            fmt(rep.rho_hat),
            fmt(rep.alpha_summary()),
            fmt(rep.omega_summary())
        );
        (Some(rep), summary)
    } else {
        (None, format!("{run_id}: final excess {:.4e}", dsaga::diagnostics::excess_error(obj, data, optimum.0, &run.w)?))
    };
    let trace = dsaga_trace(&run, obj, data, optimum, report.as_ref())?;
    let report = report.map(|r| report_rows(run_id, args.u, &r));
    Ok(DsagaOutcome { trace, report, summary })
}

pub fn run(args: &RunArgs) -> Result<bool> {
    let obj = objective(&args.data)?;
    let a = &args.algo_args;
    validate(a, &obj, args.algo)?;
    if args.report.is_some() {
        ensure!(args.algo == Algo::Dsaga, "--report only applies to dsaga");
    }
    let data = load(&args.data, &obj)?;
    let (w_star, f_star) = reference_optimum(&obj, &data).context("computing the reference optimum")?;
    let optimum = (w_star.as_slice(), f_star);
    let algo_name = format!("{:?}", args.algo).to_lowercase();
    let distributed = args.algo == Algo::Dsaga;
    let run_id = args.run_id.clone().unwrap_or_else(|| {
        if distributed {
            format!("{algo_name}-K{}-U{}-s{}", a.k, a.u, a.seed)
        } else {
            format!("{algo_name}-s{}", a.seed)
        }
    });
    let info = RunInfo {
        run_id: run_id.clone(),
        algo: algo_name,
        k: if distributed { a.k } else { 1 },
        u: distributed.then_some(a.u),
    };
    let w0 = start_point(a, &obj, &data)?;
    let records = match args.algo {
        Algo::Saga => {
            let rule = a.step.map_or(StepRule::Auto, StepRule::Explicit);
            let mut state = SagaState::new(&obj, &data, &w0, rule, sampler(a.seed, 0))?;
            run_saga_with_reference(&mut state, &obj, &data, a.passes, 1, Some(&w_star))?
        }
        Algo::Dsaga => {
            let out = dsaga_once(a, &obj, &data, optimum, args.report.is_some(), &run_id)?;
            eprintln!("{}", out.summary);
            if let (Some(path), Some(rows)) = (&args.report, &out.report) {
                write_report(path, rows)?;
            }
            out.trace
        }
        Algo::Gd => {
            let rule = a.step.map_or(GdStep::InverseL, GdStep::Explicit);
            let run = gd_run(&obj, &data, &w0, a.passes, rule)?;
            let mut recs: Vec<TraceRecord> = run
                .trace
                .iter()
                .enumerate()
                .map(|(i, &f)| TraceRecord { pass_opt: i, pass_total: i, f, ..TraceRecord::new(0, NodeLabel::Avg) })
                .collect();
            fill_excess(&mut recs, f_star);
            recs
        }
        Algo::Lbfgs => {
            let config = LbfgsConfig { memory: a.memory, max_iters: a.passes, tol: a.tol };
            let run = lbfgs_run(&obj, &data, &w0, config)?;
            let mut recs: Vec<TraceRecord> = run
                .trace
                .iter()
                .map(|it| TraceRecord {
                    pass_opt: it.passes,
                    pass_total: it.passes,
                    f: it.f,
                    grad_norm: Some(it.grad_norm),
                    ..TraceRecord::new(0, NodeLabel::Avg)
                })
                .collect();
            fill_excess(&mut recs, f_star);
            if !run.converged {
                eprintln!("{run_id}: gradient norm {:.3e} above tolerance after {} iterations", run.grad_norm, a.passes);
            }
            recs
        }
    };
    write_trace(args.out.as_deref(), &rows_for(&info, &records))?;
    Ok(true)
}

pub fn sweep(args: &SweepArgs) -> Result<bool> {
    ensure!(!args.values.is_empty(), "--values must not be empty");
    let obj = objective(&args.data)?;
    let data = load(&args.data, &obj)?;
    let (w_star, f_star) = reference_optimum(&obj, &data).context("computing the reference optimum")?;
    let mut trace = Vec::new();
    let mut report = Vec::new();
    for &v in &args.values {
        let mut a = args.algo_args.clone();
        let label = match args.axis {
            Axis::K => {
                a.k = v;
                format!("K={v}")
            }
            Axis::U => {
                a.u = v;
                format!("U={v}")
            }
        };
        let attempt = validate(&a, &obj, Algo::Dsaga).and_then(|_| dsaga_once(&a, &obj, &data, (&w_star, f_star), true, &label));
        let out = match attempt {
            Ok(out) => out,
            Err(e) => {
                write_trace(args.out.as_deref(), &trace)?;
                if let Some(p) = &args.report {
                    write_report(p, &report)?;
                }
                return Err(e.context(format!("sweep aborted at {label}; output holds the runs before it")));
            }
        };
        println!("{}", out.summary);
        let info = RunInfo { run_id: label, algo: "dsaga".into(), k: a.k, u: Some(a.u) };
        trace.extend(rows_for(&info, &out.trace));
        report.extend(out.report.unwrap_or_default());
    }
    if args.out.is_none() && args.report.is_none() {
        // summaries already went to stdout; keep it to them
        return Ok(true);
    }
    if let Some(p) = &args.out {
        write_trace(Some(p), &trace)?;
    }
    if let Some(p) = &args.report {
        write_report(p, &report)?;
    }
    Ok(true)
}

pub fn optimum(args: &OptimumArgs) -> Result<bool> {
    let obj = objective(&args.data)?;
    let data = load(&args.data, &obj)?;
    let (w, f) = reference_optimum(&obj, &data)?;
    let g = dsaga::losses::full_gradient(&obj, &data, &w)?;
    println!("f* = {f}");
    println!("grad_norm = {:e}", g.iter().map(|x| x * x).sum::<f64>().sqrt());
    match &args.out {
        Some(p) => {
            let mut out = open_out(Some(p))?;
            for x in &w {
                writeln!(out, "{x}")?;
            }
            out.flush()?;
        }
        None => println!("w* = {w:?}"),
    }
    Ok(true)
}

pub fn verify(args: &VerifyArgs) -> Result<bool> {
    match args.which {
        Lemma::Lemma1 => verify_lemma1(args),
        Lemma::Lemma2 => verify_lemma2(args),
    }
}

fn two_node_shards() -> Result<Vec<Shard>> {
    let s2 = 2f64.sqrt();
    Ok(vec![
        Shard { node_id: 0, data: Dataset::new(vec![Example::dense(0.0, &[1.0])?], None)? },
        Shard { node_id: 1, data: Dataset::new(vec![Example::dense(3.0 * s2, &[s2])?], None)? },
    ])
}

fn verify_lemma1(args: &VerifyArgs) -> Result<bool> {
    let obj = Objective::quadratic(args.lambda);
    obj.validate()?;
    ensure!(args.rounds >= 1, "--rounds must be at least 1");
    let shards = match args.preset {
        Some(Preset::TwoNode) => two_node_shards()?,
        None => {
            ensure!(args.k >= 1, "--k must be at least 1");
            let data = SyntheticSpec::parse(&args.synthetic)?.generate(&obj)?;
            if args.identical_shards {
                (0..args.k).map(|node_id| Shard { node_id, data: data.clone() }).collect()
            } else {
                partition(&data, args.k, args.seed)?
            }
        }
    };
    let k = shards.len();
    let d = shards[0].data.dim();
    let hessians = shard_hessians(&obj, &shards)?;
    let params = rho_bound(&hessians)?;
    let w_star = global_optimum(&hessians)?;
    let config = ClusterConfig { inner: InnerSolve::Exact, threads: threads()?, ..ClusterConfig::new(k, 1, args.rounds, args.seed) };
    let w0 = vec![0.0; d];
    let run = run_dsaga(&obj, &shards, &config, &w0)?;

    println!("K = {k}, rho = {:.6}, bound (1-1/K)rho = {:.6}", params.rho, params.contraction);
    let mut prev: Vec<DVector<f64>> = vec![DVector::from_column_slice(&w0) - &w_star; k];
    let mut all_ok = true;
    for r in &run.rounds {
        let errs: Vec<DVector<f64>> = r.ends.iter().map(|w| DVector::from_column_slice(w) - &w_star).collect();
        let before = prev.iter().map(|e| e.norm()).fold(0.0, f64::max);
        let after = errs.iter().map(|e| e.norm()).fold(0.0, f64::max);
        let predicted = predict_errors(&hessians, &prev)?;
        let residual = errs.iter().zip(&predicted).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let ok = after <= (params.contraction + 1e-9) * before + 1e-12;
        all_ok &= ok;
        let ratio = if before > 0.0 { after / before } else { 0.0 };
        println!(
            "round {}: max error {after:.6e}, ratio {ratio:.6}, recursion residual {residual:.3e}, {}",
            r.round,
            if ok { "ok" } else { "VIOLATED" }
        );
        if !ok {
            eprintln!("contraction bound violated at round {}", r.round);
        }
        prev = errs;
    }
    Ok(all_ok)
}

fn verify_lemma2(args: &VerifyArgs) -> Result<bool> {
    let n = match args.n_per_node {
        Some(n) => n,
        None => {
            ensure!(args.gamma > 0.0 && args.gamma < 1.0, "--gamma must lie in (0, 1)");
            (args.d as f64 / args.gamma).round() as usize
        }
    };
    let stats = wishart_empirics(args.d, n, args.pairs, args.seed)?;
    println!("d = {}, n = {n}, gamma = {:.4}, pairs = {}", args.d, stats.gamma_mp, args.pairs);
    let checks = [
        ("norm ‖H‖", stats.norm_stat, stats.predicted_norm(), LEMMA2_TOL[0]),
        ("Tr(H^-1)/d", stats.trace_inv_stat, stats.predicted_trace_inv(), LEMMA2_TOL[1]),
        ("‖I - Hi^-1 Hj‖", stats.rho_stat, stats.predicted_rho(), LEMMA2_TOL[2]),
    ];
    let mut all_ok = true;
    for (name, got, want, tol) in checks {
        let rel = (got - want).abs() / want;
        let ok = rel <= tol;
        all_ok &= ok;
        println!(
            "{name}: empirical {got:.4}, predicted {want:.4}, relative error {:.1}% (limit {:.0}%) {}",
            rel * 100.0,
            tol * 100.0,
            if ok { "ok" } else { "FAILED" }
        );
    }
    Ok(all_ok)
}
