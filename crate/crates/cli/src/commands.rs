//! The four experiment drivers. Each validates the scenario, runs, writes its
//! files into the output directory and returns a JSON-serializable summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gaitlab_core::clred::{QUADRATURE_NODES, QUADRATURE_PANELS};
use gaitlab_core::sim::run_gait_until;
use gaitlab_core::{
    run_gait, steady_descriptors, ClredPredictor, FailureKind, GaitParams, ImpactState, LinearizationConfig,
    SettlingSchedule, SimConfig, StepFailure, StepRecord, TerrainProfile, WalkabilityReport,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::output::{write_descriptors, write_json, write_sweep, write_trace, SweepRow};

pub const TRACE_FILE: &str = "trace.csv";
pub const DESCRIPTOR_FILE: &str = "descriptors.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const VERDICT_FILE: &str = "verdict.json";
pub const BENCH_FILE: &str = "bench.json";
pub const SWEEP_FILES: [(&str, &str); 4] = [
    ("period", "sweep_period.csv"),
    ("theta1_minus", "sweep_theta1_minus.csv"),
    ("step_length", "sweep_step_length.csv"),
    ("speed", "sweep_speed.csv"),
];

/// A validated scenario plus where and how to run it.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ScenarioConfig,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub strict: bool,
}

impl Context {
    pub fn new(config: ScenarioConfig, out_dir: PathBuf, workers: Option<usize>, strict: bool) -> Result<Self, CliError> {
        config.validate()?;
        if workers == Some(0) {
            return Err(CliError::Config("--workers must be > 0".into()));
        }
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self {
            config,
            out_dir,
            workers,
            strict,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Completed steps and verdict of one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelOutcome {
    pub model: &'static str,
    pub steps_completed: usize,
    /// Sum of completed step periods [s].
    pub walked_time: f64,
    pub failure: Option<StepFailure>,
}

impl ModelOutcome {
    fn new(model: &'static str, records: &[StepRecord], failure: Option<StepFailure>) -> Self {
        Self {
            model,
            steps_completed: records.len(),
            walked_time: records.iter().fold(0.0, |t, r| t + r.period),
            failure,
        }
    }
}

/// Numeric breakdowns are internal errors; other failures only matter under
/// `--strict`.
fn conclude<'a>(failures: impl IntoIterator<Item = &'a StepFailure>, strict: bool) -> Result<(), CliError> {
    let failures: Vec<_> = failures.into_iter().collect();
    if let Some(f) = failures.iter().find(|f| f.kind == FailureKind::Numeric) {
        return Err(CliError::Internal(f.to_string()));
    }
    match failures.first() {
        Some(f) if strict => Err(CliError::Scenario(f.to_string())),
        _ => Ok(()),
    }
}

fn predict_report(cfg: &ScenarioConfig, n_steps: usize) -> Result<WalkabilityReport, CliError> {
    let (p, gait) = (&cfg.physical, &cfg.gait);
    let mut predictor = ClredPredictor::new(p, gait, &cfg.linearization()?)?;
    let start = ImpactState::flat(p, gait, cfg.run.initial_theta1_dot);
    Ok(predictor.run_until(start, &cfg.terrain, &cfg.run.schedule(), n_steps, cfg.run.duration)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub config_hash: String,
    pub runs: Vec<ModelOutcome>,
}

/// Nonlinear trace and descriptors, plus CLRed descriptors when selected.
pub fn simulate(ctx: &Context) -> Result<SimulateSummary, CliError> {
    let cfg = &ctx.config;
    let n = cfg.run.step_count();
    let mut runs = Vec::new();
    let mut rows: Vec<(&str, StepRecord)> = Vec::new();
    if cfg.run.model.nonlinear() {
        let run = run_gait_until(
            &cfg.physical,
            &cfg.gait,
            &cfg.sim_config(),
            cfg.run.initial_theta1_dot,
            n,
            cfg.run.duration,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        write_trace(&ctx.path(TRACE_FILE), &run.trace)?;
        rows.extend(run.records.iter().map(|r| ("nonlinear", *r)));
        runs.push(ModelOutcome::new("nonlinear", &run.records, run.failure));
    }
    if cfg.run.model.clred() {
        let report = predict_report(cfg, n)?;
        rows.extend(report.records.iter().map(|r| ("clred", *r)));
        runs.push(ModelOutcome::new("clred", &report.records, report.failure));
    }
    write_descriptors(&ctx.path(DESCRIPTOR_FILE), rows.iter().map(|(m, r)| (*m, r)))?;
    let summary = SimulateSummary {
        config_hash: cfg.hash(),
        runs,
    };
    write_json(&ctx.path(SUMMARY_FILE), &summary)?;
    conclude(summary.runs.iter().filter_map(|r| r.failure.as_ref()), ctx.strict)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub walkable: bool,
    /// `None` when only a duration bounds the run.
    pub steps_requested: Option<usize>,
    pub steps_completed: usize,
    pub failure: Option<StepFailure>,
    pub theta2_star: f64,
    pub config_hash: String,
}

/// Walkability determination with the linearized predictor.
pub fn predict(ctx: &Context) -> Result<Verdict, CliError> {
    let cfg = &ctx.config;
    let n = cfg.run.step_count();
    let report = predict_report(cfg, n)?;
    write_descriptors(&ctx.path(DESCRIPTOR_FILE), report.records.iter().map(|r| ("clred", r)))?;
    let verdict = Verdict {
        walkable: report.walkable,
        steps_requested: (n != usize::MAX).then_some(n),
        steps_completed: report.records.len(),
        failure: report.failure,
        theta2_star: cfg.linearization()?.expansion_point(&cfg.gait),
        config_hash: cfg.hash(),
    };
    write_json(&ctx.path(VERDICT_FILE), &verdict)?;
    conclude(verdict.failure.as_ref(), ctx.strict)?;
    Ok(verdict)
}

#[derive(Debug, Clone, Copy)]
enum SweepJob {
    Nonlinear { beta: f64 },
    Clred { kappa: f64, beta: f64 },
}

struct SweepPoint {
    model: &'static str,
    kappa: Option<f64>,
    beta: f64,
    outcome: Result<StepRecord, (String, Option<usize>)>,
}

fn steady_state(cfg: &ScenarioConfig, job: SweepJob) -> Result<StepRecord, (String, Option<usize>)> {
    let spec = &cfg.sweep;
    let p = &cfg.physical;
    let w0 = cfg.run.initial_theta1_dot;
    let invalid = |e: gaitlab_core::GaitError| {
        let status = match e {
            gaitlab_core::GaitError::InvalidLinearization { .. } => "invalid_linearization",
            _ => "invalid_parameter",
        };
        (status.to_string(), None)
    };
    let failed = |f: StepFailure| (f.kind.to_string(), Some(f.step));
    match job {
        SweepJob::Clred { kappa, beta } => {
            let gait = GaitParams { beta, ..cfg.gait };
            let mut predictor =
                ClredPredictor::new(p, &gait, &LinearizationConfig::from_kappa(kappa, beta)).map_err(invalid)?;
            let n = spec.settle_steps + spec.average_steps;
            let report = predictor
                .run(ImpactState::flat(p, &gait, w0), &TerrainProfile::flat(), &SettlingSchedule::uniform(), n)
                .map_err(invalid)?;
            if let Some(f) = report.failure {
                return Err(failed(f));
            }
            Ok(steady_descriptors(&report.records, spec.settle_steps..n).expect("window is non-empty"))
        }
        SweepJob::Nonlinear { beta } => {
            let gait = GaitParams { beta, ..cfg.gait };
            let sim = SimConfig {
                terrain: TerrainProfile::flat(),
                settling: SettlingSchedule::uniform(),
                trace_stride: 0,
                ..cfg.sim_config()
            };
            let n = spec.nonlinear_steps;
            let run = run_gait(p, &gait, &sim, w0, n).map_err(invalid)?;
            if let Some(f) = run.failure {
                return Err(failed(f));
            }
            let window = (n - spec.nonlinear_average_steps)..n;
            Ok(steady_descriptors(&run.records, window).expect("window is non-empty"))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub nonlinear_points: usize,
    pub clred_points: usize,
    pub failed_points: usize,
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Internal(e.to_string()))
}

/// Steady descriptors against beta for each kappa, plus nonlinear references.
///
/// Sweeps always walk on flat ground with the nominal settling time. Rows
/// come out in a fixed order (nonlinear first, then each kappa in the given
/// order, beta ascending) whatever the worker count.
pub fn sweep(ctx: &Context) -> Result<SweepSummary, CliError> {
    let cfg = &ctx.config;
    let spec = &cfg.sweep;
    let mut jobs = Vec::new();
    if cfg.run.model.nonlinear() {
        jobs.extend(spec.nonlinear_betas().into_iter().map(|beta| SweepJob::Nonlinear { beta }));
    }
    if cfg.run.model.clred() {
        for &kappa in &spec.kappas {
            jobs.extend(spec.betas().into_iter().map(|beta| SweepJob::Clred { kappa, beta }));
        }
    }
    let points: Vec<SweepPoint> = pool(ctx.workers)?.install(|| {
        jobs.par_iter()
            .map(|&job| {
                let (model, kappa, beta) = match job {
                    SweepJob::Nonlinear { beta } => ("nonlinear", None, beta),
                    SweepJob::Clred { kappa, beta } => ("clred", Some(kappa), beta),
                };
                SweepPoint {
                    model,
                    kappa,
                    beta,
                    outcome: steady_state(cfg, job),
                }
            })
            .collect()
    });

    let pick: [fn(&StepRecord) -> f64; 4] = [|r| r.period, |r| r.theta1_minus, |r| r.step_length, |r| r.speed];
    for ((_, file), value) in SWEEP_FILES.iter().zip(pick) {
        let rows: Vec<SweepRow> = points
            .iter()
            .map(|pt| match &pt.outcome {
                Ok(r) => SweepRow {
                    model: pt.model,
                    kappa: pt.kappa,
                    beta: pt.beta,
                    value: Some(value(r)),
                    status: "ok".into(),
                    failure_step: None,
                },
                Err((status, step)) => SweepRow {
                    model: pt.model,
                    kappa: pt.kappa,
                    beta: pt.beta,
                    value: None,
                    status: status.clone(),
                    failure_step: *step,
                },
            })
            .collect();
        write_sweep(&ctx.path(file), &rows)?;
    }
    let summary = SweepSummary {
        config_hash: cfg.hash(),
        nonlinear_points: points.iter().filter(|p| p.model == "nonlinear").count(),
        clred_points: points.iter().filter(|p| p.model == "clred").count(),
        failed_points: points.iter().filter(|p| p.outcome.is_err()).count(),
    };
    write_json(&ctx.path(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub steps: usize,
    pub dt: f64,
    pub quadrature_panels: usize,
    pub quadrature_nodes: usize,
    pub nonlinear_seconds: f64,
    /// Best of `clred_repeats` runs, including construction of the system.
    pub clred_seconds: f64,
    pub clred_repeats: usize,
    pub speedup: f64,
    pub nonlinear: ModelOutcome,
    pub clred: ModelOutcome,
}

pub const BENCH_REPEATS: usize = 5;

/// Wall-clock comparison of both models on the same scenario.
pub fn bench(ctx: &Context) -> Result<BenchReport, CliError> {
    let cfg = &ctx.config;
    let n = cfg.run.steps.unwrap_or(crate::config::DEFAULT_STEPS);
    let sim = SimConfig {
        trace_stride: 0,
        ..cfg.sim_config()
    };
    let start = Instant::now();
    let run = run_gait(&cfg.physical, &cfg.gait, &sim, cfg.run.initial_theta1_dot, n)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let nonlinear_seconds = start.elapsed().as_secs_f64();

    let mut clred_seconds = f64::INFINITY;
    let mut report = None;
    for _ in 0..BENCH_REPEATS {
        let start = Instant::now();
        let r = predict_report(cfg, n)?;
        clred_seconds = clred_seconds.min(start.elapsed().as_secs_f64());
        report = Some(r);
    }
    let report = report.expect("at least one repetition");
    let out = BenchReport {
        config_hash: cfg.hash(),
        steps: n,
        dt: cfg.sim.dt,
        quadrature_panels: QUADRATURE_PANELS,
        quadrature_nodes: QUADRATURE_NODES,
        nonlinear_seconds,
        clred_seconds,
        clred_repeats: BENCH_REPEATS,
        speedup: nonlinear_seconds / clred_seconds,
        nonlinear: ModelOutcome::new("nonlinear", &run.records, run.failure),
        clred: ModelOutcome::new("clred", &report.records, report.failure),
    };
    write_json(&ctx.path(BENCH_FILE), &out)?;
    conclude(
        out.nonlinear.failure.iter().chain(out.clred.failure.iter()),
        ctx.strict,
    )?;
    Ok(out)
}

/// Output directory: the flag, then the config, then `GAITLAB_OUT`, then
/// `./gaitlab-out`.
pub fn resolve_out_dir(flag: Option<&Path>, config: &ScenarioConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.run.output_dir.clone())
        .or_else(|| std::env::var_os(crate::OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("gaitlab-out"))
}
