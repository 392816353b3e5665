//! Multi-seed experiments: JSON configuration, concurrent runs, trace and
//! summary CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfbo::{cost_to_reach, near_optimal_threshold, Checkpoint, Method, MethodConfig, RunResult, RunSettings, Runner, TracePoint};
use crate::objectives::{synthetic_by_name, ExternalObjective, CostModel, KnownOptimum, Objective};

pub const TRACE_DIR: &str = "traces";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Synthetic {
        name: String,
        #[serde(default)]
        noise_sd: f64,
    },
    /// A child process speaking the line-delimited JSON protocol.
    External {
        name: String,
        command: Vec<String>,
        design_dim: usize,
        #[serde(default = "default_timeout")]
        timeout_seconds: f64,
        #[serde(default)]
        known_optimum: Option<KnownOptimum>,
    },
}

fn default_timeout() -> f64 {
    30.0
}

impl ObjectiveConfig {
    pub fn name(&self) -> &str {
        match self {
            ObjectiveConfig::Synthetic { name, .. } | ObjectiveConfig::External { name, .. } => name,
        }
    }

    /// Each run gets its own instance, so external runs never share a child.
    pub fn build(&self) -> Result<Box<dyn Objective>> {
        match self {
            ObjectiveConfig::Synthetic { name, noise_sd } => synthetic_by_name(name, *noise_sd),
            ObjectiveConfig::External {
                command,
                design_dim,
                timeout_seconds,
                known_optimum,
                ..
            } => {
                let mut obj = ExternalObjective::new(command.clone(), *design_dim, *timeout_seconds)?;
                if let Some(opt) = known_optimum {
                    if opt.x.len() != *design_dim {
                        return Err(Error::Config("known_optimum.x has the wrong dimension".into()));
                    }
                    obj = obj.with_known_optimum(opt.clone());
                }
                Ok(Box::new(obj))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    pub methods: Vec<Method>,
    pub budget: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub cost_model: CostModel,
    /// Initial design sizes, learning, acquisition and search settings.
    #[serde(default)]
    pub method_config: MethodConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Save a checkpoint after every iteration and resume from it on re-run.
    #[serde(default)]
    pub checkpoint: bool,
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: &str| Err(Error::Config(m.into()));
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return cfg_err("budget must be positive");
        }
        if self.seeds.is_empty() {
            return cfg_err("seeds must be non-empty");
        }
        if self.methods.is_empty() {
            return cfg_err("methods must be non-empty");
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::Config(format!("method {m} listed twice")));
            }
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(Error::Config(format!("seed {s} listed twice")));
            }
        }
        if self.workers == 0 {
            return cfg_err("workers must be at least 1");
        }
        let name = self.objective.name();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return cfg_err("objective name must be non-empty and use [A-Za-z0-9_-]");
        }
        self.cost_model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.method_config.validate().map_err(|e| Error::Config(e.to_string()))?;
        // external commands are only spawned on first evaluation
        self.objective.build().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn settings(&self, method: Method, seed: u64) -> RunSettings {
        RunSettings {
            method,
            budget: self.budget,
            cost_model: self.cost_model,
            config: self.method_config.clone(),
            seed,
        }
    }

    /// `(method, seed)` pairs in reporting order.
    pub fn jobs(&self) -> Vec<(Method, u64)> {
        self.methods
            .iter()
            .flat_map(|&m| self.seeds.iter().map(move |&s| (m, s)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: Method,
    pub seed: u64,
    /// Present whenever the run got far enough to produce a dataset.
    pub result: Option<RunResult>,
    pub trace_path: Option<PathBuf>,
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.result.is_some()
    }
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub objective: String,
    /// Completed runs with a target-fidelity observation.
    pub seeds: usize,
    pub mean_best: f64,
    pub std_best: f64,
    /// Mean over the runs that got within 5% of the known optimum.
    pub mean_cost_to_95pct: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(|r| !r.succeeded())
    }

    pub fn all_succeeded(&self) -> bool {
        self.failures().next().is_none()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn run_file_stem(objective: &str, method: Method, seed: u64) -> String {
    format!("{objective}_{}_seed{seed}", method.tag())
}

/// Runs every `(method, seed)` pair on up to `workers` threads and writes the
/// artifacts under `out_dir`. Run failures are reported, not returned.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize, out_dir: &Path) -> Result<ExperimentReport> {
    use rayon::prelude::*;

    cfg.validate()?;
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let trace_dir = out_dir.join(TRACE_DIR);
    fs::create_dir_all(&trace_dir).map_err(io_err(&trace_dir))?;
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    if cfg.checkpoint {
        fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let jobs = cfg.jobs();
    let runs: Vec<RunOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(method, seed)| run_one(cfg, method, seed, &trace_dir, cfg.checkpoint.then_some(ckpt_dir.as_path())))
            .collect()
    });

    let optimum = cfg.objective.build()?.known_optimum().map(|o| o.value);
    let summary = summarize(cfg.objective.name(), &cfg.methods, &runs, optimum);
    let summary_path = out_dir.join(SUMMARY_FILE);
    write_atomic(&summary_path, &summary_csv(&summary))?;
    let failures_path = out_dir.join(FAILURES_FILE);
    write_atomic(&failures_path, &failures_csv(&runs))?;
    Ok(ExperimentReport {
        out_dir: out_dir.to_path_buf(),
        runs,
        summary,
    })
}

fn run_one(cfg: &ExperimentConfig, method: Method, seed: u64, trace_dir: &Path, ckpt_dir: Option<&Path>) -> RunOutcome {
    let mut outcome = RunOutcome {
        method,
        seed,
        result: None,
        trace_path: None,
        error: None,
    };
    let stem = run_file_stem(cfg.objective.name(), method, seed);
    let result = (|| -> Result<RunResult> {
        let objective = cfg.objective.build()?;
        let settings = cfg.settings(method, seed);
        let Some(dir) = ckpt_dir else {
            return crate::mfbo::run(&objective, settings);
        };
        let path = dir.join(format!("{stem}.json"));
        let mut runner = match fs::read_to_string(&path) {
            Ok(text) => {
                let ckpt = Checkpoint::from_json(&text)?;
                if ckpt.settings != settings {
                    return Err(Error::Config(format!("{} was written for different settings", path.display())));
                }
                Runner::resume(&objective, ckpt)?
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Runner::start(&objective, settings)?,
            Err(e) => return Err(io_err(&path)(e)),
        };
        write_atomic(&path, &runner.checkpoint().to_json()?)?;
        while runner.step() {
            write_atomic(&path, &runner.checkpoint().to_json()?)?;
        }
        write_atomic(&path, &runner.checkpoint().to_json()?)?;
        Ok(runner.finish())
    })();
    match result {
        Ok(r) => {
            outcome.error = r.failure.clone();
            let path = trace_dir.join(format!("{stem}.csv"));
            match write_atomic(&path, &trace_csv(&r, cfg.method_config.n_init(method))) {
                Ok(()) => outcome.trace_path = Some(path),
                Err(e) => outcome.error = Some(e.to_string()),
            }
            outcome.result = Some(r);
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Trace CSV for one run. Initial-design rows carry iteration 0; row `i`
/// after them carries outer iteration `i - n_init + 1`.
pub fn trace_csv(result: &RunResult, n_init: usize) -> String {
    let records = result.final_dataset.records();
    let d = result.final_dataset.design_box().dim();
    let mut out = String::from("iteration,cum_cost");
    for j in 0..d {
        let _ = write!(out, ",x{j}");
    }
    out.push_str(",tau,eps,y,best_at_target\n");
    let n_init = n_init.min(records.len());
    for (i, (r, p)) in records.iter().zip(&result.trace).enumerate() {
        let iteration = if i < n_init { 0 } else { i + 1 - n_init };
        let _ = write!(out, "{iteration},{}", p.cum_cost);
        for v in &r.x {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{},{},{}", r.z.tau(), r.z.eps(), r.y, fmt_opt(p.best_at_target));
    }
    out
}

/// Parses the `cum_cost` and `best_at_target` columns of a trace CSV.
pub fn read_trace(text: &str) -> Result<Vec<TracePoint>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Config("empty trace".into()))?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Config(format!("trace has no {name} column")))
    };
    let (ci, bi) = (col("cum_cost")?, col("best_at_target")?);
    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("trace value {s:?}: {e}")));
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(Error::Config(format!("trace row {line:?} has {} fields", fields.len())));
            }
            Ok(TracePoint {
                cum_cost: parse(fields[ci])?,
                best_at_target: if fields[bi].is_empty() { None } else { Some(parse(fields[bi])?) },
            })
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Summary row from the traces of one method's completed runs.
pub fn summary_row(method: Method, objective: &str, traces: &[&[TracePoint]], optimum: Option<f64>) -> SummaryRow {
    let bests: Vec<f64> = traces
        .iter()
        .filter_map(|t| t.last().and_then(|p| p.best_at_target))
        .collect();
    let (mean_best, std_best) = mean_std(&bests);
    let costs: Vec<f64> = optimum
        .map(|opt| {
            let threshold = near_optimal_threshold(opt);
            traces.iter().filter_map(|t| cost_to_reach(t, threshold)).collect()
        })
        .unwrap_or_default();
    SummaryRow {
        method,
        objective: objective.to_string(),
        seeds: bests.len(),
        mean_best,
        std_best,
        mean_cost_to_95pct: (!costs.is_empty()).then(|| mean_std(&costs).0),
    }
}

/// In-memory summary; failed runs are left out.
pub fn summarize(objective: &str, methods: &[Method], runs: &[RunOutcome], optimum: Option<f64>) -> Vec<SummaryRow> {
    methods
        .iter()
        .map(|&m| {
            let traces: Vec<&[TracePoint]> = runs
                .iter()
                .filter(|r| r.method == m && r.succeeded())
                .filter_map(|r| r.result.as_ref().map(|res| res.trace.as_slice()))
                .collect();
            summary_row(m, objective, &traces, optimum)
        })
        .collect()
}

/// The same summary, recomputed from the trace files of the successful runs.
pub fn summarize_from_files(report: &ExperimentReport, objective: &str, methods: &[Method], optimum: Option<f64>) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::with_capacity(methods.len());
    for &m in methods {
        let mut traces = Vec::new();
        for run in report.runs.iter().filter(|r| r.method == m && r.succeeded()) {
            let path = run.trace_path.as_ref().ok_or_else(|| Error::Config("successful run without a trace".into()))?;
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            traces.push(read_trace(&text)?);
        }
        let refs: Vec<&[TracePoint]> = traces.iter().map(Vec::as_slice).collect();
        rows.push(summary_row(m, objective, &refs, optimum));
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,objective,seeds,mean_best,std_best,mean_cost_to_95pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method.tag(),
            r.objective,
            r.seeds,
            r.mean_best,
            r.std_best,
            fmt_opt(r.mean_cost_to_95pct)
        );
    }
    out
}

fn failures_csv(runs: &[RunOutcome]) -> String {
    let mut out = String::from("method,seed,error\n");
    for r in runs.iter().filter(|r| !r.succeeded()) {
        let msg = r.error.as_deref().unwrap_or("no result").replace(['\n', '\r'], " ").replace('"', "'");
        let _ = writeln!(out, "{},{},\"{msg}\"", r.method.tag(), r.seed);
    }
    out
}

/// Human-readable table: mean ± std per method.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut out = format!("{:<20} {:>6} {:>24} {:>12}\n", "method", "seeds", "best_y_target", "cost_to_95%");
    for r in rows {
        let best = format!("{:.4} ± {:.4}", r.mean_best, r.std_best);
        let cost = r.mean_cost_to_95pct.map_or("-".to_string(), |c| format!("{c:.2}"));
        let _ = writeln!(out, "{:<20} {:>6} {:>24} {:>12}", r.method.tag(), r.seeds, best, cost);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(methods: Vec<Method>, seeds: Vec<u64>, budget: f64) -> ExperimentConfig {
        ExperimentConfig {
            objective: ObjectiveConfig::Synthetic {
                name: "mf_branin".into(),
                noise_sd: 0.0,
            },
            methods,
            budget,
            seeds,
            cost_model: CostModel::default(),
            method_config: MethodConfig::default(),
            output_dir: None,
            workers: 1,
            checkpoint: false,
        }
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let text = r#"{"objective": {"kind": "synthetic", "name": "mf_curve", "noise_sd": 0.01},
                       "methods": ["nfw", "random"], "budget": 50, "seeds": [0, 1]}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.method_config, MethodConfig::default());
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let cases = [
            r#"{"objective": {"kind": "synthetic", "name": "mf_curve"}, "methods": ["nfw"], "budget": 0, "seeds": [0]}"#,
            r#"{"objective": {"kind": "synthetic", "name": "mf_curve"}, "methods": ["nfw"], "budget": 5, "seeds": []}"#,
            r#"{"objective": {"kind": "synthetic", "name": "mf_curve"}, "methods": ["cma_es"], "budget": 5, "seeds": [0]}"#,
            r#"{"objective": {"kind": "synthetic", "name": "nope"}, "methods": ["nfw"], "budget": 5, "seeds": [0]}"#,
            r#"{"objective": {"kind": "synthetic", "name": "mf_curve"}, "methods": ["nfw", "nfw"], "budget": 5, "seeds": [0]}"#,
            r#"{"objective": {"kind": "synthetic", "name": "mf_curve"}, "methods": ["nfw"], "budget": 5, "seeds": [0], "extra": 1}"#,
            r#"{"objective": {"kind": "external", "name": "x", "command": [], "design_dim": 2}, "methods": ["nfw"], "budget": 5, "seeds": [0]}"#,
            r#"not json"#,
        ];
        for c in cases {
            assert!(matches!(ExperimentConfig::from_json(c), Err(Error::Config(_))), "{c}");
        }
    }

    #[test]
    fn single_random_run_gives_one_trace_and_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(vec![Method::Random], vec![0], 3.0);
        let report = run_experiment(&cfg, 1, dir.path()).unwrap();
        assert!(report.all_succeeded());
        let traces: Vec<_> = fs::read_dir(dir.path().join(TRACE_DIR)).unwrap().collect();
        assert_eq!(traces.len(), 1);
        assert_eq!(report.summary.len(), 1);
        assert_eq!(report.summary[0].std_best, 0.0);
        let summary = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(summary.lines().count(), 2);
    }

    #[test]
    fn trace_rows_match_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(vec![Method::Random], vec![3], 4.0);
        let report = run_experiment(&cfg, 1, dir.path()).unwrap();
        let run = &report.runs[0];
        let res = run.result.as_ref().unwrap();
        let text = fs::read_to_string(run.trace_path.as_ref().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iteration,cum_cost,x0,x1,tau,eps,y,best_at_target");
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), cfg.method_config.n_init(Method::Random) + res.iterations);
        let last_iter: usize = rows.last().unwrap().split(',').next().unwrap().parse().unwrap();
        assert_eq!(last_iter, res.iterations);
        let parsed = read_trace(&text).unwrap();
        assert_eq!(parsed, res.trace);
        assert_eq!(parsed.last().unwrap().cum_cost, res.ledger.spent);
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn summary_row_cost_to_threshold() {
        let t1 = vec![
            TracePoint { cum_cost: 1.0, best_at_target: None },
            TracePoint { cum_cost: 2.0, best_at_target: Some(0.5) },
            TracePoint { cum_cost: 3.0, best_at_target: Some(0.97) },
        ];
        let t2 = vec![TracePoint { cum_cost: 1.0, best_at_target: Some(0.2) }];
        let row = summary_row(Method::Nfw, "o", &[&t1, &t2], Some(1.0));
        assert_eq!(row.seeds, 2);
        assert!((row.mean_best - 0.585).abs() < 1e-15);
        assert_eq!(row.mean_cost_to_95pct, Some(3.0));
        assert_eq!(summary_row(Method::Nfw, "o", &[&t2], Some(1.0)).mean_cost_to_95pct, None);
        assert_eq!(summary_row(Method::Nfw, "o", &[&t1], None).mean_cost_to_95pct, None);
    }

    #[test]
    fn read_trace_rejects_ragged_rows() {
        assert!(read_trace("iteration,cum_cost,best_at_target\n0,1.0\n").is_err());
        assert!(read_trace("").is_err());
        assert!(read_trace("iteration,cum_cost\n").is_err());
    }
}
