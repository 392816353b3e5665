use std::fs;
use std::path::Path;

use nfwbo::harness::{run_experiment, summarize_from_files, ExperimentConfig, SUMMARY_FILE, TRACE_DIR};
use nfwbo::mfbo::{Checkpoint, Method, Runner, RunSettings};
use nfwbo::objectives::synthetic_by_name;

fn config(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "objective": {{"kind": "synthetic", "name": "mf_curve", "noise_sd": 0.01}},
            "methods": ["random", "boca", "single_fidelity_bo"],
            "budget": 4,
            "seeds": [0, 1],
            "method_config": {{"n_init_multi": 5, "n_init_single": 3, "direct_evals": 300, "target_direct_evals": 100}}
            {extra}
        }}"#
    ))
    .unwrap()
}

fn traces(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir.join(TRACE_DIR))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn reruns_and_worker_counts_give_identical_artifacts() {
    let cfg = config("");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&cfg, 1, a.path()).unwrap();
    let rb = run_experiment(&cfg, 3, b.path()).unwrap();
    assert!(ra.all_succeeded() && rb.all_succeeded());
    let (ta, tb) = (traces(a.path()), traces(b.path()));
    assert_eq!(ta.len(), 6);
    assert_eq!(ta, tb);
    assert_eq!(
        fs::read(a.path().join(SUMMARY_FILE)).unwrap(),
        fs::read(b.path().join(SUMMARY_FILE)).unwrap()
    );
    let order: Vec<_> = rb.runs.iter().map(|r| (r.method, r.seed)).collect();
    assert_eq!(order, cfg.jobs());
}

#[test]
fn summary_from_trace_files_equals_in_memory_summary() {
    let cfg = config("");
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&cfg, 2, dir.path()).unwrap();
    let optimum = synthetic_by_name("mf_curve", 0.0).unwrap().known_optimum().map(|o| o.value);
    let from_files = summarize_from_files(&report, "mf_curve", &cfg.methods, optimum).unwrap();
    assert_eq!(from_files, report.summary);
    assert_eq!(report.summary.len(), 3);
    assert!(report.summary.iter().all(|r| r.seeds == 2));
}

#[test]
fn trace_files_restate_the_run_invariants() {
    let cfg = config("");
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&cfg, 1, dir.path()).unwrap();
    for run in &report.runs {
        let res = run.result.as_ref().unwrap();
        let text = fs::read_to_string(run.trace_path.as_ref().unwrap()).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), cfg.method_config.n_init(run.method) + res.iterations);
        let last_cost: f64 = rows.last().unwrap()[1].parse().unwrap();
        assert_eq!(last_cost, res.ledger.spent);
        let bests: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.last().filter(|v| !v.is_empty()))
            .map(|v| v.parse().unwrap())
            .collect();
        assert!(bests.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn checkpointed_experiments_resume_to_the_same_result() {
    let cfg = config(r#", "checkpoint": true"#);
    let whole = tempfile::tempdir().unwrap();
    run_experiment(&cfg, 1, whole.path()).unwrap();

    // interrupt one run after two iterations by planting its checkpoint
    let resumed = tempfile::tempdir().unwrap();
    let objective = synthetic_by_name("mf_curve", 0.01).unwrap();
    let settings: RunSettings = cfg.settings(Method::Boca, 1);
    let mut runner = Runner::start(&objective, settings).unwrap();
    runner.step();
    runner.step();
    let ckpt_dir = resumed.path().join("checkpoints");
    fs::create_dir_all(&ckpt_dir).unwrap();
    let text = runner.checkpoint().to_json().unwrap();
    assert_eq!(Checkpoint::from_json(&text).unwrap(), *runner.checkpoint());
    fs::write(ckpt_dir.join("mf_curve_boca_seed1.json"), text).unwrap();

    let report = run_experiment(&cfg, 1, resumed.path()).unwrap();
    assert!(report.all_succeeded());
    assert_eq!(traces(whole.path()), traces(resumed.path()));
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    assert!(run_experiment(&config(""), 1, &file).is_err());
}
