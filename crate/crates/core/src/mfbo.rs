//! The budgeted outer loop: learn, maximize the acquisition, evaluate, charge.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{sample_representers, AcqConfig, EntropySearch};
use crate::error::{Error, Result};
use crate::global_opt::{direct_maximize, lhs_sample};
use crate::gp::{fit, FidelityKind, ModelParams, Observations, Standardizer};
use crate::hyperlearn::{learn_hyperparameters, LearnConfig, ModelSpec};
use crate::objectives::{CostModel, Objective};
use crate::space::{mix_seed, Bounds, Fidelity};

/// Per-component tolerance for "evaluated at the target fidelity".
pub const TARGET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Warped stationary RBF on the fidelity embedding.
    Nfw,
    /// Stationary RBF on the raw fidelity.
    Boca,
    /// Finite-rank kernel with basis `(1, s)` on the raw fidelity.
    Fabolas,
    SingleFidelityBo,
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Nfw,
        Method::Boca,
        Method::Fabolas,
        Method::SingleFidelityBo,
        Method::Random,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Method::Nfw => "nfw",
            Method::Boca => "boca",
            Method::Fabolas => "fabolas",
            Method::SingleFidelityBo => "single_fidelity_bo",
            Method::Random => "random",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn is_multi_fidelity(&self) -> bool {
        matches!(self, Method::Nfw | Method::Boca | Method::Fabolas)
    }

    /// Surrogate structure, or `None` for model-free search.
    pub fn model_spec(&self, design_dim: usize, warp_enabled: bool) -> Option<ModelSpec> {
        let (fidelity, warp) = match self {
            Method::Nfw => (FidelityKind::Arbf, warp_enabled),
            Method::Boca | Method::SingleFidelityBo => (FidelityKind::Arbf, false),
            Method::Fabolas => (FidelityKind::FiniteRank, false),
            Method::Random => return None,
        };
        Some(ModelSpec {
            design_dim,
            fidelity,
            warp_enabled: warp,
        })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub learn: LearnConfig,
    pub acq: AcqConfig,
    /// DIRECT evaluations over the joint `(x, z)` box.
    pub direct_evals: usize,
    /// DIRECT evaluations over `x` alone at the target fidelity.
    pub target_direct_evals: usize,
    /// Only read by `nfw`; `false` reduces it to `boca`.
    pub warp_enabled: bool,
    /// Proposals cheaper than this fraction of the target cost are raised to it.
    pub min_cost_fraction: f64,
    pub n_init_multi: usize,
    pub n_init_single: usize,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            learn: LearnConfig::default(),
            acq: AcqConfig::default(),
            direct_evals: 2000,
            target_direct_evals: 500,
            warp_enabled: true,
            min_cost_fraction: 0.05,
            n_init_multi: 10,
            n_init_single: 6,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        self.learn.validate()?;
        self.acq.validate()?;
        if self.direct_evals == 0 || self.target_direct_evals == 0 {
            return Err(Error::Config("DIRECT budgets must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_cost_fraction) {
            return Err(Error::Config("min_cost_fraction must lie in [0, 1]".into()));
        }
        if self.n_init_multi == 0 || self.n_init_single == 0 {
            return Err(Error::Config("initial design sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_init(&self, method: Method) -> usize {
        if method.is_multi_fidelity() {
            self.n_init_multi
        } else {
            self.n_init_single
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub x: Vec<f64>,
    pub z: Fidelity,
    pub y: f64,
    pub cost: f64,
    pub seed: u64,
    pub wall_seconds: f64,
}

/// Append-only evaluation history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<EvaluationRecord>,
    design_box: Bounds,
    target: Fidelity,
}

impl Dataset {
    pub fn new(design_box: Bounds) -> Self {
        Dataset {
            records: Vec::new(),
            design_box,
            target: Fidelity::TARGET,
        }
    }

    pub fn push(&mut self, record: EvaluationRecord) -> Result<()> {
        if !self.design_box.contains(&record.x) {
            return Err(Error::invalid(format!("design {:?} outside the box", record.x)));
        }
        if !Fidelity::bounds().contains(record.z.as_slice()) {
            return Err(Error::invalid(format!("fidelity {:?} outside [0, 1]²", record.z)));
        }
        if !(record.cost.is_finite() && record.cost > 0.0) {
            return Err(Error::invalid(format!("evaluation cost {} is not positive", record.cost)));
        }
        if !record.y.is_finite() {
            return Err(Error::invalid(format!("observation {} is not finite", record.y)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn design_box(&self) -> &Bounds {
        &self.design_box
    }

    pub fn fidelity_box(&self) -> Bounds {
        Fidelity::bounds()
    }

    pub fn target(&self) -> Fidelity {
        self.target
    }

    /// Training data with designs mapped to the unit box.
    pub fn observations(&self) -> Observations {
        let mut o = Observations::default();
        for r in &self.records {
            o.push(self.design_box.to_unit(&r.x), r.z, r.y);
        }
        o
    }

    /// Highest `y` among target-fidelity records (first one on ties).
    pub fn best_at_target(&self) -> Option<(&[f64], f64)> {
        let mut best: Option<&EvaluationRecord> = None;
        for r in self.records.iter().filter(|r| r.z.approx_eq(&self.target, TARGET_TOLERANCE)) {
            if best.is_none_or(|b| r.y > b.y) {
                best = Some(r);
            }
        }
        best.map(|r| (r.x.as_slice(), r.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub budget: f64,
    pub spent: f64,
}

impl BudgetLedger {
    pub fn new(budget: f64) -> Result<Self> {
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::invalid(format!("budget must be positive, got {budget}")));
        }
        Ok(BudgetLedger { budget, spent: 0.0 })
    }

    pub fn charge(&mut self, cost: f64) {
        self.spent += cost;
    }

    pub fn remaining(&self) -> f64 {
        self.budget - self.spent
    }

    pub fn exceeded(&self) -> bool {
        self.spent > self.budget
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub cum_cost: f64,
    /// `None` until the first target-fidelity evaluation.
    pub best_at_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub best_x: Vec<f64>,
    pub best_y_target: f64,
    /// `best_y_target` is a posterior-mean estimate, not an observation.
    pub best_is_estimate: bool,
    /// One point per evaluation.
    pub trace: Vec<TracePoint>,
    pub final_dataset: Dataset,
    pub ledger: BudgetLedger,
    pub iterations: usize,
    pub failure: Option<String>,
}

/// Everything shared by the runs of one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub method: Method,
    pub budget: f64,
    pub cost_model: CostModel,
    pub config: MethodConfig,
    pub seed: u64,
}

impl RunSettings {
    pub fn new(method: Method, budget: f64, seed: u64) -> Self {
        RunSettings {
            method,
            budget,
            cost_model: CostModel::default(),
            config: MethodConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        BudgetLedger::new(self.budget)?;
        self.cost_model.validate()?;
        self.config.validate()
    }

    /// Hard cap on outer iterations; the budget always stops the loop well before it.
    pub fn max_iterations(&self) -> usize {
        (10.0 * self.budget / self.cost_model.min_cost()).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub z: Fidelity,
    /// Acquisition value at the proposal, for model-based methods.
    pub acquisition: Option<f64>,
    /// Hyperparameters learned on the way.
    pub params: Option<ModelParams>,
}

fn iteration_seed(run_seed: u64, iteration: usize) -> u64 {
    mix_seed(run_seed, 0x1000 + iteration as u64)
}

fn evaluation_seed(run_seed: u64, index: usize) -> u64 {
    mix_seed(run_seed, 0x1_0000_0000 + index as u64)
}

/// Raises `z` to the cheapest fidelity allowed by the floor, keeping `tau`.
pub fn apply_cost_floor(z: Fidelity, cost_model: &CostModel, fraction: f64) -> Fidelity {
    let floor = fraction * cost_model.cost(&Fidelity::TARGET);
    if cost_model.cost(&z) >= floor {
        return z;
    }
    Fidelity::new(z.tau(), cost_model.eps_for_cost(floor).max(z.eps()))
}

/// The initial `(x, z)` pairs: LHS designs paired with a random permutation of
/// LHS fidelities, or LHS designs at the target for single-fidelity methods.
pub fn initial_design(design_box: &Bounds, n: usize, method: Method, seed: u64) -> Result<Vec<(Vec<f64>, Fidelity)>> {
    if n == 0 {
        return Err(Error::invalid("the initial design needs at least one point"));
    }
    let xs = lhs_sample(n, design_box, mix_seed(seed, 0x11))?;
    if !method.is_multi_fidelity() {
        return Ok(xs.into_iter().map(|x| (x, Fidelity::TARGET)).collect());
    }
    let zs = lhs_sample(n, &Fidelity::bounds(), mix_seed(seed, 0x12))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::space::rng(mix_seed(seed, 0x13)));
    Ok(xs
        .into_iter()
        .zip(order)
        .map(|(x, k)| (x, Fidelity::new(zs[k][0], zs[k][1])))
        .collect())
}

fn evaluate_into<O: Objective + ?Sized>(
    objective: &O,
    cost_model: &CostModel,
    dataset: &mut Dataset,
    ledger: &mut BudgetLedger,
    x: Vec<f64>,
    z: Fidelity,
    seed: u64,
) -> Result<()> {
    let started = Instant::now();
    let eval = objective.evaluate(&x, &z, seed)?;
    let cost = eval.cost.unwrap_or_else(|| cost_model.cost(&z));
    dataset.push(EvaluationRecord {
        x,
        z,
        y: eval.y,
        cost,
        seed,
        wall_seconds: started.elapsed().as_secs_f64(),
    })?;
    ledger.charge(cost);
    Ok(())
}

/// Evaluates the initial design. On failure the partial dataset is returned with the error.
pub fn initialize<O: Objective + ?Sized>(
    objective: &O,
    settings: &RunSettings,
) -> (Dataset, BudgetLedger, Option<Error>) {
    let mut dataset = Dataset::new(objective.design_bounds());
    let mut ledger = BudgetLedger {
        budget: settings.budget,
        spent: 0.0,
    };
    let n = settings.config.n_init(settings.method);
    let design = match initial_design(dataset.design_box(), n, settings.method, settings.seed) {
        Ok(d) => d,
        Err(e) => return (dataset, ledger, Some(e)),
    };
    for (x, z) in design {
        let seed = evaluation_seed(settings.seed, dataset.len());
        if let Err(e) = evaluate_into(objective, &settings.cost_model, &mut dataset, &mut ledger, x, z, seed) {
            return (dataset, ledger, Some(e));
        }
    }
    (dataset, ledger, None)
}

/// Learns hyperparameters on the standardized data and fits the surrogate.
fn learn_model(
    dataset: &Dataset,
    spec: &ModelSpec,
    cfg: &MethodConfig,
    previous: Option<&ModelParams>,
    seed: u64,
) -> Result<(ModelParams, crate::gp::ModelState, Standardizer)> {
    let (obs, standardizer) = dataset.observations().standardized();
    let learned = learn_hyperparameters(&obs, spec, previous, &cfg.learn, seed)?;
    let model = fit(&obs, &learned.params)?;
    Ok((learned.params, model, standardizer))
}

/// Chooses the next `(x, z)`: learn the surrogate, then maximize the acquisition.
pub fn propose_next(
    dataset: &Dataset,
    method: Method,
    cfg: &MethodConfig,
    cost_model: &CostModel,
    previous: Option<&ModelParams>,
    seed: u64,
) -> Result<Proposal> {
    let design_box = dataset.design_box().clone();
    let d = design_box.dim();
    let target = dataset.target();
    let Some(spec) = method.model_spec(d, cfg.warp_enabled) else {
        let mut rng = crate::space::rng(mix_seed(seed, 4));
        let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        return Ok(Proposal {
            x: design_box.from_unit(&u),
            z: target,
            acquisition: None,
            params: None,
        });
    };
    if dataset.len() < 2 {
        return Err(Error::invalid("proposals need at least two evaluations"));
    }
    let (params, model, _) = learn_model(dataset, &spec, cfg, previous, mix_seed(seed, 1))?;
    let acq_cfg = AcqConfig {
        seed: mix_seed(seed, 2),
        ..cfg.acq.clone()
    };
    let unit = Bounds::unit(d);
    let reps = sample_representers(&model, &unit, &target, &acq_cfg)?;
    let es = EntropySearch::new(&model, &reps, &target, &acq_cfg)?;

    let score = |x: &[f64], z: &Fidelity| {
        let cost = cost_model.cost(&apply_cost_floor(*z, cost_model, cfg.min_cost_fraction));
        es.es_per_cost(x, z, cost).unwrap_or(f64::NEG_INFINITY)
    };
    // DIRECT never samples the box faces, so the target face gets its own search
    let at_target = direct_maximize(|u| score(u, &target), &unit, cfg.target_direct_evals)?;
    let (x_unit, z, value) = if method.is_multi_fidelity() {
        let joint = direct_maximize(|u| score(&u[..d], &Fidelity::new(u[d], u[d + 1])), &unit.join(&Fidelity::bounds()), cfg.direct_evals)?;
        if joint.value > at_target.value {
            let z = apply_cost_floor(Fidelity::new(joint.x[d], joint.x[d + 1]), cost_model, cfg.min_cost_fraction);
            (joint.x[..d].to_vec(), z, joint.value)
        } else {
            (at_target.x, target, at_target.value)
        }
    } else {
        (at_target.x, target, at_target.value)
    };
    // no candidate is expected to teach anything: the maximizer's location is
    // settled under the model, so measure it at the target
    let (x_unit, z) = if value > 0.0 {
        (x_unit, z)
    } else {
        let best_mean = direct_maximize(
            |u| model.posterior(u, &target).map_or(f64::NEG_INFINITY, |p| p.mean),
            &unit,
            cfg.target_direct_evals,
        )?;
        (best_mean.x, target)
    };
    Ok(Proposal {
        x: design_box.from_unit(&x_unit),
        z,
        acquisition: Some(value),
        params: Some(params),
    })
}

/// Serializable run state between outer iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub settings: RunSettings,
    pub dataset: Dataset,
    pub ledger: BudgetLedger,
    pub params: Option<ModelParams>,
    pub iteration: usize,
    pub failure: Option<String>,
    pub finished: bool,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// The budgeted loop as a resumable state machine.
pub struct Runner<'o, O: Objective + ?Sized> {
    objective: &'o O,
    state: Checkpoint,
}

impl<'o, O: Objective + ?Sized> Runner<'o, O> {
    /// Validates the settings and evaluates the initial design.
    pub fn start(objective: &'o O, settings: RunSettings) -> Result<Self> {
        settings.validate()?;
        let (dataset, ledger, err) = initialize(objective, &settings);
        Ok(Runner {
            objective,
            state: Checkpoint {
                settings,
                dataset,
                ledger,
                params: None,
                iteration: 0,
                finished: err.is_some(),
                failure: err.map(|e| e.to_string()),
            },
        })
    }

    pub fn resume(objective: &'o O, checkpoint: Checkpoint) -> Result<Self> {
        checkpoint.settings.validate()?;
        if checkpoint.dataset.design_box() != &objective.design_bounds() {
            return Err(Error::invalid("checkpoint belongs to an objective with a different design box"));
        }
        Ok(Runner {
            objective,
            state: checkpoint,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn dataset(&self) -> &Dataset {
        &self.state.dataset
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.state.ledger
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    /// Whether another outer iteration is due. The loop stops once spending
    /// exceeds the budget, or when not even the cheapest evaluation is left.
    pub fn is_done(&self) -> bool {
        let s = &self.state;
        s.finished
            || s.ledger.exceeded()
            || s.ledger.remaining() < s.settings.cost_model.min_cost()
            || s.iteration >= s.settings.max_iterations()
    }

    /// Runs one propose/evaluate/charge iteration; returns `false` once done.
    pub fn step(&mut self) -> bool {
        if self.is_done() {
            self.state.finished = true;
            return false;
        }
        let s = &mut self.state;
        let seed = iteration_seed(s.settings.seed, s.iteration);
        let outcome = propose_next(
            &s.dataset,
            s.settings.method,
            &s.settings.config,
            &s.settings.cost_model,
            s.params.as_ref(),
            seed,
        )
        .and_then(|p| {
            s.params = p.params.clone();
            let eval_seed = evaluation_seed(s.settings.seed, s.dataset.len());
            evaluate_into(
                self.objective,
                &s.settings.cost_model,
                &mut s.dataset,
                &mut s.ledger,
                p.x,
                p.z,
                eval_seed,
            )
        });
        match outcome {
            Ok(()) => {
                s.iteration += 1;
                true
            }
            Err(e) => {
                s.failure = Some(e.to_string());
                s.finished = true;
                false
            }
        }
    }

    /// Drives the loop to termination and assembles the result.
    pub fn run_to_end(mut self) -> RunResult {
        while self.step() {}
        self.finish()
    }

    /// Settles the reported best point. Without any target-fidelity record a
    /// final evaluation at the posterior-mean maximizer is made if the budget
    /// still covers it; otherwise that maximizer is reported as an estimate.
    pub fn finish(mut self) -> RunResult {
        let mut best_is_estimate = false;
        let mut estimate: Option<(Vec<f64>, f64)> = None;
        if self.state.dataset.best_at_target().is_none() && !self.state.dataset.is_empty() {
            match self.posterior_maximizer() {
                Ok((x, mean)) => {
                    let s = &mut self.state;
                    let target_cost = s.settings.cost_model.cost(&Fidelity::TARGET);
                    if s.failure.is_none() && s.ledger.spent + target_cost <= s.ledger.budget {
                        let seed = evaluation_seed(s.settings.seed, s.dataset.len());
                        if let Err(e) = evaluate_into(
                            self.objective,
                            &s.settings.cost_model,
                            &mut s.dataset,
                            &mut s.ledger,
                            x.clone(),
                            Fidelity::TARGET,
                            seed,
                        ) {
                            s.failure = Some(e.to_string());
                        }
                    }
                    estimate = Some((x, mean));
                }
                Err(e) if self.state.failure.is_none() => self.state.failure = Some(e.to_string()),
                Err(_) => {}
            }
        }
        let s = self.state;
        let (best_x, best_y_target) = match s.dataset.best_at_target() {
            Some((x, y)) => (x.to_vec(), y),
            None => match estimate {
                Some(e) => {
                    best_is_estimate = true;
                    e
                }
                None => (Vec::new(), f64::NAN),
            },
        };
        RunResult {
            method: s.settings.method,
            seed: s.settings.seed,
            best_x,
            best_y_target,
            best_is_estimate,
            trace: trace_of(&s.dataset),
            final_dataset: s.dataset,
            ledger: s.ledger,
            iterations: s.iteration,
            failure: s.failure,
        }
    }

    /// Maximizer of the target-fidelity posterior mean, in objective units.
    fn posterior_maximizer(&self) -> Result<(Vec<f64>, f64)> {
        let s = &self.state;
        let design_box = s.dataset.design_box();
        let d = design_box.dim();
        if s.dataset.len() < 2 {
            let r = &s.dataset.records()[0];
            return Ok((r.x.clone(), r.y));
        }
        let spec = s
            .settings
            .method
            .model_spec(d, s.settings.config.warp_enabled)
            .unwrap_or(ModelSpec {
                design_dim: d,
                fidelity: FidelityKind::Arbf,
                warp_enabled: false,
            });
        let seed = iteration_seed(s.settings.seed, usize::MAX >> 1);
        let (model, standardizer) = match &s.params {
            Some(p) => {
                let (obs, st) = s.dataset.observations().standardized();
                (fit(&obs, p)?, st)
            }
            None => {
                let (_, model, st) = learn_model(&s.dataset, &spec, &s.settings.config, None, seed)?;
                (model, st)
            }
        };
        let found = direct_maximize(
            |u| model.posterior(u, &Fidelity::TARGET).map_or(f64::NEG_INFINITY, |p| p.mean),
            &Bounds::unit(d),
            s.settings.config.direct_evals,
        )?;
        Ok((design_box.from_unit(&found.x), standardizer.inverse(found.value)))
    }
}

/// Cumulative cost and best-at-target after each record.
pub fn trace_of(dataset: &Dataset) -> Vec<TracePoint> {
    let target = dataset.target();
    let mut cum = 0.0;
    let mut best: Option<f64> = None;
    dataset
        .records()
        .iter()
        .map(|r| {
            cum += r.cost;
            if r.z.approx_eq(&target, TARGET_TOLERANCE) && best.is_none_or(|b| r.y > b) {
                best = Some(r.y);
            }
            TracePoint {
                cum_cost: cum,
                best_at_target: best,
            }
        })
        .collect()
}

/// Runs the budgeted loop from scratch.
pub fn run<O: Objective + ?Sized>(objective: &O, settings: RunSettings) -> Result<RunResult> {
    Ok(Runner::start(objective, settings)?.run_to_end())
}

/// Cumulative cost at which `best_at_target` first reaches `threshold`.
pub fn cost_to_reach(trace: &[TracePoint], threshold: f64) -> Option<f64> {
    trace
        .iter()
        .find(|p| p.best_at_target.is_some_and(|b| b >= threshold))
        .map(|p| p.cum_cost)
}

/// `f* - 0.05 |f*|`: within 5% of the optimum.
pub fn near_optimal_threshold(optimum: f64) -> f64 {
    optimum - 0.05 * optimum.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{MfBranin, MfCurve};

    fn record(x: f64, z: Fidelity, y: f64) -> EvaluationRecord {
        EvaluationRecord {
            x: vec![x, x],
            z,
            y,
            cost: 0.5,
            seed: 0,
            wall_seconds: 0.0,
        }
    }

    fn quick(method: Method, budget: f64, seed: u64) -> RunSettings {
        let mut s = RunSettings::new(method, budget, seed);
        s.config.direct_evals = 150;
        s.config.target_direct_evals = 60;
        s.config.learn.n_restarts = 1;
        s.config.learn.max_iters = 30;
        s.config.acq.n_representers = 8;
        s.config.acq.n_mc = 64;
        s
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_tag(m.tag()), Some(m));
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.tag()));
        }
        assert_eq!(Method::from_tag("cma_es"), None);
        assert!(Method::Random.model_spec(2, true).is_none());
        assert!(!Method::Boca.model_spec(2, true).unwrap().warp_enabled);
        assert!(Method::Nfw.model_spec(2, true).unwrap().warp_enabled);
    }

    #[test]
    fn best_at_target_cases() {
        let mut d = Dataset::new(Bounds::unit(2));
        assert!(d.best_at_target().is_none());
        d.push(record(0.1, Fidelity::new(0.5, 1.0), 9.0)).unwrap();
        assert!(d.best_at_target().is_none());
        d.push(record(0.2, Fidelity::TARGET, 1.0)).unwrap();
        assert_eq!(d.best_at_target(), Some((&[0.2, 0.2][..], 1.0)));
        d.push(record(0.3, Fidelity::new(1.0 - 1e-6, 1.0), 5.0)).unwrap();
        d.push(record(0.4, Fidelity::new(1.0 - 1e-10, 1.0), 2.0)).unwrap();
        assert_eq!(d.best_at_target(), Some((&[0.4, 0.4][..], 2.0)));
    }

    #[test]
    fn dataset_rejects_bad_records() {
        let mut d = Dataset::new(Bounds::unit(2));
        assert!(d.push(record(1.5, Fidelity::TARGET, 0.0)).is_err());
        assert!(d.push(record(0.5, Fidelity::new(0.5, 1.2), 0.0)).is_err());
        assert!(d.push(record(0.5, Fidelity::TARGET, f64::NAN)).is_err());
        let mut r = record(0.5, Fidelity::TARGET, 0.0);
        r.cost = 0.0;
        assert!(d.push(r).is_err());
        assert!(d.is_empty());
    }

    #[test]
    fn initial_design_pairs_lhs_samples() {
        let b = Bounds::unit(3);
        let pairs = initial_design(&b, 10, Method::Nfw, 5).unwrap();
        let xs = lhs_sample(10, &b, mix_seed(5, 0x11)).unwrap();
        let zs = lhs_sample(10, &Fidelity::bounds(), mix_seed(5, 0x12)).unwrap();
        let mut used = [false; 10];
        for (k, (x, z)) in pairs.iter().enumerate() {
            assert_eq!(x, &xs[k]);
            let j = zs.iter().position(|c| c[..] == z.0[..]).unwrap();
            assert!(!used[j]);
            used[j] = true;
        }
        assert_eq!(pairs, initial_design(&b, 10, Method::Nfw, 5).unwrap());
        for m in [Method::SingleFidelityBo, Method::Random] {
            assert!(initial_design(&b, 6, m, 5).unwrap().iter().all(|(_, z)| *z == Fidelity::TARGET));
        }
        assert!(initial_design(&b, 0, Method::Nfw, 5).is_err());
    }

    #[test]
    fn single_fidelity_initialization_costs_six() {
        let s = RunSettings::new(Method::SingleFidelityBo, 50.0, 0);
        let (d, ledger, err) = initialize(&MfBranin, &s);
        assert!(err.is_none());
        assert_eq!(d.len(), 6);
        assert!((ledger.spent - 6.0).abs() < 1e-12);
    }

    #[test]
    fn cost_floor_raises_cheap_fidelities() {
        let cm = CostModel::new(1.0, 99.0, 100.0).unwrap();
        let z = apply_cost_floor(Fidelity::new(0.3, 0.0), &cm, 0.05);
        assert_eq!(z.tau(), 0.3);
        assert!((cm.cost(&z) - 0.05).abs() < 1e-12);
        let hi = Fidelity::new(0.3, 0.5);
        assert_eq!(apply_cost_floor(hi, &cm, 0.05), hi);
        let default = CostModel::default();
        assert_eq!(apply_cost_floor(Fidelity::new(0.1, 0.0), &default, 0.05), Fidelity::new(0.1, 0.0));
    }

    #[test]
    fn random_proposals_sit_at_the_target() {
        let d = Dataset::new(Bounds::unit(2));
        let p = propose_next(&d, Method::Random, &MethodConfig::default(), &CostModel::default(), None, 3).unwrap();
        assert_eq!(p.z, Fidelity::TARGET);
        assert!(Bounds::unit(2).contains(&p.x));
        let again = propose_next(&d, Method::Random, &MethodConfig::default(), &CostModel::default(), None, 3).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn tiny_budget_gives_zero_iterations() {
        // six target evaluations cost exactly 6
        let r = run(&MfBranin, quick(Method::SingleFidelityBo, 6.1, 1)).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.final_dataset.len(), 6);
        let best = r.final_dataset.records().iter().map(|x| x.y).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_y_target, best);
        assert!(!r.best_is_estimate);
    }

    #[test]
    fn budget_is_checked_after_charging() {
        let r = run(&MfBranin, quick(Method::Random, 8.5, 2)).unwrap();
        // 6 initial + 3 more unit-cost evaluations overshoot 8.5 by 0.5
        assert_eq!(r.iterations, 3);
        assert!((r.ledger.spent - 9.0).abs() < 1e-12);
        assert!(r.failure.is_none());
    }

    #[test]
    fn single_fidelity_proposals_stay_at_target() {
        let r = run(&MfCurve, quick(Method::SingleFidelityBo, 9.0, 3)).unwrap();
        assert_eq!(r.iterations, 3);
        assert!(r.final_dataset.records().iter().all(|x| x.z == Fidelity::TARGET));
    }

    #[test]
    fn trace_and_ledger_agree() {
        let r = run(&MfCurve, quick(Method::Nfw, 9.0, 4)).unwrap();
        assert!(r.failure.is_none(), "{:?}", r.failure);
        let sum: f64 = r.final_dataset.records().iter().map(|x| x.cost).sum();
        assert!((sum - r.ledger.spent).abs() < 1e-12);
        assert_eq!(r.trace.len(), r.final_dataset.len());
        assert!((r.trace.last().unwrap().cum_cost - r.ledger.spent).abs() < 1e-12);
        for w in r.trace.windows(2) {
            assert!(w[1].cum_cost > w[0].cum_cost);
            if let Some(a) = w[0].best_at_target {
                assert!(w[1].best_at_target.unwrap() >= a);
            }
        }
    }

    #[test]
    fn checkpoint_round_trips_through_json() {
        let mut runner = Runner::start(&MfCurve, quick(Method::Fabolas, 9.0, 5)).unwrap();
        runner.step();
        let cp = runner.checkpoint().clone();
        let back = Checkpoint::from_json(&cp.to_json().unwrap()).unwrap();
        assert_eq!(back, cp);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(Runner::start(&MfCurve, quick(Method::Nfw, 0.0, 0)).is_err());
        let mut s = quick(Method::Nfw, 5.0, 0);
        s.config.n_init_multi = 0;
        assert!(Runner::start(&MfCurve, s).is_err());
        let mut s = quick(Method::Nfw, 5.0, 0);
        s.cost_model.c0 = 0.0;
        assert!(Runner::start(&MfCurve, s).is_err());
    }

    #[test]
    fn threshold_and_cost_to_reach() {
        assert_eq!(near_optimal_threshold(2.0), 1.9);
        assert_eq!(near_optimal_threshold(-2.0), -2.1);
        let t = [
            TracePoint { cum_cost: 1.0, best_at_target: None },
            TracePoint { cum_cost: 2.0, best_at_target: Some(0.5) },
            TracePoint { cum_cost: 3.0, best_at_target: Some(0.97) },
        ];
        assert_eq!(cost_to_reach(&t, 0.95), Some(3.0));
        assert_eq!(cost_to_reach(&t, 0.99), None);
    }
}
