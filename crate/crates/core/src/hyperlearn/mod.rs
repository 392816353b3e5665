//! Joint NLML minimization over kernel hyperparameters, noise and warp weights.

mod lbfgs;

pub use lbfgs::{quasi_newton_minimize, Minimum, QuasiNewtonConfig};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{self, default_params, FidelityKind, ModelParams, Observations};
use crate::kernels::{ArbfParams, FactorizedKernelParams, FidelityKernel, FiniteRankParams};
use crate::space::mix_seed;
use crate::warp::WarpParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub n_restarts: usize,
    pub max_iters: usize,
    pub grad_tolerance: f64,
    /// Log-space bounds on the design signal variance.
    pub log_signal_bounds: (f64, f64),
    /// Log-space bounds on every length scale (design and fidelity).
    pub log_length_bounds: (f64, f64),
    pub log_noise_bounds: (f64, f64),
    pub warp_init_scale: f64,
    /// Standard deviation of an independent Gaussian prior on each warp
    /// weight; `None` minimizes the bare NLML.
    pub warp_prior_sd: Option<f64>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            n_restarts: 3,
            max_iters: 200,
            grad_tolerance: 1e-5,
            log_signal_bounds: (-6.0, 6.0),
            log_length_bounds: (-6.0, 6.0),
            log_noise_bounds: (-12.0, 2.0),
            warp_init_scale: 0.5,
            warp_prior_sd: Some(1.0),
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_restarts == 0 || self.max_iters == 0 {
            return Err(Error::invalid("n_restarts and max_iters must be at least 1"));
        }
        if self.grad_tolerance.is_nan() || self.grad_tolerance <= 0.0 {
            return Err(Error::invalid("grad_tolerance must be positive"));
        }
        for (name, (lo, hi)) in [
            ("log_signal_bounds", self.log_signal_bounds),
            ("log_length_bounds", self.log_length_bounds),
            ("log_noise_bounds", self.log_noise_bounds),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("{name} = ({lo}, {hi})")));
            }
        }
        if !(self.warp_init_scale.is_finite() && self.warp_init_scale >= 0.0) {
            return Err(Error::invalid("warp_init_scale must be non-negative"));
        }
        if let Some(sd) = self.warp_prior_sd {
            if !(sd.is_finite() && sd > 0.0) {
                return Err(Error::invalid("warp_prior_sd must be positive"));
            }
        }
        Ok(())
    }
}

/// Structure of the surrogate being learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub design_dim: usize,
    pub fidelity: FidelityKind,
    pub warp_enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartReport {
    pub initial_nlml: Option<f64>,
    pub final_nlml: Option<f64>,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Learned {
    pub params: ModelParams,
    pub nlml: f64,
    /// The minimized value: `nlml` plus the warp penalty, if any.
    pub objective: f64,
    pub restarts: Vec<RestartReport>,
}

/// Box constraints over the flat vector of [`ModelParams::to_flat`].
pub fn param_bounds(template: &ModelParams, cfg: &LearnConfig) -> (Vec<f64>, Vec<f64>) {
    let layout = template.layout();
    let n = layout.len();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    lo[0] = cfg.log_signal_bounds.0;
    hi[0] = cfg.log_signal_bounds.1;
    for i in layout.design.start + 1..layout.design.end {
        lo[i] = cfg.log_length_bounds.0;
        hi[i] = cfg.log_length_bounds.1;
    }
    match &template.kernel.fidelity {
        FidelityKernel::Arbf(_) => {
            for i in layout.fidelity.clone() {
                lo[i] = cfg.log_length_bounds.0;
                hi[i] = cfg.log_length_bounds.1;
            }
        }
        FidelityKernel::FiniteRank(_) => {
            // (log l11, l21, log l22) per dimension
            for (k, i) in layout.fidelity.clone().enumerate() {
                let (l, h) = if k % 3 == 1 { (-10.0, 10.0) } else { cfg.log_signal_bounds };
                lo[i] = l;
                hi[i] = h;
            }
        }
    }
    lo[layout.noise] = cfg.log_noise_bounds.0;
    hi[layout.noise] = cfg.log_noise_bounds.1;
    (lo, hi)
}

fn random_start(spec: &ModelSpec, cfg: &LearnConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = crate::space::rng(seed);
    let mut log_uniform = |lo: f64, hi: f64| rng.random_range(lo..hi).exp();
    let design = ArbfParams::new(
        log_uniform(-1.0, 1.0),
        (0..spec.design_dim).map(|_| log_uniform(0.05f64.ln(), 2f64.ln())).collect(),
    )?;
    let fidelity = match spec.fidelity {
        FidelityKind::Arbf => FidelityKernel::Arbf(ArbfParams::unit_magnitude(vec![
            log_uniform(0.1f64.ln(), 2f64.ln()),
            log_uniform(0.1f64.ln(), 2f64.ln()),
        ])?),
        FidelityKind::FiniteRank => {
            let factors: Vec<[f64; 3]> = (0..2)
                .map(|_| {
                    [
                        rng.random_range(-1.5..0.5),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.5..0.5),
                    ]
                })
                .collect();
            FidelityKernel::FiniteRank(FiniteRankParams::from_factors(&factors))
        }
    };
    let noise = rng.random_range(-10.0f64..-2.0).exp();
    let warp = start_warp(spec, cfg, seed)?;
    ModelParams::new(FactorizedKernelParams::new(design, fidelity)?, warp, noise)
}

fn start_warp(spec: &ModelSpec, cfg: &LearnConfig, seed: u64) -> Result<WarpParams> {
    if spec.warp_enabled {
        WarpParams::init(mix_seed(seed, 0x57a4), cfg.warp_init_scale)
    } else {
        Ok(WarpParams::zeros(false))
    }
}

/// Minimizes the NLML from `n_restarts` starts and keeps the best.
///
/// Restart 0 starts from `previous` when given (warm start), otherwise from the
/// defaults; the others start from random log-uniform kernel parameters and a
/// fresh warp initialization. A disabled warp is never optimized.
pub fn learn_hyperparameters(
    obs: &Observations,
    spec: &ModelSpec,
    previous: Option<&ModelParams>,
    cfg: &LearnConfig,
    seed: u64,
) -> Result<Learned> {
    cfg.validate()?;
    if obs.len() < 2 {
        return Err(Error::invalid("hyperparameter learning needs at least two observations"));
    }
    let starts: Vec<Result<ModelParams>> = (0..cfg.n_restarts)
        .map(|k| {
            let restart_seed = mix_seed(seed, k as u64);
            if k == 0 {
                match previous {
                    Some(p) => Ok(p.clone()),
                    None => Ok(default_params(
                        spec.design_dim,
                        spec.fidelity,
                        start_warp(spec, cfg, restart_seed)?,
                    )),
                }
            } else {
                random_start(spec, cfg, restart_seed)
            }
        })
        .collect();

    let outcomes: Vec<(Option<(ModelParams, f64)>, RestartReport)> = starts
        .into_par_iter()
        .map(|start| match start {
            Ok(p) => run_restart(obs, spec, p, cfg),
            Err(e) => (
                None,
                RestartReport {
                    initial_nlml: None,
                    final_nlml: None,
                    iterations: 0,
                    error: Some(e.to_string()),
                },
            ),
        })
        .collect();

    let mut best: Option<(ModelParams, f64)> = None;
    let mut restarts = Vec::with_capacity(outcomes.len());
    for (found, report) in outcomes {
        if let Some((p, v)) = found {
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((p, v));
            }
        }
        restarts.push(report);
    }
    match best {
        Some((params, objective)) => Ok(Learned {
            nlml: gp::nlml(obs, &params)?,
            params,
            objective,
            restarts,
        }),
        None => Err(Error::LearningFailed(
            restarts
                .iter()
                .enumerate()
                .map(|(k, r)| format!("restart {k}: {}", r.error.as_deref().unwrap_or("unknown")))
                .collect(),
        )),
    }
}

fn run_restart(
    obs: &Observations,
    spec: &ModelSpec,
    start: ModelParams,
    cfg: &LearnConfig,
) -> (Option<(ModelParams, f64)>, RestartReport) {
    let mut start = start;
    if !spec.warp_enabled {
        start.warp = start.warp.with_enabled(false);
    }
    let layout = start.layout();
    // a disabled warp stays out of the search vector entirely
    let n_free = if spec.warp_enabled { layout.len() } else { layout.warp.start };
    let (mut lo, mut hi) = param_bounds(&start, cfg);
    lo.truncate(n_free);
    hi.truncate(n_free);
    let full_start = start.to_flat();
    let mut x0 = full_start[..n_free].to_vec();
    for ((v, l), h) in x0.iter_mut().zip(&lo).zip(&hi) {
        *v = v.clamp(*l, *h);
    }

    let assemble = |free: &[f64]| -> Result<ModelParams> {
        let mut flat = full_start.clone();
        flat[..n_free].copy_from_slice(free);
        start.with_flat(&flat)
    };
    let objective = |free: &[f64]| -> Option<(f64, Vec<f64>)> {
        let p = assemble(free).ok()?;
        let (mut v, mut g) = gp::nlml_with_grad(obs, &p).ok()?;
        g.truncate(n_free);
        if let (true, Some(sd)) = (spec.warp_enabled, cfg.warp_prior_sd) {
            let prec = 1.0 / (sd * sd);
            for i in layout.warp.clone() {
                v += 0.5 * prec * free[i] * free[i];
                g[i] += prec * free[i];
            }
        }
        Some((v, g))
    };
    let initial = objective(&x0).map(|(v, _)| v);
    let qn = QuasiNewtonConfig {
        max_iters: cfg.max_iters,
        grad_tolerance: cfg.grad_tolerance,
        memory: 10,
        bounds: Some((lo, hi)),
    };
    match quasi_newton_minimize(objective, &x0, &qn).and_then(|m| Ok((assemble(&m.x)?, m))) {
        Ok((params, m)) => (
            Some((params, m.value)),
            RestartReport {
                initial_nlml: initial,
                final_nlml: Some(m.value),
                iterations: m.iterations,
                error: None,
            },
        ),
        Err(e) => (
            None,
            RestartReport {
                initial_nlml: initial,
                final_nlml: None,
                iterations: 0,
                error: Some(e.to_string()),
            },
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Fidelity;

    fn toy_obs(n: usize, seed: u64) -> Observations {
        let mut rng = crate::space::rng(seed);
        let mut obs = Observations::default();
        for _ in 0..n {
            let x = vec![rng.random::<f64>(), rng.random::<f64>()];
            let z = Fidelity::new(rng.random(), rng.random());
            let y = (4.0 * x[0]).sin() * (0.5 + 0.5 * z.eps()) + 0.3 * x[1];
            obs.push(x, z, y);
        }
        obs.standardized().0
    }

    const SPEC: ModelSpec = ModelSpec {
        design_dim: 2,
        fidelity: FidelityKind::Arbf,
        warp_enabled: true,
    };

    #[test]
    fn deterministic_per_seed() {
        let obs = toy_obs(12, 1);
        let cfg = LearnConfig {
            n_restarts: 2,
            max_iters: 50,
            ..Default::default()
        };
        let a = learn_hyperparameters(&obs, &SPEC, None, &cfg, 9).unwrap();
        let b = learn_hyperparameters(&obs, &SPEC, None, &cfg, 9).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.nlml, b.nlml);
    }

    #[test]
    fn without_warp_prior_the_objective_is_the_nlml() {
        let obs = toy_obs(12, 5);
        let cfg = LearnConfig {
            n_restarts: 1,
            max_iters: 40,
            warp_prior_sd: None,
            ..Default::default()
        };
        let l = learn_hyperparameters(&obs, &SPEC, None, &cfg, 1).unwrap();
        assert!((l.objective - l.nlml).abs() < 1e-9 * l.nlml.abs().max(1.0));
        let bad = LearnConfig {
            warp_prior_sd: Some(0.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn result_beats_every_starting_point_and_stays_in_bounds() {
        for fidelity in [FidelityKind::Arbf, FidelityKind::FiniteRank] {
            let spec = ModelSpec { fidelity, ..SPEC };
            let obs = toy_obs(15, 2);
            let cfg = LearnConfig {
                max_iters: 60,
                ..Default::default()
            };
            let learned = learn_hyperparameters(&obs, &spec, None, &cfg, 3).unwrap();
            for r in &learned.restarts {
                if let Some(init) = r.initial_nlml {
                    assert!(learned.objective <= init);
                }
            }
            let (lo, hi) = param_bounds(&learned.params, &cfg);
            for ((v, l), h) in learned.params.to_flat().iter().zip(&lo).zip(&hi) {
                assert!(*v >= *l - 1e-12 && *v <= *h + 1e-12);
            }
            let direct = gp::nlml(&obs, &learned.params).unwrap();
            assert_eq!(direct, learned.nlml);
            let w = learned.params.warp.weights();
            let penalty = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
            assert!((learned.nlml + penalty - learned.objective).abs() < 1e-9 * learned.objective.abs().max(1.0));
        }
    }

    #[test]
    fn disabled_warp_is_untouched() {
        let spec = ModelSpec {
            warp_enabled: false,
            ..SPEC
        };
        let obs = toy_obs(10, 4);
        let mut prev = default_params(2, FidelityKind::Arbf, WarpParams::init(5, 0.5).unwrap());
        prev.warp = prev.warp.with_enabled(false);
        let cfg = LearnConfig {
            max_iters: 30,
            ..Default::default()
        };
        let learned = learn_hyperparameters(&obs, &spec, Some(&prev), &cfg, 0).unwrap();
        assert!(!learned.params.warp.is_enabled());
        let from_cold = learn_hyperparameters(&obs, &spec, None, &cfg, 0).unwrap();
        assert!(from_cold.params.warp.weights().iter().all(|w| *w == 0.0));
        if learned.restarts[0].final_nlml == Some(learned.objective) {
            assert_eq!(learned.params.warp.weights(), prev.warp.weights());
        }
    }

    #[test]
    fn needs_two_observations() {
        let obs = toy_obs(1, 0);
        assert!(learn_hyperparameters(&obs, &SPEC, None, &LearnConfig::default(), 0).is_err());
        let bad = LearnConfig {
            n_restarts: 0,
            ..Default::default()
        };
        assert!(learn_hyperparameters(&toy_obs(4, 0), &SPEC, None, &bad, 0).is_err());
    }
}
