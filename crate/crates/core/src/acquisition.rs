//! Information-based selection: expected reduction of the entropy of the
//! target-fidelity maximizer location, per unit evaluation cost.
//!
//! The maximizer's distribution is discretized over a set of representer
//! points and estimated from joint posterior samples. A fantasy observation at
//! a candidate `(x, z)` is a rank-one update of that joint posterior: the
//! covariance shrinks by `b bᵀ` and the mean moves along `b`, so every fantasy
//! shares one Cholesky factorization. All candidates reuse the same standard
//! normal draws, which makes the estimate a smooth function of the candidate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::global_opt::lhs_sample;
use crate::gp::{cholesky_with_jitter, ModelState, PosteriorGaussian};
use crate::space::{mix_seed, Bounds, Fidelity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresenterStrategy {
    Lhs,
    PosteriorWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcqConfig {
    pub n_representers: usize,
    pub n_mc: usize,
    pub n_fantasies: usize,
    pub representer_strategy: RepresenterStrategy,
    pub seed: u64,
}

impl Default for AcqConfig {
    fn default() -> Self {
        AcqConfig {
            n_representers: 20,
            n_mc: 128,
            n_fantasies: 10,
            representer_strategy: RepresenterStrategy::Lhs,
            seed: 0,
        }
    }
}

impl AcqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_representers == 0 || self.n_mc == 0 || self.n_fantasies == 0 {
            return Err(Error::invalid("acquisition counts must be at least 1"));
        }
        Ok(())
    }
}

/// Candidate locations for the target-fidelity maximizer.
///
/// `PosteriorWeighted` draws ten times as many LHS candidates and keeps those
/// with the highest posterior mean plus one standard deviation at `target`.
pub fn sample_representers(
    model: &ModelState,
    bounds: &Bounds,
    target: &Fidelity,
    cfg: &AcqConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let seed = mix_seed(cfg.seed, 0x7265);
    match cfg.representer_strategy {
        RepresenterStrategy::Lhs => lhs_sample(cfg.n_representers, bounds, seed),
        RepresenterStrategy::PosteriorWeighted => {
            let pool = lhs_sample(10 * cfg.n_representers, bounds, seed)?;
            let mut scored = Vec::with_capacity(pool.len());
            for (i, x) in pool.into_iter().enumerate() {
                let p = model.posterior(&x, target)?;
                scored.push((p.mean + p.sd(), i, x));
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            Ok(scored.into_iter().take(cfg.n_representers).map(|(_, _, x)| x).collect())
        }
    }
}

/// Shannon entropy (nats) of the empirical argmax distribution of the columns of `samples` (`m × n`).
fn argmax_entropy(samples: &DMatrix<f64>, shift: Option<(&DVector<f64>, f64)>, counts: &mut [usize]) -> f64 {
    counts.iter_mut().for_each(|c| *c = 0);
    for col in samples.column_iter() {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, v) in col.iter().enumerate() {
            let v = match shift {
                Some((b, xi)) => v + b[i] * xi,
                None => *v,
            };
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        counts[best] += 1;
    }
    let n = samples.ncols() as f64;
    counts
        .iter()
        .filter(|c| **c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Entropy of the maximizer over `representers` at `target`, from `n_mc` joint samples.
pub fn pmin_entropy(
    model: &ModelState,
    representers: &[Vec<f64>],
    target: &Fidelity,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if representers.len() < 2 {
        return Err(Error::invalid("entropy needs at least two representers"));
    }
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be at least 1"));
    }
    let points: Vec<(Vec<f64>, Fidelity)> = representers.iter().map(|x| (x.clone(), *target)).collect();
    let draws = model.sample_joint(&points, n_mc, seed)?;
    let mut counts = vec![0; representers.len()];
    Ok(argmax_entropy(&draws.transpose(), None, &mut counts))
}

/// Precomputed state for evaluating the entropy-search acquisition at many candidates.
pub struct EntropySearch<'m> {
    model: &'m ModelState,
    /// Representers in canonical (lexicographic) order.
    representers: Vec<Vec<f64>>,
    target_warped: [f64; 2],
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// `L⁻¹ k(X, R)`.
    whitened: DMatrix<f64>,
    normals: DMatrix<f64>,
    fantasy_normals: Vec<f64>,
    current_entropy: f64,
}

impl<'m> EntropySearch<'m> {
    pub fn new(model: &'m ModelState, representers: &[Vec<f64>], target: &Fidelity, cfg: &AcqConfig) -> Result<Self> {
        cfg.validate()?;
        if representers.len() < 2 {
            return Err(Error::invalid("entropy search needs at least two representers"));
        }
        let mut reps = representers.to_vec();
        // the estimate must not depend on the order representers arrive in
        reps.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let points: Vec<(Vec<f64>, Fidelity)> = reps.iter().map(|x| (x.clone(), *target)).collect();
        let (mean, cov) = model.joint_posterior(&points)?;
        let target_warped = model.warp(target);
        let mut kxr = DMatrix::zeros(model.observations().len(), reps.len());
        for (j, x) in reps.iter().enumerate() {
            kxr.set_column(j, &model.cross_cov(x, &target_warped));
        }
        let whitened = DMatrix::from_columns(
            &kxr.column_iter().map(|c| model.whiten(&c.into_owned())).collect::<Vec<_>>(),
        );

        let m = reps.len();
        let mut rng = crate::space::rng(mix_seed(cfg.seed, 0x6d63));
        let normals = DMatrix::<f64>::from_fn(m, cfg.n_mc, |_, _| StandardNormal.sample(&mut rng));
        // one predictive draw per equal-probability stratum
        let std_normal = Normal::standard();
        let mut frng = crate::space::rng(mix_seed(cfg.seed, 0x6661));
        let n_f = cfg.n_fantasies as f64;
        let fantasy_normals = (0..cfg.n_fantasies)
            .map(|k| {
                let u: f64 = frng.random();
                let p = ((k as f64 + u) / n_f).clamp(1e-12, 1.0 - 1e-12);
                std_normal.inverse_cdf(p)
            })
            .collect();

        let (l0, _) = cholesky_with_jitter(&cov, "representer covariance")?;
        let samples = add_mean(l0.l() * &normals, &mean);
        let mut counts = vec![0; m];
        let current_entropy = argmax_entropy(&samples, None, &mut counts);
        Ok(EntropySearch {
            model,
            representers: reps,
            target_warped,
            mean,
            cov,
            whitened,
            normals,
            fantasy_normals,
            current_entropy,
        })
    }

    pub fn representers(&self) -> &[Vec<f64>] {
        &self.representers
    }

    /// `H(x* | D)`.
    pub fn current_entropy(&self) -> f64 {
        self.current_entropy
    }

    /// Covariance between the representers and a noisy observation at `(x, z)`,
    /// and that observation's predictive variance.
    fn coupling(&self, x: &[f64], z: &Fidelity) -> Result<(DVector<f64>, f64, f64)> {
        if x.len() != self.model.design_dim() {
            return Err(Error::invalid(format!(
                "candidate of dimension {} for a model of dimension {}",
                x.len(),
                self.model.design_dim()
            )));
        }
        let r = self.model.warp(z);
        let kq = self.model.cross_cov(x, &r);
        let vq = self.model.whiten(&kq);
        let latent_var = (self.model.prior_cov(x, &r, x, &r) - vq.norm_squared()).max(0.0);
        let pred_var = latent_var + self.model.params().noise_variance;
        let mut cross = self.whitened.tr_mul(&vq);
        for (j, rep) in self.representers.iter().enumerate() {
            cross[j] = self.model.prior_cov(rep, &self.target_warped, x, &r) - cross[j];
        }
        let pred_mean = kq.dot(self.model.alpha());
        Ok((cross, pred_var, pred_mean))
    }

    /// Joint posterior at the representers after observing `y` at `(x, z)`.
    pub fn condition_on(&self, x: &[f64], z: &Fidelity, y: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (cross, pred_var, pred_mean) = self.coupling(x, z)?;
        let mean = &self.mean + &cross * ((y - pred_mean) / pred_var);
        let cov = &self.cov - &cross * cross.transpose() / pred_var;
        Ok((mean, cov))
    }

    /// Mean over fantasies of `H(x* | D ∪ (x, z, ŷ))`.
    pub fn expected_entropy(&self, x: &[f64], z: &Fidelity) -> Result<f64> {
        let (cross, pred_var, _) = self.coupling(x, z)?;
        let b = cross / pred_var.sqrt();
        let updated = &self.cov - &b * b.transpose();
        let (l, _) = cholesky_with_jitter(&updated, "fantasy covariance")?;
        let samples = add_mean(l.l() * &self.normals, &self.mean);
        let mut counts = vec![0; self.representers.len()];
        let total: f64 = self
            .fantasy_normals
            .iter()
            .map(|xi| argmax_entropy(&samples, Some((&b, *xi)), &mut counts))
            .sum();
        Ok(total / self.fantasy_normals.len() as f64)
    }

    /// `[H(x* | D) - E_ŷ H(x* | D ∪ (x, z, ŷ))] / cost`.
    pub fn es_per_cost(&self, x: &[f64], z: &Fidelity, cost: f64) -> Result<f64> {
        if !(cost.is_finite() && cost > 0.0) {
            return Err(Error::invalid(format!("evaluation cost must be positive, got {cost}")));
        }
        Ok((self.current_entropy - self.expected_entropy(x, z)?) / cost)
    }
}

fn add_mean(mut samples: DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    for mut col in samples.column_iter_mut() {
        col += mean;
    }
    samples
}

/// Closed-form expected improvement over `best` for a Gaussian prediction.
pub fn expected_improvement(post: PosteriorGaussian, best: f64) -> f64 {
    let sd = post.sd();
    let gain = post.mean - best;
    if sd <= 0.0 {
        return gain.max(0.0);
    }
    let u = gain / sd;
    let n = Normal::standard();
    (gain * n.cdf(u) + sd * n.pdf(u)).max(0.0)
}

/// Expected improvement of the model's target-fidelity prediction at `x`.
pub fn expected_improvement_at(model: &ModelState, x: &[f64], target: &Fidelity, best: f64) -> Result<f64> {
    Ok(expected_improvement(model.posterior(x, target)?, best))
}
