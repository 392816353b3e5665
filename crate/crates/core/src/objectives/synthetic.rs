use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use super::{Evaluation, KnownOptimum, Objective};
use crate::error::{Error, ObjectiveError, Result};
use crate::space::{mix_seed, Bounds, Fidelity};

/// Standard Branin function (minimization form) on `[-5, 10] × [0, 15]`.
pub fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Park (1991) function on `[0, 1]⁴`; `x1` is floored at `1e-6`.
pub fn park(x: &[f64]) -> f64 {
    let x1 = x[0].max(1e-6);
    let (x2, x3, x4) = (x[1], x[2], x[3]);
    0.5 * x1 * ((1.0 + (x2 + x3 * x3) * x4 / (x1 * x1)).sqrt() - 1.0)
        + (x1 + 3.0 * x4) * (1.0 + x3.sin()).exp()
}

const BRANIN_LOWER: [f64; 2] = [-5.0, 0.0];
const BRANIN_WIDTH: [f64; 2] = [15.0, 15.0];

/// Negated Branin plus a fidelity bias that vanishes at `z* = (1, 1)`:
/// `-branin(x) + 2 (1 - tau) sin(x1) + 1.5 (1 - eps) cos(x2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MfBranin;

impl MfBranin {
    pub fn value(u: &[f64], z: &Fidelity) -> f64 {
        let x1 = BRANIN_LOWER[0] + BRANIN_WIDTH[0] * u[0];
        let x2 = BRANIN_LOWER[1] + BRANIN_WIDTH[1] * u[1];
        -branin(x1, x2) + 2.0 * (1.0 - z.tau()) * x1.sin() + 1.5 * (1.0 - z.eps()) * x2.cos()
    }
}

impl Objective for MfBranin {
    fn name(&self) -> &str {
        "mf_branin"
    }

    fn design_bounds(&self) -> Bounds {
        Bounds::unit(2)
    }

    fn evaluate(&self, x: &[f64], z: &Fidelity, _seed: u64) -> Result<Evaluation, ObjectiveError> {
        Ok(Evaluation {
            y: Self::value(x, z),
            cost: None,
        })
    }

    fn known_optimum(&self) -> Option<KnownOptimum> {
        let x = vec![(PI + 5.0) / 15.0, 2.275 / 15.0];
        Some(KnownOptimum {
            value: Self::value(&x, &Fidelity::TARGET),
            x,
        })
    }
}

/// `park(x) (0.9 + 0.1 eps) - 0.5 (1 - tau) ‖x‖₁`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MfPark4;

impl MfPark4 {
    pub fn value(x: &[f64], z: &Fidelity) -> f64 {
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        park(x) * (0.9 + 0.1 * z.eps()) - (1.0 - z.tau()) * 0.5 * l1
    }
}

impl Objective for MfPark4 {
    fn name(&self) -> &str {
        "mf_park4"
    }

    fn design_bounds(&self) -> Bounds {
        Bounds::unit(4)
    }

    fn evaluate(&self, x: &[f64], z: &Fidelity, _seed: u64) -> Result<Evaluation, ObjectiveError> {
        Ok(Evaluation {
            y: Self::value(x, z),
            cost: None,
        })
    }

    /// Both terms are maximized at the all-ones corner: the second grows in
    /// `x1, x3, x4` far faster than the first shrinks in `x1`.
    fn known_optimum(&self) -> Option<KnownOptimum> {
        let x = vec![1.0; 4];
        Some(KnownOptimum {
            value: park(&x),
            x,
        })
    }
}

const CURVE_TARGET_PEAK: [f64; 3] = [0.7, 0.2, 0.5];
const CURVE_EARLY_PEAK: [f64; 3] = [0.2, 0.8, 0.5];

/// Learning-curve objective: the target-fidelity bump `f_inf` emerges along a
/// saturating curve `s(eps) = 1 - exp(-5 eps)` out of a broad early-training
/// bump `f0` centered elsewhere, with a task penalty `0.3 (1 - tau) f0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MfCurve;

impl MfCurve {
    pub fn saturation(eps: f64) -> f64 {
        1.0 - (-5.0 * eps).exp()
    }

    pub fn target_bump(x: &[f64]) -> f64 {
        (-sq_dist(x, &CURVE_TARGET_PEAK) / 0.08).exp()
    }

    pub fn early_bump(x: &[f64]) -> f64 {
        0.5 * (-sq_dist(x, &CURVE_EARLY_PEAK) / 0.2).exp()
    }

    pub fn value(x: &[f64], z: &Fidelity) -> f64 {
        let s = Self::saturation(z.eps());
        let (f_inf, f0) = (Self::target_bump(x), Self::early_bump(x));
        f_inf * s + f0 * (1.0 - s) - 0.3 * (1.0 - z.tau()) * f0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

impl Objective for MfCurve {
    fn name(&self) -> &str {
        "mf_curve"
    }

    fn design_bounds(&self) -> Bounds {
        Bounds::unit(3)
    }

    fn evaluate(&self, x: &[f64], z: &Fidelity, _seed: u64) -> Result<Evaluation, ObjectiveError> {
        Ok(Evaluation {
            y: Self::value(x, z),
            cost: None,
        })
    }

    /// The early-training tail moves the true maximizer by under 1e-3, which
    /// changes the value by well under 1e-6.
    fn known_optimum(&self) -> Option<KnownOptimum> {
        let x = CURVE_TARGET_PEAK.to_vec();
        Some(KnownOptimum {
            value: Self::value(&x, &Fidelity::TARGET),
            x,
        })
    }
}

/// Adds `N(0, noise_sd²)` observation noise, deterministic per `(x, z, seed)`.
pub struct Noisy<O> {
    inner: O,
    noise_sd: f64,
}

impl<O: Objective> Noisy<O> {
    pub fn new(inner: O, noise_sd: f64) -> Result<Self> {
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return Err(Error::invalid(format!("noise_sd {noise_sd}")));
        }
        Ok(Noisy { inner, noise_sd })
    }

    fn noise(&self, x: &[f64], z: &Fidelity, seed: u64) -> f64 {
        let h = x
            .iter()
            .chain(z.as_slice())
            .fold(mix_seed(seed, 0x6e6f), |h, v| mix_seed(h, v.to_bits()));
        let draw: f64 = StandardNormal.sample(&mut crate::space::rng(h));
        self.noise_sd * draw
    }
}

impl<O: Objective> Objective for Noisy<O> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn design_bounds(&self) -> Bounds {
        self.inner.design_bounds()
    }

    fn evaluate(&self, x: &[f64], z: &Fidelity, seed: u64) -> Result<Evaluation, ObjectiveError> {
        let mut e = self.inner.evaluate(x, z, seed)?;
        if self.noise_sd > 0.0 {
            e.y += self.noise(x, z, seed);
        }
        Ok(e)
    }

    fn known_optimum(&self) -> Option<KnownOptimum> {
        self.inner.known_optimum()
    }

    fn noise_sd(&self) -> f64 {
        self.noise_sd
    }
}
