//! Multi-fidelity objectives `g(x, z)` and the evaluation cost model.

mod external;
mod synthetic;

pub use external::{ExternalObjective, Request, Response};
pub use synthetic::{branin, park, MfBranin, MfCurve, MfPark4, Noisy};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ObjectiveError, Result};
use crate::space::{Bounds, Fidelity};

/// `c(z) = (c0 + c1 · eps) / c_norm`; the task component `tau` is free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub c0: f64,
    pub c1: f64,
    pub c_norm: f64,
}

impl Default for CostModel {
    /// Training cost proportional to `50 + 200 · eps` epochs, normalized so the target costs 1.
    fn default() -> Self {
        CostModel {
            c0: 50.0,
            c1: 200.0,
            c_norm: 250.0,
        }
    }
}

impl CostModel {
    pub fn new(c0: f64, c1: f64, c_norm: f64) -> Result<Self> {
        let m = CostModel { c0, c1, c_norm };
        m.validate()?;
        Ok(m)
    }

    /// Positive on the whole fidelity box; affine in eps, so `c0 > 0` suffices.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.c0, self.c1, self.c_norm].iter().all(|v| v.is_finite());
        if !finite || self.c0 <= 0.0 || self.c1 < 0.0 || self.c_norm <= 0.0 {
            return Err(Error::invalid(format!("cost model {self:?} is not positive on the fidelity box")));
        }
        Ok(())
    }

    pub fn cost(&self, z: &Fidelity) -> f64 {
        (self.c0 + self.c1 * z.eps()) / self.c_norm
    }

    /// Smallest cost over the fidelity box.
    pub fn min_cost(&self) -> f64 {
        self.c0 / self.c_norm
    }

    /// Smallest eps whose cost reaches `floor`, if any is needed.
    pub fn eps_for_cost(&self, floor: f64) -> f64 {
        if self.c1 <= 0.0 {
            return 0.0;
        }
        ((floor * self.c_norm - self.c0) / self.c1).clamp(0.0, 1.0)
    }
}

/// One observation; `cost` is `None` when the evaluator leaves it to the cost model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub y: f64,
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownOptimum {
    pub x: Vec<f64>,
    pub value: f64,
}

/// A black-box `g(x, z)` to be maximized; `f(x) = g(x, z*)`.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn design_bounds(&self) -> Bounds;

    /// Deterministic for fixed `(x, z, seed)`.
    fn evaluate(&self, x: &[f64], z: &Fidelity, seed: u64) -> Result<Evaluation, ObjectiveError>;

    fn known_optimum(&self) -> Option<KnownOptimum> {
        None
    }

    fn noise_sd(&self) -> f64 {
        0.0
    }
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn design_bounds(&self) -> Bounds {
        (**self).design_bounds()
    }

    fn evaluate(&self, x: &[f64], z: &Fidelity, seed: u64) -> Result<Evaluation, ObjectiveError> {
        (**self).evaluate(x, z, seed)
    }

    fn known_optimum(&self) -> Option<KnownOptimum> {
        (**self).known_optimum()
    }

    fn noise_sd(&self) -> f64 {
        (**self).noise_sd()
    }
}

/// Names accepted by [`synthetic_by_name`].
pub const SYNTHETIC_OBJECTIVES: [(&str, &str); 3] = [
    ("mf_branin", "2-D negated Branin with sinusoidal fidelity bias"),
    ("mf_park4", "4-D Park function scaled and shifted by fidelity"),
    ("mf_curve", "3-D learning-curve objective with a moving low-fidelity optimum"),
];

pub fn synthetic_by_name(name: &str, noise_sd: f64) -> Result<Box<dyn Objective>> {
    let base: Box<dyn Objective> = match name {
        "mf_branin" => Box::new(MfBranin),
        "mf_park4" => Box::new(MfPark4),
        "mf_curve" => Box::new(MfCurve),
        other => return Err(Error::Config(format!("unknown objective {other:?}"))),
    };
    if noise_sd > 0.0 {
        Ok(Box::new(Noisy::new(base, noise_sd)?))
    } else if noise_sd == 0.0 {
        Ok(base)
    } else {
        Err(Error::invalid(format!("noise_sd {noise_sd}")))
    }
}
