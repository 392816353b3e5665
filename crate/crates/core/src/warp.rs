//! Learnable fidelity embedding: a 2→6→2 sigmoid perceptron applied to the raw
//! fidelity vector before it enters the stationary fidelity kernel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::Fidelity;

pub const INPUT: usize = 2;
pub const HIDDEN: usize = 6;
pub const OUTPUT: usize = 2;
/// `W1 (6×2) + b1 (6) + W2 (2×6) + b2 (2)`.
pub const N_WEIGHTS: usize = HIDDEN * INPUT + HIDDEN + OUTPUT * HIDDEN + OUTPUT;

const B1: usize = HIDDEN * INPUT;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + OUTPUT * HIDDEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WarpRepr", into = "WarpRepr")]
pub struct WarpParams {
    /// Flat layout: W1 row-major, b1, W2 row-major, b2.
    weights: [f64; N_WEIGHTS],
    enabled: bool,
}

#[derive(Serialize, Deserialize)]
struct WarpRepr {
    weights: Vec<f64>,
    enabled: bool,
}

impl TryFrom<WarpRepr> for WarpParams {
    type Error = Error;

    fn try_from(r: WarpRepr) -> Result<Self> {
        WarpParams::from_flat(&r.weights, r.enabled)
    }
}

impl From<WarpParams> for WarpRepr {
    fn from(w: WarpParams) -> Self {
        WarpRepr {
            weights: w.weights.to_vec(),
            enabled: w.enabled,
        }
    }
}

/// Derivatives of the two warp outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpJacobian {
    /// `∂r_k / ∂θ_e`, flat weight order.
    pub weights: [[f64; N_WEIGHTS]; OUTPUT],
    /// `∂r_k / ∂z_i`.
    pub input: [[f64; INPUT]; OUTPUT],
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl WarpParams {
    pub fn zeros(enabled: bool) -> Self {
        WarpParams {
            weights: [0.0; N_WEIGHTS],
            enabled,
        }
    }

    /// Weights i.i.d. uniform in `[-scale, scale]`; enabled.
    pub fn init(seed: u64, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::invalid(format!("warp init scale {scale}")));
        }
        let mut weights = [0.0; N_WEIGHTS];
        if scale > 0.0 {
            let mut rng = crate::space::rng(seed);
            for w in weights.iter_mut() {
                *w = rng.random_range(-scale..=scale);
            }
        }
        Ok(WarpParams {
            weights,
            enabled: true,
        })
    }

    pub fn from_flat(weights: &[f64], enabled: bool) -> Result<Self> {
        let weights: [f64; N_WEIGHTS] = weights.try_into().map_err(|_| {
            Error::invalid(format!(
                "warp expects {N_WEIGHTS} weights, got {}",
                weights.len()
            ))
        })?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("warp weights must be finite"));
        }
        Ok(WarpParams { weights, enabled })
    }

    pub fn weights(&self) -> &[f64; N_WEIGHTS] {
        &self.weights
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn with_enabled(mut self, enabled: bool) -> Self {
        self.enabled = enabled;
        self
    }

    pub fn forward(&self, z: &Fidelity) -> [f64; OUTPUT] {
        if !self.enabled {
            return z.0;
        }
        let (_, out) = self.activations(&z.0);
        out
    }

    fn activations(&self, z: &[f64; INPUT]) -> ([f64; HIDDEN], [f64; OUTPUT]) {
        let w = &self.weights;
        let mut hidden = [0.0; HIDDEN];
        for (h, a) in hidden.iter_mut().enumerate() {
            let pre = w[INPUT * h] * z[0] + w[INPUT * h + 1] * z[1] + w[B1 + h];
            *a = sigmoid(pre);
        }
        let mut out = [0.0; OUTPUT];
        for (k, o) in out.iter_mut().enumerate() {
            let pre: f64 = (0..HIDDEN)
                .map(|h| w[W2 + HIDDEN * k + h] * hidden[h])
                .sum::<f64>()
                + w[B2 + k];
            *o = sigmoid(pre);
        }
        (hidden, out)
    }

    pub fn jacobian(&self, z: &Fidelity) -> WarpJacobian {
        let mut jac = WarpJacobian {
            weights: [[0.0; N_WEIGHTS]; OUTPUT],
            input: [[0.0; INPUT]; OUTPUT],
        };
        if !self.enabled {
            jac.input = [[1.0, 0.0], [0.0, 1.0]];
            return jac;
        }
        let w = &self.weights;
        let (hidden, out) = self.activations(&z.0);
        for k in 0..OUTPUT {
            let g = out[k] * (1.0 - out[k]);
            let row = &mut jac.weights[k];
            row[B2 + k] = g;
            for h in 0..HIDDEN {
                row[W2 + HIDDEN * k + h] = g * hidden[h];
                let back = g * w[W2 + HIDDEN * k + h] * hidden[h] * (1.0 - hidden[h]);
                row[B1 + h] = back;
                for i in 0..INPUT {
                    row[INPUT * h + i] = back * z.0[i];
                    jac.input[k][i] += back * w[INPUT * h + i];
                }
            }
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Independent forward pass written directly from the layer equations.
    fn oracle_forward(flat: &[f64], z: [f64; 2]) -> [f64; 2] {
        let w1 = |h: usize, i: usize| flat[h * 2 + i];
        let b1 = |h: usize| flat[12 + h];
        let w2 = |k: usize, h: usize| flat[18 + k * 6 + h];
        let b2 = |k: usize| flat[30 + k];
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let hid: Vec<f64> = (0..6).map(|h| s(w1(h, 0) * z[0] + w1(h, 1) * z[1] + b1(h))).collect();
        let o = |k: usize| s((0..6).map(|h| w2(k, h) * hid[h]).sum::<f64>() + b2(k));
        [o(0), o(1)]
    }

    #[test]
    fn parameter_count() {
        assert_eq!(N_WEIGHTS, 32);
    }

    #[test]
    fn forward_examples() {
        let zero = WarpParams::zeros(true);
        assert_eq!(zero.forward(&Fidelity::new(0.9, 0.1)), [0.5, 0.5]);
        let off = WarpParams::init(4, 0.5).unwrap().with_enabled(false);
        assert_eq!(off.forward(&Fidelity::new(0.3, 0.7)), [0.3, 0.7]);

        let w = WarpParams::init(0, 0.5).unwrap();
        let got = w.forward(&Fidelity::new(1.0, 1.0));
        let want = oracle_forward(w.weights(), [1.0, 1.0]);
        assert_relative_eq!(got[0], want[0], epsilon = 1e-15);
        assert_relative_eq!(got[1], want[1], epsilon = 1e-15);
    }

    #[test]
    fn init_determinism() {
        assert_eq!(WarpParams::init(9, 0.5).unwrap(), WarpParams::init(9, 0.5).unwrap());
        assert_ne!(WarpParams::init(0, 0.5).unwrap(), WarpParams::init(1, 0.5).unwrap());
        let flat = WarpParams::init(0, 0.0).unwrap();
        assert!(flat.weights().iter().all(|w| *w == 0.0));
        assert_eq!(flat.forward(&Fidelity::new(0.2, 0.4)), [0.5, 0.5]);
        assert!(WarpParams::init(0, 0.5).unwrap().weights().iter().all(|w| w.abs() <= 0.5));
        assert!(WarpParams::init(0, -1.0).is_err());
    }

    #[test]
    fn zero_network_bias_derivative() {
        let jac = WarpParams::zeros(true).jacobian(&Fidelity::new(0.4, 0.6));
        assert_eq!(jac.weights[0][B2], 0.25);
        assert_eq!(jac.weights[1][B2 + 1], 0.25);
        assert_eq!(jac.weights[0][B2 + 1], 0.0);
    }

    #[test]
    fn disabled_jacobian() {
        let jac = WarpParams::init(1, 0.5).unwrap().with_enabled(false).jacobian(&Fidelity::new(0.4, 0.6));
        assert_eq!(jac.input, [[1.0, 0.0], [0.0, 1.0]]);
        assert!(jac.weights.iter().flatten().all(|v| *v == 0.0));
    }

    fn fd_weight(w: &WarpParams, z: &Fidelity, j: usize, h: f64) -> [f64; 2] {
        let mut up = *w.weights();
        up[j] += h;
        let mut dn = *w.weights();
        dn[j] -= h;
        let fu = WarpParams::from_flat(&up, true).unwrap().forward(z);
        let fdn = WarpParams::from_flat(&dn, true).unwrap().forward(z);
        [(fu[0] - fdn[0]) / (2.0 * h), (fu[1] - fdn[1]) / (2.0 * h)]
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        use rand::Rng;
        for seed in 0..20 {
            let w = WarpParams::init(seed, 2.0).unwrap();
            let mut rng = crate::space::rng(1000 + seed);
            let z = Fidelity::new(rng.random(), rng.random());
            let jac = w.jacobian(&z);
            for j in 0..N_WEIGHTS {
                let fd = fd_weight(&w, &z, j, 1e-5);
                for k in 0..2 {
                    let a = jac.weights[k][j];
                    let err = (a - fd[k]).abs() / a.abs().max(fd[k].abs()).max(1e-6);
                    assert!(err < 1e-5, "seed {seed} weight {j} out {k}: {a} vs {}", fd[k]);
                }
            }
            for i in 0..2 {
                let mut up = z;
                up.0[i] += 1e-5;
                let mut dn = z;
                dn.0[i] -= 1e-5;
                let (fu, fdn) = (w.forward(&up), w.forward(&dn));
                for k in 0..2 {
                    let fd = (fu[k] - fdn[k]) / 2e-5;
                    let a = jac.input[k][i];
                    assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn central_differences_converge_at_second_order() {
        let w = WarpParams::init(3, 1.5).unwrap();
        let z = Fidelity::new(0.35, 0.8);
        let jac = w.jacobian(&z);
        // directional derivative along a fixed weight direction
        let dir: Vec<f64> = (0..N_WEIGHTS).map(|j| ((j as f64) * 0.37).sin()).collect();
        let exact: f64 = (0..N_WEIGHTS).map(|j| jac.weights[0][j] * dir[j]).sum();
        let err = |h: f64| {
            let shift = |s: f64| {
                let v: Vec<f64> = w.weights().iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                WarpParams::from_flat(&v, true).unwrap().forward(&z)[0]
            };
            ((shift(h) - shift(-h)) / (2.0 * h) - exact).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn serde_round_trip() {
        let w = WarpParams::init(8, 0.5).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        let back: WarpParams = serde_json::from_str(&s).unwrap();
        assert_eq!(w, back);
        assert!(serde_json::from_str::<WarpParams>(r#"{"weights":[1.0],"enabled":true}"#).is_err());
    }

    proptest! {
        #[test]
        fn output_in_open_unit_box(seed in 0u64..500, tau in 0.0f64..=1.0, eps in 0.0f64..=1.0) {
            let r = WarpParams::init(seed, 3.0).unwrap().forward(&Fidelity::new(tau, eps));
            prop_assert!(r.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }
}
