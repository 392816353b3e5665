//! Covariance functions: the anisotropic RBF, the finite-rank fidelity kernel
//! and their product over `(design, warped fidelity)` pairs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::Fidelity;
use crate::warp::WarpParams;

/// Anisotropic RBF: `θ1 · exp(-½ Σ ((a_i - b_i) / l_i)²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbfParams {
    signal_variance: f64,
    length_scales: Vec<f64>,
}

impl ArbfParams {
    pub fn new(signal_variance: f64, length_scales: Vec<f64>) -> Result<Self> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(Error::invalid(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        if length_scales.is_empty() {
            return Err(Error::invalid("ARBF kernel needs at least one length scale"));
        }
        if let Some(l) = length_scales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::invalid(format!("length scale must be positive, got {l}")));
        }
        Ok(ArbfParams {
            signal_variance,
            length_scales,
        })
    }

    /// Unit signal variance, as used for the fidelity factor.
    pub fn unit_magnitude(length_scales: Vec<f64>) -> Result<Self> {
        Self::new(1.0, length_scales)
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    fn check(&self, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != self.dim() || b.len() != self.dim() {
            return Err(Error::invalid(format!(
                "ARBF kernel of dimension {} evaluated at points of dimension {} and {}",
                self.dim(),
                a.len(),
                b.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check(a, b)?;
        Ok(self.eval_unchecked(a, b))
    }

    /// Gradient with respect to `(log θ1, log l_1, ..., log l_d)`.
    pub fn grad_params(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.check(a, b)?;
        let mut out = vec![0.0; 1 + self.dim()];
        self.grad_params_into(a, b, &mut out);
        Ok(out)
    }

    /// Gradient of `k(a, b)` with respect to `a`.
    pub fn grad_input(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.check(a, b)?;
        let mut out = vec![0.0; self.dim()];
        self.grad_input_into(a, b, &mut out);
        Ok(out)
    }

    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance * (-0.5 * self.scaled_sq_dist(a, b)).exp()
    }

    fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum()
    }

    pub(crate) fn grad_params_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let k = self.eval_unchecked(a, b);
        out[0] = k;
        for (i, l) in self.length_scales.iter().enumerate() {
            let d = (a[i] - b[i]) / l;
            out[1 + i] = k * d * d;
        }
    }

    pub(crate) fn grad_input_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let k = self.eval_unchecked(a, b);
        for (i, l) in self.length_scales.iter().enumerate() {
            out[i] = -k * (a[i] - b[i]) / (l * l);
        }
    }
}

/// Finite-rank kernel on raw fidelities: `Σ_d φ(z_d)ᵀ W_d φ(z'_d)` with `φ(s) = (1, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteRankParams {
    basis_weights: Vec<[[f64; 2]; 2]>,
}

impl FiniteRankParams {
    pub fn new(basis_weights: Vec<[[f64; 2]; 2]>) -> Result<Self> {
        for (d, w) in basis_weights.iter().enumerate() {
            if w.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("basis weights {d} not finite")));
            }
            if w[0][1] != w[1][0] {
                return Err(Error::invalid(format!("basis weights {d} not symmetric")));
            }
            // 2×2 symmetric PSD iff both diagonals and the determinant are non-negative
            let det = w[0][0] * w[1][1] - w[0][1] * w[1][0];
            let tol = 1e-12 * (w[0][0].abs() + w[1][1].abs()).max(1.0);
            if w[0][0] < 0.0 || w[1][1] < 0.0 || det < -tol {
                return Err(Error::invalid(format!(
                    "basis weights {d} not positive semidefinite"
                )));
            }
        }
        Ok(FiniteRankParams { basis_weights })
    }

    /// Builds `W_d = L_d L_dᵀ` from `L_d = [[e^a, 0], [b, e^c]]`, one `(a, b, c)` per dimension.
    pub fn from_factors(factors: &[[f64; 3]]) -> Self {
        let basis_weights = factors
            .iter()
            .map(|&[a, b, c]| {
                let l11 = a.exp();
                let l22 = c.exp();
                [[l11 * l11, l11 * b], [l11 * b, b * b + l22 * l22]]
            })
            .collect();
        FiniteRankParams { basis_weights }
    }

    /// Inverse of [`from_factors`](Self::from_factors); singular weights are floored.
    pub fn factors(&self) -> Vec<[f64; 3]> {
        const FLOOR: f64 = 1e-12;
        self.basis_weights
            .iter()
            .map(|w| {
                let l11 = w[0][0].max(FLOOR).sqrt();
                let b = w[0][1] / l11;
                let l22 = (w[1][1] - b * b).max(FLOOR).sqrt();
                [l11.ln(), b, l22.ln()]
            })
            .collect()
    }

    pub fn basis_weights(&self) -> &[[[f64; 2]; 2]] {
        &self.basis_weights
    }

    pub fn dim(&self) -> usize {
        self.basis_weights.len()
    }

    pub fn eval(&self, z: &[f64], z2: &[f64]) -> Result<f64> {
        if z.len() != self.dim() || z2.len() != self.dim() {
            return Err(Error::invalid(format!(
                "finite-rank kernel of dimension {} evaluated at dimension {} and {}",
                self.dim(),
                z.len(),
                z2.len()
            )));
        }
        Ok(self.eval_unchecked(z, z2))
    }

    pub(crate) fn eval_unchecked(&self, z: &[f64], z2: &[f64]) -> f64 {
        self.basis_weights
            .iter()
            .zip(z.iter().zip(z2))
            .map(|(w, (s, t))| {
                w[0][0] + (s + t) * w[0][1] + s * t * w[1][1]
            })
            .sum()
    }

    /// Gradient with respect to the factor parameters `(a, b, c)` of every dimension.
    pub(crate) fn grad_factors_into(&self, z: &[f64], z2: &[f64], out: &mut [f64]) {
        for (d, [a, b, c]) in self.factors().into_iter().enumerate() {
            let (s, t) = (z[d], z2[d]);
            let (ea, ec) = (a.exp(), c.exp());
            out[3 * d] = 2.0 * ea * ea + (s + t) * ea * b;
            out[3 * d + 1] = (s + t) * ea + 2.0 * s * t * b;
            out[3 * d + 2] = 2.0 * s * t * ec * ec;
        }
    }

    pub(crate) fn grad_input_into(&self, _z: &[f64], z2: &[f64], out: &mut [f64]) {
        for (d, w) in self.basis_weights.iter().enumerate() {
            out[d] = w[1][0] + z2[d] * w[1][1];
        }
    }
}

/// The fidelity factor `k_z` of the product kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FidelityKernel {
    /// Stationary RBF with magnitude pinned to 1.
    Arbf(ArbfParams),
    FiniteRank(FiniteRankParams),
}

impl FidelityKernel {
    pub fn eval(&self, r: &[f64], r2: &[f64]) -> Result<f64> {
        match self {
            FidelityKernel::Arbf(p) => p.eval(r, r2),
            FidelityKernel::FiniteRank(p) => p.eval(r, r2),
        }
    }

    pub(crate) fn eval_unchecked(&self, r: &[f64], r2: &[f64]) -> f64 {
        match self {
            FidelityKernel::Arbf(p) => p.eval_unchecked(r, r2),
            FidelityKernel::FiniteRank(p) => p.eval_unchecked(r, r2),
        }
    }

    /// Number of free (log-space) hyperparameters.
    pub fn n_params(&self) -> usize {
        match self {
            FidelityKernel::Arbf(p) => p.dim(),
            FidelityKernel::FiniteRank(p) => 3 * p.dim(),
        }
    }

    pub(crate) fn grad_params_into(&self, r: &[f64], r2: &[f64], out: &mut [f64]) {
        match self {
            FidelityKernel::Arbf(p) => {
                let mut full = [0.0; 8];
                p.grad_params_into(r, r2, &mut full[..1 + p.dim()]);
                out.copy_from_slice(&full[1..1 + p.dim()]);
            }
            FidelityKernel::FiniteRank(p) => p.grad_factors_into(r, r2, out),
        }
    }

    pub(crate) fn grad_input_into(&self, r: &[f64], r2: &[f64], out: &mut [f64]) {
        match self {
            FidelityKernel::Arbf(p) => p.grad_input_into(r, r2, out),
            FidelityKernel::FiniteRank(p) => p.grad_input_into(r, r2, out),
        }
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        match self {
            FidelityKernel::Arbf(p) => p.length_scales().iter().map(|l| l.ln()).collect(),
            FidelityKernel::FiniteRank(p) => p.factors().into_iter().flatten().collect(),
        }
    }

    pub(crate) fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        Ok(match self {
            FidelityKernel::Arbf(_) => {
                FidelityKernel::Arbf(ArbfParams::unit_magnitude(flat.iter().map(|v| v.exp()).collect())?)
            }
            FidelityKernel::FiniteRank(_) => {
                let factors: Vec<[f64; 3]> =
                    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
                FidelityKernel::FiniteRank(FiniteRankParams::from_factors(&factors))
            }
        })
    }
}

/// Product kernel `k_x(x, x') · k_z(r, r')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedKernelParams {
    pub design: ArbfParams,
    pub fidelity: FidelityKernel,
}

impl FactorizedKernelParams {
    pub fn new(design: ArbfParams, fidelity: FidelityKernel) -> Result<Self> {
        if let FidelityKernel::Arbf(p) = &fidelity {
            if p.signal_variance() != 1.0 {
                return Err(Error::invalid(
                    "fidelity factor signal variance must be exactly 1",
                ));
            }
        }
        Ok(FactorizedKernelParams { design, fidelity })
    }

    pub fn eval(&self, x: &[f64], r: &[f64], x2: &[f64], r2: &[f64]) -> Result<f64> {
        Ok(self.design.eval(x, x2)? * self.fidelity.eval(r, r2)?)
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], r: &[f64], x2: &[f64], r2: &[f64]) -> f64 {
        self.design.eval_unchecked(x, x2) * self.fidelity.eval_unchecked(r, r2)
    }
}

/// Applies the warp to every fidelity in `zs`.
pub fn warped_fidelities(zs: &[Fidelity], warp: &WarpParams) -> Vec<[f64; 2]> {
    zs.iter().map(|z| warp.forward(z)).collect()
}

/// Noise-free covariance matrix `K[i, j] = k([x_i, φ(z_i)], [x_j, φ(z_j)])`.
pub fn gram_matrix(
    xs: &[Vec<f64>],
    zs: &[Fidelity],
    kernel: &FactorizedKernelParams,
    warp: &WarpParams,
) -> Result<DMatrix<f64>> {
    if xs.is_empty() || xs.len() != zs.len() {
        return Err(Error::invalid(format!(
            "gram matrix over {} designs and {} fidelities",
            xs.len(),
            zs.len()
        )));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != kernel.design.dim()) {
        return Err(Error::invalid(format!(
            "design of dimension {} for a kernel of dimension {}",
            x.len(),
            kernel.design.dim()
        )));
    }
    let rs = warped_fidelities(zs, warp);
    // validates the fidelity factor's dimension once
    kernel.fidelity.eval(&rs[0], &rs[0])?;
    Ok(gram_from_warped(xs, &rs, kernel))
}

pub(crate) fn gram_from_warped(
    xs: &[Vec<f64>],
    rs: &[[f64; 2]],
    kernel: &FactorizedKernelParams,
) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval_unchecked(&xs[i], &rs[i], &xs[j], &rs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}
