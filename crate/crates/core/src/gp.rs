//! Zero-mean Gaussian-process regression over `(design, fidelity)` pairs.
//!
//! Everything here works in the units of the targets it is given; callers that
//! want standardized targets go through [`Standardizer`].

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram_from_warped, ArbfParams, FactorizedKernelParams, FidelityKernel};
use crate::space::Fidelity;
use crate::warp::{WarpParams, N_WEIGHTS};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Jitter ladder tried after a plain factorization fails.
pub const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Kernel hyperparameters, warp weights and observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kernel: FactorizedKernelParams,
    pub warp: WarpParams,
    pub noise_variance: f64,
}

/// Index ranges of each block inside [`ModelParams::to_flat`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub design: Range<usize>,
    pub fidelity: Range<usize>,
    pub noise: usize,
    pub warp: Range<usize>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.warp.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ModelParams {
    pub fn new(kernel: FactorizedKernelParams, warp: WarpParams, noise_variance: f64) -> Result<Self> {
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::invalid(format!("noise variance {noise_variance}")));
        }
        Ok(ModelParams {
            kernel,
            warp,
            noise_variance,
        })
    }

    pub fn design_dim(&self) -> usize {
        self.kernel.design.dim()
    }

    pub fn layout(&self) -> ParamLayout {
        let d = 1 + self.design_dim();
        let f = d + self.kernel.fidelity.n_params();
        ParamLayout {
            design: 0..d,
            fidelity: d..f,
            noise: f,
            warp: f + 1..f + 1 + N_WEIGHTS,
        }
    }

    /// `[log θ1, log l.., fidelity params.., log σ², warp weights..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().len());
        v.push(self.kernel.design.signal_variance().ln());
        v.extend(self.kernel.design.length_scales().iter().map(|l| l.ln()));
        v.extend(self.kernel.fidelity.to_flat());
        v.push(self.noise_variance.ln());
        v.extend_from_slice(self.warp.weights());
        v
    }

    /// Same structure as `self` with values taken from a flat vector.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let layout = self.layout();
        if flat.len() != layout.len() {
            return Err(Error::invalid(format!(
                "flat parameter vector of length {}, expected {}",
                flat.len(),
                layout.len()
            )));
        }
        let design = ArbfParams::new(
            flat[0].exp(),
            flat[layout.design.start + 1..layout.design.end]
                .iter()
                .map(|v| v.exp())
                .collect(),
        )?;
        let fidelity = self.kernel.fidelity.with_flat(&flat[layout.fidelity.clone()])?;
        ModelParams::new(
            FactorizedKernelParams::new(design, fidelity)?,
            WarpParams::from_flat(&flat[layout.warp], self.warp.is_enabled())?,
            flat[layout.noise].exp(),
        )
    }
}

/// Training inputs and targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observations {
    pub xs: Vec<Vec<f64>>,
    pub zs: Vec<Fidelity>,
    pub ys: Vec<f64>,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, z: Fidelity, y: f64) {
        self.xs.push(x);
        self.zs.push(z);
        self.ys.push(y);
    }

    /// Targets shifted to zero mean and unit standard deviation.
    pub fn standardized(&self) -> (Observations, Standardizer) {
        let s = Standardizer::fit(&self.ys);
        let mut out = self.clone();
        out.ys = self.ys.iter().map(|y| s.forward(*y)).collect();
        (out, s)
    }

    fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("no observations"));
        }
        if self.xs.len() != self.ys.len() || self.zs.len() != self.ys.len() {
            return Err(Error::invalid("observation columns differ in length"));
        }
        if let Some(x) = self.xs.iter().find(|x| x.len() != params.design_dim()) {
            return Err(Error::invalid(format!(
                "design of dimension {} for a model of dimension {}",
                x.len(),
                params.design_dim()
            )));
        }
        if self.ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid("non-finite target"));
        }
        Ok(())
    }
}

/// Affine map `y ↦ (y - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer {
        mean: 0.0,
        scale: 1.0,
    };

    pub fn fit(ys: &[f64]) -> Self {
        if ys.is_empty() {
            return Self::IDENTITY;
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Standardizer {
            mean,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    pub fn inverse(&self, y: f64) -> f64 {
        y * self.scale + self.mean
    }

    pub fn inverse_posterior(&self, p: PosteriorGaussian) -> PosteriorGaussian {
        PosteriorGaussian {
            mean: self.inverse(p.mean),
            variance: p.variance * self.scale * self.scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorGaussian {
    pub mean: f64,
    pub variance: f64,
}

impl PosteriorGaussian {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Cholesky factorization, retried along [`JITTER_LADDER`] on failure.
/// Returns the factor and the jitter that was added to the diagonal.
pub fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    context: &'static str,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let n = m.nrows();
    let mut tried = vec![0.0];
    for jitter in JITTER_LADDER {
        tried.push(jitter);
        if let Some(c) = Cholesky::new(m + DMatrix::identity(n, n) * jitter) {
            return Ok((c, jitter));
        }
    }
    Err(Error::NotPositiveDefinite {
        context,
        jitters: tried,
    })
}

/// A GP conditioned on a set of observations under fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelState {
    obs: Observations,
    params: ModelParams,
    warped: Vec<[f64; 2]>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter_used: f64,
}

pub fn fit(obs: &Observations, params: &ModelParams) -> Result<ModelState> {
    obs.validate(params)?;
    let warped: Vec<[f64; 2]> = obs.zs.iter().map(|z| params.warp.forward(z)).collect();
    let kn = noisy_gram(&obs.xs, &warped, params);
    let (chol, jitter_used) = cholesky_with_jitter(&kn, "training covariance")?;
    let alpha = chol.solve(&DVector::from_column_slice(&obs.ys));
    Ok(ModelState {
        obs: obs.clone(),
        params: params.clone(),
        warped,
        chol,
        alpha,
        jitter_used,
    })
}

fn noisy_gram(xs: &[Vec<f64>], warped: &[[f64; 2]], params: &ModelParams) -> DMatrix<f64> {
    let mut k = gram_from_warped(xs, warped, &params.kernel);
    for i in 0..xs.len() {
        k[(i, i)] += params.noise_variance;
    }
    k
}

impl ModelState {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn observations(&self) -> &Observations {
        &self.obs
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Lower-triangular factor of `K + (σ² + jitter) I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn design_dim(&self) -> usize {
        self.params.design_dim()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.design_dim() {
            return Err(Error::invalid(format!(
                "query of dimension {} for a model of dimension {}",
                x.len(),
                self.design_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn warp(&self, z: &Fidelity) -> [f64; 2] {
        self.params.warp.forward(z)
    }

    /// Prior covariance between two warped query points.
    pub(crate) fn prior_cov(&self, x: &[f64], r: &[f64; 2], x2: &[f64], r2: &[f64; 2]) -> f64 {
        self.params.kernel.eval_unchecked(x, r, x2, r2)
    }

    /// `k(X, q)` against all training points.
    pub(crate) fn cross_cov(&self, x: &[f64], r: &[f64; 2]) -> DVector<f64> {
        DVector::from_iterator(
            self.obs.len(),
            self.obs
                .xs
                .iter()
                .zip(&self.warped)
                .map(|(xi, ri)| self.params.kernel.eval_unchecked(x, r, xi, ri)),
        )
    }

    /// `L⁻¹ v`.
    pub(crate) fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn posterior(&self, x: &[f64], z: &Fidelity) -> Result<PosteriorGaussian> {
        self.check_point(x)?;
        let r = self.warp(z);
        let k = self.cross_cov(x, &r);
        let mean = k.dot(&self.alpha);
        let v = self.whiten(&k);
        let variance = (self.prior_cov(x, &r, x, &r) - v.norm_squared()).max(0.0);
        Ok(PosteriorGaussian { mean, variance })
    }

    /// Posterior mean vector and covariance matrix of the latent function at `points`.
    pub fn joint_posterior(&self, points: &[(Vec<f64>, Fidelity)]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if points.is_empty() {
            return Err(Error::invalid("joint posterior over zero points"));
        }
        for (x, _) in points {
            self.check_point(x)?;
        }
        let m = points.len();
        let warped: Vec<[f64; 2]> = points.iter().map(|(_, z)| self.warp(z)).collect();
        let mut kxq = DMatrix::zeros(self.obs.len(), m);
        for (j, (x, _)) in points.iter().enumerate() {
            kxq.set_column(j, &self.cross_cov(x, &warped[j]));
        }
        let mean = kxq.tr_mul(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kxq)
            .expect("Cholesky factor has a positive diagonal");
        let mut cov = -v.tr_mul(&v);
        for i in 0..m {
            for j in 0..=i {
                let c = cov[(i, j)]
                    + self.prior_cov(&points[i].0, &warped[i], &points[j].0, &warped[j]);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        Ok((mean, cov))
    }

    /// `n_samples × points.len()` draws from the joint posterior of the latent function.
    pub fn sample_joint(
        &self,
        points: &[(Vec<f64>, Fidelity)],
        n_samples: usize,
        seed: u64,
    ) -> Result<DMatrix<f64>> {
        let (mean, cov) = self.joint_posterior(points)?;
        let (chol, _) = cholesky_with_jitter(&cov, "posterior covariance")?;
        let l = chol.l();
        let m = points.len();
        let mut rng = crate::space::rng(seed);
        let eps = DMatrix::<f64>::from_fn(m, n_samples, |_, _| StandardNormal.sample(&mut rng));
        let mut draws = l * eps;
        for mut col in draws.column_iter_mut() {
            col += &mean;
        }
        Ok(draws.transpose())
    }
}

/// Negative log marginal likelihood, including the `T/2 · log 2π` constant.
pub fn nlml(obs: &Observations, params: &ModelParams) -> Result<f64> {
    let state = fit(obs, params)?;
    Ok(state.nlml())
}

impl ModelState {
    pub fn nlml(&self) -> f64 {
        let y = DVector::from_column_slice(&self.obs.ys);
        let n = self.obs.len() as f64;
        let log_det_half: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        0.5 * y.dot(&self.alpha) + log_det_half + 0.5 * n * LN_2PI
    }

    /// Gradient of [`nlml`] with respect to the flat parameter vector of
    /// [`ModelParams::to_flat`]; the jitter, if any, is held fixed.
    pub fn nlml_grad(&self) -> Vec<f64> {
        let params = &self.params;
        let layout = params.layout();
        let n = self.obs.len();

        // W = K⁻¹ - α αᵀ; ∂NLML/∂θ = ½ tr(W ∂K/∂θ)
        let mut w = self.chol.inverse();
        w.ger(-1.0, &self.alpha, &self.alpha, 1.0);

        let mut grad = vec![0.0; layout.len()];
        let warp_on = params.warp.is_enabled();
        let mut back = vec![[0.0; 2]; n];
        if let FidelityKernel::Arbf(fk) = &params.kernel.fidelity {
            self.stationary_grad_terms(fk, &w, &mut grad, &mut back);
        } else {
            self.generic_grad_terms(&w, &mut grad, &mut back);
        }
        grad[layout.noise] = 0.5 * params.noise_variance * w.trace();
        if warp_on {
            let gw = &mut grad[layout.warp.clone()];
            for (z, b) in self.obs.zs.iter().zip(&back) {
                let jac = params.warp.jacobian(z);
                for (k, bk) in b.iter().enumerate() {
                    for (g, j) in gw.iter_mut().zip(&jac.weights[k]) {
                        *g += bk * j;
                    }
                }
            }
        }
        grad
    }

    /// Kernel-parameter gradient terms and `∂NLML/∂r_i` when both factors are
    /// RBFs: every derivative is algebraic in the kernel value, one exp per pair.
    fn stationary_grad_terms(&self, fk: &ArbfParams, w: &DMatrix<f64>, grad: &mut [f64], back: &mut [[f64; 2]]) {
        let layout = self.params.layout();
        let design = &self.params.kernel.design;
        let theta = design.signal_variance();
        let inv_ld: Vec<f64> = design.length_scales().iter().map(|l| 1.0 / l).collect();
        let inv_lf: Vec<f64> = fk.length_scales().iter().map(|l| 1.0 / l).collect();
        let (g0, gf) = (layout.design.start, layout.fidelity.start);
        let warp_on = self.params.warp.is_enabled();
        let mut td = vec![0.0; inv_ld.len()];
        for i in 0..self.obs.len() {
            let (xi, ri) = (&self.obs.xs[i], &self.warped[i]);
            for j in 0..=i {
                let (xj, rj) = (&self.obs.xs[j], &self.warped[j]);
                let mut sq = 0.0;
                for (d, t) in td.iter_mut().enumerate() {
                    let u = (xi[d] - xj[d]) * inv_ld[d];
                    *t = u * u;
                    sq += *t;
                }
                let dr = [ri[0] - rj[0], ri[1] - rj[1]];
                let tf = [(dr[0] * inv_lf[0]).powi(2), (dr[1] * inv_lf[1]).powi(2)];
                let k = theta * (-0.5 * (sq + tf[0] + tf[1])).exp();
                let wij = w[(i, j)];
                let mk = if i == j { 0.5 } else { 1.0 } * wij * k;
                grad[g0] += mk;
                for (d, t) in td.iter().enumerate() {
                    grad[g0 + 1 + d] += mk * t;
                }
                grad[gf] += mk * tf[0];
                grad[gf + 1] += mk * tf[1];
                if warp_on && i != j {
                    for c in 0..2 {
                        let v = wij * k * dr[c] * inv_lf[c] * inv_lf[c];
                        back[i][c] -= v;
                        back[j][c] += v;
                    }
                }
            }
        }
    }

    fn generic_grad_terms(&self, w: &DMatrix<f64>, grad: &mut [f64], back: &mut [[f64; 2]]) {
        let params = &self.params;
        let layout = params.layout();
        let n = self.obs.len();
        let dd = layout.design.len();
        let nf = layout.fidelity.len();
        let mut gx = vec![0.0; dd];
        let mut gz = vec![0.0; nf.max(1)];
        let mut dr = [0.0; 2];
        let warp_on = params.warp.is_enabled();
        let kernel = &params.kernel;
        for i in 0..n {
            for j in 0..=i {
                let (xi, xj) = (&self.obs.xs[i], &self.obs.xs[j]);
                let (ri, rj) = (&self.warped[i], &self.warped[j]);
                let wij = w[(i, j)];
                // ordered pairs (i, j) and (j, i) share a term off the diagonal
                let mult = if i == j { 0.5 } else { 1.0 } * wij;
                let kz = kernel.fidelity.eval_unchecked(ri, rj);
                kernel.design.grad_params_into(xi, xj, &mut gx);
                for (g, v) in grad[layout.design.clone()].iter_mut().zip(&gx) {
                    *g += mult * v * kz;
                }
                let kx = gx[0];
                if nf > 0 {
                    kernel.fidelity.grad_params_into(ri, rj, &mut gz[..nf]);
                    for (g, v) in grad[layout.fidelity.clone()].iter_mut().zip(&gz) {
                        *g += mult * kx * v;
                    }
                }
                if warp_on {
                    kernel.fidelity.grad_input_into(ri, rj, &mut dr);
                    back[i][0] += wij * kx * dr[0];
                    back[i][1] += wij * kx * dr[1];
                    if i != j {
                        kernel.fidelity.grad_input_into(rj, ri, &mut dr);
                        back[j][0] += wij * kx * dr[0];
                        back[j][1] += wij * kx * dr[1];
                    }
                }
            }
        }
    }
}

/// NLML and its gradient in one factorization.
pub fn nlml_with_grad(obs: &Observations, params: &ModelParams) -> Result<(f64, Vec<f64>)> {
    let state = fit(obs, params)?;
    Ok((state.nlml(), state.nlml_grad()))
}

pub fn nlml_grad(obs: &Observations, params: &ModelParams) -> Result<Vec<f64>> {
    Ok(nlml_with_grad(obs, params)?.1)
}

/// Default hyperparameters for a model of the given fidelity-kernel family.
pub fn default_params(design_dim: usize, fidelity: FidelityKind, warp: WarpParams) -> ModelParams {
    let design = ArbfParams::new(1.0, vec![0.3; design_dim]).expect("valid defaults");
    let fidelity = match fidelity {
        FidelityKind::Arbf => {
            FidelityKernel::Arbf(ArbfParams::unit_magnitude(vec![0.5, 0.5]).expect("valid defaults"))
        }
        FidelityKind::FiniteRank => FidelityKernel::FiniteRank(
            crate::kernels::FiniteRankParams::from_factors(&[[-0.35, 0.0, -0.35]; 2]),
        ),
    };
    ModelParams::new(
        FactorizedKernelParams::new(design, fidelity).expect("unit fidelity magnitude"),
        warp,
        1e-2,
    )
    .expect("valid defaults")
}

/// Which family the fidelity factor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityKind {
    Arbf,
    FiniteRank,
}
