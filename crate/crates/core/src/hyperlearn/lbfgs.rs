//! Limited-memory BFGS with a projected backtracking (Armijo) line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiNewtonConfig {
    pub max_iters: usize,
    pub grad_tolerance: f64,
    pub memory: usize,
    /// Per-coordinate `(lower, upper)`; infinite entries leave a side open.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for QuasiNewtonConfig {
    fn default() -> Self {
        QuasiNewtonConfig {
            max_iters: 200,
            grad_tolerance: 1e-5,
            memory: 10,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Stopped on the gradient tolerance rather than the iteration cap or a stalled line search.
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Projection<'a>(Option<&'a (Vec<f64>, Vec<f64>)>);

impl Projection<'_> {
    fn apply(&self, x: &mut [f64]) {
        if let Some((lo, hi)) = self.0 {
            for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
                *v = v.clamp(*l, *h);
            }
        }
    }

    /// Gradient with components that push against an active bound zeroed.
    fn gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let mut pg = g.to_vec();
        if let Some((lo, hi)) = self.0 {
            for i in 0..x.len() {
                if (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) {
                    pg[i] = 0.0;
                }
            }
        }
        pg
    }
}

/// Minimizes `objective`, which returns the value and gradient or `None` where it
/// cannot be evaluated. The returned value never exceeds the value at `start`.
pub fn quasi_newton_minimize<F>(mut objective: F, start: &[f64], cfg: &QuasiNewtonConfig) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    if let Some((lo, hi)) = &cfg.bounds {
        if lo.len() != start.len() || hi.len() != start.len() {
            return Err(Error::invalid("bounds do not match the start vector"));
        }
    }
    let proj = Projection(cfg.bounds.as_ref());
    let mut x = start.to_vec();
    proj.apply(&mut x);
    let (mut f, mut g) = match objective(&x) {
        Some((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => (f, g),
        _ => return Err(Error::invalid("objective is not finite at the starting point")),
    };
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let pg = proj.gradient(&x, &g);
        if inf_norm(&pg) < cfg.grad_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut d = two_loop(&pg, &memory);
        if dot(&d, &pg) >= 0.0 {
            memory.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut t = if memory.is_empty() {
            (1.0 / inf_norm(&pg)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            proj.apply(&mut trial);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if inf_norm(&step) == 0.0 {
                break;
            }
            if let Some((ft, gt)) = objective(&trial) {
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f + ARMIJO_C1 * dot(&g, &step) {
                    accepted = Some((trial, ft, gt, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new, s)) = accepted else {
            break;
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }

    Ok(Minimum {
        x,
        value: f,
        iterations,
        converged,
    })
}

/// `-H g` from the stored curvature pairs.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
