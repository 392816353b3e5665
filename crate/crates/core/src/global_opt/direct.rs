//! DIRECT (DIviding RECTangles) global search.
//!
//! The box is normalized to the unit cube. Every rectangle stores its center
//! value; each round selects the potentially optimal rectangles (lower-right
//! convex hull of value against center-to-vertex distance, filtered by the
//! balance parameter) and trisects all of their longest sides.

use crate::error::{Error, Result};
use crate::space::Bounds;

/// Minimum relative improvement a rectangle must promise to be selected.
pub const DIRECT_BALANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle {
    /// Center in unit-cube coordinates.
    center: Vec<f64>,
    /// Side `i` has length `3^-levels[i]` in unit-cube coordinates.
    levels: Vec<u32>,
    /// Negated objective at the center (the search minimizes).
    value: f64,
}

impl Rectangle {
    fn side(level: u32) -> f64 {
        3f64.powi(-(level as i32))
    }

    /// Center-to-vertex distance in unit-cube coordinates.
    fn diameter(&self) -> f64 {
        let mut sorted = self.levels.clone();
        sorted.sort_unstable();
        0.5 * sorted.iter().map(|l| Self::side(*l).powi(2)).sum::<f64>().sqrt()
    }

    pub fn unit_center(&self) -> &[f64] {
        &self.center
    }

    pub fn unit_sides(&self) -> Vec<f64> {
        self.levels.iter().map(|l| Self::side(*l)).collect()
    }

    pub fn unit_volume(&self) -> f64 {
        self.levels.iter().map(|l| Self::side(*l)).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Resumable DIRECT state; [`direct_maximize`] drives it to completion.
pub struct Direct<F> {
    f: F,
    bounds: Bounds,
    max_evals: usize,
    rects: Vec<Rectangle>,
    evaluations: usize,
    best: usize,
    exhausted: bool,
}

impl<F: FnMut(&[f64]) -> f64> Direct<F> {
    pub fn new(mut f: F, bounds: &Bounds, max_evals: usize) -> Result<Self> {
        if max_evals == 0 {
            return Err(Error::invalid("DIRECT needs at least one evaluation"));
        }
        let center = vec![0.5; bounds.dim()];
        let v = f(&bounds.from_unit(&center));
        if !v.is_finite() {
            return Err(Error::invalid(format!("objective is {v} at the box center")));
        }
        Ok(Direct {
            f,
            bounds: bounds.clone(),
            max_evals,
            rects: vec![Rectangle {
                center,
                levels: vec![0; bounds.dim()],
                value: -v,
            }],
            evaluations: 1,
            best: 0,
            exhausted: false,
        })
    }

    pub fn rectangles(&self) -> &[Rectangle] {
        &self.rects
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn is_done(&self) -> bool {
        self.exhausted
    }

    pub fn best(&self) -> DirectResult {
        let r = &self.rects[self.best];
        DirectResult {
            x: self.bounds.from_unit(&r.center),
            value: -r.value,
            evaluations: self.evaluations,
        }
    }

    /// One round: select potentially optimal rectangles and divide them.
    /// Returns `false` once the evaluation budget is spent.
    pub fn step(&mut self) -> bool {
        if self.exhausted {
            return false;
        }
        let selected = self.potentially_optimal();
        if selected.is_empty() {
            self.exhausted = true;
            return false;
        }
        for idx in selected {
            let long = self.rects[idx].levels.iter().min().copied().unwrap_or(0);
            let dims: Vec<usize> = (0..self.bounds.dim())
                .filter(|&i| self.rects[idx].levels[i] == long)
                .collect();
            if self.evaluations + 2 * dims.len() > self.max_evals {
                self.exhausted = true;
                return false;
            }
            self.divide(idx, long, dims);
        }
        if self.evaluations >= self.max_evals {
            self.exhausted = true;
        }
        !self.exhausted
    }

    fn eval(&mut self, unit: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(&self.bounds.from_unit(unit));
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    }

    fn divide(&mut self, idx: usize, long: u32, dims: Vec<usize>) {
        let delta = Rectangle::side(long + 1);
        let mut probes = Vec::with_capacity(dims.len());
        for &i in &dims {
            let mut lo = self.rects[idx].center.clone();
            lo[i] -= delta;
            let mut hi = self.rects[idx].center.clone();
            hi[i] += delta;
            let (vl, vh) = (self.eval(&lo), self.eval(&hi));
            probes.push((i, lo, vl, hi, vh));
        }
        // split first along the dimension with the best probe, so it keeps the largest pieces
        probes.sort_by(|a, b| a.2.min(a.4).total_cmp(&b.2.min(b.4)).then(a.0.cmp(&b.0)));
        let mut levels = self.rects[idx].levels.clone();
        for (i, lo, vl, hi, vh) in probes {
            levels[i] += 1;
            for (center, value) in [(lo, vl), (hi, vh)] {
                self.rects.push(Rectangle {
                    center,
                    levels: levels.clone(),
                    value,
                });
                let new = self.rects.len() - 1;
                if value < self.rects[self.best].value {
                    self.best = new;
                }
            }
        }
        self.rects[idx].levels = levels;
    }

    fn potentially_optimal(&self) -> Vec<usize> {
        // lowest value per distinct diameter, ascending diameter
        let mut groups: Vec<(f64, usize)> = Vec::new();
        let mut by_size: Vec<(f64, usize)> = self
            .rects
            .iter()
            .enumerate()
            .filter(|(_, r)| r.value.is_finite())
            .map(|(i, r)| (r.diameter(), i))
            .collect();
        by_size.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (d, i) in by_size {
            match groups.last_mut() {
                Some((gd, gi)) if *gd == d => {
                    if self.rects[i].value < self.rects[*gi].value {
                        *gi = i;
                    }
                }
                _ => groups.push((d, i)),
            }
        }
        if groups.is_empty() {
            return Vec::new();
        }
        let val = |g: &(f64, usize)| self.rects[g.1].value;
        let f_min = groups.iter().map(val).fold(f64::INFINITY, f64::min);
        // start from the largest rectangle attaining the minimum
        let start = groups.iter().rposition(|g| val(g) == f_min).expect("non-empty");

        let mut hull = vec![start];
        let mut cur = start;
        while cur + 1 < groups.len() {
            let (dc, fc) = (groups[cur].0, val(&groups[cur]));
            let slope = |j: usize| (val(&groups[j]) - fc) / (groups[j].0 - dc);
            let min_slope = (cur + 1..groups.len()).map(slope).fold(f64::INFINITY, f64::min);
            let tol = 1e-12 * min_slope.abs().max(1e-300);
            let on_line: Vec<usize> = (cur + 1..groups.len())
                .filter(|&j| (slope(j) - min_slope).abs() <= tol)
                .collect();
            hull.extend_from_slice(&on_line);
            cur = *on_line.last().expect("at least the minimizer");
        }

        let threshold = f_min - DIRECT_BALANCE * f_min.abs();
        let mut selected = Vec::new();
        for (k, &g) in hull.iter().enumerate() {
            let keep = match hull.get(k + 1) {
                None => true,
                Some(&next) => {
                    let (d, f) = (groups[g].0, val(&groups[g]));
                    let slope = (val(&groups[next]) - f) / (groups[next].0 - d);
                    f - slope * d <= threshold
                }
            };
            if keep {
                selected.push(groups[g].1);
            }
        }
        selected
    }
}

/// Maximizes `f` over `bounds` with at most `max_evals` evaluations.
pub fn direct_maximize<F>(f: F, bounds: &Bounds, max_evals: usize) -> Result<DirectResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut search = Direct::new(f, bounds, max_evals)?;
    while search.step() {}
    Ok(search.best())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn branin(x1: f64, x2: f64) -> f64 {
        use std::f64::consts::PI;
        let b = 5.1 / (4.0 * PI * PI);
        let c = 5.0 / PI;
        (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - 1.0 / (8.0 * PI)) * x1.cos() + 10.0
    }

    #[test]
    fn finds_quadratic_peak() {
        let r = direct_maximize(
            |x| -((x[0] - 0.3).powi(2) + (x[1] - 0.3).powi(2)),
            &Bounds::unit(2),
            200,
        )
        .unwrap();
        assert!((r.x[0] - 0.3).abs() < 0.02 && (r.x[1] - 0.3).abs() < 0.02, "{:?}", r.x);
        assert!(r.evaluations <= 200);
    }

    #[test]
    fn constant_objective_returns_center() {
        let b = Bounds::new(vec![-1.0, 2.0], vec![1.0, 6.0]).unwrap();
        let r = direct_maximize(|_| 3.5, &b, 100).unwrap();
        assert_eq!(r.x, vec![0.0, 4.0]);
        assert_eq!(r.value, 3.5);
    }

    #[test]
    fn negated_branin() {
        let b = Bounds::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap();
        let r = direct_maximize(|x| -branin(x[0], x[1]), &b, 500).unwrap();
        assert!((r.value - (-0.397887)).abs() < 0.05, "{}", r.value);
    }

    #[test]
    fn stays_in_box_and_reports_true_value() {
        let b = Bounds::new(vec![-2.0, 0.5, 1.0], vec![2.0, 0.75, 9.0]).unwrap();
        let f = |x: &[f64]| (x[0] * 3.0).sin() + x[1] * x[2] - 0.1 * x[2] * x[2];
        let mut outside = 0;
        let r = direct_maximize(
            |x| {
                if !b.contains(x) {
                    outside += 1;
                }
                f(x)
            },
            &b,
            400,
        )
        .unwrap();
        assert_eq!(outside, 0);
        assert_eq!(r.value, f(&r.x));
    }

    #[test]
    fn nested_budgets_never_get_worse() {
        let b = Bounds::unit(3);
        let f = |x: &[f64]| -(x[0] - 0.71).abs() - (x[1] - 0.13).powi(2) + (5.0 * x[2]).cos();
        let mut prev = f64::NEG_INFINITY;
        for budget in [1, 7, 20, 50, 120, 300, 700] {
            let r = direct_maximize(f, &b, budget).unwrap();
            assert!(r.value >= prev);
            assert!(r.evaluations <= budget);
            prev = r.value;
        }
    }

    #[test]
    fn rectangles_partition_the_box() {
        let b = Bounds::unit(3);
        let mut d = Direct::new(|x: &[f64]| (7.0 * x[0]).sin() * x[1] - x[2], &b, 600).unwrap();
        loop {
            let total: f64 = d.rectangles().iter().map(Rectangle::unit_volume).sum();
            assert!((total - 1.0).abs() < 1e-9, "volume {total}");
            for r in d.rectangles() {
                for (c, s) in r.unit_center().iter().zip(r.unit_sides()) {
                    assert!(c - s / 2.0 >= -1e-12 && c + s / 2.0 <= 1.0 + 1e-12);
                }
            }
            if !d.step() {
                break;
            }
        }
    }

    #[test]
    fn rejects_bad_start() {
        assert!(direct_maximize(|_| f64::NAN, &Bounds::unit(1), 10).is_err());
        assert!(direct_maximize(|_| 0.0, &Bounds::unit(1), 0).is_err());
    }
}
