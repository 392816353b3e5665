//! Derivative-free inner optimizers and space-filling designs.

mod direct;
mod lhs;

pub use direct::{direct_maximize, Direct, DirectResult, Rectangle, DIRECT_BALANCE};
pub use lhs::lhs_sample;

use rand::Rng;

use crate::error::{Error, Result};
use crate::space::Bounds;

/// Best of `n` uniform samples over `bounds`.
pub fn random_maximize<F>(mut f: F, bounds: &Bounds, n: usize, seed: u64) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> f64,
{
    if n == 0 {
        return Err(Error::invalid("random search needs at least one sample"));
    }
    let mut rng = crate::space::rng(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..n {
        let u: Vec<f64> = (0..bounds.dim()).map(|_| rng.random::<f64>()).collect();
        let p = bounds.from_unit(&u);
        let v = f(&p);
        if best.as_ref().is_none_or(|(_, b)| v > *b || b.is_nan()) {
            best = Some((p, v));
        }
    }
    Ok(best.expect("n >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample() {
        let b = Bounds::unit(3);
        let mut seen = Vec::new();
        let (p, v) = random_maximize(
            |x| {
                seen.push(x.to_vec());
                x[0]
            },
            &b,
            1,
            4,
        )
        .unwrap();
        assert_eq!(seen, vec![p.clone()]);
        assert_eq!(v, p[0]);
        assert!(random_maximize(|_| 0.0, &b, 0, 0).is_err());
    }

    #[test]
    fn monotone_objective_approaches_upper_bound() {
        let b = Bounds::new(vec![-2.0], vec![3.0]).unwrap();
        let (p, _) = random_maximize(|x| x[0], &b, 5000, 1).unwrap();
        assert!(p[0] > 2.99 && p[0] <= 3.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let b = Bounds::unit(2);
        let f = |x: &[f64]| -(x[0] - 0.2).powi(2) - x[1];
        assert_eq!(random_maximize(f, &b, 50, 8).unwrap(), random_maximize(f, &b, 50, 8).unwrap());
    }
}
