use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::space::Bounds;

/// Latin hypercube design: along every dimension each of the `n` equal-width
/// strata holds exactly one point, placed uniformly within its stratum.
pub fn lhs_sample(n: usize, bounds: &Bounds, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("Latin hypercube needs at least one point"));
    }
    let mut rng = crate::space::rng(seed);
    let mut points = vec![vec![0.0; bounds.dim()]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..bounds.dim() {
        strata.shuffle(&mut rng);
        for (p, &k) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            let mut v = (k as f64 + u) / n as f64;
            if (v * n as f64).floor() as usize != k {
                // k + u rounded up into the next stratum
                v = (k as f64 + 0.5) / n as f64;
            }
            p[d] = v;
        }
    }
    Ok(points.iter().map(|u| bounds.from_unit(u)).collect())
}
