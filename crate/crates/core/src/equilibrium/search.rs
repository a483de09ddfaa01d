//! One-dimensional maximization helpers shared by the leader and follower solvers.

use crate::error::Result;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// `n` evenly spaced points covering `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Golden-section maximization of a unimodal `f` on `[lo, hi]`.
///
/// Returns the best point seen together with its value.
pub fn golden_max<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64, max_iters: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if hi <= lo {
        let v = f(lo)?;
        return Ok((lo, v));
    }
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut iters = 0;
    while hi - lo > tol && iters < max_iters {
        // `>=` keeps the lower interval on ties
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
        iters += 1;
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Grid scan followed by golden-section refinement on the bracket around
/// the best grid point. Ties resolve to the lowest argument.
pub fn grid_then_golden<F>(mut f: F, lo: f64, hi: f64, points: usize, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if hi <= lo {
        let v = f(lo)?;
        return Ok((lo, v));
    }
    let grid = linspace(lo, hi, points.max(2));
    let values = grid.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    let k = argmax_first(&values);
    let a = grid[k.saturating_sub(1)];
    let b = grid[(k + 1).min(grid.len() - 1)];
    let (x, v) = golden_max(&mut f, a, b, tol, 200)?;
    if v > values[k] {
        Ok((x, v))
    } else {
        Ok((grid[k], values[k]))
    }
}
