//! One-dimensional maximization: golden-section search with a coarse grid
//! pre-scan to pick the bracket.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
    /// The best grid point was an endpoint of the search interval.
    pub at_boundary: bool,
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
/// Stops once the bracket is narrower than `tol`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Evaluates `f` on `n_grid` evenly spaced points, then refines around the
/// best one by golden section.
pub fn grid_then_golden<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, n_grid: usize, tol: f64) -> Maximum {
    let n = n_grid.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let values: Vec<f64> = (0..n).map(|i| f(lo + step * i as f64)).collect();
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let at_boundary = best == 0 || best == n - 1;
    let a = lo + step * best.saturating_sub(1) as f64;
    let b = lo + step * (best + 1).min(n - 1) as f64;
    let (x, value) = golden_section_max(&mut f, a, b, tol);
    if value >= values[best] {
        Maximum { x, value, at_boundary }
    } else {
        Maximum {
            x: lo + step * best as f64,
            value: values[best],
            at_boundary,
        }
    }
}
