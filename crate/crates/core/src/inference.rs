//! Bayesian power-measured updates.
//!
//! For a bin with standardized excess `x` and sensitivity `η`, an axion of
//! coupling `g` predicts `x ~ N(μ, 1)` with `μ = g² η`, so the likelihood
//! ratio against no axion is `u = exp(μ x − μ²/2)`. Rescans multiply their
//! own `u` onto the bins they revisit, and the aggregate over all `N` bins is
//! the plain mean `𝒰 = Σ U_i / N`. Everything is kept in log space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::GrandSpectrum;

pub fn log_prior_update(x: f64, mu: f64) -> f64 {
    mu * x - 0.5 * mu * mu
}

pub fn prior_update(x: f64, mu: f64) -> f64 {
    log_prior_update(x, mu).exp()
}

/// Elementwise product of an initial update array with rescan arrays. A
/// rescan entry of `None` leaves the bin alone.
pub fn combine_updates(initial: &[f64], rescans: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    let mut out = initial.to_vec();
    for r in rescans {
        if r.len() != out.len() {
            return Err(Error::GridMismatch(format!(
                "rescan update has {} bins, initial has {}",
                r.len(),
                out.len()
            )));
        }
        for (u, v) in out.iter_mut().zip(r) {
            if let Some(v) = v {
                *u *= v;
            }
        }
    }
    Ok(out)
}

/// `ln Σ exp(a_i)` with the maximum factored out.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean of `U_i` given `ln U_i`.
pub fn aggregate_log(log_u: &[f64]) -> Result<f64> {
    if log_u.is_empty() {
        return Err(Error::EmptyCampaign("no bins to aggregate".into()));
    }
    Ok((log_sum_exp(log_u) - (log_u.len() as f64).ln()).exp())
}

pub fn aggregate(u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::EmptyCampaign("no bins to aggregate".into()));
    }
    Ok(u.iter().sum::<f64>() / u.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescanMeasurement {
    /// Index into the initial measurement arrays.
    pub bin: usize,
    pub x: f64,
    pub eta: f64,
}

/// Per-bin inputs: the initial scan plus any rescans of the same bins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub nu_hz: Vec<f64>,
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    pub rescans: Vec<RescanMeasurement>,
}

impl Measurements {
    /// Valid bins of a grand spectrum.
    pub fn from_grand(grand: &GrandSpectrum) -> Self {
        let idx = grand.valid_indices();
        Measurements {
            nu_hz: idx.iter().map(|&i| grand.frequency(i)).collect(),
            x: idx.iter().map(|&i| grand.x[i]).collect(),
            eta: idx.iter().map(|&i| grand.eta[i]).collect(),
            rescans: Vec::new(),
        }
    }

    pub fn uniform(x: Vec<f64>, eta: f64) -> Self {
        Measurements {
            nu_hz: (0..x.len()).map(|i| i as f64).collect(),
            eta: vec![eta; x.len()],
            x,
            rescans: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Adds the rescan grand spectrum's value at every listed initial bin it
    /// covers.
    pub fn add_rescan(&mut self, bins: impl IntoIterator<Item = usize>, rescan: &GrandSpectrum) {
        for b in bins {
            if let Some(j) = rescan.index_of(self.nu_hz[b] + 0.5 * rescan.bin_width) {
                if rescan.valid(j) {
                    self.rescans.push(RescanMeasurement {
                        bin: b,
                        x: rescan.x[j],
                        eta: rescan.eta[j],
                    });
                }
            }
        }
    }

    /// Index of the bin with frequency nearest `nu`.
    pub fn nearest(&self, nu: f64) -> Option<usize> {
        let i = self.nu_hz.partition_point(|v| *v < nu);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < self.len())
            .min_by(|a, b| (self.nu_hz[*a] - nu).abs().total_cmp(&(self.nu_hz[*b] - nu).abs()))
    }

    /// `ln U_i(g)` for every bin.
    pub fn log_updates(&self, g: f64) -> Vec<f64> {
        let g2 = g * g;
        let mut out: Vec<f64> = self
            .x
            .iter()
            .zip(&self.eta)
            .map(|(x, e)| log_prior_update(*x, g2 * e))
            .collect();
        for r in &self.rescans {
            out[r.bin] += log_prior_update(r.x, g2 * r.eta);
        }
        out
    }

    pub fn aggregate(&self, g: f64) -> Result<f64> {
        aggregate_log(&self.log_updates(g))
    }
}

/// `n` log-spaced couplings over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

pub const DEFAULT_G_RANGE: (f64, f64) = (0.5, 10.0);
pub const DEFAULT_G_POINTS: usize = 300;
pub const DEFAULT_TARGET: f64 = 0.1;

/// Root of `f(g) = target` for a curve sampled on `grid`, refined by
/// bisection on the continuous `f`. The bracket is the last grid interval
/// where `f` falls through `target`, so every grid coupling above the root is
/// excluded. `f(0) = 1` closes the bracket below the grid.
pub fn bisect_crossing(grid: &[f64], values: &[f64], target: f64, tol: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let last = *values.last()?;
    if last >= target {
        return None;
    }
    let k = values.iter().rposition(|v| *v >= target);
    let (mut lo, mut hi) = match k {
        Some(k) => (grid[k], grid[k + 1]),
        None => (0.0, grid[0]),
    };
    while hi - lo > tol * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Contiguous windows of near-equal bin count; the first `N mod n` windows
/// take one extra bin.
pub fn window_bounds(n_bins: usize, n_windows: usize) -> Result<Vec<(usize, usize)>> {
    if n_windows == 0 || n_windows > n_bins {
        return Err(Error::invalid(
            "n_windows",
            format!("cannot split {n_bins} bins into {n_windows} windows"),
        ));
    }
    let base = n_bins / n_windows;
    let extra = n_bins % n_windows;
    let mut out = Vec::with_capacity(n_windows);
    let mut start = 0;
    for w in 0..n_windows {
        let len = base + usize::from(w < extra);
        out.push((start, start + len));
        start += len;
    }
    Ok(out)
}

/// Mean update per window, from `ln U_i`.
pub fn subaggregate_windows(log_u: &[f64], n_windows: usize) -> Result<Vec<f64>> {
    window_bounds(log_u.len(), n_windows)?
        .into_iter()
        .map(|(a, b)| aggregate_log(&log_u[a..b]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub nu_lo_hz: f64,
    pub nu_hi_hz: f64,
    pub n_bins: usize,
    /// Coupling where this window's update falls to the target.
    pub g_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionResult {
    pub target: f64,
    pub n_bins: usize,
    pub n_rescan_bins: usize,
    pub g_grid: Vec<f64>,
    pub aggregate: Vec<f64>,
    pub g_star: Option<f64>,
    pub windows: Vec<WindowResult>,
    /// `surface[w][k]` is window `w`'s update at `g_grid[k]`.
    pub surface: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExclusionSettings {
    pub g_min: f64,
    pub g_max: f64,
    pub g_points: usize,
    pub target: f64,
    pub n_windows: usize,
    /// Relative tolerance of the bisection in `g`.
    pub tolerance: f64,
}

impl Default for ExclusionSettings {
    fn default() -> Self {
        ExclusionSettings {
            g_min: DEFAULT_G_RANGE.0,
            g_max: DEFAULT_G_RANGE.1,
            g_points: DEFAULT_G_POINTS,
            target: DEFAULT_TARGET,
            n_windows: 100,
            tolerance: 1e-10,
        }
    }
}

impl ExclusionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.g_min > 0.0 && self.g_max > self.g_min) {
            return Err(Error::invalid("g_range", "need 0 < g_min < g_max"));
        }
        if self.g_points < 2 {
            return Err(Error::invalid("g_points", "need at least two grid points"));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::invalid("target", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Aggregate curve, exclusion coupling and the windowed surface.
pub fn exclusion(meas: &Measurements, settings: &ExclusionSettings) -> Result<ExclusionResult> {
    settings.validate()?;
    if meas.is_empty() {
        return Err(Error::EmptyCampaign("grand spectrum has no valid bins".into()));
    }
    let bounds = window_bounds(meas.len(), settings.n_windows)?;
    let grid = log_grid(settings.g_min, settings.g_max, settings.g_points);
    let rows: Vec<(f64, Vec<f64>)> = grid
        .par_iter()
        .map(|&g| {
            let lu = meas.log_updates(g);
            let total = aggregate_log(&lu).unwrap_or(f64::NAN);
            let per = bounds
                .iter()
                .map(|&(a, b)| aggregate_log(&lu[a..b]).unwrap_or(f64::NAN))
                .collect();
            (total, per)
        })
        .collect();
    let aggregate: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let g_star = bisect_crossing(&grid, &aggregate, settings.target, settings.tolerance, |g| {
        meas.aggregate(g).unwrap_or(f64::NAN)
    });
    let surface: Vec<Vec<f64>> = (0..bounds.len())
        .map(|w| rows.iter().map(|r| r.1[w]).collect())
        .collect();
    let windows = bounds
        .par_iter()
        .zip(&surface)
        .map(|(&(a, b), curve)| {
            let sub = Measurements {
                nu_hz: meas.nu_hz[a..b].to_vec(),
                x: meas.x[a..b].to_vec(),
                eta: meas.eta[a..b].to_vec(),
                rescans: meas
                    .rescans
                    .iter()
                    .filter(|r| r.bin >= a && r.bin < b)
                    .map(|r| RescanMeasurement { bin: r.bin - a, ..*r })
                    .collect(),
            };
            WindowResult {
                nu_lo_hz: meas.nu_hz[a],
                nu_hi_hz: meas.nu_hz[b - 1],
                n_bins: b - a,
                g_star: bisect_crossing(&grid, curve, settings.target, 1e-6, |g| {
                    sub.aggregate(g).unwrap_or(f64::NAN)
                }),
            }
        })
        .collect();
    let mut rescanned: Vec<usize> = meas.rescans.iter().map(|r| r.bin).collect();
    rescanned.sort_unstable();
    rescanned.dedup();
    Ok(ExclusionResult {
        target: settings.target,
        n_bins: meas.len(),
        n_rescan_bins: rescanned.len(),
        g_grid: grid,
        aggregate,
        g_star,
        windows,
        surface,
    })
}

impl ExclusionResult {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("g,U\n");
        for (g, u) in self.g_grid.iter().zip(&self.aggregate) {
            s.push_str(&format!("{g:?},{u:?}\n"));
        }
        s
    }

    pub fn windows_csv(&self) -> String {
        let mut s = String::from("window_lo_hz,window_hi_hz,g_10pct\n");
        for w in &self.windows {
            let g = w.g_star.map_or_else(|| "nan".to_string(), |g| format!("{g:?}"));
            s.push_str(&format!("{:?},{:?},{g}\n", w.nu_lo_hz, w.nu_hi_hz));
        }
        s
    }

    /// Rows are windows, columns the coupling grid.
    pub fn surface_csv(&self) -> String {
        let mut s = String::from("window_lo_hz");
        for g in &self.g_grid {
            s.push_str(&format!(",{g:?}"));
        }
        s.push('\n');
        for (w, row) in self.windows.iter().zip(&self.surface) {
            s.push_str(&format!("{:?}", w.nu_lo_hz));
            for v in row {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Closed-form exclusion coupling for `x = 0` and uniform `η`:
/// `exp(−(g² η)²/2) = target`.
pub fn null_exclusion_coupling(eta: f64, target: f64) -> f64 {
    ((-2.0 * target.ln()).sqrt() / eta).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn update_identities() {
        assert_eq!(prior_update(3.7, 0.0), 1.0);
        assert_eq!(prior_update(1.3, 2.6), 1.0);
        assert!((prior_update(0.0, 1.0) - 0.606_530_659_712_633_4).abs() < 1e-15);
        // Large excesses stay finite in log space.
        assert!(log_prior_update(1e3, 40.0).is_finite());
    }

    proptest! {
        #[test]
        fn log_update_is_linear_in_x(x in -10.0f64..10.0, dx in -5.0f64..5.0, mu in 0.0f64..20.0) {
            let slope = (log_prior_update(x + dx, mu) - log_prior_update(x, mu)) / dx;
            prop_assume!(dx.abs() > 1e-3);
            prop_assert!((slope - mu).abs() < 1e-9 * (1.0 + mu));
        }

        #[test]
        fn aggregate_is_permutation_invariant(mut v in proptest::collection::vec(-30.0f64..5.0, 1..60), k in 0usize..60) {
            let a = aggregate_log(&v).unwrap();
            let r = k % v.len();
            v.rotate_left(r);
            v.reverse();
            let b = aggregate_log(&v).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }
    }

    #[test]
    fn null_expectation_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = 1.0;
        let n = 400_000;
        let u: Vec<f64> = (0..n)
            .map(|_| prior_update(StandardNormal.sample(&mut rng), mu))
            .collect();
        let m = u.iter().sum::<f64>() / n as f64;
        let sd = ((mu * mu).exp() - 1.0_f64).sqrt() / (n as f64).sqrt();
        assert!((m - 1.0).abs() < 3.0 * sd, "{m}");
    }

    #[test]
    fn combine_and_aggregate() {
        let c = combine_updates(&[0.5, 2.0], &[vec![Some(0.5), None]]).unwrap();
        assert_eq!(c, vec![0.25, 2.0]);
        assert_eq!(combine_updates(&[0.5], &[]).unwrap(), vec![0.5]);
        assert!(combine_updates(&[0.5], &[vec![None, None]]).is_err());
        assert_eq!(aggregate(&[1.0; 5]).unwrap(), 1.0);
        assert_eq!(aggregate(&[0.0; 5]).unwrap(), 0.0);
        assert_eq!(aggregate(&[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
        assert!(aggregate(&[]).is_err());
        assert!((aggregate_log(&[0.0, f64::NEG_INFINITY]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn windows_average_back_to_aggregate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lu: Vec<f64> = (0..1037).map(|_| rng.sample::<f64, _>(StandardNormal) - 1.0).collect();
        let total = aggregate_log(&lu).unwrap();
        let bounds = window_bounds(lu.len(), 100).unwrap();
        let w = subaggregate_windows(&lu, 100).unwrap();
        let back: f64 = w.iter().zip(&bounds).map(|(u, (a, b))| u * (b - a) as f64).sum::<f64>() / lu.len() as f64;
        assert!((back - total).abs() < 1e-12);
        assert_eq!(subaggregate_windows(&lu, 1).unwrap()[0], total);
        assert!(subaggregate_windows(&lu[..5], 6).is_err());
        let flat = subaggregate_windows(&[0.3; 500], 7).unwrap();
        assert!(flat.iter().all(|v| (v - flat[0]).abs() < 1e-15));
        assert_eq!(bounds[0].1 - bounds[0].0, 11);
        assert_eq!(bounds[99].1 - bounds[99].0, 10);
    }

    #[test]
    fn closed_form_exclusion() {
        for eta in [0.8, 2.0, 5.0] {
            let m = Measurements::uniform(vec![0.0; 2000], eta);
            let r = exclusion(&m, &ExclusionSettings::default()).unwrap();
            let expect = null_exclusion_coupling(eta, 0.1);
            let got = r.g_star.unwrap();
            assert!((got - expect).abs() < 1e-6, "{got} {expect}");
            assert!(r.aggregate.windows(2).all(|w| w[1] < w[0] || w[0] == 0.0));
            assert!(r.windows.iter().all(|w| (w.g_star.unwrap() - expect).abs() < 1e-5));
        }
        assert_eq!(Measurements::uniform(vec![0.0; 10], 1.0).aggregate(0.0).unwrap(), 1.0);
    }

    #[test]
    fn insufficient_sensitivity_has_no_bracket() {
        let m = Measurements::uniform(vec![0.0; 200], 1e-3);
        assert!(exclusion(&m, &ExclusionSettings::default()).unwrap().g_star.is_none());
    }

    #[test]
    fn rescans_multiply() {
        let mut m = Measurements::uniform(vec![0.0, 3.0], 1.0);
        let before = m.log_updates(1.0);
        m.rescans.push(RescanMeasurement {
            bin: 1,
            x: -1.0,
            eta: 1.0,
        });
        let after = m.log_updates(1.0);
        assert_eq!(after[0], before[0]);
        assert!((after[1] - before[1] - log_prior_update(-1.0, 1.0)).abs() < 1e-15);
    }
}
