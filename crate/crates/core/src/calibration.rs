//! Inference of added noise, cavity excess noise and squeezing from the
//! five calibration spectra.
//!
//! Everything is in single-quadrature quanta (vacuum = 1/4). Each estimate is
//! formed per bin from PSD ratios, in which the chain gain and the IF
//! baseline cancel, then averaged over the band with model-based
//! inverse-variance weights. Reported uncertainties come from the weighted
//! scatter of the per-bin values.

use serde::{Deserialize, Serialize};

use crate::campaign::{CalibrationSet, RawSpectrum};
use crate::error::{ensure_finite, Error, Result};
use crate::receiver::{cavity_absorption, delivered_squeezing, thermal_quanta, VACUUM_QUANTA};

fn check_grid(a: &RawSpectrum, b: &RawSpectrum) -> Result<()> {
    if a.same_grid(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{} ({} bins from {} Hz) and {} ({} bins from {} Hz)",
            a.meta.label,
            a.len(),
            a.nu_start,
            b.meta.label,
            b.len(),
            b.nu_start
        )))
    }
}

/// Weighted mean and its standard error from the weighted scatter.
fn weighted_mean(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let sw: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / sw;
    let var = values
        .iter()
        .zip(weights)
        .map(|(v, w)| (w * (v - mean)).powi(2))
        .sum::<f64>()
        / (sw * sw);
    (mean, var.sqrt().max(f64::MIN_POSITIVE))
}

// E[(1+ε_a)/(1+ε_b)] = 1 + σ² to second order.
fn ratio_bias(s: &RawSpectrum) -> f64 {
    1.0 + 1.0 / s.n_averages as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddedNoise {
    pub n_a: f64,
    pub n_a_sigma: f64,
    pub gain_db: f64,
    pub gain_sigma_db: f64,
    pub n_a_per_bin: Vec<f64>,
    pub gain_per_bin: Vec<f64>,
}

/// Two-point Y-factor solve of `P = G (N(T) + N_A)` per bin.
pub fn infer_added_noise(hot: &RawSpectrum, cold: &RawSpectrum, t_hot: f64, t_cold: f64) -> Result<AddedNoise> {
    check_grid(hot, cold)?;
    ensure_finite("t_hot", t_hot)?;
    ensure_finite("t_cold", t_cold)?;
    if t_hot == t_cold {
        return Err(Error::DegenerateCalibration(format!(
            "hot and cold loads are both at {t_hot} K"
        )));
    }
    let sigma2 = 1.0 / hot.n_averages as f64;
    let n = hot.len();
    let mut n_a = Vec::with_capacity(n);
    let mut gain = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut mean_ratio = 0.0;
    for k in 0..n {
        let nu = hot.nu_start + (k as f64 + 0.5) * hot.bin_width;
        let nh = thermal_quanta(nu, t_hot)?;
        let nc = thermal_quanta(nu, t_cold)?;
        let (ph, pc) = (hot.psd[k], cold.psd[k]);
        let y = ph / pc;
        mean_ratio += y / n as f64;
        // N_A = (N_h − Y N_c)/(Y − 1), less its second-order bias ½ f'' var(Y).
        let dy = y - 1.0;
        let var_y = 2.0 * sigma2 * y * y;
        let bias = (nh - nc) / dy.powi(3) * var_y;
        n_a.push((nh - y * nc) / dy - bias);
        gain.push((ph - pc) / (nh - nc));
        weights.push((dy * dy / (nh - nc)).powi(2) / var_y);
    }
    let hot_is_hotter = t_hot > t_cold;
    if (mean_ratio < 1.0) == hot_is_hotter {
        return Err(Error::SwappedLoads { ratio: mean_ratio });
    }
    let (n_a_hat, n_a_sigma) = weighted_mean(&n_a, &weights);
    let ones = vec![1.0; n];
    let (g, g_sigma) = weighted_mean(&gain, &ones);
    ensure_finite("N_A", n_a_hat)?;
    if g <= 0.0 {
        return Err(Error::DegenerateCalibration("non-positive chain gain".into()));
    }
    Ok(AddedNoise {
        n_a: n_a_hat,
        n_a_sigma,
        gain_db: 10.0 * g.log10(),
        gain_sigma_db: 10.0 / std::f64::consts::LN_10 * g_sigma / g,
        n_a_per_bin: n_a,
        gain_per_bin: gain,
    })
}

/// Cavity parameters known independently of the noise calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityGeometry {
    pub nu_c: f64,
    pub kappa_l: f64,
    pub beta: f64,
    /// Cavity detuning during the off-resonance reference (Hz).
    pub meas1_offset_hz: f64,
}

impl CavityGeometry {
    pub fn from_set(set: &CalibrationSet) -> Self {
        let m = &set.meas3.meta;
        CavityGeometry {
            nu_c: m.nu_c,
            kappa_l: m.kappa_l,
            beta: m.beta,
            meas1_offset_hz: set.meas1_offset_hz,
        }
    }

    fn absorption(&self, s: &RawSpectrum, k: usize, offset: f64) -> f64 {
        let delta = s.nu_start + (k as f64 + 0.5) * s.bin_width - self.nu_c + offset;
        cavity_absorption(delta, self.kappa_l, self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityNoise {
    pub n_c0: f64,
    pub n_c0_sigma: f64,
    /// Solution fell below the vacuum floor.
    pub nonphysical: bool,
    pub n_c0_per_bin: Vec<f64>,
}

/// Solves `ρ = meas3/meas1` for `N_c0` per bin:
/// `N_c0 (A − ρ A₁) = ρ (N_f (1 − A₁) + N_A) − N_f (1 − A) − N_A`,
/// where `A` and `A₁` are the cavity absorption on and off resonance.
pub fn infer_cavity_noise(
    meas1: &RawSpectrum,
    meas3: &RawSpectrum,
    geometry: &CavityGeometry,
    n_f: f64,
    n_a: f64,
) -> Result<CavityNoise> {
    check_grid(meas1, meas3)?;
    let bias = ratio_bias(meas3);
    let n = meas3.len();
    let mut est = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in 0..n {
        let a = geometry.absorption(meas3, k, 0.0);
        let a1 = geometry.absorption(meas3, k, geometry.meas1_offset_hz);
        let rho = meas3.psd[k] / meas1.psd[k] / bias;
        let coef = a - rho * a1;
        est.push((rho * (n_f * (1.0 - a1) + n_a) - n_f * (1.0 - a) - n_a) / coef);
        // var(N_c0,k) ≈ (D₁/(A − A₁))² · 2σ²ρ² with D₁ the off-resonance level;
        // evaluated at ρ = 1 so that the weights do not depend on the noise.
        weights.push(((a - a1) / (n_f + n_a)).powi(2));
    }
    if weights.iter().sum::<f64>() < 1e-12 {
        return Err(Error::DegenerateCalibration(
            "cavity resonance is not inside the calibration band".into(),
        ));
    }
    let (n_c0, n_c0_sigma) = weighted_mean(&est, &weights);
    ensure_finite("N_c0", n_c0)?;
    Ok(CavityNoise {
        n_c0,
        n_c0_sigma,
        nonphysical: n_c0 < VACUUM_QUANTA,
        n_c0_per_bin: est,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Squeezing {
    pub g_s: f64,
    pub g_s_sigma: f64,
    pub s: f64,
    pub s_sigma: f64,
    /// Squeezer-on noise was not below squeezer-off noise.
    pub no_squeezing: bool,
    pub s_per_bin: Vec<f64>,
}

/// Delivered squeezing from `r = meas2/meas3`, after removing the part of
/// the on-resonance noise that the squeezer cannot reach:
/// `S = (r D₃ − N_c0 A − N_A) / (N_f (1 − A))`, then `G_s = (S − (1 − η))/η`.
pub fn infer_squeezing(
    meas2: &RawSpectrum,
    meas3: &RawSpectrum,
    geometry: &CavityGeometry,
    eta: f64,
    n_c0: f64,
    n_f: f64,
    n_a: f64,
) -> Result<Squeezing> {
    check_grid(meas2, meas3)?;
    delivered_squeezing(eta, 1.0)?;
    let bias = ratio_bias(meas3);
    let n = meas3.len();
    let mut est = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in 0..n {
        let a = geometry.absorption(meas3, k, 0.0);
        let d3 = n_c0 * a + n_f * (1.0 - a) + n_a;
        let r = meas2.psd[k] / meas3.psd[k] / bias;
        let reach = n_f * (1.0 - a);
        est.push((r * d3 - n_c0 * a - n_a) / reach);
        weights.push((reach / d3).powi(2));
    }
    let (s, s_sigma) = weighted_mean(&est, &weights);
    ensure_finite("S", s)?;
    Ok(Squeezing {
        g_s: (s - (1.0 - eta)) / eta,
        g_s_sigma: s_sigma / eta,
        s,
        s_sigma,
        no_squeezing: s >= 1.0,
        s_per_bin: est,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub step_id: usize,
    pub nu_c: f64,
    pub g_s_hat: f64,
    pub g_s_sigma: f64,
    pub s_hat: f64,
    pub s_sigma: f64,
    pub n_c0_hat: f64,
    pub n_c0_sigma: f64,
    pub n_a_hat: f64,
    pub n_a_sigma: f64,
    pub gain_db: f64,
    pub gain_sigma_db: f64,
    pub flags: Vec<String>,
}

/// Full chain on one calibration set: loads, then cavity noise, then
/// squeezing. `n_f` is the input-line occupation at the cryostat
/// temperature.
pub fn calibrate(set: &CalibrationSet, eta: f64, n_f: f64) -> Result<CalibrationResult> {
    let geometry = CavityGeometry::from_set(set);
    let added = infer_added_noise(&set.hot, &set.cold, set.t_hot, set.t_cold)?;
    let mut flags = Vec::new();
    let n_a = if added.n_a < 0.0 {
        flags.push("added_noise_clamped".to_string());
        0.0
    } else {
        added.n_a
    };
    let cavity = infer_cavity_noise(&set.meas1, &set.meas3, &geometry, n_f, n_a)?;
    if cavity.nonphysical {
        flags.push("cavity_noise_below_vacuum".to_string());
    }
    let sq = infer_squeezing(&set.meas2, &set.meas3, &geometry, eta, cavity.n_c0, n_f, n_a)?;
    if sq.no_squeezing {
        flags.push("no_squeezing".to_string());
    }
    Ok(CalibrationResult {
        step_id: set.step_id,
        nu_c: geometry.nu_c,
        g_s_hat: sq.g_s.max(0.0),
        g_s_sigma: sq.g_s_sigma,
        s_hat: sq.s,
        s_sigma: sq.s_sigma,
        n_c0_hat: cavity.n_c0.max(0.0),
        n_c0_sigma: cavity.n_c0_sigma,
        n_a_hat: n_a,
        n_a_sigma: added.n_a_sigma,
        gain_db: added.gain_db,
        gain_sigma_db: added.gain_sigma_db,
        flags,
    })
}

/// Index of the calibration taken nearest in cavity frequency to `nu_c`.
pub fn nearest_calibration(results: &[CalibrationResult], nu_c: f64) -> Option<usize> {
    results
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.nu_c - nu_c)
                .abs()
                .total_cmp(&(b.1.nu_c - nu_c).abs())
                .then(a.0.cmp(&b.0))
        })
        .map(|(i, _)| i)
}
