//! Noise budget of a squeezed-state receiver coupled to a haloscope cavity.
//!
//! All noise spectral densities are in quanta per unit bandwidth, using the
//! single-quadrature convention: vacuum is 1/4. Linewidths and detunings are
//! ordinary-frequency Hz, with `kappa_l` and the loaded `kappa` being FWHM
//! contributions.
//!
//! The cavity is a single-port resonator with internal loss `kappa_l` and
//! measurement-port coupling `kappa_m = beta * kappa_l`. Of the field leaving
//! the measurement port, a fraction `|Γ(δ)|²` is input noise reflected off the
//! cavity and the complementary fraction `1 - |Γ(δ)|²` was emitted by the
//! internal loss. An axion signal leaves through the same channel as the
//! internal noise, so the signal to cavity-noise ratio does not depend on the
//! detuning.

use serde::{Deserialize, Serialize};

use crate::axion::SignalModel;
use crate::error::{ensure_finite, Error, Result};
use crate::optimize::grid_then_golden;
use crate::quadrature::{integrate, Tolerance};

pub const PLANCK: f64 = 6.626_070_15e-34;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Vacuum noise per quadrature, in quanta.
pub const VACUUM_QUANTA: f64 = 0.25;

/// Half-width of the scan-rate integration window in loaded linewidths.
pub const SCAN_RATE_WINDOW_LINEWIDTHS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverParams {
    /// Cavity resonance frequency (Hz).
    pub nu_c: f64,
    /// Internal loss linewidth (Hz).
    pub kappa_l: f64,
    /// Coupling ratio `kappa_m / kappa_l`.
    pub beta: f64,
    /// Noise generated inside the cavity before filtering (quanta).
    pub n_c0: f64,
    /// Thermal quanta of the input line feeding the squeezer.
    pub n_f: f64,
    /// Transmissivity between squeezer and amplifier.
    pub eta: f64,
    /// Variance ratio at the squeezer output (1 = squeezer off).
    pub g_s: f64,
    /// Single-quadrature added noise referred to the amplifier input (quanta).
    pub n_a: f64,
    /// Amplifier gain in dB. Bookkeeping only.
    pub gain_db: f64,
}

impl ReceiverParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("nu_c", self.nu_c),
            ("kappa_l", self.kappa_l),
            ("beta", self.beta),
            ("n_c0", self.n_c0),
            ("n_f", self.n_f),
            ("eta", self.eta),
            ("g_s", self.g_s),
            ("n_a", self.n_a),
            ("gain_db", self.gain_db),
        ] {
            ensure_finite(name, v)?;
        }
        if self.nu_c <= 0.0 {
            return Err(Error::invalid("nu_c", "must be positive"));
        }
        if self.kappa_l <= 0.0 {
            return Err(Error::invalid("kappa_l", "must be positive"));
        }
        if self.beta <= 0.0 {
            return Err(Error::invalid("beta", "must be positive"));
        }
        check_eta(self.eta)?;
        if self.g_s < 0.0 {
            return Err(Error::invalid("g_s", "must be non-negative"));
        }
        if self.n_c0 < VACUUM_QUANTA {
            return Err(Error::invalid(
                "n_c0",
                format!("{} is below the vacuum floor 0.25", self.n_c0),
            ));
        }
        if self.n_f < VACUUM_QUANTA {
            return Err(Error::invalid(
                "n_f",
                format!("{} is below the vacuum floor 0.25", self.n_f),
            ));
        }
        if self.n_a < 0.0 {
            return Err(Error::invalid("n_a", "must be non-negative"));
        }
        Ok(())
    }

    pub fn kappa_m(&self) -> f64 {
        self.beta * self.kappa_l
    }

    /// Loaded linewidth `kappa_l (1 + beta)`.
    pub fn kappa(&self) -> f64 {
        self.kappa_l * (1.0 + self.beta)
    }

    pub fn q_loaded(&self) -> f64 {
        self.nu_c / self.kappa()
    }

    /// Delivered squeezing `S = eta G_s + (1 - eta)`.
    pub fn squeezing(&self) -> f64 {
        self.eta * self.g_s + (1.0 - self.eta)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// The same receiver with the squeezer switched off.
    pub fn unsqueezed(mut self) -> Self {
        self.g_s = 1.0;
        self
    }

    pub fn absorption(&self, delta: f64) -> f64 {
        cavity_absorption(delta, self.kappa_l, self.beta)
    }

    pub fn reflectance(&self, delta: f64) -> f64 {
        cavity_reflectance(delta, self.kappa_l, self.beta)
    }

    /// Cavity-emitted noise `N_c(δ)`.
    pub fn cavity_noise(&self, delta: f64) -> f64 {
        self.n_c0 * self.absorption(delta)
    }

    /// Squeezed input noise reflected off the cavity, `N_r(δ)`.
    pub fn reflected_noise(&self, delta: f64) -> f64 {
        self.squeezing() * self.n_f * self.reflectance(delta)
    }

    /// Total noise PSD `N_c + N_r + N_A` at detuning `delta`.
    pub fn total_noise(&self, delta: f64) -> f64 {
        let a = self.absorption(delta);
        self.n_c0 * a + self.squeezing() * self.n_f * (1.0 - a) + self.n_a
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(
            "eta",
            format!("transmissivity must lie in (0, 1], got {eta}"),
        ));
    }
    Ok(())
}

/// Mean noise quanta per quadrature of a mode at `nu` in equilibrium at `temperature`:
/// `(1/4) coth(h nu / 2 k_B T)`.
pub fn thermal_quanta(nu: f64, temperature: f64) -> Result<f64> {
    ensure_finite("nu", nu)?;
    ensure_finite("temperature", temperature)?;
    if nu <= 0.0 {
        return Err(Error::invalid("nu", "must be positive"));
    }
    if temperature < 0.0 {
        return Err(Error::invalid("temperature", "must be non-negative"));
    }
    if temperature == 0.0 {
        return Ok(VACUUM_QUANTA);
    }
    let x = PLANCK * nu / (2.0 * BOLTZMANN * temperature);
    Ok(VACUUM_QUANTA / x.tanh())
}

/// `S = eta G_s + (1 - eta)`: squeezing left after a lossy channel that mixes in
/// unsqueezed noise.
pub fn delivered_squeezing(eta: f64, g_s: f64) -> Result<f64> {
    ensure_finite("eta", eta)?;
    ensure_finite("g_s", g_s)?;
    check_eta(eta)?;
    if g_s < 0.0 {
        return Err(Error::invalid("g_s", "must be non-negative"));
    }
    Ok(eta * g_s + (1.0 - eta))
}

/// Power reflection coefficient `|Γ(δ)|²` of the measurement port.
pub fn cavity_reflectance(delta: f64, kappa_l: f64, beta: f64) -> f64 {
    let kappa_m = beta * kappa_l;
    let d2 = 4.0 * delta * delta;
    let diff = kappa_m - kappa_l;
    let sum = kappa_m + kappa_l;
    (diff * diff + d2) / (sum * sum + d2)
}

/// `1 - |Γ(δ)|² = 4β/(1+β)² · L(δ)`, the fraction of the output that was emitted
/// by the internal loss.
pub fn cavity_absorption(delta: f64, kappa_l: f64, beta: f64) -> f64 {
    let kappa_m = beta * kappa_l;
    let sum = kappa_m + kappa_l;
    4.0 * kappa_m * kappa_l / (sum * sum + 4.0 * delta * delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub detunings: Vec<f64>,
    pub n_c: Vec<f64>,
    pub n_r: Vec<f64>,
    pub n_a: Vec<f64>,
    pub s_ax: Vec<f64>,
    pub total: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl NoiseBudget {
    /// CSV with columns `delta_hz,N_c,N_r,N_A,S_ax,alpha`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta_hz,N_c,N_r,N_A,S_ax,alpha\n");
        for i in 0..self.detunings.len() {
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?},{:?},{:?}\n",
                self.detunings[i], self.n_c[i], self.n_r[i], self.n_a[i], self.s_ax[i], self.alpha[i]
            ));
        }
        out
    }
}

/// Evaluates every noise term on `detunings`. `S_ax` is zero unless a signal
/// model is attached.
pub fn noise_budget(params: &ReceiverParams, detunings: &[f64], signal: Option<&SignalModel>) -> Result<NoiseBudget> {
    params.validate()?;
    let s = params.squeezing();
    let n = detunings.len();
    let mut b = NoiseBudget {
        detunings: detunings.to_vec(),
        n_c: Vec::with_capacity(n),
        n_r: Vec::with_capacity(n),
        n_a: vec![params.n_a; n],
        s_ax: Vec::with_capacity(n),
        total: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
    };
    for &d in detunings {
        ensure_finite("detuning", d)?;
        let a = params.absorption(d);
        let n_c = params.n_c0 * a;
        let n_r = s * params.n_f * (1.0 - a);
        let s_ax = signal.map_or(0.0, |m| m.signal_psd(d, params));
        let total = n_c + n_r + params.n_a;
        b.n_c.push(n_c);
        b.n_r.push(n_r);
        b.s_ax.push(s_ax);
        b.total.push(total);
        b.alpha.push(s_ax / total);
    }
    Ok(b)
}

/// Axion visibility `α(δ) = S_ax(δ) / (N_c + N_A + N_r)`.
pub fn visibility(params: &ReceiverParams, signal: &SignalModel, delta: f64) -> f64 {
    signal.signal_psd(delta, params) / params.total_noise(delta)
}

/// Relative scan rate `∫ α²(δ) dδ`, integrated over ±20 loaded linewidths.
pub fn scan_rate(params: &ReceiverParams, signal: &SignalModel) -> Result<f64> {
    params.validate()?;
    let window = SCAN_RATE_WINDOW_LINEWIDTHS * params.kappa();
    let peak = visibility(params, signal, 0.0).powi(2);
    if peak == 0.0 {
        return Ok(0.0);
    }
    let tol = Tolerance {
        abs: 1e-10 * peak * params.kappa(),
        rel: 1e-12,
        max_intervals: 4000,
    };
    // The integrand is even in δ.
    let half = integrate(|d| visibility(params, signal, d).powi(2), 0.0, window, tol)?;
    Ok(2.0 * half.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingOptimum {
    pub beta: f64,
    pub scan_rate: f64,
    /// The maximum sits at an end of the searched β range.
    pub at_boundary: bool,
}

pub const BETA_SEARCH_RANGE: (f64, f64) = (0.1, 100.0);

// eta = 1 makes the delivered squeezing equal to g_s.
fn effective_receiver(s: f64, n_c0: f64, n_f: f64, n_a: f64, beta: f64) -> Result<ReceiverParams> {
    ensure_finite("s", s)?;
    if s <= 0.0 {
        return Err(Error::invalid("s", "delivered squeezing must be positive"));
    }
    let p = ReceiverParams {
        nu_c: 4.0e9,
        kappa_l: 1.0e5,
        beta,
        n_c0,
        n_f,
        eta: 1.0,
        g_s: s,
        n_a,
        gain_db: 0.0,
    };
    p.validate()?;
    Ok(p)
}

/// Relative scan rate at a fixed coupling, on the same scale as
/// [`optimize_coupling`].
pub fn scan_rate_at(s: f64, n_c0: f64, n_f: f64, n_a: f64, beta: f64) -> Result<f64> {
    scan_rate(&effective_receiver(s, n_c0, n_f, n_a, beta)?, &SignalModel::unit())
}

/// Coupling ratio in `[0.1, 100]` maximizing the scan rate for delivered
/// squeezing `s` and the given noise levels.
pub fn optimize_coupling(s: f64, n_c0: f64, n_f: f64, n_a: f64) -> Result<CouplingOptimum> {
    let base = effective_receiver(s, n_c0, n_f, n_a, 1.0)?;
    let signal = SignalModel::unit();
    let (lo, hi) = BETA_SEARCH_RANGE;
    let mut failure = None;
    let mut objective = |log_beta: f64| match scan_rate(&base.with_beta(log_beta.exp()), &signal) {
        Ok(r) => r,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NEG_INFINITY
        }
    };
    let best = grid_then_golden(&mut objective, lo.ln(), hi.ln(), 61, 1e-7);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(CouplingOptimum {
        beta: best.x.exp(),
        scan_rate: best.value,
        at_boundary: best.at_boundary,
    })
}

/// Normalized variance of the measured quadrature versus the squeezer/amplifier
/// pump phase: `S sin²θ + G_anti cos²θ`.
pub fn variance_vs_phase(theta: f64, s: f64, g_anti: f64) -> f64 {
    let (sin, cos) = theta.sin_cos();
    s * sin * sin + g_anti * cos * cos
}
