//! Axion hypotheses, the virialized lineshape and the signal template.
//!
//! The lineshape is the fully virialized Maxwell-Boltzmann form
//! `f(ν) ∝ √(ν−ν_a) exp(−(ν−ν_a)/θ)` with `θ = ν_a ⟨v²⟩ / 3c²`, i.e. a gamma
//! distribution of shape 3/2 in `ν − ν_a`. Its CDF has the closed form
//! `erf(√u) − 2√(u/π) e^{−u}`, `u = (ν−ν_a)/θ`.
//!
//! Signal amplitude is parameterized by `snr_ref`: the matched-filter SNR at
//! `g = 1` that one spectrum of the reference integration time would give for
//! an on-resonance axion seen through a critically coupled, quantum-limited
//! receiver (flat 1/4 quanta of noise). This fixes the signal PSD independently
//! of the receiver under study, so scan rates of different receivers compare
//! at equal axion power.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::receiver::{ReceiverParams, SPEED_OF_LIGHT, VACUUM_QUANTA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxionHypothesis {
    /// Rest-frame frequency `m_a c² / h` (Hz).
    pub nu_a: f64,
    /// Photon coupling in units of the KSVZ coupling.
    pub g: f64,
    /// Reference per-spectrum SNR at `g = 1`.
    pub snr_ref: f64,
}

impl AxionHypothesis {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("nu_a", self.nu_a)?;
        ensure_finite("g", self.g)?;
        ensure_finite("snr_ref", self.snr_ref)?;
        if self.nu_a <= 0.0 {
            return Err(Error::invalid("nu_a", "must be positive"));
        }
        if self.g < 0.0 {
            return Err(Error::invalid("g", "must be non-negative"));
        }
        if self.snr_ref <= 0.0 {
            return Err(Error::invalid("snr_ref", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineshapeParams {
    /// RMS halo velocity `⟨v²⟩^{1/2}` (km/s).
    pub velocity_dispersion_kms: f64,
    /// Analysis bin width (Hz).
    pub bin_width: f64,
    /// Kernel length in bins.
    pub span_bins: usize,
}

impl Default for LineshapeParams {
    fn default() -> Self {
        LineshapeParams {
            velocity_dispersion_kms: 270.0,
            bin_width: 100.0,
            span_bins: 512,
        }
    }
}

impl LineshapeParams {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("velocity_dispersion_kms", self.velocity_dispersion_kms)?;
        ensure_finite("bin_width", self.bin_width)?;
        if self.velocity_dispersion_kms <= 0.0 {
            return Err(Error::invalid("velocity_dispersion_kms", "must be positive"));
        }
        if self.bin_width <= 0.0 {
            return Err(Error::invalid("bin_width", "must be positive"));
        }
        if self.span_bins == 0 {
            return Err(Error::invalid("span_bins", "must be at least one bin"));
        }
        Ok(())
    }

    /// Gamma-distribution scale `θ = ν_a ⟨v²⟩ / 3c²` in Hz.
    pub fn scale_hz(&self, nu_a: f64) -> f64 {
        let v = self.velocity_dispersion_kms * 1e3 / SPEED_OF_LIGHT;
        nu_a * v * v / 3.0
    }

    pub fn span_hz(&self) -> f64 {
        self.span_bins as f64 * self.bin_width
    }
}

/// Lineshape probability density (1/Hz) at `nu` for an axion at `nu_a`.
pub fn lineshape(nu: f64, nu_a: f64, params: &LineshapeParams) -> f64 {
    let d = nu - nu_a;
    if d <= 0.0 {
        return 0.0;
    }
    let theta = params.scale_hz(nu_a);
    let u = d / theta;
    // Γ(3/2) = √π / 2
    2.0 / std::f64::consts::PI.sqrt() * u.sqrt() * (-u).exp() / theta
}

/// Cumulative lineshape probability below `nu`.
pub fn lineshape_cdf(nu: f64, nu_a: f64, params: &LineshapeParams) -> f64 {
    let d = nu - nu_a;
    if d <= 0.0 {
        return 0.0;
    }
    let u = d / params.scale_hz(nu_a);
    let tail = 2.0 * (u / std::f64::consts::PI).sqrt() * (-u).exp();
    (libm::erf(u.sqrt()) - tail).clamp(0.0, 1.0)
}

/// Fraction of the signal power in each of `span_bins` consecutive bins. The
/// axion sits `offset_fraction` of a bin above the lower edge of bin 0. The
/// kernel is renormalized to unit sum over its span.
pub fn lineshape_kernel(nu_a: f64, params: &LineshapeParams, offset_fraction: f64) -> Vec<f64> {
    let bw = params.bin_width;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(params.span_bins);
    for m in 0..params.span_bins {
        let upper = nu_a + ((m + 1) as f64 - offset_fraction) * bw;
        let c = lineshape_cdf(upper, nu_a, params);
        out.push(c - prev);
        prev = c;
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Width (Hz) holding `fraction` of the lineshape power.
pub fn lineshape_width(nu_a: f64, params: &LineshapeParams, fraction: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, params.scale_hz(nu_a) * 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lineshape_cdf(nu_a + mid, nu_a, params) < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Signal PSD amplitude at `g = 1` (quanta, for a signal concentrated in one
/// bin and fully absorbed on resonance) implied by `snr_ref`.
pub fn reference_amplitude(snr_ref: f64, kernel: &[f64], bin_width: f64, tau: f64) -> f64 {
    let norm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
    snr_ref * VACUUM_QUANTA / (norm * (bin_width * tau).sqrt())
}

/// An axion hypothesis with its signal PSD scale resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub g: f64,
    /// PSD at `g = 1` (quanta) for full absorption, before lineshape spreading.
    pub amplitude: f64,
    pub nu_a: f64,
}

impl SignalModel {
    pub fn new(h: &AxionHypothesis, lineshape: &LineshapeParams, tau: f64) -> Result<Self> {
        h.validate()?;
        lineshape.validate()?;
        ensure_finite("tau", tau)?;
        if tau <= 0.0 {
            return Err(Error::invalid("tau", "must be positive"));
        }
        let kernel = lineshape_kernel(h.nu_a, lineshape, 0.0);
        Ok(SignalModel {
            g: h.g,
            amplitude: reference_amplitude(h.snr_ref, &kernel, lineshape.bin_width, tau),
            nu_a: h.nu_a,
        })
    }

    pub fn with_amplitude(g: f64, amplitude: f64) -> Self {
        SignalModel {
            g,
            amplitude,
            nu_a: 0.0,
        }
    }

    /// `g = 1`, unit amplitude; for relative scan-rate work.
    pub fn unit() -> Self {
        Self::with_amplitude(1.0, 1.0)
    }

    /// `S_ax(δ) = g² A (1 − |Γ(δ)|²)` before lineshape convolution.
    pub fn signal_psd(&self, delta: f64, receiver: &ReceiverParams) -> f64 {
        self.g * self.g * self.amplitude * receiver.absorption(delta)
    }

    /// Signal PSD in each bin of a grid starting at `nu_start`, i.e. `S_ax`
    /// convolved with the binned lineshape. Returns `(bin index, psd)` for the
    /// bins that receive power.
    pub fn binned_psd(
        &self,
        receiver: &ReceiverParams,
        lineshape: &LineshapeParams,
        nu_start: f64,
        n_bins: usize,
    ) -> Vec<(usize, f64)> {
        let bw = lineshape.bin_width;
        let first = ((self.nu_a - nu_start) / bw).floor();
        let mut out = Vec::new();
        if self.g == 0.0 {
            return out;
        }
        let first = first.max(0.0) as usize;
        let last = (first + lineshape.span_bins + 1).min(n_bins);
        for k in first..last {
            let lo = nu_start + k as f64 * bw;
            let frac = lineshape_cdf(lo + bw, self.nu_a, lineshape) - lineshape_cdf(lo, self.nu_a, lineshape);
            if frac > 0.0 {
                let delta = lo + 0.5 * bw - receiver.nu_c;
                out.push((k, frac * self.signal_psd(delta, receiver)));
            }
        }
        out
    }

    /// `S_ax` convolved with the binned lineshape, evaluated at the centre of
    /// the bin at detuning `delta`.
    pub fn convolved_psd(&self, delta: f64, receiver: &ReceiverParams, lineshape: &LineshapeParams) -> f64 {
        let bw = lineshape.bin_width;
        let kernel = lineshape_kernel(self.nu_a.max(receiver.nu_c), lineshape, 0.0);
        kernel
            .iter()
            .enumerate()
            .map(|(m, w)| w * self.signal_psd(delta - m as f64 * bw, receiver))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn receiver() -> ReceiverParams {
        ReceiverParams {
            nu_c: 4.14e9,
            kappa_l: 4.14e9 / 47_000.0,
            beta: 7.1,
            n_c0: 0.41,
            n_f: 0.27,
            eta: 0.63,
            g_s: 0.1,
            n_a: 0.03,
            gain_db: 28.0,
        }
    }

    // Composite Simpson on u = √(ν−ν_a), which removes the square-root cusp.
    fn simpson_power(nu_a: f64, p: &LineshapeParams, width: f64) -> f64 {
        let n = 20_000;
        let umax = width.sqrt();
        let h = umax / n as f64;
        let g = |u: f64| lineshape(nu_a + u * u, nu_a, p) * 2.0 * u;
        let mut s = g(0.0) + g(umax);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn normalized_over_span() {
        for v in [100.0, 200.0, 270.0, 400.0] {
            let p = LineshapeParams {
                velocity_dispersion_kms: v,
                ..Default::default()
            };
            let total = simpson_power(4.14e9, &p, p.span_hz());
            assert!((total - 1.0).abs() < 1e-6, "{v}: {total}");
            let k = lineshape_kernel(4.14e9, &p, 0.0);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(lineshape_cdf(4.14e9 + p.span_hz(), 4.14e9, &p) > 0.999);
        }
    }

    #[test]
    fn one_sided_support() {
        let p = LineshapeParams::default();
        for d in [-1e4, -1.0, 0.0] {
            assert_eq!(lineshape(4.14e9 + d, 4.14e9, &p), 0.0);
        }
        assert!(lineshape(4.14e9 + 10.0, 4.14e9, &p) > 0.0);
    }

    #[test]
    fn power_within_nine_khz() {
        let p = LineshapeParams::default();
        let frac = simpson_power(4.14e9, &p, 9e3);
        assert!(frac >= 0.95, "{frac}");
        let cdf = lineshape_cdf(4.14e9 + 9e3, 4.14e9, &p);
        assert!((cdf - frac).abs() < 1e-6);
    }

    #[test]
    fn cdf_matches_quadrature() {
        let p = LineshapeParams::default();
        for w in [500.0, 1500.0, 4000.0] {
            let q = simpson_power(4.14e9, &p, w);
            assert!((lineshape_cdf(4.14e9 + w, 4.14e9, &p) - q).abs() < 1e-6);
        }
    }

    #[test]
    fn signal_scaling() {
        let r = receiver();
        let zero = SignalModel::with_amplitude(0.0, 3.0);
        let one = SignalModel::with_amplitude(1.0, 3.0);
        let two = SignalModel::with_amplitude(2.0, 3.0);
        for d in [0.0, 1e4, 3e5] {
            assert_eq!(zero.signal_psd(d, &r), 0.0);
            assert!((two.signal_psd(d, &r) / one.signal_psd(d, &r) - 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn signal_to_cavity_noise_is_constant() {
        let r = receiver();
        let s = SignalModel::with_amplitude(1.3, 0.02);
        let ref_ratio = s.signal_psd(0.0, &r) / r.cavity_noise(0.0);
        for i in -300..300 {
            let d = i as f64 * 4.7e3;
            let ratio = s.signal_psd(d, &r) / r.cavity_noise(d);
            assert!((ratio / ref_ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn convolved_signal_decreases_away_from_resonance() {
        let r = receiver();
        let p = LineshapeParams::default();
        let s = SignalModel::with_amplitude(1.0, 1.0);
        let mut prev = s.convolved_psd(20e3, &r, &p);
        for i in 1..100 {
            let v = s.convolved_psd(20e3 + i as f64 * 10e3, &r, &p);
            assert!(v < prev);
            prev = v;
        }
        let mut prev = s.convolved_psd(-20e3, &r, &p);
        for i in 1..100 {
            let v = s.convolved_psd(-20e3 - i as f64 * 10e3, &r, &p);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn binned_psd_carries_full_power() {
        let r = receiver();
        let p = LineshapeParams::default();
        let s = SignalModel {
            nu_a: r.nu_c,
            ..SignalModel::with_amplitude(2.0, 0.5)
        };
        let nu_start = r.nu_c - 1.5e6;
        let bins = s.binned_psd(&r, &p, nu_start, 30_000);
        let total: f64 = bins.iter().map(|(_, v)| v).sum();
        // Axion on resonance: total ≈ g² A (1 − |Γ(0)|²)
        let expect = s.signal_psd(0.0, &r);
        assert!((total / expect - 1.0).abs() < 1e-3);
        assert!(bins.iter().all(|(k, _)| *k >= 15_000));
    }

    #[test]
    fn reference_amplitude_inverts_snr() {
        let p = LineshapeParams::default();
        let k = lineshape_kernel(4.14e9, &p, 0.0);
        let a = reference_amplitude(2.0, &k, 100.0, 3600.0);
        let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sigma = 1.0 / (100.0f64 * 3600.0).sqrt();
        let snr = a / 0.25 * norm / sigma;
        assert!((snr - 2.0).abs() < 1e-12);
    }

    #[test]
    fn width_helper() {
        let p = LineshapeParams::default();
        let w = lineshape_width(4.14e9, &p, 0.95);
        assert!(w < 9e3 && w > 3e3, "{w}");
    }
}
