//! Tuning plans and synthetic spectra.
//!
//! Averaged spectra are generated from their sufficient statistics: each bin
//! of an average over `n` periodograms is the expected PSD times `1 + ε` with
//! `ε ~ N(0, 1/√n)`. The literal mode instead synthesizes every segment from
//! white time-domain samples and averages the periodograms; it exists to
//! validate the statistical shortcut at reduced integration time.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::axion::{LineshapeParams, SignalModel};
use crate::error::{ensure_finite, Error, Result};
use crate::receiver::{thermal_quanta, ReceiverParams};

/// Mixes a master seed with a step id and a stream tag (SplitMix64 finalizer).
pub fn derive_seed(master: u64, step_id: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(step_id.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) mod stream {
    pub const NOISE: u64 = 1;
    pub const JITTER: u64 = 2;
    pub const ANOMALY: u64 = 3;
    pub const META: u64 = 4;
    pub const CAL_MEAS1: u64 = 11;
    pub const CAL_MEAS2: u64 = 12;
    pub const CAL_MEAS3: u64 = 13;
    pub const CAL_HOT: u64 = 14;
    pub const CAL_COLD: u64 = 15;
    pub const BASELINE: u64 = 21;
    pub const RESCAN: u64 = 31;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningStep {
    pub step_id: usize,
    pub nu_c: f64,
    pub beta: f64,
    pub seed: u64,
}

impl TuningStep {
    /// The `k`-th rescan, revisiting `nu_c` after an initial scan of
    /// `n_initial` steps. Rescans draw from their own seed stream.
    pub fn rescan(master_seed: u64, k: usize, n_initial: usize, nu_c: f64, beta: f64) -> Self {
        TuningStep {
            step_id: n_initial + k,
            nu_c,
            beta,
            seed: derive_seed(master_seed, k as u64, stream::RESCAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningPlan {
    pub steps: Vec<TuningStep>,
    pub skip_windows: Vec<(f64, f64)>,
}

impl TuningPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn in_skip(&self, nu: f64) -> bool {
        self.skip_windows.iter().any(|&(lo, hi)| nu >= lo && nu <= hi)
    }
}

/// Uniform cavity frequencies from `lo` to `hi` every `step`, leaving out
/// anything inside a skip window. Seeds derive from `master_seed` and the
/// step id.
pub fn make_tuning_plan(
    lo: f64,
    hi: f64,
    step: f64,
    skips: &[(f64, f64)],
    beta: f64,
    master_seed: u64,
) -> Result<TuningPlan> {
    ensure_finite("lo", lo)?;
    ensure_finite("hi", hi)?;
    ensure_finite("step", step)?;
    if lo > hi {
        return Err(Error::invalid("lo", "must not exceed hi"));
    }
    if step <= 0.0 {
        return Err(Error::invalid("step", "must be positive"));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let mut plan = TuningPlan {
        steps: Vec::with_capacity(count),
        skip_windows: skips.to_vec(),
    };
    for k in 0..count {
        let nu_c = lo + k as f64 * step;
        if plan.in_skip(nu_c) {
            continue;
        }
        let step_id = plan.steps.len();
        plan.steps.push(TuningStep {
            step_id,
            nu_c,
            beta,
            seed: derive_seed(master_seed, step_id as u64, 0),
        });
    }
    if plan.steps.is_empty() {
        return Err(Error::EmptyCampaign(format!(
            "every tuning step in [{lo}, {hi}] falls inside a skip window"
        )));
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineComponent {
    pub amplitude: f64,
    pub period_hz: f64,
    pub phase: f64,
}

/// Smooth multiplicative transfer function of the IF chain, shared by every
/// spectrum, plus a small per-step slow ripple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub components: Vec<CosineComponent>,
    /// Amplitude of the per-step ripple.
    pub step_jitter: f64,
}

impl BaselineModel {
    pub fn flat() -> Self {
        BaselineModel {
            components: Vec::new(),
            step_jitter: 0.0,
        }
    }

    /// `n_components` cosines with periods in 0.4–4 MHz whose amplitudes sum
    /// to `excursion`.
    pub fn random(seed: u64, n_components: usize, excursion: f64, step_jitter: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, stream::BASELINE));
        let raw: Vec<f64> = (0..n_components).map(|_| rng.random_range(0.3..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let components = raw
            .iter()
            .map(|a| CosineComponent {
                amplitude: excursion * a / sum,
                period_hz: rng.random_range(0.4e6..4.0e6),
                phase: rng.random_range(0.0..2.0 * PI),
            })
            .collect();
        BaselineModel {
            components,
            step_jitter,
        }
    }

    /// Baseline on an IF grid of `n_bins` bins for the step seeded by `step_seed`.
    pub fn evaluate(&self, n_bins: usize, bin_width: f64, step_seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, 0, stream::JITTER));
        let ripple_period = rng.random_range(1.0e6..6.0e6);
        let ripple_phase = rng.random_range(0.0..2.0 * PI);
        let ripple_amp = self.step_jitter * rng.random_range(-1.0..1.0);
        (0..n_bins)
            .map(|k| {
                let f = (k as f64 + 0.5) * bin_width;
                let shared: f64 = self
                    .components
                    .iter()
                    .map(|c| c.amplitude * (2.0 * PI * f / c.period_hz + c.phase).cos())
                    .sum();
                (1.0 + shared) * (1.0 + ripple_amp * (2.0 * PI * f / ripple_period + ripple_phase).cos())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    Statistical,
    /// Synthesizes and Fourier transforms every segment.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSettings {
    pub tau_s: f64,
    pub bin_width_hz: f64,
    pub band_hz: f64,
    pub mode: SimulationMode,
}

impl Default for AcquisitionSettings {
    fn default() -> Self {
        AcquisitionSettings {
            tau_s: 3600.0,
            bin_width_hz: 100.0,
            band_hz: 3.0e6,
            mode: SimulationMode::Statistical,
        }
    }
}

impl AcquisitionSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_s", self.tau_s),
            ("bin_width_hz", self.bin_width_hz),
            ("band_hz", self.band_hz),
        ] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.n_bins() < 2 {
            return Err(Error::invalid("band_hz", "band must hold at least two bins"));
        }
        if self.n_averages() == 0 {
            return Err(Error::invalid("tau_s", "shorter than one FFT segment"));
        }
        Ok(())
    }

    /// FFT segment length `1/Δ_b` (10 ms at 100 Hz bins).
    pub fn segment_s(&self) -> f64 {
        1.0 / self.bin_width_hz
    }

    pub fn n_averages(&self) -> u64 {
        (self.tau_s / self.segment_s()).round() as u64
    }

    pub fn n_bins(&self) -> usize {
        (self.band_hz / self.bin_width_hz).round() as usize
    }

    /// Radiometer relative fluctuation `1/√(Δ_b τ)`.
    pub fn sigma_rel(&self) -> f64 {
        1.0 / (self.n_averages() as f64).sqrt()
    }

    /// Lower edge of the analysis band for a cavity at `nu_c`, snapped to the
    /// bin grid so that every spectrum shares one RF grid.
    pub fn nu_start(&self, nu_c: f64) -> f64 {
        ((nu_c - 0.5 * self.band_hz) / self.bin_width_hz).round() * self.bin_width_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub label: String,
    pub nu_c: f64,
    pub beta: f64,
    pub kappa_l: f64,
    pub q_loaded: f64,
    /// Cavity frequency change across the acquisition (Hz).
    pub drift_hz: f64,
    /// Quick-look delivered squeezing (dB).
    pub squeezing_db: f64,
    /// Probe tone power relative to nominal (dB).
    pub probe_tone_db: f64,
    pub t_start_s: f64,
    /// Load temperature for thermal calibration spectra.
    pub load_temperature_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSpectrum {
    pub step_id: usize,
    pub nu_start: f64,
    pub bin_width: f64,
    pub n_averages: u64,
    pub psd: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl RawSpectrum {
    pub fn len(&self) -> usize {
        self.psd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psd.is_empty()
    }

    /// Lower edge of bin `k`.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        self.nu_start + k as f64 * self.bin_width
    }

    /// Index of the first bin on the global RF grid.
    pub fn first_global_bin(&self) -> i64 {
        (self.nu_start / self.bin_width).round() as i64
    }

    pub fn same_grid(&self, other: &RawSpectrum) -> bool {
        self.psd.len() == other.psd.len()
            && self.bin_width == other.bin_width
            && (self.nu_start - other.nu_start).abs() < 1e-6 * self.bin_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Anomaly {
    Drift { hz: f64 },
    JpaSag { g_s: f64 },
    ProbeTone { offset_db: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalySettings {
    /// Per-step probability of an anomaly.
    pub rate: f64,
    pub drift_hz: f64,
    /// Squeezer output variance during a JPA sag.
    pub sag_g_s: f64,
    pub probe_offset_db: f64,
}

impl Default for AnomalySettings {
    fn default() -> Self {
        AnomalySettings {
            rate: 0.038,
            drift_hz: 200e3,
            sag_g_s: 0.9,
            probe_offset_db: 3.0,
        }
    }
}

impl AnomalySettings {
    pub fn draw(&self, step_seed: u64) -> Option<Anomaly> {
        if self.rate <= 0.0 {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, 0, stream::ANOMALY));
        if rng.random::<f64>() >= self.rate {
            return None;
        }
        Some(match rng.random_range(0..3) {
            0 => Anomaly::Drift { hz: self.drift_hz },
            1 => Anomaly::JpaSag { g_s: self.sag_g_s },
            _ => Anomaly::ProbeTone {
                offset_db: self.probe_offset_db,
            },
        })
    }
}

fn gaussian_fluctuations(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

// Averages `n_segments` periodograms of unit-variance complex white noise.
fn literal_fluctuations(n: usize, n_segments: u64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut acc = vec![0.0; n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for _ in 0..n_segments {
        for b in buf.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *b = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr() * scale;
        }
    }
    let inv = 1.0 / n_segments as f64;
    acc.iter().map(|a| a * inv - 1.0).collect()
}

fn fluctuations(settings: &AcquisitionSettings, n: usize, seed: u64) -> Vec<f64> {
    match settings.mode {
        SimulationMode::Statistical => gaussian_fluctuations(n, settings.sigma_rel(), seed),
        SimulationMode::Literal => literal_fluctuations(n, settings.n_averages(), seed),
    }
}

fn squeezing_db(s: f64) -> f64 {
    -10.0 * s.log10()
}

/// Synthesizes the averaged PSD of one tuning step:
/// `gain · baseline · (noise + signal) · (1 + ε)`.
///
/// `receiver` supplies the truth noise parameters; its `nu_c` and `beta` are
/// replaced by the step's. Signals must overlap the band (within one lineshape
/// span).
#[allow(clippy::too_many_arguments)]
pub fn simulate_spectrum(
    step: &TuningStep,
    receiver: &ReceiverParams,
    signals: &[SignalModel],
    lineshape: &LineshapeParams,
    baseline: &BaselineModel,
    settings: &AcquisitionSettings,
    anomaly: Option<Anomaly>,
) -> Result<RawSpectrum> {
    settings.validate()?;
    let mut truth = ReceiverParams {
        nu_c: step.nu_c,
        beta: step.beta,
        ..*receiver
    };
    truth.validate()?;
    let n = settings.n_bins();
    let bw = settings.bin_width_hz;
    let nu_start = settings.nu_start(step.nu_c);
    for s in signals {
        let lo = nu_start - lineshape.span_hz();
        let hi = nu_start + n as f64 * bw;
        if s.nu_a < lo || s.nu_a >= hi {
            return Err(Error::invalid(
                "nu_a",
                format!("axion at {} Hz is outside the simulated band [{lo}, {hi})", s.nu_a),
            ));
        }
    }

    let mut meta_rng = ChaCha8Rng::seed_from_u64(derive_seed(step.seed, 0, stream::META));
    let mut drift_hz = 300.0 * meta_rng.sample::<f64, _>(StandardNormal).abs();
    let mut probe_tone_db = 0.05 * meta_rng.sample::<f64, _>(StandardNormal);
    let mut centre = step.nu_c;
    let mut gain = 10f64.powf(truth.gain_db / 10.0);
    match anomaly {
        Some(Anomaly::Drift { hz }) => {
            drift_hz = hz;
            centre += 0.5 * hz;
        }
        Some(Anomaly::JpaSag { g_s }) => truth.g_s = truth.g_s.max(g_s),
        Some(Anomaly::ProbeTone { offset_db }) => {
            probe_tone_db = offset_db;
            gain *= 10f64.powf(offset_db / 10.0);
        }
        None => {}
    }
    let squeezing = squeezing_db(truth.squeezing()) + 0.05 * meta_rng.sample::<f64, _>(StandardNormal);

    let shape = baseline.evaluate(n, bw, step.seed);
    let mut signal = vec![0.0; n];
    let actual = ReceiverParams { nu_c: centre, ..truth };
    for s in signals {
        for (k, v) in s.binned_psd(&actual, lineshape, nu_start, n) {
            signal[k] += v;
        }
    }
    let eps = fluctuations(settings, n, derive_seed(step.seed, 0, stream::NOISE));
    let psd = (0..n)
        .map(|k| {
            let delta = nu_start + (k as f64 + 0.5) * bw - centre;
            gain * shape[k] * (actual.total_noise(delta) + signal[k]) * (1.0 + eps[k])
        })
        .collect();
    Ok(RawSpectrum {
        step_id: step.step_id,
        nu_start,
        bin_width: bw,
        n_averages: settings.n_averages(),
        psd,
        meta: SpectrumMeta {
            label: "data".into(),
            nu_c: step.nu_c,
            beta: step.beta,
            kappa_l: truth.kappa_l,
            q_loaded: truth.q_loaded(),
            drift_hz,
            squeezing_db: squeezing,
            probe_tone_db,
            t_start_s: step.step_id as f64 * settings.tau_s,
            load_temperature_k: None,
        },
    })
}

/// Receiver truth as a function of cavity frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverTruth {
    pub unloaded_q: f64,
    pub n_c0: f64,
    pub cryostat_k: f64,
    pub eta: f64,
    pub g_s: f64,
    pub squeezing_on: bool,
    pub n_a: f64,
    pub gain_db: f64,
}

impl ReceiverTruth {
    pub fn at(&self, nu_c: f64, beta: f64) -> Result<ReceiverParams> {
        let p = ReceiverParams {
            nu_c,
            kappa_l: nu_c / self.unloaded_q,
            beta,
            n_c0: self.n_c0,
            n_f: thermal_quanta(nu_c, self.cryostat_k)?,
            eta: self.eta,
            g_s: if self.squeezing_on { self.g_s } else { 1.0 },
            n_a: self.n_a,
            gain_db: self.gain_db,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Simulates every step of `plan` in parallel. Signals not overlapping a
/// step's band are left out of that step.
pub fn simulate_campaign(
    plan: &TuningPlan,
    truth: &ReceiverTruth,
    signals: &[SignalModel],
    lineshape: &LineshapeParams,
    baseline: &BaselineModel,
    settings: &AcquisitionSettings,
    anomalies: &AnomalySettings,
) -> Result<Vec<RawSpectrum>> {
    plan.steps
        .par_iter()
        .map(|step| {
            let receiver = truth.at(step.nu_c, step.beta)?;
            let nu_start = settings.nu_start(step.nu_c);
            let hi = nu_start + settings.n_bins() as f64 * settings.bin_width_hz;
            let local: Vec<SignalModel> = signals
                .iter()
                .filter(|s| s.nu_a >= nu_start - lineshape.span_hz() && s.nu_a < hi)
                .copied()
                .collect();
            simulate_spectrum(
                step,
                &receiver,
                &local,
                lineshape,
                baseline,
                settings,
                anomalies.draw(step.seed),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub step_id: usize,
    /// Off resonance, squeezer off.
    pub meas1: RawSpectrum,
    /// On resonance, squeezer on.
    pub meas2: RawSpectrum,
    /// On resonance, squeezer off.
    pub meas3: RawSpectrum,
    pub hot: RawSpectrum,
    pub cold: RawSpectrum,
    pub t_hot: f64,
    pub t_cold: f64,
    /// Cavity detuning used for `meas1` (Hz, relative to the LO centre).
    pub meas1_offset_hz: f64,
}

/// Offset of the off-resonance reference: the whole band sits at least ten
/// loaded linewidths from the cavity.
pub fn off_resonance_offset(receiver: &ReceiverParams, settings: &AcquisitionSettings) -> f64 {
    10.0 * receiver.kappa() + 0.5 * settings.band_hz
}

/// The five calibration spectra taken at one tuning step.
pub fn simulate_calibration(
    step: &TuningStep,
    receiver: &ReceiverParams,
    baseline: &BaselineModel,
    settings: &AcquisitionSettings,
    t_hot: f64,
    t_cold: f64,
) -> Result<CalibrationSet> {
    settings.validate()?;
    let on = ReceiverParams {
        nu_c: step.nu_c,
        beta: step.beta,
        ..*receiver
    };
    on.validate()?;
    let off = on.unsqueezed();
    let n = settings.n_bins();
    let bw = settings.bin_width_hz;
    let nu_start = settings.nu_start(step.nu_c);
    let gain = 10f64.powf(on.gain_db / 10.0);
    let shape = baseline.evaluate(n, bw, step.seed);
    let offset = off_resonance_offset(&on, settings);
    let delta = |k: usize| nu_start + (k as f64 + 0.5) * bw - step.nu_c;

    let make = |label: &str, stream_id: u64, load: Option<f64>, expected: &dyn Fn(usize) -> f64| {
        let eps = fluctuations(settings, n, derive_seed(step.seed, 0, stream_id));
        RawSpectrum {
            step_id: step.step_id,
            nu_start,
            bin_width: bw,
            n_averages: settings.n_averages(),
            psd: (0..n).map(|k| gain * shape[k] * expected(k) * (1.0 + eps[k])).collect(),
            meta: SpectrumMeta {
                label: label.into(),
                nu_c: step.nu_c,
                beta: step.beta,
                kappa_l: on.kappa_l,
                q_loaded: on.q_loaded(),
                drift_hz: 0.0,
                squeezing_db: squeezing_db(on.squeezing()),
                probe_tone_db: 0.0,
                t_start_s: step.step_id as f64 * settings.tau_s,
                load_temperature_k: load,
            },
        }
    };
    let load = |t: f64| -> Result<Vec<f64>> {
        (0..n)
            .map(|k| thermal_quanta(nu_start + (k as f64 + 0.5) * bw, t))
            .collect()
    };
    let hot_q = load(t_hot)?;
    let cold_q = load(t_cold)?;
    Ok(CalibrationSet {
        step_id: step.step_id,
        meas1: make("meas1", stream::CAL_MEAS1, None, &|k| {
            off.total_noise(delta(k) + offset)
        }),
        meas2: make("meas2", stream::CAL_MEAS2, None, &|k| on.total_noise(delta(k))),
        meas3: make("meas3", stream::CAL_MEAS3, None, &|k| off.total_noise(delta(k))),
        hot: make("hot", stream::CAL_HOT, Some(t_hot), &|k| hot_q[k] + on.n_a),
        cold: make("cold", stream::CAL_COLD, Some(t_cold), &|k| cold_q[k] + on.n_a),
        t_hot,
        t_cold,
        meas1_offset_hz: offset,
    })
}
