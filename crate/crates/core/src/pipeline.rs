//! Raw spectra to grand spectrum.
//!
//! 1. cuts on spectrum metadata;
//! 2. IF stage: the mean-normalized spectra are averaged on the IF grid and a
//!    Savitzky-Golay fit of the average is divided out of every spectrum;
//! 3. RF stage: a wider Savitzky-Golay fit is divided out of each spectrum,
//!    leaving the excess `δ = psd/baseline − 1`;
//! 4. each excess is rescaled by the expected axion response of its bins and
//!    combined with inverse-variance weights onto the global RF grid;
//! 5. the combined spectrum is matched-filtered with the lineshape.
//!
//! The two filter stages also remove part of any axion. That loss is measured
//! by pushing the lineshape through the same linear operators and folded into
//! the sensitivity `η_i`, so that an axion at coupling `g` gives `E[x_i] = g² η_i`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axion::{lineshape_kernel, lineshape_width, LineshapeParams};
use crate::calibration::CalibrationResult;
use crate::campaign::RawSpectrum;
use crate::error::{Error, Result};
use crate::receiver::cavity_absorption;
use crate::savgol::SavitzkyGolay;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutCriteria {
    pub max_drift_hz: f64,
    /// Minimum quick-look squeezing; `None` when running unsqueezed.
    pub min_squeezing_db: Option<f64>,
    /// Largest tolerated probe-tone deviation (dB, either sign).
    pub probe_window_db: f64,
}

impl Default for CutCriteria {
    fn default() -> Self {
        CutCriteria {
            max_drift_hz: 10e3,
            min_squeezing_db: Some(2.0),
            probe_window_db: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutReason {
    Drift,
    Squeezing,
    ProbeTone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutEntry {
    pub step_id: usize,
    pub nu_c: f64,
    pub reasons: Vec<CutReason>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CutLog {
    pub n_input: usize,
    pub n_kept: usize,
    pub cut: Vec<CutEntry>,
}

impl CutLog {
    pub fn is_cut(&self, step_id: usize) -> bool {
        self.cut.iter().any(|c| c.step_id == step_id)
    }
}

pub fn cut_reasons(s: &RawSpectrum, criteria: &CutCriteria) -> Vec<CutReason> {
    let mut r = Vec::new();
    if s.meta.drift_hz.abs() > criteria.max_drift_hz {
        r.push(CutReason::Drift);
    }
    if let Some(floor) = criteria.min_squeezing_db {
        if s.meta.squeezing_db < floor {
            r.push(CutReason::Squeezing);
        }
    }
    if s.meta.probe_tone_db.abs() > criteria.probe_window_db {
        r.push(CutReason::ProbeTone);
    }
    r
}

/// Splits spectra into kept and cut, preserving order.
pub fn apply_cuts(spectra: Vec<RawSpectrum>, criteria: &CutCriteria) -> (Vec<RawSpectrum>, CutLog) {
    let mut log = CutLog {
        n_input: spectra.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(spectra.len());
    for s in spectra {
        let reasons = cut_reasons(&s, criteria);
        if reasons.is_empty() {
            kept.push(s);
        } else {
            log.cut.push(CutEntry {
                step_id: s.step_id,
                nu_c: s.meta.nu_c,
                reasons,
            });
        }
    }
    log.n_kept = kept.len();
    (kept, log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub if_window_hz: f64,
    pub if_order: usize,
    pub rf_window_hz: f64,
    pub rf_order: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            if_window_hz: 10e3,
            if_order: 4,
            rf_window_hz: 100e3,
            rf_order: 4,
        }
    }
}

impl FilterSettings {
    pub fn build(&self, bin_width: f64) -> Result<(SavitzkyGolay, SavitzkyGolay)> {
        Ok((
            SavitzkyGolay::from_width(self.if_window_hz, bin_width, self.if_order)?,
            SavitzkyGolay::from_width(self.rf_window_hz, bin_width, self.rf_order)?,
        ))
    }
}

/// Smoothed average of the mean-normalized spectra on the IF grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfBaseline {
    pub values: Vec<f64>,
    pub n_spectra: usize,
}

fn normalized(psd: &[f64]) -> Vec<f64> {
    let m = stats::mean(psd);
    psd.iter().map(|v| v / m).collect()
}

fn check_uniform(spectra: &[RawSpectrum]) -> Result<()> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::EmptyCampaign("no spectra survived the cuts".into()))?;
    for s in spectra {
        if s.len() != first.len() || s.bin_width != first.bin_width {
            return Err(Error::GridMismatch(format!(
                "step {} has {} bins of {} Hz, step {} has {} of {} Hz",
                first.step_id,
                first.len(),
                first.bin_width,
                s.step_id,
                s.len(),
                s.bin_width
            )));
        }
    }
    Ok(())
}

pub fn if_baseline(spectra: &[RawSpectrum], filters: &FilterSettings) -> Result<IfBaseline> {
    check_uniform(spectra)?;
    let n = spectra[0].len();
    let (sg_if, _) = filters.build(spectra[0].bin_width)?;
    let mut avg = vec![0.0; n];
    for s in spectra {
        for (a, v) in avg.iter_mut().zip(normalized(&s.psd)) {
            *a += v;
        }
    }
    let inv = 1.0 / spectra.len() as f64;
    avg.iter_mut().for_each(|a| *a *= inv);
    Ok(IfBaseline {
        values: sg_if.smooth(&avg)?,
        n_spectra: spectra.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedSpectrum {
    pub step_id: usize,
    pub nu_c: f64,
    /// Global RF bin index of `excess[0]`.
    pub first_bin: i64,
    pub bin_width: f64,
    pub excess: Vec<f64>,
    /// Measured standard deviation of `excess`.
    pub sigma: f64,
    /// Radiometer expectation `1/√(Δ_b τ)`.
    pub sigma_radiometer: f64,
    pub filters: String,
}

impl ProcessedSpectrum {
    /// Centre frequency of bin `k`.
    pub fn frequency(&self, k: usize) -> f64 {
        (self.first_bin as f64 + k as f64 + 0.5) * self.bin_width
    }
}

/// Bins dropped at each spectrum edge, where the RF fit is least reliable.
pub fn edge_guard(filters: &FilterSettings, bin_width: f64) -> Result<usize> {
    Ok(filters.build(bin_width)?.1.half_width())
}

fn process_one(
    s: &RawSpectrum,
    base: &IfBaseline,
    sg_rf: &SavitzkyGolay,
    guard: usize,
    label: &str,
) -> Result<ProcessedSpectrum> {
    let n = s.len();
    if n <= 2 * guard + 1 {
        return Err(Error::FilterWindow {
            window: sg_rf.window(),
            bins: n,
        });
    }
    let d: Vec<f64> = normalized(&s.psd)
        .iter()
        .zip(&base.values)
        .map(|(v, b)| v / b)
        .collect();
    let rf = sg_rf.smooth(&d)?;
    let excess: Vec<f64> = d[guard..n - guard]
        .iter()
        .zip(&rf[guard..n - guard])
        .map(|(v, b)| v / b - 1.0)
        .collect();
    Ok(ProcessedSpectrum {
        step_id: s.step_id,
        nu_c: s.meta.nu_c,
        first_bin: s.first_global_bin() + guard as i64,
        bin_width: s.bin_width,
        sigma: stats::variance(&excess).sqrt(),
        sigma_radiometer: 1.0 / (s.n_averages as f64).sqrt(),
        excess,
        filters: label.to_string(),
    })
}

/// Both filter stages. With `external_if` the IF baseline of an earlier scan
/// is reused instead of one built from `spectra` (rescans).
pub fn remove_structure(
    spectra: &[RawSpectrum],
    filters: &FilterSettings,
    external_if: Option<&IfBaseline>,
) -> Result<(Vec<ProcessedSpectrum>, IfBaseline)> {
    check_uniform(spectra)?;
    let bw = spectra[0].bin_width;
    let base = match external_if {
        Some(b) if b.values.len() == spectra[0].len() => b.clone(),
        Some(b) => {
            return Err(Error::GridMismatch(format!(
                "IF baseline has {} bins, spectra have {}",
                b.values.len(),
                spectra[0].len()
            )))
        }
        None => if_baseline(spectra, filters)?,
    };
    let (sg_if, sg_rf) = filters.build(bw)?;
    let guard = sg_rf.half_width();
    let label = format!(
        "if_sg(window={},order={})+rf_sg(window={},order={})",
        sg_if.window(),
        sg_if.order(),
        sg_rf.window(),
        sg_rf.order()
    );
    let out = spectra
        .par_iter()
        .map(|s| process_one(s, &base, &sg_rf, guard, &label))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, base))
}

/// Receiver noise model from a calibration, used to predict the axion
/// response of each bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub nu_c: f64,
    pub kappa_l: f64,
    pub beta: f64,
    pub n_c0: f64,
    pub s: f64,
    pub n_f: f64,
    pub n_a: f64,
    /// Signal PSD (quanta) of the whole line at `g = 1` through a fully
    /// absorbing cavity.
    pub amplitude: f64,
}

impl ResponseModel {
    pub fn from_calibration(
        cal: &CalibrationResult,
        nu_c: f64,
        kappa_l: f64,
        beta: f64,
        n_f: f64,
        amplitude: f64,
    ) -> Self {
        ResponseModel {
            nu_c,
            kappa_l,
            beta,
            n_c0: cal.n_c0_hat,
            s: cal.s_hat,
            n_f,
            n_a: cal.n_a_hat,
            amplitude,
        }
    }

    /// Expected fractional excess for the whole line at `g = 1`, `A_amp α/…`:
    /// `amplitude · A(δ) / (N_c0 A + S N_f (1 − A) + N_A)`.
    pub fn response(&self, nu: f64) -> f64 {
        let a = cavity_absorption(nu - self.nu_c, self.kappa_l, self.beta);
        self.amplitude * a / (self.n_c0 * a + self.s * self.n_f * (1.0 - a) + self.n_a)
    }
}

/// Inverse-variance accumulation onto the global RF grid. Spectra are added
/// in call order, so the result does not depend on how they were produced.
#[derive(Debug, Clone)]
pub struct Combiner {
    first_bin: i64,
    bin_width: f64,
    num: Vec<f64>,
    den: Vec<f64>,
    count: Vec<u32>,
}

impl Combiner {
    pub fn new(first_bin: i64, n_bins: usize, bin_width: f64) -> Self {
        Combiner {
            first_bin,
            bin_width,
            num: vec![0.0; n_bins],
            den: vec![0.0; n_bins],
            count: vec![0; n_bins],
        }
    }

    /// Grid spanning every processed spectrum.
    pub fn spanning(spectra: &[ProcessedSpectrum]) -> Result<Self> {
        let first = spectra
            .first()
            .ok_or_else(|| Error::EmptyCampaign("nothing to combine".into()))?;
        let lo = spectra.iter().map(|s| s.first_bin).min().unwrap_or(0);
        let hi = spectra
            .iter()
            .map(|s| s.first_bin + s.excess.len() as i64)
            .max()
            .unwrap_or(0);
        Ok(Combiner::new(lo, (hi - lo) as usize, first.bin_width))
    }

    /// Adds `δ/r` with weight `(r/σ)²`, `r` the bin's expected response.
    pub fn add(&mut self, p: &ProcessedSpectrum, model: &ResponseModel) -> Result<()> {
        if p.bin_width != self.bin_width {
            return Err(Error::GridMismatch(format!(
                "bin width {} vs {}",
                p.bin_width, self.bin_width
            )));
        }
        let offset = p.first_bin - self.first_bin;
        if offset < 0 || offset as usize + p.excess.len() > self.num.len() {
            return Err(Error::GridMismatch(format!(
                "step {} lies outside the combined grid",
                p.step_id
            )));
        }
        let var = p.sigma * p.sigma;
        for (k, d) in p.excess.iter().enumerate() {
            let r = model.response(p.frequency(k));
            if r <= 0.0 {
                continue;
            }
            let i = offset as usize + k;
            // y = δ/r, σ_y = σ/r, w = 1/σ_y².
            let w = r * r / var;
            self.num[i] += d / r * w;
            self.den[i] += w;
            self.count[i] += 1;
        }
        Ok(())
    }

    /// Drops every bin whose centre lies inside a window.
    pub fn finish(self, skips: &[(f64, f64)]) -> CombinedSpectrum {
        let n = self.num.len();
        let mut y = vec![f64::NAN; n];
        let mut sigma = vec![f64::INFINITY; n];
        let mut count = self.count;
        for i in 0..n {
            let nu = (self.first_bin as f64 + i as f64 + 0.5) * self.bin_width;
            if skips.iter().any(|&(lo, hi)| nu >= lo && nu <= hi) {
                count[i] = 0;
            }
            if count[i] > 0 && self.den[i] > 0.0 {
                y[i] = self.num[i] / self.den[i];
                sigma[i] = 1.0 / self.den[i].sqrt();
            } else {
                count[i] = 0;
            }
        }
        CombinedSpectrum {
            first_bin: self.first_bin,
            bin_width: self.bin_width,
            y,
            sigma,
            n_contrib: count,
        }
    }
}

/// Maximum-likelihood combination. `y_i` estimates the fraction of the axion
/// line power in bin `i` per unit `g²`; missing bins carry `NaN` and zero
/// contributors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedSpectrum {
    pub first_bin: i64,
    pub bin_width: f64,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
    pub n_contrib: Vec<u32>,
}

impl CombinedSpectrum {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub fn combine_spectra(
    processed: &[ProcessedSpectrum],
    models: &[ResponseModel],
    skips: &[(f64, f64)],
) -> Result<CombinedSpectrum> {
    if processed.len() != models.len() {
        return Err(Error::invalid("models", "one response model per processed spectrum"));
    }
    let mut c = Combiner::spanning(processed)?;
    for (p, m) in processed.iter().zip(models) {
        c.add(p, m)?;
    }
    Ok(c.finish(skips))
}

/// Signal and noise factors of the two filter stages for a lineshape
/// kernel `ℓ`, with `F = (1 − H_RF)(1 − H_IF/N)`:
/// `t = ⟨ℓ, Fℓ⟩/|ℓ|²`, `v₁ = |F e₀|²`, `ξ² = |Fℓ|²/(v₁ |ℓ|²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterTransfer {
    /// Fraction of a matched-filtered axion that survives.
    pub t: f64,
    /// Noise inflation of the matched filter from filter-induced correlations.
    pub xi: f64,
    pub v1: f64,
}

impl FilterTransfer {
    pub fn identity() -> Self {
        FilterTransfer {
            t: 1.0,
            xi: 1.0,
            v1: 1.0,
        }
    }
}

fn apply_chain(x: &[f64], sg_if: &SavitzkyGolay, sg_rf: &SavitzkyGolay, n_if: Option<usize>) -> Result<Vec<f64>> {
    let s1: Vec<f64> = match n_if {
        Some(n) => {
            let h = sg_if.smooth(x)?;
            x.iter().zip(&h).map(|(a, b)| a - b / n as f64).collect()
        }
        None => x.to_vec(),
    };
    let h = sg_rf.smooth(&s1)?;
    Ok(s1.iter().zip(&h).map(|(a, b)| a - b).collect())
}

/// Measures the transfer on an `n_bins` spectrum. `n_if` is the number of
/// spectra in the IF average (`None` for a borrowed IF baseline).
pub fn measure_transfer(
    filters: &FilterSettings,
    bin_width: f64,
    n_bins: usize,
    n_if: Option<usize>,
    kernel: &[f64],
) -> Result<FilterTransfer> {
    let (sg_if, sg_rf) = filters.build(bin_width)?;
    let centre = n_bins / 2;
    if centre + kernel.len() > n_bins {
        return Err(Error::FilterWindow {
            window: kernel.len(),
            bins: n_bins,
        });
    }
    let mut line = vec![0.0; n_bins];
    line[centre..centre + kernel.len()].copy_from_slice(kernel);
    let mut delta = vec![0.0; n_bins];
    delta[centre] = 1.0;
    let fl = apply_chain(&line, &sg_if, &sg_rf, n_if)?;
    let fe = apply_chain(&delta, &sg_if, &sg_rf, n_if)?;
    let ll: f64 = kernel.iter().map(|v| v * v).sum();
    let lfl: f64 = line.iter().zip(&fl).map(|(a, b)| a * b).sum();
    let flfl: f64 = fl.iter().map(|v| v * v).sum();
    let v1: f64 = fe.iter().map(|v| v * v).sum();
    Ok(FilterTransfer {
        t: lfl / ll,
        xi: (flfl / (v1 * ll)).sqrt(),
        v1,
    })
}

/// Largest fractional amplitude left by the filter chain on a Gaussian bump
/// of `fwhm_hz` (on an `n_bins` spectrum).
pub fn structure_residual(filters: &FilterSettings, bin_width: f64, n_bins: usize, fwhm_hz: f64) -> Result<f64> {
    let (sg_if, sg_rf) = filters.build(bin_width)?;
    let sd = fwhm_hz / bin_width / (8.0 * std::f64::consts::LN_2).sqrt();
    let c = n_bins as f64 / 2.0;
    let bump: Vec<f64> = (0..n_bins)
        .map(|k| (-0.5 * ((k as f64 - c) / sd).powi(2)).exp())
        .collect();
    let out = apply_chain(&bump, &sg_if, &sg_rf, None)?;
    let guard = sg_rf.half_width();
    Ok(out[guard..n_bins - guard].iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Standardized, lineshape-coadded excess. `x[i]` tests an axion whose rest
/// frequency is the lower edge of bin `first_bin + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrandSpectrum {
    pub first_bin: i64,
    pub bin_width: f64,
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    pub n_contrib: Vec<u32>,
    /// Kernel support not fully covered by data.
    pub partial: Vec<bool>,
    pub transfer: FilterTransfer,
}

/// Minimum share of `|ℓ|²` on present bins for a grand-spectrum bin to exist.
pub const MIN_KERNEL_COVERAGE: f64 = 0.95;

impl GrandSpectrum {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn frequency(&self, i: usize) -> f64 {
        (self.first_bin + i as i64) as f64 * self.bin_width
    }

    pub fn index_of(&self, nu: f64) -> Option<usize> {
        let i = (nu / self.bin_width).floor() as i64 - self.first_bin;
        (i >= 0 && (i as usize) < self.x.len()).then_some(i as usize)
    }

    pub fn valid(&self, i: usize) -> bool {
        self.x[i].is_finite()
    }

    /// Indices of bins carrying data.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.valid(i)).collect()
    }

    pub fn valid_x(&self) -> Vec<f64> {
        self.x.iter().copied().filter(|v| v.is_finite()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("nu_hz,x,eta_sens,n_contrib\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{:?},{:?},{:?},{}\n",
                self.frequency(i),
                self.x[i],
                self.eta[i],
                self.n_contrib[i]
            ));
        }
        out
    }
}

/// Kernel trimmed of its negligible tail.
pub fn coadd_kernel(lineshape: &LineshapeParams, nu: f64) -> Vec<f64> {
    let mut k = lineshape_kernel(nu, lineshape, 0.0);
    let peak = k.iter().fold(0.0f64, |m, v| m.max(*v));
    while k.last().is_some_and(|v| *v < 1e-9 * peak) {
        k.pop();
    }
    k
}

pub fn coadd_grand(combined: &CombinedSpectrum, kernel: &[f64], transfer: FilterTransfer) -> Result<GrandSpectrum> {
    if kernel.is_empty() {
        return Err(Error::invalid("kernel", "empty lineshape kernel"));
    }
    let n = combined.len();
    let ll: f64 = kernel.iter().map(|v| v * v).sum();
    let w: Vec<f64> = combined
        .sigma
        .iter()
        .map(|s| if s.is_finite() { 1.0 / (s * s) } else { 0.0 })
        .collect();
    let yw: Vec<f64> = combined
        .y
        .iter()
        .zip(&w)
        .map(|(y, w)| if *w > 0.0 { y * w } else { 0.0 })
        .collect();
    let rows: Vec<(f64, f64, u32, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut covered = 0.0;
            for (m, l) in kernel.iter().enumerate() {
                let j = i + m;
                if j >= n || w[j] == 0.0 {
                    continue;
                }
                num += l * yw[j];
                den += l * l * w[j];
                covered += l * l;
            }
            let coverage = covered / ll;
            if coverage < MIN_KERNEL_COVERAGE || den <= 0.0 {
                return (f64::NAN, 0.0, 0, true);
            }
            // G = num/den, σ_G = 1/√den, x = G/(σ_G ξ), η = t/(σ_G ξ).
            let root = den.sqrt();
            (
                num / root / transfer.xi,
                transfer.t * root / transfer.xi,
                combined.n_contrib[i],
                coverage < 1.0 - 1e-9,
            )
        })
        .collect();
    Ok(GrandSpectrum {
        first_bin: combined.first_bin,
        bin_width: combined.bin_width,
        x: rows.iter().map(|r| r.0).collect(),
        eta: rows.iter().map(|r| r.1).collect(),
        n_contrib: rows.iter().map(|r| r.2).collect(),
        partial: rows.iter().map(|r| r.3).collect(),
        transfer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub nu_hz: f64,
    pub x: f64,
    pub bin: usize,
}

/// Rescan candidates, most significant first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RescanList {
    pub threshold: f64,
    pub merge_bins: usize,
    pub candidates: Vec<Candidate>,
}

/// Merge distance: the width holding 95% of the line power.
pub fn merge_width_bins(lineshape: &LineshapeParams, nu: f64, bin_width: f64) -> usize {
    (lineshape_width(nu, lineshape, 0.95) / bin_width).ceil() as usize
}

pub fn flag_rescans(grand: &GrandSpectrum, threshold: f64, merge_bins: usize) -> RescanList {
    let mut clusters: Vec<Candidate> = Vec::new();
    let mut last: Option<usize> = None;
    for i in 0..grand.len() {
        let x = grand.x[i];
        if !(x >= threshold) {
            continue;
        }
        let c = Candidate {
            nu_hz: grand.frequency(i),
            x,
            bin: i,
        };
        match (last, clusters.last_mut()) {
            (Some(l), Some(top)) if i - l <= merge_bins => {
                if x > top.x {
                    *top = c;
                }
            }
            _ => clusters.push(c),
        }
        last = Some(i);
    }
    clusters.sort_by(|a, b| b.x.total_cmp(&a.x).then(a.bin.cmp(&b.bin)));
    RescanList {
        threshold,
        merge_bins,
        candidates: clusters,
    }
}

/// Grand-spectrum bins affected by a rescan of each candidate: within
/// `merge_bins` of it.
pub fn rescan_bins(list: &RescanList, grand_len: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for c in &list.candidates {
        let lo = c.bin.saturating_sub(list.merge_bins);
        let hi = (c.bin + list.merge_bins).min(grand_len.saturating_sub(1));
        out.extend(lo..=hi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::SpectrumMeta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn raw(step_id: usize, nu_start: f64, psd: Vec<f64>) -> RawSpectrum {
        RawSpectrum {
            step_id,
            nu_start,
            bin_width: 100.0,
            n_averages: 360_000,
            psd,
            meta: SpectrumMeta {
                label: "data".into(),
                nu_c: nu_start + 1.5e6,
                beta: 7.1,
                kappa_l: 87e3,
                q_loaded: 5800.0,
                drift_hz: 100.0,
                squeezing_db: 4.0,
                probe_tone_db: 0.0,
                t_start_s: 0.0,
                load_temperature_k: None,
            },
        }
    }

    fn noisy(n: usize, seed: u64, shape: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.0017).unwrap();
        (0..n).map(|k| shape(k) * (1.0 + d.sample(&mut rng))).collect()
    }

    fn flat_model(amplitude: f64) -> ResponseModel {
        // β = 1, N_c0 = N_f, no added noise: response = amplitude·A/N_f.
        ResponseModel {
            nu_c: 0.0,
            kappa_l: 1e12,
            beta: 1.0,
            n_c0: 0.25,
            s: 1.0,
            n_f: 0.25,
            n_a: 0.0,
            amplitude,
        }
    }

    #[test]
    fn cuts_by_reason() {
        let mut a = raw(0, 4.1e9, vec![1.0; 10]);
        let mut b = raw(1, 4.1e9, vec![1.0; 10]);
        let c = raw(2, 4.1e9, vec![1.0; 10]);
        a.meta.drift_hz = 200e3;
        b.meta.squeezing_db = 0.3;
        b.meta.probe_tone_db = 3.0;
        let (kept, log) = apply_cuts(vec![a, b, c], &CutCriteria::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].step_id, 2);
        assert_eq!(log.cut[0].reasons, vec![CutReason::Drift]);
        assert_eq!(log.cut[1].reasons, vec![CutReason::Squeezing, CutReason::ProbeTone]);
        assert!(log.is_cut(1) && !log.is_cut(2));
        let unsqueezed = CutCriteria {
            min_squeezing_db: None,
            ..Default::default()
        };
        let mut d = raw(3, 4.1e9, vec![1.0; 10]);
        d.meta.squeezing_db = 0.0;
        assert!(cut_reasons(&d, &unsqueezed).is_empty());
    }

    #[test]
    fn all_cut_is_empty_campaign() {
        let r = remove_structure(&[], &FilterSettings::default(), None);
        assert!(matches!(r, Err(Error::EmptyCampaign(_))));
    }

    #[test]
    fn window_wider_than_band_rejected() {
        let s = raw(0, 4.1e9, vec![1.0; 800]);
        assert!(matches!(
            remove_structure(&[s], &FilterSettings::default(), None),
            Err(Error::FilterWindow { .. })
        ));
    }

    #[test]
    fn structure_removal_recovers_radiometer_noise() {
        let n = 30_000;
        let shape = |k: usize| 1.0 + 0.3 * (k as f64 / 4000.0).sin() + 0.1 * (k as f64 / 900.0).cos();
        let spectra: Vec<_> = (0..8)
            .map(|j| raw(j, 4.1e9 + j as f64 * 85e3, noisy(n, j as u64, shape)))
            .collect();
        let (p, _) = remove_structure(&spectra, &FilterSettings::default(), None).unwrap();
        for s in &p {
            assert!((s.sigma / 0.0017 - 1.0).abs() < 0.05, "{}", s.sigma);
            let m = stats::mean(&s.excess);
            assert!(m.abs() < 3.0 * s.sigma / (s.excess.len() as f64).sqrt());
        }
    }

    #[test]
    fn flat_input_is_nearly_untouched() {
        let n = 30_000;
        let spectra: Vec<_> = (0..4)
            .map(|j| raw(j, 4.1e9, noisy(n, 10 + j as u64, |_| 1.0)))
            .collect();
        let (p, _) = remove_structure(&spectra, &FilterSettings::default(), None).unwrap();
        let guard = edge_guard(&FilterSettings::default(), 100.0).unwrap();
        let m = stats::mean(&spectra[0].psd);
        let raw_fluct: Vec<f64> = spectra[0].psd[guard..n - guard].iter().map(|v| v / m - 1.0).collect();
        let diff: Vec<f64> = p[0].excess.iter().zip(&raw_fluct).map(|(a, b)| a - b).collect();
        let ratio = stats::variance(&diff).sqrt() / stats::variance(&raw_fluct).sqrt();
        assert!(ratio < 0.5, "{ratio}");
        let corr = 1.0 - 0.5 * stats::variance(&diff) / stats::variance(&raw_fluct);
        assert!(corr > 0.9);
        assert!((p[0].sigma / stats::variance(&raw_fluct).sqrt() - 1.0).abs() < 0.01);
    }

    #[test]
    fn transfer_bounds() {
        let ls = LineshapeParams::default();
        let k = coadd_kernel(&ls, 4.12e9);
        let f = FilterSettings::default();
        let t = measure_transfer(&f, 100.0, 30_000, Some(50), &k).unwrap();
        assert!(t.t > 0.85 && t.t < 1.0, "{t:?}");
        assert!(t.xi > 0.9 && t.xi < 1.05, "{t:?}");
        let r = structure_residual(&f, 100.0, 30_000, 100e3).unwrap();
        assert!(r < 0.1, "{r}");
    }

    #[test]
    fn two_identical_spectra_shrink_sigma() {
        let p = ProcessedSpectrum {
            step_id: 0,
            nu_c: 0.0,
            first_bin: 10,
            bin_width: 100.0,
            excess: vec![0.001, -0.002, 0.0005],
            sigma: 0.0017,
            sigma_radiometer: 0.0017,
            filters: String::new(),
        };
        let m = flat_model(0.5);
        let one = combine_spectra(std::slice::from_ref(&p), &[m], &[]).unwrap();
        let two = combine_spectra(&[p.clone(), p.clone()], &[m, m], &[]).unwrap();
        for i in 0..3 {
            assert!((two.sigma[i] / one.sigma[i] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
            assert!((one.y[i] - p.excess[i] / 2.0).abs() < 1e-15);
            assert_eq!(two.n_contrib[i], 2);
        }
    }

    #[test]
    fn weights_follow_snr_squared() {
        let mk = |x: f64| ProcessedSpectrum {
            step_id: 0,
            nu_c: 0.0,
            first_bin: 0,
            bin_width: 100.0,
            excess: vec![x],
            sigma: 0.0017,
            sigma_radiometer: 0.0017,
            filters: String::new(),
        };
        // Same noise, response 2:1, so y-weights must be 4:1.
        let (a, b) = (flat_model(2.0), flat_model(1.0));
        let c = combine_spectra(&[mk(8.0), mk(0.0)], &[a, b], &[]).unwrap();
        // y_a = 1, y_b = 0 → combined y = 4/5.
        assert!((c.y[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn skips_become_gaps() {
        let p = ProcessedSpectrum {
            step_id: 0,
            nu_c: 0.0,
            first_bin: 0,
            bin_width: 100.0,
            excess: vec![0.0; 10],
            sigma: 0.0017,
            sigma_radiometer: 0.0017,
            filters: String::new(),
        };
        let c = combine_spectra(&[p], &[flat_model(1.0)], &[(300.0, 500.0)]).unwrap();
        assert_eq!(c.n_contrib, vec![1, 1, 1, 0, 0, 1, 1, 1, 1, 1]);
        assert!(c.y[3].is_nan());
    }

    #[test]
    fn coadd_standardizes_white_noise() {
        let n = 40_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Normal::new(0.0, 1.0).unwrap();
        let sigma: Vec<f64> = (0..n).map(|i| 0.5 + (i as f64 / 7000.0).sin().abs()).collect();
        let combined = CombinedSpectrum {
            first_bin: 0,
            bin_width: 100.0,
            y: sigma.iter().map(|s| s * d.sample(&mut rng)).collect(),
            sigma,
            n_contrib: vec![1; n],
        };
        let k = coadd_kernel(&LineshapeParams::default(), 4.12e9);
        let g = coadd_grand(&combined, &k, FilterTransfer::identity()).unwrap();
        let x = g.valid_x();
        assert!(x.len() > n - k.len());
        assert!(stats::mean(&x).abs() < 0.05);
        assert!((stats::variance(&x) - 1.0).abs() < 0.05);
        assert!(g.eta.iter().zip(&g.x).all(|(e, x)| !x.is_finite() || *e > 0.0));
        // Trailing bins lose kernel support.
        assert!(!g.valid(n - 1));
        assert!(g.partial[n - 1]);
    }

    #[test]
    fn eta_scales_exactly_with_transfer() {
        let n = 3000;
        let combined = CombinedSpectrum {
            first_bin: 0,
            bin_width: 100.0,
            y: vec![0.0; n],
            sigma: vec![1.0; n],
            n_contrib: vec![1; n],
        };
        let k = coadd_kernel(&LineshapeParams::default(), 4.12e9);
        let a = coadd_grand(&combined, &k, FilterTransfer::identity()).unwrap();
        let tr = FilterTransfer {
            t: 0.9,
            xi: 1.0,
            v1: 1.0,
        };
        let b = coadd_grand(&combined, &k, tr).unwrap();
        for i in a.valid_indices() {
            assert!((b.eta[i] / a.eta[i] - 0.9).abs() < 1e-14);
        }
    }

    #[test]
    fn rescan_flagging_merges_neighbours() {
        let mut x = vec![0.0; 1000];
        x[100] = 3.6;
        x[110] = 4.2;
        x[500] = 3.5;
        x[900] = 3.0;
        let g = GrandSpectrum {
            first_bin: 0,
            bin_width: 100.0,
            eta: vec![1.0; 1000],
            n_contrib: vec![1; 1000],
            partial: vec![false; 1000],
            transfer: FilterTransfer::identity(),
            x,
        };
        let l = flag_rescans(&g, 3.455, 50);
        assert_eq!(l.candidates.len(), 2);
        assert_eq!(l.candidates[0].bin, 110);
        assert_eq!(l.candidates[1].bin, 500);
        assert!(flag_rescans(&g, 10.0, 50).candidates.is_empty());
        let bins = rescan_bins(&l, 1000);
        assert!(bins.contains(&60) && bins.contains(&550) && !bins.contains(&551));
    }
}
