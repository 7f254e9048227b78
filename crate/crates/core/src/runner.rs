//! In-memory stages of a campaign: simulate, calibrate, process, exclude,
//! plus the receiver-only reports (noise budgets and scan-rate enhancement).

use std::collections::BTreeSet;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axion::{lineshape_kernel, reference_amplitude, AxionHypothesis, SignalModel};
use crate::calibration::{calibrate, nearest_calibration, CalibrationResult};
use crate::campaign::{
    make_tuning_plan, simulate_calibration, simulate_campaign, simulate_spectrum, BaselineModel, CalibrationSet,
    RawSpectrum, TuningPlan, TuningStep,
};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::inference::{exclusion, ExclusionResult, Measurements};
use crate::pipeline::{
    apply_cuts, coadd_grand, coadd_kernel, edge_guard, flag_rescans, if_baseline, measure_transfer, merge_width_bins,
    remove_structure, Combiner, CutLog, GrandSpectrum, IfBaseline, RescanList, ResponseModel,
};
use crate::receiver::{
    delivered_squeezing, noise_budget, optimize_coupling, scan_rate_at, thermal_quanta, NoiseBudget,
};

/// Spectra are filtered and combined in chunks of this many steps to bound
/// memory on full-size campaigns.
const PROCESS_CHUNK: usize = 64;

/// A validated configuration with everything derived from it.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub config: Config,
    pub plan: TuningPlan,
    pub baseline: BaselineModel,
    pub signals: Vec<SignalModel>,
}

impl Campaign {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let c = &config.campaign;
        let plan = make_tuning_plan(c.nu_lo_hz, c.nu_hi_hz, c.step_hz, &c.skip, c.beta, c.seed)?;
        let b = &config.baseline;
        let baseline = BaselineModel::random(c.seed, b.components, b.excursion, b.step_jitter);
        let signals = config.signals()?;
        Ok(Campaign {
            config,
            plan,
            baseline,
            signals,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.campaign.seed
    }

    /// Centre of the scanned range.
    pub fn mid_frequency(&self) -> f64 {
        0.5 * (self.config.campaign.nu_lo_hz + self.config.campaign.nu_hi_hz)
    }

    /// Steps that get a calibration set.
    pub fn calibration_steps(&self) -> Vec<TuningStep> {
        let every = self.config.campaign.calibration_every;
        let mut steps: Vec<TuningStep> = self.plan.steps.iter().step_by(every).copied().collect();
        if let Some(last) = self.plan.steps.last() {
            if steps.last().map(|s| s.step_id) != Some(last.step_id) {
                steps.push(*last);
            }
        }
        steps
    }

    fn local_signals(&self, step: &TuningStep) -> Vec<SignalModel> {
        let acq = self.config.acquisition();
        let ls = self.config.lineshape();
        let lo = acq.nu_start(step.nu_c);
        let hi = lo + acq.n_bins() as f64 * acq.bin_width_hz;
        self.signals
            .iter()
            .filter(|s| s.nu_a >= lo - ls.span_hz() && s.nu_a < hi)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub spectra: Vec<RawSpectrum>,
    pub calibrations: Vec<CalibrationSet>,
}

pub fn simulate(c: &Campaign) -> Result<SimulatedData> {
    let cfg = &c.config;
    let acq = cfg.acquisition();
    let truth = cfg.truth();
    info!("simulating {} tuning steps", c.plan.len());
    let spectra = simulate_campaign(
        &c.plan,
        &truth,
        &c.signals,
        &cfg.lineshape(),
        &c.baseline,
        &acq,
        &cfg.anomalies,
    )?;
    let cal_steps = c.calibration_steps();
    info!("simulating {} calibration sets", cal_steps.len());
    let calibrations = cal_steps
        .par_iter()
        .map(|step| {
            let receiver = truth.at(step.nu_c, step.beta)?;
            simulate_calibration(
                step,
                &receiver,
                &c.baseline,
                &acq,
                cfg.calibration.t_hot_k,
                cfg.calibration.t_cold_k,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedData { spectra, calibrations })
}

/// Input-line occupation assumed by the analysis: the cold-load temperature.
fn analysis_n_f(cfg: &Config, nu: f64) -> Result<f64> {
    thermal_quanta(nu, cfg.calibration.t_cold_k)
}

pub fn calibrate_all(cfg: &Config, sets: &[CalibrationSet]) -> Result<Vec<CalibrationResult>> {
    if sets.is_empty() {
        return Err(Error::EmptyCampaign("no calibration sets".into()));
    }
    sets.par_iter()
        .map(|set| calibrate(set, cfg.receiver.eta, analysis_n_f(cfg, set.meas3.meta.nu_c)?))
        .collect()
}

/// Signal amplitude the analysis expects for a step at `nu_c`.
fn expected_amplitude(cfg: &Config, nu_c: f64) -> f64 {
    let ls = cfg.lineshape();
    let kernel = lineshape_kernel(nu_c, &ls, 0.0);
    reference_amplitude(cfg.signal.snr_ref, &kernel, ls.bin_width, cfg.acquisition.tau_s)
}

fn response_models(cfg: &Config, spectra: &[RawSpectrum], cals: &[CalibrationResult]) -> Result<Vec<ResponseModel>> {
    spectra
        .iter()
        .map(|s| {
            let i = nearest_calibration(cals, s.meta.nu_c)
                .ok_or_else(|| Error::EmptyCampaign("no calibration results".into()))?;
            Ok(ResponseModel::from_calibration(
                &cals[i],
                s.meta.nu_c,
                s.meta.kappa_l,
                s.meta.beta,
                analysis_n_f(cfg, s.meta.nu_c)?,
                expected_amplitude(cfg, s.meta.nu_c),
            ))
        })
        .collect()
}

/// Per-step noise after structure removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepNoise {
    pub step_id: usize,
    pub nu_c: f64,
    pub sigma: f64,
    pub sigma_radiometer: f64,
}

/// Cut, filtered and combined scan, coadded into a grand spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub cut_log: CutLog,
    pub if_baseline: IfBaseline,
    pub noise: Vec<StepNoise>,
    pub grand: GrandSpectrum,
}

/// Runs cuts, both filter stages, ML combination and coadding. With
/// `external_if` the IF baseline is borrowed instead of built (rescans).
pub fn process_scan(
    cfg: &Config,
    spectra: Vec<RawSpectrum>,
    cals: &[CalibrationResult],
    external_if: Option<&IfBaseline>,
) -> Result<Scan> {
    let (kept, cut_log) = apply_cuts(spectra, &cfg.cut_criteria());
    info!("cuts kept {} of {} spectra", cut_log.n_kept, cut_log.n_input);
    if kept.is_empty() {
        return Err(Error::EmptyCampaign("every spectrum was cut".into()));
    }
    let base = match external_if {
        Some(b) => b.clone(),
        None => if_baseline(&kept, &cfg.filters)?,
    };
    let models = response_models(cfg, &kept, cals)?;
    let bw = kept[0].bin_width;
    let n = kept[0].len();
    let guard = edge_guard(&cfg.filters, bw)? as i64;
    let lo = kept.iter().map(|s| s.first_global_bin()).min().unwrap_or(0) + guard;
    let hi = kept.iter().map(|s| s.first_global_bin()).max().unwrap_or(0) + n as i64 - guard;
    if hi <= lo {
        return Err(Error::FilterWindow {
            window: 2 * guard as usize + 1,
            bins: n,
        });
    }
    let mut combiner = Combiner::new(lo, (hi - lo) as usize, bw);
    let mut noise = Vec::with_capacity(kept.len());
    for (chunk, chunk_models) in kept.chunks(PROCESS_CHUNK).zip(models.chunks(PROCESS_CHUNK)) {
        let (processed, _) = remove_structure(chunk, &cfg.filters, Some(&base))?;
        for (p, m) in processed.iter().zip(chunk_models) {
            combiner.add(p, m)?;
            noise.push(StepNoise {
                step_id: p.step_id,
                nu_c: p.nu_c,
                sigma: p.sigma,
                sigma_radiometer: p.sigma_radiometer,
            });
        }
    }
    let combined = combiner.finish(&cfg.campaign.skip);
    let ls = cfg.lineshape();
    let mid = 0.5 * (cfg.campaign.nu_lo_hz + cfg.campaign.nu_hi_hz);
    let kernel = coadd_kernel(&ls, mid);
    let n_if = external_if.is_none().then_some(base.n_spectra);
    let transfer = measure_transfer(&cfg.filters, bw, n, n_if, &kernel)?;
    debug!("filter transfer t = {:.4}, xi = {:.4}", transfer.t, transfer.xi);
    let grand = coadd_grand(&combined, &kernel, transfer)?;
    Ok(Scan {
        cut_log,
        if_baseline: base,
        noise,
        grand,
    })
}

/// Initial scan plus rescans, reduced to per-bin measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Processed {
    pub scan: Scan,
    pub rescans: RescanList,
    pub rescan_spectra: Vec<RawSpectrum>,
    pub rescan_scan: Option<Scan>,
    pub measurements: Measurements,
}

/// Processes the initial scan, flags candidates, takes and processes one
/// rescan step centred on each, and attaches the rescan to every bin within
/// the merge width of its candidate.
pub fn process(c: &Campaign, spectra: Vec<RawSpectrum>, cals: &[CalibrationResult]) -> Result<Processed> {
    let cfg = &c.config;
    let scan = process_scan(cfg, spectra, cals, None)?;
    let ls = cfg.lineshape();
    let merge = merge_width_bins(&ls, c.mid_frequency(), scan.grand.bin_width);
    let rescans = flag_rescans(&scan.grand, cfg.rescan.threshold, merge);
    let mut measurements = Measurements::from_grand(&scan.grand);
    info!(
        "grand spectrum: {} valid bins, {} rescan candidates",
        measurements.len(),
        rescans.candidates.len()
    );
    if !cfg.rescan.enabled || rescans.candidates.is_empty() {
        return Ok(Processed {
            scan,
            rescans,
            rescan_spectra: Vec::new(),
            rescan_scan: None,
            measurements,
        });
    }
    let rescan_spectra = simulate_rescans(c, &rescans)?;
    let rescan_scan = match process_scan(cfg, rescan_spectra.clone(), cals, Some(&scan.if_baseline)) {
        Ok(s) => s,
        // Every rescan was cut: nothing to update.
        Err(Error::EmptyCampaign(_)) => {
            return Ok(Processed {
                scan,
                rescans,
                rescan_spectra,
                rescan_scan: None,
                measurements,
            })
        }
        Err(e) => return Err(e),
    };
    let reach = rescans.merge_bins as f64 * scan.grand.bin_width;
    let mut bins = BTreeSet::new();
    for cand in &rescans.candidates {
        let a = measurements.nu_hz.partition_point(|v| *v < cand.nu_hz - reach);
        let b = measurements.nu_hz.partition_point(|v| *v <= cand.nu_hz + reach);
        bins.extend(a..b);
    }
    measurements.add_rescan(bins, &rescan_scan.grand);
    Ok(Processed {
        scan,
        rescans,
        rescan_spectra,
        rescan_scan: Some(rescan_scan),
        measurements,
    })
}

/// One step per candidate, tuned to the candidate frequency.
pub fn simulate_rescans(c: &Campaign, list: &RescanList) -> Result<Vec<RawSpectrum>> {
    let cfg = &c.config;
    let truth = cfg.truth();
    let acq = cfg.acquisition();
    let ls = cfg.lineshape();
    list.candidates
        .par_iter()
        .enumerate()
        .map(|(k, cand)| {
            let step = TuningStep::rescan(c.seed(), k, c.plan.len(), cand.nu_hz, cfg.campaign.beta);
            let receiver = truth.at(step.nu_c, step.beta)?;
            let mut s = simulate_spectrum(
                &step,
                &receiver,
                &c.local_signals(&step),
                &ls,
                &c.baseline,
                &acq,
                cfg.anomalies.draw(step.seed),
            )?;
            s.meta.label = "rescan".into();
            Ok(s)
        })
        .collect()
}

pub fn exclude(cfg: &Config, measurements: &Measurements) -> Result<ExclusionResult> {
    exclusion(measurements, &cfg.exclusion)
}

/// Everything a full in-memory run produces.
#[derive(Debug, Clone)]
pub struct CampaignRun {
    pub calibrations: Vec<CalibrationResult>,
    pub processed: Processed,
    pub exclusion: ExclusionResult,
}

pub fn run_campaign(config: Config) -> Result<CampaignRun> {
    let c = Campaign::new(config)?;
    let data = simulate(&c)?;
    let calibrations = calibrate_all(&c.config, &data.calibrations)?;
    let processed = process(&c, data.spectra, &calibrations)?;
    let exclusion = exclude(&c.config, &processed.measurements)?;
    Ok(CampaignRun {
        calibrations,
        processed,
        exclusion,
    })
}

/// Detunings of the noise-budget tables: ±1 MHz in 5 kHz steps.
pub fn budget_detunings() -> Vec<f64> {
    (-200..=200).map(|k| k as f64 * 5e3).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Budgets {
    /// Critically overcoupled receiver without squeezing (β = 2, S = 1).
    pub reference: NoiseBudget,
    /// The configured squeezed operating point.
    pub operating: NoiseBudget,
}

pub fn budgets(c: &Campaign) -> Result<Budgets> {
    let cfg = &c.config;
    let nu = c.mid_frequency();
    let truth = cfg.truth();
    let signal = SignalModel::new(
        &AxionHypothesis {
            nu_a: nu,
            g: 1.0,
            snr_ref: cfg.signal.snr_ref,
        },
        &cfg.lineshape(),
        cfg.acquisition.tau_s,
    )?;
    let d = budget_detunings();
    Ok(Budgets {
        reference: noise_budget(&truth.at(nu, 2.0)?.unsqueezed(), &d, Some(&signal))?,
        operating: noise_budget(&truth.at(nu, cfg.campaign.beta)?, &d, Some(&signal))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub s: f64,
    pub beta: f64,
    pub scan_rate: f64,
    pub at_boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedCouplingRatio {
    pub beta_squeezed: f64,
    pub beta_unsqueezed: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhancementReport {
    pub n_c0: f64,
    pub n_f: f64,
    pub n_a: f64,
    pub squeezed: OperatingPoint,
    pub unsqueezed: OperatingPoint,
    /// Scan-rate ratio, each branch at its own optimal coupling.
    pub ratio: f64,
    /// Ratio at the coupling used for data taking against the unsqueezed
    /// optimum.
    pub at_operating_coupling: FixedCouplingRatio,
    /// Same squeezer output, transmissivity raised to `projection_eta`.
    pub projection_eta: f64,
    pub projected: OperatingPoint,
    pub projected_ratio: f64,
}

pub const PROJECTION_ETA: f64 = 0.90;

fn optimum(s: f64, n_c0: f64, n_f: f64, n_a: f64) -> Result<OperatingPoint> {
    let o = optimize_coupling(s, n_c0, n_f, n_a)?;
    Ok(OperatingPoint {
        s,
        beta: o.beta,
        scan_rate: o.scan_rate,
        at_boundary: o.at_boundary,
    })
}

/// Scan-rate gain of the squeezed receiver over the best unsqueezed one.
pub fn report_enhancement(cfg: &Config) -> Result<EnhancementReport> {
    let r = &cfg.receiver;
    let nu = 0.5 * (cfg.campaign.nu_lo_hz + cfg.campaign.nu_hi_hz);
    let n_f = thermal_quanta(nu, r.cryostat_k)?;
    let s = if r.squeezing {
        delivered_squeezing(r.eta, r.g_s)?
    } else {
        1.0
    };
    let squeezed = optimum(s, r.n_c0, n_f, r.n_a)?;
    let unsqueezed = optimum(1.0, r.n_c0, n_f, r.n_a)?;
    let fixed = scan_rate_at(s, r.n_c0, n_f, r.n_a, cfg.campaign.beta)?;
    let s_proj = if r.squeezing {
        delivered_squeezing(PROJECTION_ETA, r.g_s)?
    } else {
        1.0
    };
    let projected = optimum(s_proj, r.n_c0, n_f, r.n_a)?;
    Ok(EnhancementReport {
        n_c0: r.n_c0,
        n_f,
        n_a: r.n_a,
        squeezed,
        unsqueezed,
        ratio: squeezed.scan_rate / unsqueezed.scan_rate,
        at_operating_coupling: FixedCouplingRatio {
            beta_squeezed: cfg.campaign.beta,
            beta_unsqueezed: unsqueezed.beta,
            ratio: fixed / unsqueezed.scan_rate,
        },
        projection_eta: PROJECTION_ETA,
        projected,
        projected_ratio: projected.scan_rate / unsqueezed.scan_rate,
    })
}
