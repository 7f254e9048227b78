#![allow(dead_code)]

use haloscan::calibration::CalibrationResult;
use haloscan::config::{Config, InjectedAxion};
use haloscan::runner::{calibrate_all, process, simulate, Campaign, Processed};

/// Default configuration cut down to `steps` contiguous tuning steps.
pub fn small_config(seed: u64, steps: usize) -> Config {
    let mut cfg = Config::default();
    cfg.campaign.seed = seed;
    cfg.campaign.nu_hi_hz = cfg.campaign.nu_lo_hz + (steps - 1) as f64 * cfg.campaign.step_hz;
    cfg.campaign.skip.clear();
    cfg
}

/// A bin edge near the middle of the scanned range.
pub fn mid_bin_edge(cfg: &Config) -> f64 {
    let mid = 0.5 * (cfg.campaign.nu_lo_hz + cfg.campaign.nu_hi_hz);
    let bw = cfg.acquisition.bin_width_hz;
    (mid / bw).floor() * bw
}

pub fn with_axion(mut cfg: Config, nu_a_hz: f64, g: f64) -> Config {
    cfg.axion.push(InjectedAxion { nu_a_hz, g });
    cfg
}

/// Simulate, calibrate and process (including rescans), without inference.
pub fn through_process(cfg: Config) -> (Vec<CalibrationResult>, Processed) {
    let c = Campaign::new(cfg).expect("valid config");
    let data = simulate(&c).expect("simulation");
    let cals = calibrate_all(&c.config, &data.calibrations).expect("calibration");
    let p = process(&c, data.spectra, &cals).expect("processing");
    (cals, p)
}
