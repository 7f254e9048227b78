//! A short campaign with one injected axion: where it lands in the grand
//! spectrum and what the rescan makes of it.

use haloscan::config::{Config, InjectedAxion};
use haloscan::runner::{calibrate_all, process, simulate, Campaign};

fn main() -> haloscan::Result<()> {
    let mut cfg = Config::default();
    cfg.campaign.nu_lo_hz = 4.120e9;
    cfg.campaign.nu_hi_hz = 4.120e9 + 39.0 * cfg.campaign.step_hz;
    cfg.campaign.skip.clear();
    let nu_a = 4.1216e9;
    cfg.axion.push(InjectedAxion { nu_a_hz: nu_a, g: 2.5 });

    let c = Campaign::new(cfg)?;
    let data = simulate(&c)?;
    let cals = calibrate_all(&c.config, &data.calibrations)?;
    let p = process(&c, data.spectra, &cals)?;

    let g = &p.scan.grand;
    println!("{} spectra, {} cut", p.scan.noise.len(), p.scan.cut_log.cut.len());
    println!("transfer t = {:.3}, xi = {:.3}", g.transfer.t, g.transfer.xi);
    let x = g.valid_x();
    println!(
        "grand spectrum: {} bins, max x = {:.2}",
        x.len(),
        x.iter().copied().fold(f64::MIN, f64::max)
    );
    if let Some(i) = g.index_of(nu_a) {
        println!(
            "at nu_a: x = {:.2}, expected g^2 eta = {:.2}",
            g.x[i],
            2.5f64.powi(2) * g.eta[i]
        );
    }
    println!("\nrescan candidates (threshold {}):", p.rescans.threshold);
    for cand in &p.rescans.candidates {
        println!("  {:.4} MHz offset  x = {:.2}", (cand.nu_hz - nu_a) / 1e6, cand.x);
    }
    let m = &p.measurements;
    for r in m.rescans.iter().filter(|r| (m.nu_hz[r.bin] - nu_a).abs() < 200.0) {
        println!("rescan at {:.0} Hz offset: x = {:.2}", m.nu_hz[r.bin] - nu_a, r.x);
    }
    Ok(())
}
