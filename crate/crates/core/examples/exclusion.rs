//! Exclusion from the full default campaign. Takes a few seconds per core.

use haloscan::config::Config;
use haloscan::runner::run_campaign;

fn main() -> haloscan::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map_or(Ok(Config::default().campaign.seed), |s| s.parse());
    let mut cfg = Config::default();
    cfg.campaign.seed = seed.expect("seed must be an integer");
    let run = run_campaign(cfg)?;
    let ex = &run.exclusion;
    println!("{} bins, {} rescanned", ex.n_bins, ex.n_rescan_bins);
    match ex.g_star {
        Some(g) => println!("aggregate update reaches {} at g = {g:.3}", ex.target),
        None => println!("aggregate update stays above {} on the grid", ex.target),
    }
    println!("\n{:>12} {:>12} {:>8}", "lo MHz", "hi MHz", "g_10%");
    for w in ex.windows.iter().step_by(10) {
        let g = w.g_star.map_or("-".to_string(), |g| format!("{g:.3}"));
        println!("{:>12.3} {:>12.3} {:>8}", w.nu_lo_hz / 1e6, w.nu_hi_hz / 1e6, g);
    }
    Ok(())
}
