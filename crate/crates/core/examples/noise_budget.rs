//! Noise terms of the squeezed receiver against detuning, next to the
//! unsqueezed receiver at β = 2.

use haloscan::config::Config;
use haloscan::receiver::{noise_budget, thermal_quanta};

fn main() -> haloscan::Result<()> {
    let cfg = Config::default();
    let truth = cfg.truth();
    let nu = 4.14e9;
    println!(
        "input line: {:.4} quanta at {} K",
        thermal_quanta(nu, truth.cryostat_k)?,
        truth.cryostat_k
    );

    let detunings: Vec<f64> = (-8..=8).map(|k| k as f64 * 25e3).collect();
    for (label, params) in [
        ("reference (beta = 2, squeezer off)", truth.at(nu, 2.0)?.unsqueezed()),
        ("operating point", truth.at(nu, cfg.campaign.beta)?),
    ] {
        let b = noise_budget(&params, &detunings, None)?;
        println!(
            "\n{label}: S = {:.3}, kappa = {:.1} kHz",
            params.squeezing(),
            params.kappa() / 1e3
        );
        println!(
            "{:>10} {:>8} {:>8} {:>8} {:>8}",
            "delta kHz", "N_c", "N_r", "N_A", "total"
        );
        for (i, d) in detunings.iter().enumerate() {
            println!(
                "{:>10.0} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                d / 1e3,
                b.n_c[i],
                b.n_r[i],
                b.n_a[i],
                b.total[i]
            );
        }
    }
    Ok(())
}
