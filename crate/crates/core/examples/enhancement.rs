//! Scan-rate gain from squeezing, and how it moves with coupling.

use haloscan::config::Config;
use haloscan::receiver::{optimize_coupling, scan_rate_at};
use haloscan::runner::report_enhancement;

fn main() -> haloscan::Result<()> {
    let r = report_enhancement(&Config::default())?;
    println!("N_c0 {:.3}  N_f {:.4}  N_A {:.3}", r.n_c0, r.n_f, r.n_a);
    println!("squeezed   S = {:.3}  beta* = {:.2}", r.squeezed.s, r.squeezed.beta);
    println!("unsqueezed S = {:.3}  beta* = {:.2}", r.unsqueezed.s, r.unsqueezed.beta);
    println!("enhancement {:.3}", r.ratio);
    println!(
        "with eta = {:.2}: S = {:.3}, enhancement {:.2}",
        r.projection_eta, r.projected.s, r.projected_ratio
    );

    // Rate against coupling for both receivers, each normalized to its peak.
    let sq = optimize_coupling(r.squeezed.s, r.n_c0, r.n_f, r.n_a)?;
    let un = optimize_coupling(1.0, r.n_c0, r.n_f, r.n_a)?;
    println!("\n{:>6} {:>10} {:>10}", "beta", "squeezed", "unsqueezed");
    for beta in [0.5, 1.0, 2.0, 3.0, 5.0, 7.1, 10.0, 20.0] {
        println!(
            "{beta:>6.1} {:>10.3} {:>10.3}",
            scan_rate_at(r.squeezed.s, r.n_c0, r.n_f, r.n_a, beta)? / sq.scan_rate,
            scan_rate_at(1.0, r.n_c0, r.n_f, r.n_a, beta)? / un.scan_rate
        );
    }
    Ok(())
}
