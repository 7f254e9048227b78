//! Simulates calibration sets from a known receiver and infers it back.

use haloscan::calibration::calibrate;
use haloscan::campaign::{simulate_calibration, BaselineModel, TuningStep};
use haloscan::config::Config;
use haloscan::receiver::thermal_quanta;

fn main() -> haloscan::Result<()> {
    let cfg = Config::default();
    let truth = cfg.truth();
    let settings = cfg.acquisition();
    let baseline = BaselineModel::random(1, 4, 0.3, 0.01);
    println!("truth: N_c0 {}  N_A {}  G_s {:.4}", truth.n_c0, truth.n_a, truth.g_s);
    println!(
        "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "nu GHz", "N_c0", "N_A", "G_s", "S dB", "gain dB"
    );
    for k in 0..6u64 {
        let nu = 4.10e9 + k as f64 * 15e6;
        let step = TuningStep {
            step_id: k as usize,
            nu_c: nu,
            beta: cfg.campaign.beta,
            seed: 100 + k,
        };
        let set = simulate_calibration(
            &step,
            &truth.at(nu, step.beta)?,
            &baseline,
            &settings,
            cfg.calibration.t_hot_k,
            cfg.calibration.t_cold_k,
        )?;
        let r = calibrate(&set, truth.eta, thermal_quanta(nu, cfg.calibration.t_cold_k)?)?;
        println!(
            "{:>8.3} {:>8.4} {:>8.4} {:>8.4} {:>8.2} {:>8.2}",
            nu / 1e9,
            r.n_c0_hat,
            r.n_a_hat,
            r.g_s_hat,
            -10.0 * r.s_hat.log10(),
            r.gain_db
        );
    }
    Ok(())
}
