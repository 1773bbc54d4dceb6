//! Multi-seed trigger-recovery study.
//!
//! Simulates datasets whose intensity contains a smooth "trigger" surface,
//! then fits three models that do NOT agree on what they see: one gets the
//! trigger as a covariate, one gets only a latent spatial effect on the
//! mapping units, one gets both. The study measures how much of the
//! withheld trigger the latent field recovers (correlation of unit means)
//! and how the three models rank by pixel AUC.
//!
//! Usage: `cargo run --example trigger_recovery
//!             [seeds] [width] [height] [units] [amplitude] [decay] [sigma0] [beta0]`

use lgcp::error::Result;
use lgcp::inference::FitOptions;
use lgcp::simulate::{recovery_experiment, RecoveryReport, SimulationConfig, TriggerConfig};
use rayon::prelude::*;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let mut next = |default: f64| -> f64 {
        args.next().map(|s| s.parse().expect("numeric argument")).unwrap_or(default)
    };
    let seeds = next(20.0) as u64;
    let width = next(50.0) as usize;
    let height = next(50.0) as usize;
    let units = next(150.0) as usize;
    let amplitude = next(2.5);
    let decay = next(12.0);
    let sigma0 = next(0.4);
    let beta0 = next(-2.5);

    let base = SimulationConfig {
        width,
        height,
        n_units: units,
        beta0,
        beta: vec![],
        sigma0,
        trigger: Some(TriggerConfig { amplitude, decay, bumps: 0, bump_amplitude: 0.0 }),
        seed: 20260814,
    };

    let start = std::time::Instant::now();
    let reports: Vec<(u64, RecoveryReport)> = (0..seeds)
        .into_par_iter()
        .map(|r| Ok((r, recovery_experiment(&base.replicate(r), &FitOptions::default())?)))
        .collect::<Result<_>>()?;
    let elapsed = start.elapsed();

    println!(
        "{:>4}  {:>6}  {:>12} {:>9} {:>9} {:>9}  {:>9}",
        "rep", "corr", "auc_trigger", "auc_lse", "auc_both", "both-lse", "coverage"
    );
    for (r, rep) in &reports {
        println!(
            "{r:>4}  {:>6.3}  {:>12.4} {:>9.4} {:>9.4} {:>+9.4}  {:>9.3}",
            rep.correlation.unwrap_or(f64::NAN),
            rep.auc_trigger_only,
            rep.auc_lse_only,
            rep.auc_both,
            rep.auc_both - rep.auc_lse_only,
            rep.coverage,
        );
    }

    let corr_ok =
        reports.iter().filter(|(_, r)| r.correlation.unwrap_or(0.0) >= 0.7).count();
    let order_ok =
        reports.iter().filter(|(_, r)| r.auc_lse_only >= r.auc_trigger_only).count();
    let max_gain = reports
        .iter()
        .map(|(_, r)| r.auc_both - r.auc_lse_only)
        .fold(f64::NEG_INFINITY, f64::max);
    println!("\ncorrelation >= 0.7 in {corr_ok}/{seeds} replicates");
    println!("latent-only AUC >= trigger-only AUC in {order_ok}/{seeds} replicates");
    println!("largest AUC gain from adding the trigger to the latent model: {max_gain:+.5}");
    println!("elapsed: {elapsed:.2?}");
    Ok(())
}
