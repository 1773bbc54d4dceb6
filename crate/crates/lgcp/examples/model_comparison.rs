//! Three-way model comparison on one simulated dataset: a model that sees
//! the trigger covariate, a model that only has the latent spatial effect,
//! and a model with both. The latent field absorbs the withheld trigger, so
//! the trigger adds almost nothing once the field is in the model.
//!
//! Usage: `cargo run --example model_comparison`

use lgcp::error::Result;
use lgcp::inference::FitOptions;
use lgcp::simulate::{recovery_experiment, SimulationConfig, TriggerConfig};

fn main() -> Result<()> {
    let config = SimulationConfig {
        width: 50,
        height: 50,
        n_units: 150,
        beta0: -2.5,
        beta: vec![],
        sigma0: 0.4,
        trigger: Some(TriggerConfig {
            amplitude: 2.5,
            decay: 12.0,
            bumps: 0,
            bump_amplitude: 0.0,
        }),
        seed: 20260814,
    };
    let report = recovery_experiment(&config, &FitOptions::default())?;

    println!("model                    pixel AUC");
    println!("trigger only             {:.4}", report.auc_trigger_only);
    println!("latent field only        {:.4}", report.auc_lse_only);
    println!("trigger + latent field   {:.4}", report.auc_both);
    println!(
        "\nunit-level correlation of the latent field with the withheld trigger: {:.3}",
        report.correlation.expect("trigger surface varies")
    );
    println!(
        "truth coverage of the latent 95% intervals (trigger seen): {:.1}%",
        100.0 * report.coverage
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
