//! K-fold cross-validation of the intensity model, with both random pixel
//! folds and unit-blocked folds (whole mapping units held out together —
//! the honest test when predictions are read per unit).
//!
//! Usage: `cargo run --example cross_validation`

use lgcp::error::Result;
use lgcp::ingest::{build_adjacency, MappingPartition};
use lgcp::metrics::{kfold_split, kfold_split_blocked, run_cv, CvOptions, CvPlan};
use lgcp::model::ModelSpec;
use lgcp::simulate::{simulate_lgcp, SimulationConfig};

fn main() -> Result<()> {
    let config = SimulationConfig {
        width: 40,
        height: 30,
        n_units: 15,
        beta0: -1.0,
        beta: vec![("relief".to_string(), 0.7)],
        sigma0: 0.5,
        trigger: None,
        seed: 31,
    };
    let dataset = simulate_lgcp(&config)?;
    let table = &dataset.table;
    let partition = MappingPartition::from_table(table, "unit")?;
    let graph = build_adjacency(table, &partition, 1)?;
    let spec = ModelSpec {
        intercept: true,
        linear_effects: vec!["relief".to_string()],
        besag_partition: Some("unit".to_string()),
        ..Default::default()
    };

    let random_plan = kfold_split(table.n_pixels(), 5, 42)?;
    let blocked_plan = kfold_split_blocked(&partition, 5, 42)?;
    for (label, plan) in
        [("random pixel folds", random_plan), ("unit-blocked folds", blocked_plan)]
    {
        let plan: CvPlan = plan;
        let report = run_cv(
            &spec,
            table,
            Some((&partition, &graph)),
            &plan,
            &CvOptions::default(),
        )?;
        println!("== {label} (k = {}) ==", plan.k);
        println!("in-sample pixel AUC:      {:.4}", report.in_sample_auc);
        println!("pooled out-of-sample AUC: {:.4}", report.pooled_auc);
        println!(
            "per-fold AUC range:       [{:.4}, {:.4}]",
            report.min_auc.unwrap(),
            report.max_auc.unwrap()
        );
        println!("all metric rows:");
        println!("  {:<8} {:<10} {:<10} {:>10}", "metric", "partition", "fold", "value");
        for row in &report.rows {
            println!(
                "  {:<8} {:<10} {:<10} {:>10.4}",
                row.metric, row.partition, row.fold, row.value
            );
        }
        for w in &report.warnings {
            println!("warning: {w}");
        }
        println!();
    }
    Ok(())
}
