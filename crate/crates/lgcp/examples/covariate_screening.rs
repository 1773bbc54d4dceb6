//! Single-covariate screening: fit `intercept + candidate` for each
//! candidate column and rank candidates by the pixel AUC of the resulting
//! susceptibility surface. Covariates the truth actually uses should rank
//! above a pure-noise column, which should land near AUC 0.5.
//!
//! Usage: `cargo run --example covariate_screening`

use lgcp::error::Result;
use lgcp::inference::{fit_standardized, FitOptions};
use lgcp::ingest::PixelTable;
use lgcp::metrics::{count_labels, hosmer_class, roc_auc};
use lgcp::model::ModelSpec;
use lgcp::predict::{intensity_from_eta, susceptibility, Estimator};
use lgcp::simulate::{simulate_lgcp, SimulationConfig};
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    // Truth uses relief (strong) and wetness (weak); distance is pure noise.
    let config = SimulationConfig {
        width: 60,
        height: 50,
        n_units: 20,
        beta0: -1.5,
        beta: vec![("relief".to_string(), 0.9), ("wetness".to_string(), 0.3)],
        sigma0: 0.3,
        trigger: None,
        seed: 11,
    };
    let dataset = simulate_lgcp(&config)?;
    let base = &dataset.table;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise: Vec<f64> = (0..base.n_pixels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut continuous: Vec<(String, Vec<f64>)> = base
        .continuous_names()
        .map(|n| (n.to_string(), base.continuous(n).unwrap().to_vec()))
        .collect();
    continuous.push(("distance".to_string(), noise));
    let table = PixelTable::from_columns(
        base.pixel_ids.clone(),
        base.x.clone(),
        base.y.clone(),
        base.counts.clone(),
        continuous,
        vec![],
        vec![],
    )?;

    let labels = count_labels(&table.counts);
    let mut ranking: Vec<(String, f64)> = Vec::new();
    for candidate in ["relief", "wetness", "distance"] {
        let spec = ModelSpec {
            intercept: true,
            linear_effects: vec![candidate.to_string()],
            ..Default::default()
        };
        let (_, result, _) = fit_standardized(&spec, &table, None, &FitOptions::default())?;
        let surface = intensity_from_eta(&result.eta, Estimator::LognormalMean);
        let scores: Vec<f64> =
            surface.lambda.iter().map(|&l| susceptibility(l)).collect::<Result<_>>()?;
        ranking.push((candidate.to_string(), roc_auc(&scores, &labels)?.auc));
    }
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));

    println!("covariate     AUC     class");
    for (name, auc) in &ranking {
        println!("{name:<12}  {auc:.4}  {}", hosmer_class(*auc));
    }
    println!("\n(truth: relief 0.9, wetness 0.3, distance unused)");
    Ok(())
}
