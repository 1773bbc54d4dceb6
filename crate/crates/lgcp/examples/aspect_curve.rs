//! Recover a directional (aspect) effect from its sine/cosine encoding.
//!
//! The truth adds `A * cos(angle - peak)` to the log intensity. Fitting the
//! two linear covariates `eastness = sin(angle)`, `northness = cos(angle)`
//! and combining their joint posterior yields the full directional curve
//! with a 95% band, evaluated here against the known truth.
//!
//! Usage: `cargo run --example aspect_curve`

use lgcp::error::Result;
use lgcp::inference::{fit, FitOptions};
use lgcp::ingest::PixelTable;
use lgcp::model::{AssembledModel, ModelSpec};
use lgcp::predict::aspect_effect_curve;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Poisson};

fn main() -> Result<()> {
    let (width, height) = (48usize, 36usize);
    let n = width * height;
    let amplitude = 0.8;
    let peak_deg = 200.0f64;
    let beta0 = -0.6;

    // Smoothly varying aspect angle over the grid.
    let angle: Vec<f64> = (0..n)
        .map(|i| {
            let (x, y) = ((i % width) as f64 / width as f64, (i / width) as f64 / height as f64);
            std::f64::consts::TAU * (x + 0.6 * y + 0.25 * (std::f64::consts::TAU * x).sin())
        })
        .collect();
    let eastness: Vec<f64> = angle.iter().map(|a| a.sin()).collect();
    let northness: Vec<f64> = angle.iter().map(|a| a.cos()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let counts: Vec<u64> = angle
        .iter()
        .map(|&a| {
            let eta = beta0 + amplitude * (a - peak_deg.to_radians()).cos();
            Poisson::new(eta.exp()).unwrap().sample(&mut rng) as u64
        })
        .collect();

    let table = PixelTable::from_columns(
        (0..n as u64).collect(),
        (0..n).map(|i| (i % width) as i64).collect(),
        (0..n).map(|i| (i / width) as i64).collect(),
        counts,
        vec![("eastness".to_string(), eastness), ("northness".to_string(), northness)],
        vec![],
        vec![],
    )?;
    let spec = ModelSpec {
        intercept: true,
        linear_effects: vec!["eastness".to_string(), "northness".to_string()],
        ..Default::default()
    };
    // Assemble on the natural covariate scale so the curve is directly
    // comparable with the simulation truth.
    let model = AssembledModel::assemble(spec, &table, None)?;
    let result = fit(&model, &FitOptions::default())?;
    let curve = aspect_effect_curve(&result, &model, "eastness", "northness")?;

    let best = curve
        .iter()
        .max_by(|a, b| a.effect.total_cmp(&b.effect))
        .expect("curve has 360 points");
    println!(
        "fitted peak direction {:.0} deg, amplitude {:.3}  (truth: {peak_deg:.0} deg, {amplitude})",
        best.degrees, best.effect
    );
    println!("\ndegrees  effect     95% band          truth");
    for point in curve.iter().step_by(30) {
        let truth = amplitude * (point.degrees.to_radians() - peak_deg.to_radians()).cos();
        println!(
            "{:>7.0}  {:+.3}  [{:+.3}, {:+.3}]   {truth:+.3}",
            point.degrees, point.effect, point.lo, point.hi
        );
    }
    Ok(())
}
