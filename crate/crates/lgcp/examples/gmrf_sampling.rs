//! The latent-field toolbox on its own: build a neighborhood graph, form
//! the intrinsic structure matrix, scale it to unit typical variance, and
//! draw constrained samples. Empirical moments of many draws exhibit the
//! two defining properties: every draw sums to zero, and the geometric mean
//! of the marginal variances matches 1/tau.
//!
//! Usage: `cargo run --example gmrf_sampling`

use std::collections::BTreeSet;

use lgcp::error::Result;
use lgcp::gmrf::{besag_structure, sample_constrained, scale_structure};
use lgcp::ingest::AdjacencyGraph;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let n = 60;
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    // Random connected graph: spanning tree plus shortcuts.
    let mut edges = BTreeSet::new();
    for i in 1..n {
        edges.insert((rng.gen_range(0..i), i));
    }
    for _ in 0..n {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let graph = AdjacencyGraph::from_edges(n, edges);
    println!("graph: {n} nodes, {} edges, connected: {}", graph.edges.len(), graph.is_connected());

    let structure = besag_structure(&graph)?;
    let scaled = scale_structure(&structure)?;
    let variances = scaled.constrained_marginal_variances()?;
    let log_gm: f64 = variances.iter().map(|v| v.ln()).sum::<f64>() / n as f64;
    println!("geometric mean marginal variance after scaling: {:.12}", log_gm.exp());

    let tau = 4.0; // field standard deviation 0.5
    let draws = 4000;
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut max_constraint_violation = 0.0f64;
    for _ in 0..draws {
        let x = sample_constrained(&scaled, tau, &mut rng)?;
        max_constraint_violation = max_constraint_violation.max(x.sum().abs());
        for i in 0..n {
            sum[i] += x[i];
            sum_sq[i] += x[i] * x[i];
        }
    }
    let empirical_log_gm: f64 = (0..n)
        .map(|i| {
            let mean = sum[i] / draws as f64;
            (sum_sq[i] / draws as f64 - mean * mean).ln()
        })
        .sum::<f64>()
        / n as f64;
    println!("largest |sum of a draw| over {draws} draws: {max_constraint_violation:.2e}");
    println!(
        "empirical geometric mean variance: {:.4}  (target 1/tau = {:.4})",
        empirical_log_gm.exp(),
        1.0 / tau
    );
    Ok(())
}
