//! Release acceptance gate.
//!
//! Each test exercises one shipping criterion end-to-end against an
//! independent oracle (closed forms, dense eigendecompositions, brute-force
//! enumeration, high-resolution quadrature, or Monte Carlo) and prints one
//! `ACCEPTANCE <nn> <name>: PASS` line on success. A failing criterion
//! shows up as the corresponding failed test. Every check is deterministic:
//! fixed seeds, fixed sizes, fixed tolerances.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Poisson};
use rayon::prelude::*;

use lgcp::error::Result;
use lgcp::gmrf::{besag_structure, rw1_structure, scale_structure, StructureMatrix};
use lgcp::inference::{gaussian_approximation, optimize_theta, FitOptions};
use lgcp::ingest::{build_adjacency, AdjacencyGraph, MappingPartition, PixelTable};
use lgcp::metrics::{
    count_labels, kfold_split, kfold_split_blocked, r2_counts, rce_counts, roc_auc, run_cv,
    CvOptions,
};
use lgcp::model::{AssembledModel, ModelSpec};
use lgcp::predict::{aggregate_intensity, intensity_from_eta, susceptibility, Estimator};
use lgcp::simulate::{
    brute_force_auc, recovery_experiment, simulate_lgcp, RecoveryReport, SimulationConfig,
    TriggerConfig,
};

/// Stamp a criterion as passed, enforcing its wall-clock budget.
fn pass(n: usize, name: &str, started: Instant, budget_s: f64) {
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed <= budget_s,
        "criterion {n} ({name}) took {elapsed:.1}s, budget {budget_s}s"
    );
    println!("ACCEPTANCE {n:>2} {name}: PASS ({elapsed:.2}s)");
}

/// Random connected graph: a spanning tree plus extra edges.
fn random_connected_edges(n: usize, rng: &mut ChaCha8Rng) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.insert((j, i));
    }
    for _ in 0..n / 2 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    edges
}

// ---------------------------------------------------------------------------
// 1. Susceptibility is 1 - exp(-lambda), and it predicts the Monte-Carlo
//    frequency of at-least-one-event under Poisson sampling.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_susceptibility_identity_and_monte_carlo() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let draws = 100_000u32;
    for case in 0..1000 {
        let lambda: f64 = rng.gen_range(0.05..4.0);
        let s = susceptibility(lambda).unwrap();
        assert!(
            (s - (1.0 - (-lambda).exp())).abs() <= 1e-12,
            "identity violated at lambda {lambda}"
        );
        let dist = Poisson::new(lambda).unwrap();
        let mut at_least_one = 0u32;
        for _ in 0..draws {
            let draw: f64 = dist.sample(&mut rng);
            if draw >= 1.0 {
                at_least_one += 1;
            }
        }
        let freq = f64::from(at_least_one) / f64::from(draws);
        let se = (s * (1.0 - s) / f64::from(draws)).sqrt();
        assert!(
            (freq - s).abs() <= 3.0 * se,
            "case {case}: lambda {lambda}, frequency {freq} vs susceptibility {s} (3se {})",
            3.0 * se
        );
    }
    pass(1, "susceptibility-identity-and-monte-carlo", t0, 10.0);
}

// ---------------------------------------------------------------------------
// 2. The per-unit structure matrix encodes the neighborhood conditional law:
//    mean = neighbor average, variance = 1 / (tau * degree).
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_besag_full_conditionals_match_closed_form() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let n = rng.gen_range(3..40);
        let edges = random_connected_edges(n, &mut rng);
        let graph = AdjacencyGraph::from_edges(n, edges.clone());
        let q = besag_structure(&graph).unwrap().to_dense();
        let tau: f64 = rng.gen_range(0.2..5.0);
        let x = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-2.0..2.0)));

        for i in 0..n {
            let neighbors: Vec<usize> = edges
                .iter()
                .filter_map(|&(a, b)| {
                    if a == i {
                        Some(b)
                    } else if b == i {
                        Some(a)
                    } else {
                        None
                    }
                })
                .collect();
            let degree = neighbors.len() as f64;
            let closed_mean = neighbors.iter().map(|&j| x[j]).sum::<f64>() / degree;
            let closed_var = 1.0 / (tau * degree);

            // From the matrix: E[x_i | rest] = x_i - (Qx)_i / Q_ii,
            // Var[x_i | rest] = 1 / (tau Q_ii).
            let qx_i: f64 = (0..n).map(|j| q[(i, j)] * x[j]).sum();
            let matrix_mean = x[i] - qx_i / q[(i, i)];
            let matrix_var = 1.0 / (tau * q[(i, i)]);
            assert!(
                (matrix_mean - closed_mean).abs() <= 1e-12,
                "conditional mean: {matrix_mean} vs {closed_mean}"
            );
            assert!(
                (matrix_var - closed_var).abs() <= 1e-12,
                "conditional variance: {matrix_var} vs {closed_var}"
            );
        }
    }
    pass(2, "besag-conditional-law", t0, 5.0);
}

// ---------------------------------------------------------------------------
// 3. After scaling, the geometric mean of the constrained marginal variances
//    is 1, certified by a dense eigendecomposition oracle.
// ---------------------------------------------------------------------------

/// Marginal variances of the intrinsic field under its sum-to-zero
/// constraint: diagonal of the eigendecomposition pseudo-inverse.
fn eigen_oracle_variances(s: &StructureMatrix, n: usize) -> Vec<f64> {
    let eig = nalgebra::SymmetricEigen::new(s.to_dense());
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut null_count = 0;
    let mut var = vec![0.0; n];
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= 1e-9 * max_eig {
            null_count += 1;
            continue;
        }
        for (i, v) in var.iter_mut().enumerate() {
            let e = eig.eigenvectors[(i, k)];
            *v += e * e / lam;
        }
    }
    assert_eq!(null_count, 1, "one constraint, one null eigenvalue");
    var
}

#[test]
fn criterion_03_scaled_structures_have_unit_geometric_mean_variance() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut check = |scaled: &StructureMatrix, n: usize| {
        let var = eigen_oracle_variances(scaled, n);
        let log_gm = var.iter().map(|v| v.ln()).sum::<f64>() / n as f64;
        let gm = log_gm.exp();
        assert!((gm - 1.0).abs() <= 1e-8, "geometric mean variance {gm} on {n} nodes");
    };
    for &n in &[5usize, 17, 41, 88, 137, 200] {
        let graph = AdjacencyGraph::from_edges(n, random_connected_edges(n, &mut rng));
        let scaled = scale_structure(&besag_structure(&graph).unwrap()).unwrap();
        check(&scaled, n);
    }
    for &k in &[2usize, 3, 20, 77, 200] {
        let scaled = scale_structure(&rw1_structure(k).unwrap()).unwrap();
        check(&scaled, k);
    }
    pass(3, "unit-geometric-mean-scaling", t0, 30.0);
}

// ---------------------------------------------------------------------------
// 4. The Laplace log marginal likelihood and latent means track a
//    high-resolution quadrature oracle across a hyperparameter sweep, on
//    models with one and two free latent dimensions.
// ---------------------------------------------------------------------------

const LN_2PI: f64 = 1.8378770664093453;

/// 10-point Gauss-Legendre nodes (positive half) and weights on [-1, 1].
const GL_NODES: [(f64, f64); 5] = [
    (0.148_874_338_981_631_2, 0.295_524_224_714_752_9),
    (0.433_395_394_129_247_2, 0.269_266_719_309_996_3),
    (0.679_409_568_299_024_4, 0.219_086_362_515_982_0),
    (0.865_063_366_688_984_5, 0.149_451_349_150_580_6),
    (0.973_906_528_517_171_7, 0.066_671_344_308_688_14),
];

fn gl_points(lo: f64, hi: f64, panels: usize) -> Vec<(f64, f64)> {
    let width = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * 10);
    for p in 0..panels {
        let (a, b) = (lo + p as f64 * width, lo + (p + 1) as f64 * width);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for &(x, w) in &GL_NODES {
            out.push((mid - half * x, half * w));
            out.push((mid + half * x, half * w));
        }
    }
    out
}

/// Orthonormal basis of the subspace satisfying the sum-to-zero constraints
/// (columns); identity when there are no constraints.
fn feasible_basis(n: usize, constraints: &[DVector<f64>]) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..n {
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        for c in constraints {
            let u = c.normalize();
            let d = u.dot(&v);
            v -= u * d;
        }
        for b in &cols {
            let d = b.dot(&v);
            v -= b * d;
        }
        if v.norm() > 1e-8 {
            cols.push(v.normalize());
        }
    }
    DMatrix::from_columns(&cols)
}

struct TinyModel {
    model: AssembledModel,
    basis: DMatrix<f64>,
}

/// Two adjacent mapping units, thirty pixels each, latent field only.
/// One free latent dimension (two coordinates under a sum-to-zero
/// constraint), one hyperparameter. Per-unit totals are 36 and 30 events,
/// so the free coordinate is well informed and its posterior skew is mild.
fn tiny_spatial_model() -> TinyModel {
    let per_unit = 30usize;
    let pattern_a = [1u64, 2, 1, 0, 2, 1, 1, 2, 0, 2];
    let pattern_b = [1u64, 1, 0, 2, 1, 0, 1, 1, 2, 1];
    let counts: Vec<u64> = (0..per_unit)
        .map(|i| pattern_a[i % 10])
        .chain((0..per_unit).map(|i| pattern_b[i % 10]))
        .collect();
    let table = PixelTable::from_columns(
        (0..2 * per_unit as u64).collect(),
        (0..per_unit as i64).chain(0..per_unit as i64).collect(),
        std::iter::repeat(0i64)
            .take(per_unit)
            .chain(std::iter::repeat(1i64).take(per_unit))
            .collect(),
        counts,
        vec![],
        vec![],
        vec![(
            "unit".to_string(),
            std::iter::repeat(0u64)
                .take(per_unit)
                .chain(std::iter::repeat(1u64).take(per_unit))
                .collect(),
        )],
    )
    .unwrap();
    let partition = MappingPartition::from_table(&table, "unit").unwrap();
    let graph = build_adjacency(&table, &partition, 1).unwrap();
    let spec = ModelSpec {
        intercept: false,
        besag_partition: Some("unit".to_string()),
        ..Default::default()
    };
    let model = AssembledModel::assemble(spec, &table, Some((&partition, &graph))).unwrap();
    let basis = feasible_basis(model.layout.n_latent, &model.constraint_rows);
    assert_eq!(basis.ncols(), 1);
    TinyModel { model, basis }
}

/// Two exchangeable group effects, four pixels each: two free latent
/// dimensions (no constraint), one hyperparameter. Group totals are 50 and
/// 58 events, keeping posterior skew mild.
fn tiny_grouped_model() -> TinyModel {
    let table = PixelTable::from_columns(
        (0..8).collect(),
        vec![0, 1, 2, 3, 0, 1, 2, 3],
        vec![0, 0, 0, 0, 1, 1, 1, 1],
        vec![11, 13, 12, 14, 16, 14, 15, 13],
        vec![],
        vec![(
            "g".to_string(),
            ["a", "a", "a", "a", "b", "b", "b", "b"].iter().map(|s| s.to_string()).collect(),
        )],
        vec![],
    )
    .unwrap();
    let spec = ModelSpec {
        intercept: false,
        iid_effects: vec!["g".to_string()],
        ..Default::default()
    };
    let model = AssembledModel::assemble(spec, &table, None).unwrap();
    let basis = feasible_basis(model.layout.n_latent, &model.constraint_rows);
    assert_eq!(basis.ncols(), 2);
    TinyModel { model, basis }
}

/// Quadrature oracle: log p(counts | theta) and posterior latent mean at a
/// fixed hyperparameter, integrating the exact un-normalized posterior over
/// the feasible subspace with composite Gauss-Legendre after standardizing
/// at the conditional mode.
fn quadrature_log_marginal(tiny: &TinyModel, theta: f64) -> (f64, DVector<f64>) {
    let model = &tiny.model;
    let basis = &tiny.basis;
    let d = basis.ncols();
    let n_latent = basis.nrows();

    // Prior scale matrix on the subspace: M = B' S B for the (single)
    // random-block structure embedded over the full latent vector.
    let mut s = DMatrix::zeros(n_latent, n_latent);
    let block = &model.layout.blocks[model.random_blocks[0].block_index];
    model.random_blocks[0].structure.add_to_dense(&mut s, block.offset, 1.0);
    let m = basis.transpose() * &s * basis;
    let log_det_m = m
        .clone()
        .cholesky()
        .expect("subspace prior scale is positive definite")
        .l()
        .diagonal()
        .iter()
        .map(|v| 2.0 * v.ln())
        .sum::<f64>();
    let log_fact = model.log_factorial_counts();
    let tau = theta.exp();

    // Complete log integrand over subspace coordinates t, including the
    // intrinsic prior's normalization on the subspace.
    let log_g = |t: &DVector<f64>| -> f64 {
        let x = basis * t;
        let eta = model.design.mul_vec(&x);
        let mut ll = -log_fact;
        for (i, &y) in model.counts.iter().enumerate() {
            ll += y as f64 * eta[i] - eta[i].exp();
        }
        let quad = (&m * t).dot(t);
        ll + 0.5 * d as f64 * (theta - LN_2PI) + 0.5 * log_det_m - 0.5 * tau * quad
    };

    // Conditional mode and curvature for standardization.
    let mut mode: DVector<f64> = DVector::zeros(d);
    let mut curvature = DMatrix::zeros(d, d);
    for iteration in 0..200 {
        let x = basis * &mode;
        let eta = model.design.mul_vec(&x);
        let mu = eta.map(f64::exp);
        let resid = DVector::from_iterator(
            model.counts.len(),
            model.counts.iter().zip(mu.iter()).map(|(&y, &mu_i)| y as f64 - mu_i),
        );
        let grad = basis.transpose() * model.design.tr_mul_vec(&resid) - tau * (&m * &mode);
        let gram = model.design.weighted_gram(&mu);
        curvature = basis.transpose() * &gram * basis + tau * &m;
        let step = curvature
            .clone()
            .cholesky()
            .expect("negative Hessian is positive definite")
            .solve(&grad);
        mode += &step;
        if step.amax() < 1e-12 {
            break;
        }
        assert!(iteration < 199, "oracle mode search did not converge");
    }
    let cov = curvature.try_inverse().expect("curvature invertible");
    let scale: Vec<f64> = (0..d).map(|k| cov[(k, k)].sqrt()).collect();

    // Composite Gauss-Legendre over +-10 standardized units per dimension.
    let g0 = log_g(&mode);
    let points = gl_points(-10.0, 10.0, 40);
    let mut mass = 0.0;
    let mut first = vec![0.0; d];
    let mut t = DVector::zeros(d);
    if d == 1 {
        for &(z, w) in &points {
            t[0] = mode[0] + scale[0] * z;
            let f = (log_g(&t) - g0).exp() * w * scale[0];
            mass += f;
            first[0] += f * t[0];
        }
    } else {
        for &(z0, w0) in &points {
            t[0] = mode[0] + scale[0] * z0;
            for &(z1, w1) in &points {
                t[1] = mode[1] + scale[1] * z1;
                let f = (log_g(&t) - g0).exp() * w0 * w1 * scale[0] * scale[1];
                mass += f;
                first[0] += f * t[0];
                first[1] += f * t[1];
            }
        }
    }
    let mean_t = DVector::from_iterator(d, first.iter().map(|v| v / mass));
    (g0 + mass.ln(), basis * mean_t)
}

#[test]
fn criterion_04_laplace_matches_quadrature_across_hyperparameters() {
    let t0 = Instant::now();
    for (label, tiny) in
        [("1-dim spatial", tiny_spatial_model()), ("2-dim grouped", tiny_grouped_model())]
    {
        let theta_hat = optimize_theta(&tiny.model, &[0.0]).unwrap()[0];
        for k in 0..11 {
            let theta = theta_hat - 2.5 + 0.5 * k as f64;
            let approx = gaussian_approximation(&tiny.model, &[theta], None).unwrap();
            let (truth, mean_x) = quadrature_log_marginal(&tiny, theta);
            let gap = (approx.log_marginal - truth).abs();
            assert!(
                gap <= 0.05,
                "{label}: log marginal off by {gap:.4} at theta {theta:.2} \
                 (laplace {}, quadrature {truth})",
                approx.log_marginal
            );
            // Every observed count is >= 5, so the mild-skew mean check
            // applies to every latent coordinate.
            for j in 0..tiny.model.layout.n_latent {
                let diff = (approx.mode[j] - mean_x[j]).abs();
                assert!(
                    diff <= 0.02,
                    "{label}: latent mean {j} off by {diff:.4} at theta {theta:.2}"
                );
            }
        }
    }
    pass(4, "laplace-vs-quadrature", t0, 60.0);
}

// ---------------------------------------------------------------------------
// 5. Rank-based AUC equals pairwise enumeration exactly, ties included.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_auc_equals_brute_force_enumeration() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let n = rng.gen_range(2..=200);
        // Coarse score grid forces heavy tying.
        let scores: Vec<f64> = (0..n).map(|_| 0.5 * rng.gen_range(0..6) as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[n - 1] = false;
        let fast = roc_auc(&scores, &labels).unwrap().auc;
        let slow = brute_force_auc(&scores, &labels).unwrap();
        assert!(fast == slow, "case {case}: rank AUC {fast} != enumerated AUC {slow}");
    }
    pass(5, "auc-exact-vs-brute-force", t0, 5.0);
}

// ---------------------------------------------------------------------------
// 6. Count-metric identities: perfect predictions score 1, all-zero
//    predictions score 0 on relative count error, and the documented worked
//    example evaluates to exactly 0.75.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_metric_identities_and_worked_example() {
    let t0 = Instant::now();
    let observed = [3.0, 0.0, 4.0, 1.0, 7.0, 2.0];
    assert_eq!(r2_counts(&observed, &observed).unwrap(), 1.0);
    assert_eq!(rce_counts(&observed, &observed).unwrap(), 1.0);
    assert_eq!(rce_counts(&observed, &[0.0; 6]).unwrap(), 0.0);
    assert_eq!(r2_counts(&[0.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 0.75);
    pass(6, "count-metric-identities", t0, 5.0);
}

// ---------------------------------------------------------------------------
// 7. Twenty-seed recovery study: with the trigger surface withheld, the
//    latent spatial effect reconstructs it (unit-level correlation), the
//    latent-only model outranks the trigger-only model on pixel AUC, and
//    adding the trigger back on top of the latent field buys at most 0.005.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_trigger_recovery_study() {
    let t0 = Instant::now();
    let base = SimulationConfig {
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
    let reports: Vec<RecoveryReport> = (0..20u64)
        .into_par_iter()
        .map(|r| recovery_experiment(&base.replicate(r), &FitOptions::default()))
        .collect::<Result<_>>()
        .unwrap();

    let corr_ok = reports
        .iter()
        .filter(|r| r.correlation.expect("trigger varies") >= 0.7)
        .count();
    assert!(corr_ok >= 16, "latent-trigger correlation >= 0.7 in only {corr_ok}/20");

    let order_ok =
        reports.iter().filter(|r| r.auc_lse_only >= r.auc_trigger_only).count();
    assert!(order_ok >= 16, "latent-only AUC won in only {order_ok}/20");

    let max_gain = reports
        .iter()
        .map(|r| r.auc_both - r.auc_lse_only)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        max_gain <= 0.005,
        "adding the trigger to the latent model gained {max_gain:.4} AUC"
    );
    pass(7, "trigger-recovery-study", t0, 900.0);
}

// ---------------------------------------------------------------------------
// 8. Every synthetic fit with an intercept matches the observed event total
//    within 10%.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_fitted_totals_track_observed_totals() {
    let t0 = Instant::now();
    let cases: Vec<SimulationConfig> = vec![
        SimulationConfig {
            width: 24,
            height: 20,
            n_units: 10,
            beta0: -0.8,
            beta: vec![("relief".to_string(), 0.7)],
            sigma0: 0.6,
            trigger: None,
            seed: 101,
        },
        SimulationConfig {
            width: 30,
            height: 24,
            n_units: 12,
            beta0: -1.5,
            beta: vec![("relief".to_string(), 0.5)],
            sigma0: 0.5,
            trigger: Some(TriggerConfig {
                amplitude: 1.5,
                decay: 6.0,
                bumps: 2,
                bump_amplitude: 0.8,
            }),
            seed: 102,
        },
        SimulationConfig {
            width: 20,
            height: 20,
            n_units: 8,
            beta0: -0.3,
            beta: vec![],
            sigma0: 0.8,
            trigger: None,
            seed: 103,
        },
        SimulationConfig {
            width: 40,
            height: 30,
            n_units: 20,
            beta0: -2.0,
            beta: vec![("relief".to_string(), -0.6)],
            sigma0: 0.4,
            trigger: None,
            seed: 104,
        },
    ];
    for config in &cases {
        let dataset = simulate_lgcp(config).unwrap();
        let table = &dataset.table;
        let partition = MappingPartition::from_table(table, "unit").unwrap();
        let graph = build_adjacency(table, &partition, 1).unwrap();
        let spec = ModelSpec {
            intercept: true,
            linear_effects: config.beta.iter().map(|(n, _)| n.clone()).collect(),
            besag_partition: Some("unit".to_string()),
            ..Default::default()
        };
        let (_, result, _) = lgcp::inference::fit_standardized(
            &spec,
            table,
            Some((&partition, &graph)),
            &FitOptions::default(),
        )
        .unwrap();
        let fitted: f64 =
            intensity_from_eta(&result.eta, Estimator::LognormalMean).lambda.iter().sum();
        let observed = table.total_count() as f64;
        let ratio = (fitted - observed).abs() / observed;
        assert!(
            ratio <= 0.10,
            "seed {}: fitted total {fitted:.1} vs observed {observed} (off {ratio:.3})",
            config.seed
        );
    }
    pass(8, "fitted-total-calibration", t0, 120.0);
}

// ---------------------------------------------------------------------------
// 9. Cross-validation harness: folds partition the data, the pooled
//    out-of-sample AUC lies between the per-fold extremes, and the whole
//    procedure is deterministic under a fixed seed.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_cv_folds_partition_and_pooled_auc_is_bracketed() {
    let t0 = Instant::now();

    // Fold structure: complementary (every pixel assigned) and disjoint
    // (exactly one fold per pixel), with balanced sizes.
    for &(n, k, seed) in &[(101usize, 7usize, 3u64), (1000, 10, 1), (12, 3, 9)] {
        let plan = kfold_split(n, k, seed).unwrap();
        assert_eq!(plan.fold_of.len(), n);
        let mut sizes = vec![0usize; k];
        for &f in &plan.fold_of {
            assert!(f < k);
            sizes[f] += 1;
        }
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(*lo >= 1 && hi - lo <= 1, "fold sizes {sizes:?}");
        let again = kfold_split(n, k, seed).unwrap();
        assert_eq!(plan.fold_of, again.fold_of, "fold assignment not deterministic");
    }

    // Synthetic study: pooled out-of-sample AUC bracketed by fold extremes.
    let config = SimulationConfig {
        width: 30,
        height: 24,
        n_units: 12,
        beta0: -1.0,
        beta: vec![("relief".to_string(), 0.6)],
        sigma0: 0.5,
        trigger: None,
        seed: 77,
    };
    let dataset = simulate_lgcp(&config).unwrap();
    let table = &dataset.table;
    let partition = MappingPartition::from_table(table, "unit").unwrap();
    let graph = build_adjacency(table, &partition, 1).unwrap();

    // Unit-blocked folds keep mapping units intact.
    let blocked = kfold_split_blocked(&partition, 3, 5).unwrap();
    for unit in 0..partition.n_units() {
        let folds: BTreeSet<usize> = table
            .partition_column("unit")
            .unwrap()
            .iter()
            .zip(&blocked.fold_of)
            .filter(|(&u, _)| u == unit as u64)
            .map(|(_, &f)| f)
            .collect();
        assert_eq!(folds.len(), 1, "unit {unit} split across folds {folds:?}");
    }

    let spec = ModelSpec {
        intercept: true,
        linear_effects: vec!["relief".to_string()],
        besag_partition: Some("unit".to_string()),
        ..Default::default()
    };
    let plan = kfold_split(table.n_pixels(), 5, 31).unwrap();
    let options = CvOptions::default();
    let report =
        run_cv(&spec, table, Some((&partition, &graph)), &plan, &options).unwrap();
    let (lo, hi) = (report.min_auc.unwrap(), report.max_auc.unwrap());
    assert!(
        lo <= report.pooled_auc && report.pooled_auc <= hi,
        "pooled AUC {} outside fold extremes [{lo}, {hi}]",
        report.pooled_auc
    );

    // Determinism: bitwise-identical metric rows on a rerun.
    let rerun = run_cv(&spec, table, Some((&partition, &graph)), &plan, &options).unwrap();
    assert_eq!(report.rows.len(), rerun.rows.len());
    for (a, b) in report.rows.iter().zip(&rerun.rows) {
        assert_eq!(
            (&a.metric, &a.partition, &a.fold, a.value.to_bits()),
            (&b.metric, &b.partition, &b.fold, b.value.to_bits())
        );
    }
    pass(9, "cv-partition-bracketing-determinism", t0, 300.0);
}

// ---------------------------------------------------------------------------
// 10. Aggregating pixel intensity through nested partitions preserves the
//     total, and unit susceptibility equals the pixel-product identity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_nested_aggregation_and_susceptibility_identity() {
    let t0 = Instant::now();
    let config = SimulationConfig {
        width: 36,
        height: 30,
        n_units: 27,
        beta0: -1.2,
        beta: vec![("relief".to_string(), 0.6)],
        sigma0: 0.5,
        trigger: None,
        seed: 4242,
    };
    let dataset = simulate_lgcp(&config).unwrap();
    let base = &dataset.table;
    let units = base.partition_column("unit").unwrap().to_vec();

    // Nested levels: 27 units -> 9 catchments -> 3 admin regions.
    let table = PixelTable::from_columns(
        base.pixel_ids.clone(),
        base.x.clone(),
        base.y.clone(),
        base.counts.clone(),
        vec![("relief".to_string(), base.continuous("relief").unwrap().to_vec())],
        vec![],
        vec![
            ("unit".to_string(), units.clone()),
            ("catchment".to_string(), units.iter().map(|u| u / 3).collect()),
            ("admin".to_string(), units.iter().map(|u| u / 9).collect()),
        ],
    )
    .unwrap();
    let partition = MappingPartition::from_table(&table, "unit").unwrap();
    let graph = build_adjacency(&table, &partition, 1).unwrap();
    let spec = ModelSpec {
        intercept: true,
        linear_effects: vec!["relief".to_string()],
        besag_partition: Some("unit".to_string()),
        ..Default::default()
    };
    let (_, result, _) = lgcp::inference::fit_standardized(
        &spec,
        &table,
        Some((&partition, &graph)),
        &FitOptions::default(),
    )
    .unwrap();
    let surface = intensity_from_eta(&result.eta, Estimator::LognormalMean);
    let pixel_total: f64 = surface.lambda.iter().sum();

    let mut level_lambda: Vec<(String, Vec<u64>, Vec<f64>)> = Vec::new();
    for level in ["unit", "catchment", "admin"] {
        let part = MappingPartition::from_table(&table, level).unwrap();
        let agg = aggregate_intensity(&surface, &part, &table.counts).unwrap();

        // Total intensity is preserved at every level.
        let total: f64 = agg.lambda.iter().sum();
        assert!(
            (total - pixel_total).abs() <= 1e-9 * pixel_total,
            "{level}: total {total} vs pixel total {pixel_total}"
        );

        // Susceptibility equals the pixel-product identity.
        let column = table.partition_column(level).unwrap();
        for (u, &unit_id) in agg.unit_ids.iter().enumerate() {
            let mut product = 1.0;
            for (i, &cell) in column.iter().enumerate() {
                if cell == unit_id {
                    product *= 1.0 - susceptibility(surface.lambda[i]).unwrap();
                }
            }
            let identity = 1.0 - product;
            assert!(
                (agg.susceptibility[u] - identity).abs() <= 1e-12,
                "{level} unit {unit_id}: susceptibility {} vs pixel product {identity}",
                agg.susceptibility[u]
            );
        }
        level_lambda.push((level.to_string(), agg.unit_ids, agg.lambda));
    }

    // Child sums reproduce each parent exactly (nesting).
    let (_, unit_ids, unit_lambda) = &level_lambda[0];
    for (parent_level, divisor) in [(1usize, 3u64), (2, 9)] {
        let (name, parent_ids, parent_lambda) = &level_lambda[parent_level];
        for (p, &pid) in parent_ids.iter().enumerate() {
            let child_sum: f64 = unit_ids
                .iter()
                .zip(unit_lambda)
                .filter(|(&u, _)| u / divisor == pid)
                .map(|(_, &l)| l)
                .sum();
            assert!(
                (child_sum - parent_lambda[p]).abs() <= 1e-9 * parent_lambda[p].abs(),
                "{name} {pid}: child sum {child_sum} vs {}",
                parent_lambda[p]
            );
        }
    }
    pass(10, "nested-aggregation-consistency", t0, 120.0);
}
