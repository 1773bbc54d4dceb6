//! Synthetic datasets with known ground truth, and slow-but-sure oracles.
//!
//! The simulator draws a complete dataset from the model family itself:
//! contiguous mapping units grown on the grid, smooth covariate surfaces, an
//! optional deterministic "trigger" surface (a radial decay plus local
//! amplification bumps), a latent spatial effect sampled from its prior, and
//! Poisson counts. Because every intermediate quantity is returned, fits can
//! be scored against the truth.
//!
//! The oracles are deliberately naive: full quadrature over tiny latent
//! spaces and an explicit pairwise loop for AUC. They exist to check the
//! fast paths, so they share no code with them.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom as _;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Poisson};

use crate::error::{Error, Result};
use crate::gmrf::{besag_structure, sample_constrained, scale_structure};
use crate::inference::{
    fit_standardized, lse_significance, optimize_theta, FitOptions, Significance,
};
use crate::ingest::{build_adjacency, AdjacencyGraph, MappingPartition, PixelTable};
use crate::metrics::{count_labels, roc_auc};
use crate::model::{AssembledModel, ModelSpec};
use crate::predict::{intensity_from_eta, Estimator};

/// Decorrelate seed streams with a SplitMix64-style finalizer. Stream `k` of
/// a master seed is `mix(master ^ mix(k + golden))`; replicate `r` of an
/// experiment runs on master seed `derive_seed(master, 1_000_000 + r)`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master ^ mix(stream.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

const STREAM_UNITS: u64 = 0;
const STREAM_LSE: u64 = 1;
const STREAM_COUNTS: u64 = 2;
const STREAM_TRIGGER: u64 = 3;
const STREAM_COVARIATE: u64 = 100;

/// Deterministic surface added to the linear predictor: a smooth radial
/// decay from a random epicenter, optionally roughened by smaller
/// amplification bumps.
#[derive(Debug, Clone)]
pub struct TriggerConfig {
    /// Peak height of the radial component (log-intensity units).
    pub amplitude: f64,
    /// Radial length scale, in pixel widths.
    pub decay: f64,
    pub bumps: usize,
    pub bump_amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub width: usize,
    pub height: usize,
    /// Mapping units, grown as contiguous regions.
    pub n_units: usize,
    pub beta0: f64,
    /// Named smooth covariates with their true coefficients.
    pub beta: Vec<(String, f64)>,
    /// Marginal standard deviation of the latent spatial effect.
    pub sigma0: f64,
    pub trigger: Option<TriggerConfig>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            width: 20,
            height: 20,
            n_units: 12,
            beta0: -1.0,
            beta: Vec::new(),
            sigma0: 1.0,
            trigger: None,
            seed: 1,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("grid dimensions must be positive".to_string()));
        }
        if self.n_units == 0 || self.n_units > n {
            return Err(Error::config(format!(
                "unit count {} must be between 1 and the pixel count {n}",
                self.n_units
            )));
        }
        if !(self.sigma0 >= 0.0) {
            return Err(Error::config(format!(
                "latent standard deviation must be >= 0, got {}",
                self.sigma0
            )));
        }
        if let Some(t) = &self.trigger {
            if !(t.decay > 0.0) {
                return Err(Error::config(format!(
                    "trigger decay scale must be positive, got {}",
                    t.decay
                )));
            }
        }
        Ok(())
    }

    /// Same scenario on replicate `r`'s derived seed.
    pub fn replicate(&self, r: u64) -> SimulationConfig {
        SimulationConfig { seed: derive_seed(self.seed, 1_000_000 + r), ..self.clone() }
    }
}

/// A drawn dataset plus everything needed to score a fit against the truth.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    /// Pixel table with counts, covariates, an optional `trigger` column,
    /// and the `unit` partition.
    pub table: PixelTable,
    /// True latent spatial effect per unit.
    pub latent: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Trigger surface per pixel (zeros when not configured).
    pub trigger: Vec<f64>,
}

/// Grow `k` contiguous regions by multi-source flood fill with a randomized
/// frontier: every pixel joins the unit of a neighbor, so units stay
/// connected.
fn grow_units(width: usize, height: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let n = width * height;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut unit: Vec<Option<usize>> = vec![None; n];
    let mut frontier: Vec<(usize, usize)> = Vec::new();

    let neighbors = |i: usize| {
        let (r, c) = (i / width, i % width);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(i - width);
        }
        if r + 1 < height {
            out.push(i + width);
        }
        if c > 0 {
            out.push(i - 1);
        }
        if c + 1 < width {
            out.push(i + 1);
        }
        out
    };

    for (u, &seed_pixel) in order.iter().take(k).enumerate() {
        unit[seed_pixel] = Some(u);
        for j in neighbors(seed_pixel) {
            frontier.push((j, u));
        }
    }
    while let Some(pick) = (!frontier.is_empty()).then(|| rng.gen_range(0..frontier.len())) {
        let (pixel, u) = frontier.swap_remove(pick);
        if unit[pixel].is_some() {
            continue;
        }
        unit[pixel] = Some(u);
        for j in neighbors(pixel) {
            if unit[j].is_none() {
                frontier.push((j, u));
            }
        }
    }
    unit.into_iter().map(|u| u.unwrap() as u64).collect()
}

/// Smooth random surface: a handful of plane waves, then standardized to
/// sample mean 0 and standard deviation 1.
fn smooth_field(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = width.max(height) as f64;
    let waves: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.gen_range(-2.5..2.5),
                rng.gen_range(-2.5..2.5),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.5..1.5),
            )
        })
        .collect();
    let mut field: Vec<f64> = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            waves
                .iter()
                .map(|&(kx, ky, phase, a)| {
                    a * (std::f64::consts::TAU * (kx * x + ky * y) / scale + phase).cos()
                })
                .sum()
        })
        .collect();
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let sd = (field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    for v in &mut field {
        *v = (*v - mean) / sd;
    }
    field
}

fn trigger_surface(
    width: usize,
    height: usize,
    config: &TriggerConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let gaussian = |cx: f64, cy: f64, scale: f64, amp: f64, out: &mut Vec<f64>| {
        for i in 0..out.len() {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            out[i] += amp * (-d2 / (2.0 * scale * scale)).exp();
        }
    };
    let mut field = vec![0.0; width * height];
    let (ex, ey) = (rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64));
    gaussian(ex, ey, config.decay, config.amplitude, &mut field);
    for _ in 0..config.bumps {
        let (bx, by) = (rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64));
        gaussian(bx, by, config.decay / 3.0, config.bump_amplitude, &mut field);
    }
    field
}

/// Draw one complete dataset. Deterministic given the config.
pub fn simulate_lgcp(config: &SimulationConfig) -> Result<SimulatedDataset> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let n = w * h;
    let units = grow_units(w, h, config.n_units, &mut stream_rng(config, STREAM_UNITS));

    let mut continuous = Vec::new();
    for (j, (name, _)) in config.beta.iter().enumerate() {
        let mut rng = stream_rng(config, STREAM_COVARIATE + j as u64);
        continuous.push((name.clone(), smooth_field(w, h, &mut rng)));
    }

    let trigger = match &config.trigger {
        Some(t) => trigger_surface(w, h, t, &mut stream_rng(config, STREAM_TRIGGER)),
        None => vec![0.0; n],
    };

    let latent = if config.sigma0 > 0.0 && config.n_units > 1 {
        let edges = unit_edges(w, h, &units);
        let graph = AdjacencyGraph::from_edges(config.n_units, edges);
        let structure = scale_structure(&besag_structure(&graph)?)?;
        let tau = 1.0 / (config.sigma0 * config.sigma0);
        let draw = sample_constrained(&structure, tau, &mut stream_rng(config, STREAM_LSE))?;
        draw.iter().copied().collect()
    } else {
        vec![0.0; config.n_units]
    };

    let eta: Vec<f64> = (0..n)
        .map(|i| {
            let fixed: f64 = config
                .beta
                .iter()
                .zip(&continuous)
                .map(|(&(_, b), (_, col))| b * col[i])
                .sum();
            config.beta0 + fixed + trigger[i] + latent[units[i] as usize]
        })
        .collect();
    let lambda: Vec<f64> = eta.iter().map(|e| e.exp()).collect();

    let mut count_rng = stream_rng(config, STREAM_COUNTS);
    let counts = draw_counts(&lambda, &mut count_rng)?;

    if config.trigger.is_some() {
        continuous.push(("trigger".to_string(), trigger.clone()));
    }
    let table = PixelTable::from_columns(
        (0..n as u64).collect(),
        (0..n).map(|i| (i % w) as i64).collect(),
        (0..n).map(|i| (i / w) as i64).collect(),
        counts,
        continuous,
        vec![],
        vec![("unit".to_string(), units)],
    )?;
    Ok(SimulatedDataset { table, latent, eta, lambda, trigger })
}

fn stream_rng(config: &SimulationConfig, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream))
}

fn unit_edges(width: usize, height: usize, units: &[u64]) -> std::collections::BTreeSet<(usize, usize)> {
    let mut edges = std::collections::BTreeSet::new();
    for i in 0..units.len() {
        let (r, c) = (i / width, i % width);
        for j in [(r + 1 < height).then(|| i + width), (c + 1 < width).then(|| i + 1)]
            .into_iter()
            .flatten()
        {
            let (a, b) = (units[i] as usize, units[j] as usize);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
    }
    edges
}

fn draw_counts(lambda: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    lambda
        .iter()
        .map(|&l| {
            let dist = Poisson::new(l)
                .map_err(|e| Error::numerical(format!("cannot draw counts at rate {l}: {e}")))?;
            Ok(dist.sample(rng) as u64)
        })
        .collect()
}

/// Fresh Poisson counts for the same intensity surface (calibration
/// replicates that hold the truth fixed).
pub fn resample_counts(dataset: &SimulatedDataset, seed: u64) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_COUNTS));
    draw_counts(&dataset.lambda, &mut rng)
}

/// Truth sidecar: per-pixel linear predictor, intensity, trigger value, and
/// the unit's latent effect. `meta` lines, if any, are emitted first as
/// `#`-prefixed comments.
pub fn write_truth_csv(
    dataset: &SimulatedDataset,
    path: &std::path::Path,
    meta: &[String],
) -> Result<()> {
    let mut out = String::new();
    for line in meta {
        out.push_str(&format!("# {line}\n"));
    }
    out.push_str("pixel_id,unit,eta,lambda,trigger,lse\n");
    let table = &dataset.table;
    let units = table.partition_column("unit").unwrap();
    for i in 0..table.n_pixels() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            table.pixel_ids[i],
            units[i],
            dataset.eta[i],
            dataset.lambda[i],
            dataset.trigger[i],
            dataset.latent[units[i] as usize],
        ));
    }
    crate::cli::write_atomic(path, out.as_bytes())
}

/// Average of a pixel column within each unit of a partition.
pub fn unit_means(values: &[f64], partition: &MappingPartition) -> Vec<f64> {
    let k = partition.n_units();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (i, &u) in partition.unit_index.iter().enumerate() {
        sums[u] += values[i];
        counts[u] += 1;
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

/// Pearson correlation; errors when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::data(format!(
            "correlation needs >= 2 paired values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let (da, db) = (a[i] - ma, b[i] - mb);
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if !(saa > 0.0) || !(sbb > 0.0) {
        return Err(Error::data("correlation of a constant sequence".to_string()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// What the three-model comparison recovered from one simulated dataset.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    /// Pearson correlation of unit-mean latent estimates (trigger withheld)
    /// with the unit-averaged true trigger; `None` when the trigger surface
    /// is constant.
    pub correlation: Option<f64>,
    /// Share of units whose true latent effect lies in the 95% interval of
    /// the model that sees the trigger.
    pub coverage: f64,
    pub auc_trigger_only: f64,
    pub auc_lse_only: f64,
    pub auc_both: f64,
    pub lse_unit_means: Vec<f64>,
    pub trigger_unit_means: Vec<f64>,
    /// Interval-sign labels of the latent effect, trigger-withheld model.
    pub significance: Vec<Significance>,
    pub warnings: Vec<String>,
}

/// Simulate with a trigger in the truth, then fit three models — trigger
/// only, latent spatial effect only, and both — and measure what the latent
/// field recovers of the withheld trigger.
pub fn recovery_experiment(
    config: &SimulationConfig,
    options: &FitOptions,
) -> Result<RecoveryReport> {
    if config.trigger.is_none() {
        return Err(Error::config(
            "recovery experiment needs a trigger surface in the simulation".to_string(),
        ));
    }
    if config.n_units < 2 {
        return Err(Error::config("recovery experiment needs at least 2 units".to_string()));
    }
    let dataset = simulate_lgcp(config)?;
    let table = &dataset.table;
    let partition = MappingPartition::from_table(table, "unit")?;
    let graph = build_adjacency(table, &partition, 1)?;
    let labels = count_labels(&table.counts);
    let mut warnings = Vec::new();

    // A flat trigger (amplitude 0) cannot enter as a covariate; the trigger
    // models then degrade to intercept-only.
    let trigger_column = table.continuous("trigger").unwrap();
    let spread = trigger_column.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - trigger_column.iter().cloned().fold(f64::INFINITY, f64::min);
    let trigger_terms: Vec<String> = if spread > 1e-12 {
        vec!["trigger".to_string()]
    } else {
        warnings.push("trigger surface is constant; trigger models fit intercept only".to_string());
        vec![]
    };

    let spec_trigger = ModelSpec {
        intercept: true,
        linear_effects: trigger_terms.clone(),
        ..Default::default()
    };
    let spec_lse = ModelSpec {
        intercept: true,
        besag_partition: Some("unit".to_string()),
        ..Default::default()
    };
    let spec_both = ModelSpec {
        intercept: true,
        linear_effects: trigger_terms,
        besag_partition: Some("unit".to_string()),
        ..Default::default()
    };

    let spatial = Some((&partition, &graph));
    let (_, fit_trigger, _) = fit_standardized(&spec_trigger, table, None, options)?;
    let (model_lse, fit_lse, _) = fit_standardized(&spec_lse, table, spatial, options)?;
    let (model_both, fit_both, _) = fit_standardized(&spec_both, table, spatial, options)?;

    let auc_of = |result: &crate::inference::PosteriorResult| -> Result<f64> {
        let lambda = intensity_from_eta(&result.eta, Estimator::LognormalMean).lambda;
        Ok(roc_auc(&lambda, &labels)?.auc)
    };
    let auc_trigger_only = auc_of(&fit_trigger)?;
    let auc_lse_only = auc_of(&fit_lse)?;
    let auc_both = auc_of(&fit_both)?;

    let lse_block = model_lse.layout.block("spatial:unit").unwrap();
    let lse_unit_means: Vec<f64> =
        fit_lse.block_summaries(lse_block).iter().map(|s| s.mean).collect();
    let trigger_unit_means = unit_means(&dataset.trigger, &partition);
    let correlation = pearson(&lse_unit_means, &trigger_unit_means).ok();
    let significance = lse_significance(&fit_lse, lse_block);

    let both_block = model_both.layout.block("spatial:unit").unwrap();
    let covered = fit_both
        .block_summaries(both_block)
        .iter()
        .zip(&dataset.latent)
        .filter(|(s, &truth)| s.q025 <= truth && truth <= s.q975)
        .count();
    let coverage = covered as f64 / dataset.latent.len() as f64;

    warnings.extend(fit_lse.warnings.iter().cloned());
    Ok(RecoveryReport {
        correlation,
        coverage,
        auc_trigger_only,
        auc_lse_only,
        auc_both,
        lse_unit_means,
        trigger_unit_means,
        significance,
        warnings,
    })
}

/// Explicit loop over all positive–negative pairs, ties counted half.
/// Limited to 10^4 pairs — this is the oracle, not the implementation.
pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n1 = labels.iter().filter(|&&l| l).count() as u64;
    let n0 = labels.len() as u64 - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::data("need both classes present".to_string()));
    }
    if n1 * n0 > 10_000 {
        return Err(Error::config(format!(
            "brute force is capped at 10^4 pairs, got {}",
            n1 * n0
        )));
    }
    let mut num: u64 = 0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                num += 2;
            } else if scores[i] == scores[j] {
                num += 1;
            }
        }
    }
    Ok(num as f64 / (2 * n1 * n0) as f64)
}

/// Exact posterior summaries for a model small enough to integrate outright.
#[derive(Debug, Clone)]
pub struct OracleSummary {
    /// Posterior mean per latent coordinate.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Log of the integrated joint, same constant convention as the fast
    /// path's per-point marginal (count factorials included).
    pub log_evidence: f64,
}

/// Full quadrature over the latent space (and the hyperparameter when there
/// is one): Gauss–Legendre panels across per-slice standardized latent
/// boxes, with adaptive Simpson along the hyperparameter line. The whole
/// integral is recomputed under a second, independent discretization; the
/// two must agree on every posterior mean to 1e-6, or this errors rather
/// than return a bad reference.
pub fn tiny_posterior_oracle(model: &AssembledModel) -> Result<OracleSummary> {
    let n = model.n_latent();
    if n > 3 {
        return Err(Error::config(format!(
            "oracle integrates at most 3 latent dimensions, got {n}"
        )));
    }
    if model.n_hyper() > 1 {
        return Err(Error::config(format!(
            "oracle integrates at most 1 hyperparameter, got {}",
            model.n_hyper()
        )));
    }

    // Orthonormal basis of the constraint-feasible subspace; integration
    // runs in these coordinates where the prior is proper.
    let constraints = model.constraint_set()?;
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..n {
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        let mut v = constraints.project(&v);
        for u in &cols {
            let d = u.dot(&v);
            v -= u * d;
        }
        let norm = v.norm();
        if norm > 1e-9 {
            cols.push(v / norm);
        }
    }
    if cols.is_empty() {
        return Err(Error::config(
            "oracle needs at least one unconstrained latent dimension".to_string(),
        ));
    }
    let basis = DMatrix::from_columns(&cols);
    let m = basis.ncols();

    // Every hyperparameter slice is integrated in its own standardized
    // coordinates: a small Newton solve finds the slice's conditional mode
    // and curvature, and the latent box is t = mode + scale * z with z in
    // [-12, 12] per dimension. Recentring per slice keeps the inner
    // integrand an O(1)-width bump no matter how tight or diffuse the
    // prior is at that slice, which is what makes fixed panel counts and
    // absolute adaptive tolerances honest.
    let theta_hat = optimize_theta(model, &vec![0.0; model.n_hyper()])?;
    let z_lo = vec![-12.0; m];
    let z_hi = vec![12.0; m];

    // Joint log density over (theta, t), up to the count factorials. The
    // theta-dependent pieces (restricted prior precision, its determinant,
    // the hyperprior) are hoisted out of the latent integral, and the design
    // is premultiplied by the basis so each evaluation is a few flops.
    let counts: Vec<f64> = model.counts.iter().map(|&y| y as f64).collect();
    let design_t: Vec<Vec<f64>> = (0..counts.len())
        .map(|i| {
            (0..m)
                .map(|k| model.design.row(i).iter().map(|&(j, v)| v * basis[(j, k)]).sum())
                .collect()
        })
        .collect();
    let prepare_theta = |theta: &[f64]| -> Result<(DMatrix<f64>, f64)> {
        let (q, _) = model.prior_precision(theta)?;
        let qt = basis.transpose() * q * &basis;
        let chol = nalgebra::Cholesky::new(qt.clone()).ok_or_else(|| {
            Error::numerical("prior not positive definite on the feasible subspace".to_string())
        })?;
        let logdet = 2.0 * (0..m).map(|k| chol.l_dirty()[(k, k)].ln()).sum::<f64>();
        let offset = 0.5 * logdet - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln()
            + model.pc_prior_logdensity(theta);
        Ok((qt, offset))
    };
    let log_density = |qt: &DMatrix<f64>, offset: f64, t: &[f64]| -> f64 {
        let mut value = offset;
        for (row, &y) in design_t.iter().zip(&counts) {
            let eta: f64 = row.iter().zip(t).map(|(d, v)| d * v).sum();
            value += y * eta - eta.exp();
        }
        for j in 0..m {
            for k in 0..m {
                value -= 0.5 * qt[(j, k)] * t[j] * t[k];
            }
        }
        value
    };
    // Conditional mode and per-dimension curvature scale for one slice,
    // found by damped Newton on the strictly concave log density.
    let conditional_box = |qt: &DMatrix<f64>, offset: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut mode = vec![0.0; m];
        let mut value = log_density(qt, offset, &mode);
        for _ in 0..100 {
            let mut grad = DVector::zeros(m);
            let mut hess = qt.clone();
            for j in 0..m {
                for k in 0..m {
                    grad[j] -= qt[(j, k)] * mode[k];
                }
            }
            for (row, &y) in design_t.iter().zip(&counts) {
                let eta: f64 = row.iter().zip(&mode).map(|(d, v)| d * v).sum();
                let mu = eta.exp();
                for j in 0..m {
                    grad[j] += (y - mu) * row[j];
                    for k in 0..m {
                        hess[(j, k)] += mu * row[j] * row[k];
                    }
                }
            }
            let chol = nalgebra::Cholesky::new(hess).ok_or_else(|| {
                Error::numerical(
                    "oracle conditional curvature is not positive definite".to_string(),
                )
            })?;
            let step = chol.solve(&grad);
            let mut alpha = 1.0;
            let mut candidate = mode.clone();
            loop {
                for k in 0..m {
                    candidate[k] = mode[k] + alpha * step[k];
                }
                let cand_value = log_density(qt, offset, &candidate);
                if cand_value + 1e-12 >= value || alpha < 1e-6 {
                    value = cand_value;
                    break;
                }
                alpha *= 0.5;
            }
            let moved = step.amax() * alpha;
            mode.copy_from_slice(candidate.as_slice());
            if moved < 1e-11 {
                let cov = chol.inverse();
                let mut scale = Vec::with_capacity(m);
                for k in 0..m {
                    let v = cov[(k, k)];
                    if !(v > 0.0) {
                        return Err(Error::numerical(
                            "oracle conditional curvature collapsed".to_string(),
                        ));
                    }
                    scale.push(v.sqrt());
                }
                return Ok((mode, scale));
            }
        }
        Err(Error::numerical("oracle conditional mode search did not converge".to_string()))
    };

    // Peak value at the optimized hyperparameter, including the slice
    // Jacobian and the Gaussian volume (2 pi)^(m/2); dividing it out makes
    // the outer integrand roughly one at its peak, so absolute tolerances
    // on the hyperparameter line are honest.
    let peak = {
        let (qt, offset) = prepare_theta(&theta_hat)?;
        let (mode, scale) = conditional_box(&qt, offset)?;
        log_density(&qt, offset, &mode)
            + scale.iter().map(|s| s.ln()).sum::<f64>()
            + 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln()
    };

    // Moment payload in z coordinates: [1, z_1..z_m, upper triangle of zz'].
    let n_moments = 1 + m + m * (m + 1) / 2;
    let payload = |z: &[f64], weight: f64| -> Vec<f64> {
        let mut out = Vec::with_capacity(n_moments);
        out.push(weight);
        for k in 0..m {
            out.push(weight * z[k]);
        }
        for j in 0..m {
            for k in j..m {
                out.push(weight * z[j] * z[k]);
            }
        }
        out
    };

    // theta integration range: the prior's lower tail dies double
    // exponentially, the upper only like exp(-theta/2), hence the longer
    // right arm. Truncating at +30 leaves relative mass under exp(-15).
    let theta_range = theta_hat.first().map(|&t| (t - 10.0, t + 30.0));

    // The latent dimensions use deterministic Gauss–Legendre panels: their
    // discretization error varies smoothly with the outer variable, so the
    // adaptive rule on the hyperparameter line sees a smooth function
    // rather than refinement noise. (Adapting the inner lines too would
    // feed each outer Richardson test noise of the same order as its
    // tolerance, which never converges.)
    let integrate = |scheme: QuadScheme| -> Result<Vec<f64>> {
        let latent_panels = match scheme {
            QuadScheme::Fine => 10,
            QuadScheme::Check => 14,
        };
        let eval_latent = |theta: &[f64]| -> Result<Vec<f64>> {
            let (qt, offset) = prepare_theta(theta)?;
            let (mode, scale) = conditional_box(&qt, offset)?;
            let jacobian: f64 = scale.iter().map(|s| s.ln()).sum();
            let mut z = vec![0.0; m];
            let mut t = vec![0.0; m];
            let zm = integrate_nested(
                latent_panels,
                &z_lo,
                &z_hi,
                0,
                &mut z,
                &mut |z| {
                    for k in 0..m {
                        t[k] = mode[k] + scale[k] * z[k];
                    }
                    let g = log_density(&qt, offset, &t);
                    Ok(payload(z, (g + jacobian - peak).exp()))
                },
                n_moments,
            )?;
            // Convert the slice's z-moments to t-moments so slices with
            // different centres can be summed by the outer integral.
            let mut out = vec![0.0; n_moments];
            out[0] = zm[0];
            for k in 0..m {
                out[1 + k] = mode[k] * zm[0] + scale[k] * zm[1 + k];
            }
            let mut idx = 1 + m;
            for j in 0..m {
                for k in j..m {
                    out[idx] = mode[j] * mode[k] * zm[0]
                        + mode[j] * scale[k] * zm[1 + k]
                        + mode[k] * scale[j] * zm[1 + j]
                        + scale[j] * scale[k] * zm[idx];
                    idx += 1;
                }
            }
            Ok(out)
        };
        match theta_range {
            None => eval_latent(&[]),
            Some((lo_t, hi_t)) => match scheme {
                QuadScheme::Fine => adaptive_simpson_vec(
                    &mut |th| eval_latent(&[th]),
                    lo_t,
                    hi_t,
                    1e-7,
                    14,
                    n_moments,
                ),
                QuadScheme::Check => composite_gauss_vec(
                    &mut |th| eval_latent(&[th]),
                    lo_t,
                    hi_t,
                    ((hi_t - lo_t) / 2.0).ceil() as usize,
                    n_moments,
                ),
            },
        }
    };

    let fine = integrate(QuadScheme::Fine)?;
    let check = integrate(QuadScheme::Check)?;

    let unpack = |moments: &[f64]| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mass = moments[0];
        if !(mass > 0.0) {
            return Err(Error::numerical("oracle mass integrated to zero".to_string()));
        }
        let mean_t = DVector::from_iterator(m, (0..m).map(|k| moments[1 + k] / mass));
        let mut cov = DMatrix::zeros(m, m);
        let mut idx = 1 + m;
        for j in 0..m {
            for k in j..m {
                let second = moments[idx] / mass;
                idx += 1;
                cov[(j, k)] = second - mean_t[j] * mean_t[k];
                cov[(k, j)] = cov[(j, k)];
            }
        }
        let mean_a = &basis * &mean_t;
        let cov_a = &basis * cov * basis.transpose();
        let sd: Vec<f64> = (0..n).map(|i| cov_a[(i, i)].max(0.0).sqrt()).collect();
        Ok((mean_a.iter().copied().collect(), sd, mass.ln() + peak))
    };

    let (mean, sd, log_evidence) = unpack(&fine)?;
    let (mean_check, _, _) = unpack(&check)?;
    let disagreement = mean
        .iter()
        .zip(&mean_check)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if disagreement > 1e-6 {
        return Err(Error::numerical(format!(
            "quadrature rules disagree by {disagreement:.2e} on posterior means"
        )));
    }
    let log_evidence = log_evidence - model.log_factorial_counts();
    Ok(OracleSummary { mean, sd, log_evidence })
}

/// Two independent discretizations whose agreement certifies the result:
/// they differ in both the hyperparameter rule and the latent panel count.
#[derive(Clone, Copy)]
enum QuadScheme {
    /// adaptive Simpson over the hyperparameter, 12-panel latent lines
    Fine,
    /// one Gauss panel per unit length over the hyperparameter, 18-panel
    /// latent lines
    Check,
}

/// Integrate the latent dimensions one at a time with composite
/// Gauss–Legendre; dimension `dim` scans while the outer coordinates sit
/// fixed in `z`.
fn integrate_nested(
    panels: usize,
    lo: &[f64],
    hi: &[f64],
    dim: usize,
    z: &mut Vec<f64>,
    f: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    width: usize,
) -> Result<Vec<f64>> {
    if dim == lo.len() {
        return f(z);
    }
    let (a, b) = (lo[dim], hi[dim]);
    let mut inner = |v: f64| -> Result<Vec<f64>> {
        z[dim] = v;
        integrate_nested(panels, lo, hi, dim + 1, z, f, width)
    };
    composite_gauss_vec(&mut inner, a, b, panels, width)
}

fn vec_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn simpson_estimate(fa: &[f64], fm: &[f64], fb: &[f64], h: f64) -> Vec<f64> {
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((&x, &y), &z)| h / 6.0 * (x + 4.0 * y + z))
        .collect()
}

/// Vector-valued adaptive Simpson with the usual Richardson acceptance.
fn adaptive_simpson_vec(
    f: &mut dyn FnMut(f64) -> Result<Vec<f64>>,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
    width: usize,
) -> Result<Vec<f64>> {
    fn recurse(
        f: &mut dyn FnMut(f64) -> Result<Vec<f64>>,
        a: f64,
        b: f64,
        fa: &[f64],
        fm: &[f64],
        fb: &[f64],
        whole: &[f64],
        tol: f64,
        depth: usize,
    ) -> Result<Vec<f64>> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let flm = f(lm)?;
        let frm = f(rm)?;
        let left = simpson_estimate(fa, &flm, fm, m - a);
        let right = simpson_estimate(fm, &frm, fb, b - m);
        let split = vec_add(&left, &right);
        let err = split
            .iter()
            .zip(whole)
            .map(|(s, w)| (s - w).abs())
            .fold(0.0, f64::max);
        if depth == 0 || err <= 15.0 * tol {
            // accepted with the Richardson correction folded in
            return Ok(split
                .iter()
                .zip(whole)
                .map(|(s, w)| s + (s - w) / 15.0)
                .collect());
        }
        let l = recurse(f, a, m, fa, &flm, fm, &left, 0.5 * tol, depth - 1)?;
        let r = recurse(f, m, b, fm, &frm, fb, &right, 0.5 * tol, depth - 1)?;
        Ok(vec_add(&l, &r))
    }

    let mid = 0.5 * (a + b);
    let fa = f(a)?;
    let fm = f(mid)?;
    let fb = f(b)?;
    debug_assert_eq!(fa.len(), width);
    let whole = simpson_estimate(&fa, &fm, &fb, b - a);
    recurse(f, a, b, &fa, &fm, &fb, &whole, tol, max_depth)
}

/// Composite Gauss–Legendre: ten nodes on each of `panels` equal panels.
fn composite_gauss_vec(
    f: &mut dyn FnMut(f64) -> Result<Vec<f64>>,
    a: f64,
    b: f64,
    panels: usize,
    width: usize,
) -> Result<Vec<f64>> {
    // 10-point Gauss–Legendre nodes/weights on [-1, 1]
    const NODES: [f64; 5] = [
        0.148874338981631,
        0.433395394129247,
        0.679409568299024,
        0.865063366688985,
        0.973906528517172,
    ];
    const WEIGHTS: [f64; 5] = [
        0.295524224714753,
        0.269266719309996,
        0.219086362515982,
        0.149451349150581,
        0.066671344308688,
    ];
    let panels = panels.max(8);
    let step = (b - a) / panels as f64;
    let mut total = vec![0.0; width];
    for p in 0..panels {
        let (pa, pb) = (a + p as f64 * step, a + (p as f64 + 1.0) * step);
        let (mid, half) = (0.5 * (pa + pb), 0.5 * (pb - pa));
        for i in 0..5 {
            for sign in [-1.0, 1.0] {
                let v = f(mid + sign * half * NODES[i])?;
                for (acc, x) in total.iter_mut().zip(&v) {
                    *acc += WEIGHTS[i] * half * x;
                }
            }
        }
    }
    Ok(total)
}
