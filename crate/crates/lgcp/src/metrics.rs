//! Model evaluation: ROC/AUC with the Hosmer–Lemeshow band labels, explained
//! variance and explained counts on aggregated units, and the k-fold
//! cross-validation harness.
//!
//! AUC uses the Mann–Whitney convention — ties between a positive and a
//! negative score count one half — and is computed in exact integer
//! arithmetic, so it agrees bit-for-bit with a brute-force pair count.

use rand::seq::SliceRandom as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{fit_standardized, FitOptions};
use crate::ingest::{AdjacencyGraph, MappingPartition, PixelTable};
use crate::model::ModelSpec;
use crate::predict::{aggregate_intensity, intensity_from_eta, Estimator, IntensitySurface};

/// Receiver operating characteristic: threshold sweep plus the area under it.
#[derive(Debug, Clone)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`,
    /// one step per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Rank-based AUC and ROC curve of `scores` against binary `labels`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::data(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::data("scores must be finite".to_string()));
    }
    let n1 = labels.iter().filter(|&&l| l).count() as u64;
    let n0 = labels.len() as u64 - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::data(
            "need both classes present to rank scores".to_string(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Walk distinct scores from high to low. In doubled units, each
    // negative in a tie group contributes 2 per strictly-higher positive
    // and 1 per tied positive.
    let mut num: u128 = 0;
    let mut cum_pos: u64 = 0;
    let mut cum_neg: u64 = 0;
    let mut points = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        num += q as u128 * (2 * cum_pos + p) as u128;
        cum_pos += p;
        cum_neg += q;
        points.push((cum_neg as f64 / n0 as f64, cum_pos as f64 / n1 as f64));
        i = j;
    }
    let auc = num as f64 / (2 * n1 as u128 * n0 as u128) as f64;
    Ok(RocCurve { points, auc })
}

/// Discrimination band of an AUC value. The three upper bands are the
/// conventional ones; everything below 0.7 is reported as "poor".
pub fn hosmer_class(auc: f64) -> &'static str {
    if auc < 0.7 {
        "poor"
    } else if auc < 0.8 {
        "acceptable"
    } else if auc < 0.9 {
        "excellent"
    } else {
        "outstanding"
    }
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, usize) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n as f64 - 1.0), n)
}

/// Share of count variance explained:
/// `1 - Var(observed - predicted) / Var(observed)`.
pub fn r2_counts(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() || observed.len() < 2 {
        return Err(Error::data(format!(
            "need >= 2 paired units, got {} observed / {} predicted",
            observed.len(),
            predicted.len()
        )));
    }
    let (var_y, _) = sample_variance(observed.iter().copied());
    if !(var_y > 0.0) {
        return Err(Error::data(
            "observed counts are constant; explained variance is undefined".to_string(),
        ));
    }
    let residuals = observed.iter().zip(predicted).map(|(y, l)| y - l);
    let (var_r, _) = sample_variance(residuals);
    Ok(1.0 - var_r / var_y)
}

/// Ratio of explained counts: `1 - sum|observed - predicted| / sum observed`.
/// At most 1; negative when the absolute error exceeds the total count.
pub fn rce_counts(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(Error::data(format!(
            "{} observed but {} predicted",
            observed.len(),
            predicted.len()
        )));
    }
    let total: f64 = observed.iter().sum();
    if !(total > 0.0) {
        return Err(Error::data(
            "total observed count is zero; explained counts are undefined".to_string(),
        ));
    }
    let abs_err: f64 = observed.iter().zip(predicted).map(|(y, l)| (y - l).abs()).sum();
    Ok(1.0 - abs_err / total)
}

/// A complementary random partition of pixels into folds.
#[derive(Debug, Clone)]
pub struct CvPlan {
    pub k: usize,
    /// Fold index of each pixel, in table order.
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl CvPlan {
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Assign pixels to `k` folds uniformly at random; fold sizes differ by at
/// most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<CvPlan> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::config(format!("cannot split {n} pixels into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; n];
    for (pos, &pixel) in order.iter().enumerate() {
        fold_of[pixel] = pos % k;
    }
    Ok(CvPlan { k, fold_of, seed })
}

/// Spatially blocked folds: whole mapping units are assigned together, so no
/// unit contributes pixels to both a training set and its held-out fold.
pub fn kfold_split_blocked(
    partition: &MappingPartition,
    k: usize,
    seed: u64,
) -> Result<CvPlan> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    let m = partition.n_units();
    if m < k {
        return Err(Error::config(format!("cannot split {m} units into {k} folds")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of_unit = vec![0; m];
    for (pos, &unit) in order.iter().enumerate() {
        fold_of_unit[unit] = pos % k;
    }
    let fold_of = partition.unit_index.iter().map(|&u| fold_of_unit[u]).collect();
    Ok(CvPlan { k, fold_of, seed })
}

/// One evaluation figure: `fold` is `fit` (in-sample), `cv-<j>`, `cv-pooled`
/// (concatenated out-of-sample predictions), or `cv-mean` (average of
/// per-fold values).
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub metric: String,
    pub partition: String,
    pub fold: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub rows: Vec<MetricRow>,
    pub fold_auc: Vec<Option<f64>>,
    pub pooled_auc: f64,
    pub mean_auc: Option<f64>,
    pub min_auc: Option<f64>,
    pub max_auc: Option<f64>,
    pub in_sample_auc: f64,
    /// Out-of-sample intensity per pixel, table order.
    pub oos_lambda: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub estimator: Estimator,
    pub fit: FitOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { estimator: Estimator::LognormalMean, fit: FitOptions::default() }
    }
}

pub fn count_labels(counts: &[u64]) -> Vec<bool> {
    counts.iter().map(|&c| c >= 1).collect()
}

fn with_context(e: Error, context: &str) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{context}: {m}")),
        Error::Data(m) => Error::Data(format!("{context}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{context}: {m}")),
        Error::Io(e) => Error::Data(format!("{context}: {e}")),
    }
}

/// Per-partition AUC/R2/RCE rows for one prediction surface.
fn partition_rows(
    table: &PixelTable,
    surface: &IntensitySurface,
    fold: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for name in table.partition_names().map(str::to_string).collect::<Vec<_>>() {
        let partition = MappingPartition::from_table(table, &name)?;
        let unit = aggregate_intensity(surface, &partition, &table.counts)?;
        let observed: Vec<f64> = unit.counts.iter().map(|&c| c as f64).collect();
        let mut push = |metric: &str, value: Result<f64>| match value {
            Ok(v) => rows.push(MetricRow {
                metric: metric.to_string(),
                partition: name.clone(),
                fold: fold.to_string(),
                value: v,
            }),
            Err(e) => warnings.push(format!("{fold}/{name}: {metric} skipped ({e})")),
        };
        push("auc", roc_auc(&unit.lambda, &count_labels(&unit.counts)).map(|r| r.auc));
        push("r2", r2_counts(&observed, &unit.lambda));
        push("rce", rce_counts(&observed, &unit.lambda));
    }
    Ok(rows)
}

/// Fit on each training set, predict the held-out fold, and report in-sample
/// and out-of-sample performance at pixel level and per mapping partition.
pub fn run_cv(
    spec: &ModelSpec,
    table: &PixelTable,
    spatial: Option<(&MappingPartition, &AdjacencyGraph)>,
    plan: &CvPlan,
    options: &CvOptions,
) -> Result<CvReport> {
    let n = table.n_pixels();
    if plan.fold_of.len() != n {
        return Err(Error::config(format!(
            "plan covers {} pixels but table has {n}",
            plan.fold_of.len()
        )));
    }
    let labels = count_labels(&table.counts);
    let mut warnings = Vec::new();
    let mut rows = Vec::new();

    // In-sample reference fit on the full table.
    let (model, result, _) = fit_standardized(spec, table, spatial, &options.fit)
        .map_err(|e| with_context(e, "full-data fit"))?;
    warnings.extend(model.warnings.iter().cloned());
    let in_surface = intensity_from_eta(&result.eta, options.estimator);
    let in_sample_auc = roc_auc(&in_surface.lambda, &labels)?.auc;
    rows.push(MetricRow {
        metric: "auc".to_string(),
        partition: "pixel".to_string(),
        fold: "fit".to_string(),
        value: in_sample_auc,
    });
    rows.extend(partition_rows(table, &in_surface, "fit", &mut warnings)?);

    struct FoldOut {
        rows: Vec<usize>,
        lambda: Vec<f64>,
        auc: Option<f64>,
        warnings: Vec<String>,
    }

    let folds: Vec<FoldOut> = (0..plan.k)
        .into_par_iter()
        .map(|j| -> Result<FoldOut> {
            let held_rows = plan.fold_rows(j);
            let train = table.subset(&plan.train_rows(j));
            let held = table.subset(&held_rows);
            let (fold_model, fold_result, standardization) =
                fit_standardized(spec, &train, spatial, &options.fit)
                    .map_err(|e| with_context(e, &format!("fold {}", j + 1)))?;
            let held_scaled = standardization.apply(&held)?;
            let design = fold_model.design_matrix_for(&held_scaled)?;
            let eta = fold_result.predict_eta(&design);
            let lambda = intensity_from_eta(&eta, options.estimator).lambda;

            let mut fold_warnings = Vec::new();
            let auc = match roc_auc(&lambda, &count_labels(&held.counts)) {
                Ok(r) => Some(r.auc),
                Err(e) => {
                    fold_warnings.push(format!("fold {}: AUC skipped ({e})", j + 1));
                    None
                }
            };
            Ok(FoldOut { rows: held_rows, lambda, auc, warnings: fold_warnings })
        })
        .collect::<Result<_>>()?;

    let mut oos_lambda = vec![0.0; n];
    let mut fold_auc = Vec::with_capacity(plan.k);
    for (j, fold) in folds.iter().enumerate() {
        for (pos, &row) in fold.rows.iter().enumerate() {
            oos_lambda[row] = fold.lambda[pos];
        }
        warnings.extend(fold.warnings.iter().cloned());
        fold_auc.push(fold.auc);
        if let Some(a) = fold.auc {
            rows.push(MetricRow {
                metric: "auc".to_string(),
                partition: "pixel".to_string(),
                fold: format!("cv-{}", j + 1),
                value: a,
            });
        }
    }

    let pooled_auc = roc_auc(&oos_lambda, &labels)
        .map_err(|e| with_context(e, "pooled out-of-sample"))?
        .auc;
    rows.push(MetricRow {
        metric: "auc".to_string(),
        partition: "pixel".to_string(),
        fold: "cv-pooled".to_string(),
        value: pooled_auc,
    });

    let present: Vec<f64> = fold_auc.iter().flatten().copied().collect();
    let mean_auc = if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    };
    let min_auc = present.iter().copied().reduce(f64::min);
    let max_auc = present.iter().copied().reduce(f64::max);
    if let Some(m) = mean_auc {
        rows.push(MetricRow {
            metric: "auc".to_string(),
            partition: "pixel".to_string(),
            fold: "cv-mean".to_string(),
            value: m,
        });
    }

    let oos_surface = IntensitySurface { lambda: oos_lambda.clone(), estimator: options.estimator };
    rows.extend(partition_rows(table, &oos_surface, "cv-pooled", &mut warnings)?);

    Ok(CvReport {
        rows,
        fold_auc,
        pooled_auc,
        mean_auc,
        min_auc,
        max_auc,
        in_sample_auc,
        oos_lambda,
        warnings,
    })
}
