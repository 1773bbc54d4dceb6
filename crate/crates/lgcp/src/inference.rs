//! Posterior inference for the latent count model.
//!
//! The latent field is integrated out with a nested approximation. For a
//! fixed hyperparameter vector `theta`, the latent posterior is replaced by
//! a Gaussian centered at its mode `a` (found by Newton iteration with
//! step-halving, honoring the sum-to-zero constraints), giving the Laplace
//! estimate of the log marginal likelihood
//!
//! ```text
//! log m(theta) = loglik(a) - a'Q(theta)a/2
//!              + logdet+ Q(theta)/2 - logdet_c Q*(theta)/2
//! ```
//!
//! with `Q* = Q + A' diag(exp eta) A` and both determinants taken over the
//! constraint-feasible subspace. The hyperparameter posterior
//! `log m(theta) + log prior(theta)` is maximized by a derivative-free
//! pattern search, then explored on an axis-aligned grid around the optimum;
//! latent marginals are Gaussian mixtures over the retained grid points.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{DenseChol, SparseRows};
use crate::model::{AssembledModel, Block, ModelSpec};

/// Newton convergence tolerance on the projected score max-norm.
pub const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 20;
/// Pattern search refines its step until it drops below this.
const MIN_SEARCH_STEP: f64 = 0.004;
/// Local-maximum certification probe distance.
const CERTIFY_STEP: f64 = 0.05;
/// Grid points this far below the maximum log posterior are dropped.
const GRID_LOG_CUTOFF: f64 = 6.0;

/// Gaussian approximation to the latent posterior at one `theta`.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub theta: Vec<f64>,
    /// Posterior mode of the latent vector (constraints satisfied).
    pub mode: DVector<f64>,
    /// Linear predictor at the mode.
    pub eta: DVector<f64>,
    /// Covariance of the constrained Gaussian approximation.
    pub covariance: DMatrix<f64>,
    /// Per-coordinate posterior standard deviations.
    pub marginal_sd: DVector<f64>,
    /// Laplace estimate of the log marginal likelihood at `theta`.
    pub log_marginal: f64,
    pub newton_iterations: usize,
}

fn poisson_loglik(counts: &[u64], eta: &DVector<f64>) -> f64 {
    counts
        .iter()
        .enumerate()
        .map(|(i, &y)| y as f64 * eta[i] - eta[i].exp())
        .sum()
}

/// Locate the latent posterior mode for fixed `theta` and package the
/// Gaussian approximation around it.
///
/// Newton iteration with step-halving on the penalized log-likelihood; each
/// step is corrected onto the constraint set by conditioning, so every
/// iterate is feasible. Fails after the configured iteration budget with the
/// last projected-gradient norm in the message.
pub fn gaussian_approximation(
    model: &AssembledModel,
    theta: &[f64],
    warm: Option<&DVector<f64>>,
) -> Result<GaussianApprox> {
    let n = model.n_latent();
    let (q, logdet_q) = model.prior_precision(theta)?;
    let constraints = model.constraint_set()?;
    let fill = model.constraint_fill();
    let log_fact = model.log_factorial_counts();
    let y = DVector::from_iterator(model.counts.len(), model.counts.iter().map(|&c| c as f64));

    let mut a: DVector<f64> = match warm {
        Some(w) if w.len() == n => constraints.project(w),
        _ => DVector::zeros(n),
    };

    let penalized = |a: &DVector<f64>| -> f64 {
        let eta = model.design.mul_vec(a);
        poisson_loglik(&model.counts, &eta) - 0.5 * (&q * a).dot(a)
    };

    let mut f_cur = penalized(&a);
    if !f_cur.is_finite() {
        a = DVector::zeros(n);
        f_cur = penalized(&a);
    }
    let mut chol = None;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    for _ in 0..NEWTON_MAX_ITER {
        let eta = model.design.mul_vec(&a);
        let mu = eta.map(f64::exp);
        let grad = model.design.tr_mul_vec(&(&y - &mu)) - &q * &a;
        grad_norm = constraints.project(&grad).amax();

        let h = &q + &fill + model.design.weighted_gram(&mu);
        let h_chol = DenseChol::new(h, "latent posterior precision")?;
        if grad_norm < NEWTON_TOL {
            chol = Some(h_chol);
            break;
        }

        iterations += 1;
        let unconstrained = &a + h_chol.solve_vec(&grad);
        let target = constraints.correct(&h_chol, &unconstrained)?;
        let step = &target - &a;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial = &a + &step * t;
            let f_trial = penalized(&trial);
            if f_trial.is_finite() && f_trial >= f_cur - 1e-13 * (1.0 + f_cur.abs()) {
                a = trial;
                f_cur = f_trial;
                accepted = true;
                break;
            }
            t /= 2.0;
        }
        if !accepted {
            return Err(Error::numerical(format!(
                "mode search stalled: no ascent after {MAX_HALVINGS} halvings \
                 (projected gradient {grad_norm:.3e})"
            )));
        }
    }

    let chol = chol.ok_or_else(|| {
        Error::numerical(format!(
            "mode search did not converge in {NEWTON_MAX_ITER} iterations \
             (projected gradient {grad_norm:.3e})"
        ))
    })?;

    let covariance = constraints.constrained_covariance(&chol)?;
    let marginal_sd = DVector::from_iterator(
        n,
        (0..n).map(|i| covariance[(i, i)].max(0.0).sqrt()),
    );
    let logdet_qstar = constraints.constrained_log_det(&chol)?;
    let eta = model.design.mul_vec(&a);
    let log_marginal = poisson_loglik(&model.counts, &eta) - log_fact
        - 0.5 * (&q * &a).dot(&a)
        + 0.5 * logdet_q
        - 0.5 * logdet_qstar;

    Ok(GaussianApprox {
        theta: theta.to_vec(),
        mode: a,
        eta,
        covariance,
        marginal_sd,
        log_marginal,
        newton_iterations: iterations,
    })
}

/// Log hyperparameter posterior (up to the evidence constant):
/// Laplace log marginal plus prior log density.
pub fn log_posterior_theta(
    model: &AssembledModel,
    theta: &[f64],
    warm: Option<&DVector<f64>>,
) -> Result<(f64, GaussianApprox)> {
    let approx = gaussian_approximation(model, theta, warm)?;
    let lp = approx.log_marginal + model.pc_prior_logdensity(theta);
    if !lp.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite log posterior at theta {theta:?}"
        )));
    }
    Ok((lp, approx))
}

/// Budgeted evaluator that warm-starts each mode search from the best mode
/// seen so far.
struct Evaluator<'a> {
    model: &'a AssembledModel,
    warm: Option<DVector<f64>>,
    evals: usize,
    budget: usize,
}

impl<'a> Evaluator<'a> {
    fn new(model: &'a AssembledModel, budget: usize) -> Self {
        Evaluator { model, warm: None, evals: 0, budget }
    }

    fn eval(&mut self, theta: &[f64]) -> Result<(f64, GaussianApprox)> {
        if self.evals >= self.budget {
            return Err(Error::numerical(format!(
                "hyperparameter search exceeded {} evaluations near theta {theta:?}",
                self.budget
            )));
        }
        self.evals += 1;
        log_posterior_theta(self.model, theta, self.warm.as_ref())
    }
}

/// Maximize the log hyperparameter posterior by coordinate pattern search.
///
/// Probes `theta +- step` along every axis, moves greedily, halves the step
/// when no axis improves, and finishes by certifying that probes at
/// `+- 0.05` in every direction do not beat the returned point (resuming the
/// search if one does).
pub fn optimize_theta(model: &AssembledModel, init: &[f64]) -> Result<Vec<f64>> {
    let dim = model.n_hyper();
    if dim == 0 {
        return Ok(Vec::new());
    }
    if init.len() != dim {
        return Err(Error::config(format!(
            "initial theta has {} entries, model has {dim} hyperparameters",
            init.len()
        )));
    }

    let mut ev = Evaluator::new(model, 150 * dim + 100);
    let mut theta = init.to_vec();
    let (mut f_best, approx) = ev.eval(&theta)?;
    ev.warm = Some(approx.mode);

    let mut step = 1.0;
    while step >= MIN_SEARCH_STEP {
        let mut improved = false;
        for d in 0..dim {
            for sign in [1.0, -1.0] {
                let mut cand = theta.clone();
                cand[d] += sign * step;
                let (f, approx) = ev.eval(&cand)?;
                if f > f_best {
                    theta = cand;
                    f_best = f;
                    ev.warm = Some(approx.mode);
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }

    // Certify local optimality at the contract's probe distance.
    loop {
        let mut better = None;
        'probe: for d in 0..dim {
            for sign in [1.0, -1.0] {
                let mut cand = theta.clone();
                cand[d] += sign * CERTIFY_STEP;
                let (f, approx) = ev.eval(&cand)?;
                if f > f_best {
                    better = Some((cand, f, approx));
                    break 'probe;
                }
            }
        }
        match better {
            Some((cand, f, approx)) => {
                theta = cand;
                f_best = f;
                ev.warm = Some(approx.mode);
            }
            None => break,
        }
    }
    Ok(theta)
}

/// One evaluated hyperparameter grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub theta: Vec<f64>,
    pub log_post: f64,
    pub weight: f64,
    pub approx: GaussianApprox,
}

/// The retained integration grid with normalized weights.
#[derive(Debug, Clone)]
pub struct ThetaGrid {
    pub points: Vec<GridPoint>,
    pub warnings: Vec<String>,
}

/// Evaluate the hyperparameter posterior on the axis-aligned grid
/// `theta_hat + step * z`, `|z_d| <= radius`, dropping points more than six
/// log units below the maximum, and normalize the remaining weights.
///
/// Evaluation failures away from the center drop the point with a warning;
/// the center itself must evaluate.
pub fn integrate_theta(
    model: &AssembledModel,
    theta_hat: &[f64],
    step: f64,
    radius: usize,
) -> Result<ThetaGrid> {
    let dim = model.n_hyper();
    if theta_hat.len() != dim {
        return Err(Error::config(format!(
            "theta has {} entries, model has {dim} hyperparameters",
            theta_hat.len()
        )));
    }
    if !(step > 0.0) {
        return Err(Error::config(format!("grid step must be positive, got {step}")));
    }

    let mut ev = Evaluator::new(model, (2 * radius + 1).pow(dim.min(4) as u32) + 4);
    let (center_lp, center_approx) = ev.eval(theta_hat)?;
    ev.warm = Some(center_approx.mode.clone());

    let mut evaluated: Vec<(Vec<f64>, f64, GaussianApprox)> =
        vec![(theta_hat.to_vec(), center_lp, center_approx)];
    let mut warnings = Vec::new();

    if dim > 0 && radius > 0 {
        let side = 2 * radius + 1;
        let n_points = side.pow(dim as u32);
        for flat in 0..n_points {
            let mut rest = flat;
            let mut offsets = Vec::with_capacity(dim);
            for _ in 0..dim {
                offsets.push(rest % side);
                rest /= side;
            }
            if offsets.iter().all(|&o| o == radius) {
                continue; // center already evaluated
            }
            let theta: Vec<f64> = theta_hat
                .iter()
                .zip(&offsets)
                .map(|(&t, &o)| t + step * (o as f64 - radius as f64))
                .collect();
            match ev.eval(&theta) {
                Ok((lp, approx)) => evaluated.push((theta, lp, approx)),
                Err(e) => warnings.push(format!(
                    "grid point {theta:?} dropped: {e}"
                )),
            }
        }
    }

    let max_lp = evaluated
        .iter()
        .map(|(_, lp, _)| *lp)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut points: Vec<GridPoint> = evaluated
        .into_iter()
        .filter(|(_, lp, _)| max_lp - lp <= GRID_LOG_CUTOFF)
        .map(|(theta, lp, approx)| GridPoint { theta, log_post: lp, weight: (lp - max_lp).exp(), approx })
        .collect();
    if points.is_empty() {
        return Err(Error::numerical("all hyperparameter grid points were dropped".to_string()));
    }
    let total: f64 = points.iter().map(|p| p.weight).sum();
    for p in &mut points {
        p.weight /= total;
    }
    Ok(ThetaGrid { points, warnings })
}

/// Posterior summary of one latent coordinate (or one pixel's `eta`).
#[derive(Debug, Clone, Copy)]
pub struct LatentSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Mean/sd of the linear predictor at a pixel.
#[derive(Debug, Clone, Copy)]
pub struct EtaSummary {
    pub mean: f64,
    pub sd: f64,
}

/// Full fitted posterior: optimum, grid, and mixture summaries.
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub theta_hat: Vec<f64>,
    pub grid: ThetaGrid,
    /// Per latent coordinate.
    pub latent: Vec<LatentSummary>,
    /// Per training pixel.
    pub eta: Vec<EtaSummary>,
    pub warnings: Vec<String>,
}

/// Quantile of a Gaussian mixture by bisection on its CDF (absolute
/// tolerance 1e-6). Zero-sd components act as point masses.
pub fn mixture_quantile(components: &[(f64, f64, f64)], p: f64) -> f64 {
    let cdf = |x: f64| -> f64 {
        components
            .iter()
            .map(|&(w, mean, sd)| {
                if sd > 0.0 {
                    w * Normal::new(mean, sd).unwrap().cdf(x)
                } else if x >= mean {
                    w
                } else {
                    0.0
                }
            })
            .sum()
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, mean, sd) in components {
        lo = lo.min(mean - 12.0 * sd - 1e-9);
        hi = hi.max(mean + 12.0 * sd + 1e-9);
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn mixture_summary(components: &[(f64, f64, f64)]) -> LatentSummary {
    let mean: f64 = components.iter().map(|&(w, m, _)| w * m).sum();
    let second: f64 = components.iter().map(|&(w, m, s)| w * (s * s + m * m)).sum();
    let var = (second - mean * mean).max(0.0);
    LatentSummary {
        mean,
        sd: var.sqrt(),
        q025: mixture_quantile(components, 0.025),
        q975: mixture_quantile(components, 0.975),
    }
}

/// Collapse the grid of Gaussian approximations into per-coordinate mixture
/// marginals and per-pixel linear-predictor summaries.
pub fn latent_marginals(model: &AssembledModel, grid: ThetaGrid) -> Result<PosteriorResult> {
    if grid.points.is_empty() {
        return Err(Error::numerical("empty hyperparameter grid".to_string()));
    }
    let n = model.n_latent();
    let mut latent = Vec::with_capacity(n);
    for j in 0..n {
        let components: Vec<(f64, f64, f64)> = grid
            .points
            .iter()
            .map(|p| (p.weight, p.approx.mode[j], p.approx.marginal_sd[j]))
            .collect();
        latent.push(mixture_summary(&components));
    }

    let eta = predict_eta_over_grid(&grid, &model.design);

    let theta_hat = grid
        .points
        .iter()
        .max_by(|a, b| a.log_post.total_cmp(&b.log_post))
        .map(|p| p.theta.clone())
        .unwrap();
    let mut warnings = model.warnings.clone();
    warnings.extend(grid.warnings.iter().cloned());

    Ok(PosteriorResult { theta_hat, grid, latent, eta, warnings })
}

fn predict_eta_over_grid(grid: &ThetaGrid, design: &SparseRows) -> Vec<EtaSummary> {
    let n_rows = design.nrows();
    let mut out = Vec::with_capacity(n_rows);
    // Per grid point: eta means via one sparse product, variances row-wise.
    let per_point: Vec<(f64, DVector<f64>)> = grid
        .points
        .iter()
        .map(|p| (p.weight, design.mul_vec(&p.approx.mode)))
        .collect();
    for i in 0..n_rows {
        let mut mean = 0.0;
        let mut second = 0.0;
        for (g, p) in grid.points.iter().enumerate() {
            let m = per_point[g].1[i];
            let v = design.row_quad_form(i, &p.approx.covariance).max(0.0);
            mean += p.weight * m;
            second += p.weight * (v + m * m);
        }
        out.push(EtaSummary { mean, sd: (second - mean * mean).max(0.0).sqrt() });
    }
    out
}

impl PosteriorResult {
    /// Linear-predictor summaries for new design rows (same latent layout).
    pub fn predict_eta(&self, design: &SparseRows) -> Vec<EtaSummary> {
        predict_eta_over_grid(&self.grid, design)
    }

    /// Mixture mean and covariance of one latent block (fixed-effect
    /// covariances feed the direction-effect curve).
    pub fn block_posterior(&self, block: &Block) -> (DVector<f64>, DMatrix<f64>) {
        let k = block.len;
        let mut mean = DVector::zeros(k);
        let mut second = DMatrix::zeros(k, k);
        for p in &self.grid.points {
            let m = p.approx.mode.rows(block.offset, k).into_owned();
            let cov = p
                .approx
                .covariance
                .view((block.offset, block.offset), (k, k))
                .into_owned();
            second += (cov + &m * m.transpose()) * p.weight;
            mean += m * p.weight;
        }
        let cov = second - &mean * mean.transpose();
        (mean, cov)
    }

    /// Summaries for the coordinates of one block.
    pub fn block_summaries(&self, block: &Block) -> &[LatentSummary] {
        &self.latent[block.offset..block.offset + block.len]
    }
}

/// Classification of a latent effect by the sign of its 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Significance {
    Positive,
    Negative,
    NotSignificant,
}

impl Significance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Significance::Positive => "positive-significant",
            Significance::Negative => "negative-significant",
            Significance::NotSignificant => "not-significant",
        }
    }
}

/// Label from an interval: significant iff both endpoints share a sign.
pub fn significance_label(q025: f64, q975: f64) -> Significance {
    if q025 > 0.0 {
        Significance::Positive
    } else if q975 < 0.0 {
        Significance::Negative
    } else {
        Significance::NotSignificant
    }
}

/// Per-unit significance labels for the spatial block.
pub fn lse_significance(result: &PosteriorResult, block: &Block) -> Vec<Significance> {
    result
        .block_summaries(block)
        .iter()
        .map(|s| significance_label(s.q025, s.q975))
        .collect()
}

/// Knobs for the full fit pipeline.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Starting point of the hyperparameter search (log precisions);
    /// zeros when empty.
    pub init_theta: Vec<f64>,
    pub grid_step: f64,
    pub grid_radius: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { init_theta: Vec::new(), grid_step: 0.5, grid_radius: 2 }
    }
}

/// Optimize, integrate, and summarize in one call.
pub fn fit(model: &AssembledModel, options: &FitOptions) -> Result<PosteriorResult> {
    let dim = model.n_hyper();
    let init = if options.init_theta.is_empty() {
        vec![0.0; dim]
    } else {
        options.init_theta.clone()
    };
    let theta_hat = optimize_theta(model, &init)?;
    let grid = integrate_theta(model, &theta_hat, options.grid_step, options.grid_radius)?;
    latent_marginals(model, grid)
}

/// The full data-to-posterior pipeline: standardize the linear covariates,
/// assemble, fit. Returns the recorded standardization so held-out tables
/// can be put on the same scale.
pub fn fit_standardized(
    spec: &ModelSpec,
    table: &crate::ingest::PixelTable,
    spatial: Option<(&crate::ingest::MappingPartition, &crate::ingest::AdjacencyGraph)>,
    options: &FitOptions,
) -> Result<(AssembledModel, PosteriorResult, crate::ingest::Standardization)> {
    let (scaled, standardization) =
        crate::ingest::standardize_covariates(table, &spec.linear_effects)?;
    let model = AssembledModel::assemble(spec.clone(), &scaled, spatial)?;
    let result = fit(&model, options)?;
    Ok((model, result, standardization))
}
