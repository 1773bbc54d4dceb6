//! From posteriors to products: intensity surfaces, aggregated unit
//! intensities, susceptibilities, and the direction-effect curve.
//!
//! Counts are conditionally Poisson, so intensities add: the expected count
//! of a unit is the sum of its pixels' intensities, at any nesting level.
//! A unit's susceptibility is the probability of at least one event,
//! `1 - exp(-lambda)`.

use crate::error::{Error, Result};
use crate::inference::{EtaSummary, PosteriorResult};
use crate::ingest::MappingPartition;
use crate::model::AssembledModel;

/// Which posterior functional of `exp(eta)` the surface reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// `exp(posterior mean eta)`: the mode-like plug-in.
    PluginMean,
    /// `exp(mean + var/2)`: the posterior mean of `exp(eta)` under the
    /// Gaussian approximation; the default.
    LognormalMean,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::PluginMean => "plugin-mean",
            Estimator::LognormalMean => "lognormal-mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plugin-mean" => Ok(Estimator::PluginMean),
            "lognormal-mean" => Ok(Estimator::LognormalMean),
            other => Err(Error::config(format!(
                "unknown estimator `{other}` (expected plugin-mean or lognormal-mean)"
            ))),
        }
    }
}

/// Per-pixel intensity estimates.
#[derive(Debug, Clone)]
pub struct IntensitySurface {
    pub lambda: Vec<f64>,
    pub estimator: Estimator,
}

/// Apply the chosen estimator to linear-predictor summaries.
pub fn intensity_from_eta(eta: &[EtaSummary], estimator: Estimator) -> IntensitySurface {
    let lambda = eta
        .iter()
        .map(|e| match estimator {
            Estimator::PluginMean => e.mean.exp(),
            Estimator::LognormalMean => (e.mean + 0.5 * e.sd * e.sd).exp(),
        })
        .collect();
    IntensitySurface { lambda, estimator }
}

/// Intensity surface over the training pixels of a fitted model.
pub fn pixel_intensity(result: &PosteriorResult, estimator: Estimator) -> IntensitySurface {
    intensity_from_eta(&result.eta, estimator)
}

/// Expected counts, observed counts, and susceptibility per mapping unit.
#[derive(Debug, Clone)]
pub struct UnitIntensity {
    pub partition: String,
    pub unit_ids: Vec<u64>,
    pub lambda: Vec<f64>,
    pub counts: Vec<u64>,
    pub susceptibility: Vec<f64>,
}

/// Sum pixel intensities and counts over the units of a partition.
pub fn aggregate_intensity(
    surface: &IntensitySurface,
    partition: &MappingPartition,
    counts: &[u64],
) -> Result<UnitIntensity> {
    let n = partition.unit_index.len();
    if surface.lambda.len() != n || counts.len() != n {
        return Err(Error::data(format!(
            "partition `{}` covers {n} pixels but got {} intensities / {} counts",
            partition.name,
            surface.lambda.len(),
            counts.len()
        )));
    }
    let k = partition.n_units();
    let mut lambda = vec![0.0; k];
    let mut unit_counts = vec![0u64; k];
    for i in 0..n {
        let u = partition.unit_index[i];
        lambda[u] += surface.lambda[i];
        unit_counts[u] += counts[i];
    }
    let susceptibility_col = lambda.iter().map(|&l| susceptibility(l)).collect::<Result<_>>()?;
    Ok(UnitIntensity {
        partition: partition.name.clone(),
        unit_ids: partition.unit_ids.clone(),
        lambda,
        counts: unit_counts,
        susceptibility: susceptibility_col,
    })
}

/// Probability of at least one event in a region with expected count
/// `lambda`: `1 - exp(-lambda)`.
pub fn susceptibility(lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::numerical(format!(
            "susceptibility needs a non-negative intensity, got {lambda}"
        )));
    }
    // exp_m1 keeps precision for small lambda.
    Ok(-(-lambda).exp_m1())
}

/// One sampled direction of the combined aspect effect.
#[derive(Debug, Clone, Copy)]
pub struct AspectPoint {
    pub degrees: f64,
    pub effect: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Combined effect of the aspect pair at angle `alpha`:
/// `f(alpha) = bE sin(alpha) + bN cos(alpha)`, with the 95% band from the
/// joint Gaussian posterior of `(bE, bN)`, sampled at one-degree steps.
pub fn aspect_effect_curve(
    result: &PosteriorResult,
    model: &AssembledModel,
    eastness: &str,
    northness: &str,
) -> Result<Vec<AspectPoint>> {
    let fixed = model
        .layout
        .block("fixed")
        .ok_or_else(|| Error::config("model has no fixed-effect block".to_string()))?;
    let coef_index = |name: &str| -> Result<usize> {
        let pos = model
            .spec
            .linear_effects
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| {
                Error::config(format!("`{name}` is not a linear effect of this model"))
            })?;
        Ok(model.spec.intercept as usize + pos)
    };
    let ie = coef_index(eastness)?;
    let in_ = coef_index(northness)?;

    let (mean, cov) = result.block_posterior(fixed);
    let (be, bn) = (mean[ie], mean[in_]);
    let (ve, vn, c) = (cov[(ie, ie)], cov[(in_, in_)], cov[(ie, in_)]);
    if !ve.is_finite() || !vn.is_finite() || !c.is_finite() {
        return Err(Error::numerical(
            "aspect coefficient covariance is not available".to_string(),
        ));
    }

    let mut curve = Vec::with_capacity(360);
    for deg in 0..360 {
        let alpha = (deg as f64).to_radians();
        let (s, co) = (alpha.sin(), alpha.cos());
        let effect = be * s + bn * co;
        let var = (s * s * ve + co * co * vn + 2.0 * s * co * c).max(0.0);
        let sd = var.sqrt();
        curve.push(AspectPoint {
            degrees: deg as f64,
            effect,
            sd,
            lo: effect - 1.959964 * sd,
            hi: effect + 1.959964 * sd,
        });
    }
    Ok(curve)
}
