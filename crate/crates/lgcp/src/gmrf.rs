//! Intrinsic Gaussian Markov random field structures.
//!
//! Latent effects are specified by a sparse structure matrix `R`: the prior
//! precision of an effect block is `tau * R`. Three structures are provided:
//!
//! * `besag_structure` — intrinsic autoregression on a unit graph, with
//!   `R[j,j] = degree(j)` and `R[j,k] = -1` for neighbors. The conditional
//!   law is `u_j | u_-j ~ N(mean of neighbors, 1/(degree * tau))`.
//! * `rw1_structure` — first-order random walk over ordered classes.
//! * `iid_structure` — exchangeable effects, `R = I`.
//!
//! Intrinsic structures are rank deficient (one null direction per connected
//! component) and are identified by per-component sum-to-zero constraints.
//! `scale_structure` rescales each component so the geometric mean of the
//! constrained marginal variances is one, making the precision parameter
//! comparable across structures of different topology.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::AdjacencyGraph;
use crate::linalg::{geometric_mean, ConstraintSet, DenseChol};

/// Sparse symmetric structure matrix for one latent effect block.
#[derive(Debug, Clone)]
pub struct StructureMatrix {
    pub n: usize,
    /// Upper-triangle entries `(i, j, value)` with `i <= j`.
    triplets: Vec<(usize, usize, f64)>,
    /// Dimension of the null space (0 for full-rank structures).
    pub rank_deficiency: usize,
    /// Sum-to-zero constraint rows (0/1 component indicators), one per
    /// rank-deficient direction.
    pub constraints: Vec<Vec<f64>>,
    /// Component id per node (all zero for single-block structures).
    pub component_of: Vec<usize>,
    /// Per-component scaling factors applied by `scale_structure`
    /// (all 1 before scaling).
    pub scale_factors: Vec<f64>,
    /// Log generalized determinant: sum of log positive eigenvalues.
    pub logdet_plus: f64,
    /// Human-readable notes from construction (isolated units and the like).
    pub warnings: Vec<String>,
}

impl StructureMatrix {
    fn from_triplets(
        n: usize,
        triplets: Vec<(usize, usize, f64)>,
        rank_deficiency: usize,
        constraints: Vec<Vec<f64>>,
        component_of: Vec<usize>,
        warnings: Vec<String>,
    ) -> Result<Self> {
        let n_components = component_of.iter().copied().max().map_or(1, |m| m + 1);
        let mut s = StructureMatrix {
            n,
            triplets,
            rank_deficiency,
            constraints,
            component_of,
            scale_factors: vec![1.0; n_components],
            logdet_plus: 0.0,
            warnings,
        };
        s.logdet_plus = s.compute_logdet_plus()?;
        Ok(s)
    }

    pub fn n_components(&self) -> usize {
        self.scale_factors.len()
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    /// Dense symmetric form.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.triplets {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    /// Add `factor * R` into the block of `out` starting at `offset`.
    pub fn add_to_dense(&self, out: &mut DMatrix<f64>, offset: usize, factor: f64) {
        for &(i, j, v) in &self.triplets {
            out[(offset + i, offset + j)] += factor * v;
            if i != j {
                out[(offset + j, offset + i)] += factor * v;
            }
        }
    }

    /// Log generalized determinant of `tau * R` (positive eigenvalues only).
    pub fn logdet_plus_scaled(&self, tau: f64) -> f64 {
        (self.n - self.rank_deficiency) as f64 * tau.ln() + self.logdet_plus
    }

    /// Number of pixels/nodes in each component.
    fn component_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_components()];
        for &c in &self.component_of {
            sizes[c] += 1;
        }
        sizes
    }

    /// `log det` over the row space: augment each null direction with its
    /// orthonormal component indicator, factor, and take the determinant.
    /// The augmented directions each contribute eigenvalue one, so the
    /// product equals the product of positive eigenvalues of `R`.
    fn compute_logdet_plus(&self) -> Result<f64> {
        let mut m = self.to_dense();
        if self.rank_deficiency > 0 {
            let sizes = self.component_sizes();
            for row in &self.constraints {
                // Row is a 0/1 indicator of one component.
                let count = row.iter().filter(|&&v| v != 0.0).count().max(1);
                debug_assert!(sizes.iter().any(|&s| s == count));
                for i in 0..self.n {
                    for j in 0..self.n {
                        m[(i, j)] += row[i] * row[j] / count as f64;
                    }
                }
            }
        }
        Ok(DenseChol::new(m, "structure generalized determinant")?.log_det())
    }

    /// Marginal variances at `tau = 1` under the sum-to-zero constraints.
    ///
    /// Uses the identity that for an intrinsic `R` with component null
    /// vectors, the constrained covariance is `(R + sum_c 1_c 1_c'/m_c)^-1`
    /// minus `1_c 1_c'/m_c` on each component block, so the variances are
    /// the inverse's diagonal minus `1/m_c`. Full-rank structures use the
    /// plain inverse.
    pub fn constrained_marginal_variances(&self) -> Result<Vec<f64>> {
        if self.rank_deficiency == 0 {
            let inv = DenseChol::new(self.to_dense(), "structure variances")?.inverse();
            return Ok((0..self.n).map(|i| inv[(i, i)]).collect());
        }
        let sizes = self.component_sizes();
        let mut m = self.to_dense();
        for row in &self.constraints {
            let count = row.iter().filter(|&&v| v != 0.0).count().max(1);
            for i in 0..self.n {
                for j in 0..self.n {
                    m[(i, j)] += row[i] * row[j] / count as f64;
                }
            }
        }
        let inv = DenseChol::new(m, "structure variances")?.inverse();
        Ok((0..self.n)
            .map(|i| inv[(i, i)] - 1.0 / sizes[self.component_of[i]] as f64)
            .collect())
    }
}

/// Intrinsic autoregression structure from a unit adjacency graph.
///
/// Isolated units (degree zero) have no neighbors to borrow strength from;
/// they form singleton components whose effect is pinned to zero by their
/// sum-to-zero constraint, and a warning is recorded naming them.
pub fn besag_structure(graph: &AdjacencyGraph) -> Result<StructureMatrix> {
    let n = graph.n_units;
    if n == 0 {
        return Err(Error::data("adjacency graph has no units".to_string()));
    }
    let mut triplets = Vec::with_capacity(n + graph.edges.len());
    for j in 0..n {
        triplets.push((j, j, graph.degrees[j] as f64));
    }
    for &(a, b) in &graph.edges {
        triplets.push((a, b, -1.0));
    }

    let n_components = graph.n_components;
    let mut constraints = Vec::with_capacity(n_components);
    for c in 0..n_components {
        constraints.push(
            (0..n)
                .map(|j| if graph.component_of[j] == c { 1.0 } else { 0.0 })
                .collect(),
        );
    }

    let mut warnings = Vec::new();
    let isolated: Vec<usize> = (0..n).filter(|&j| graph.degrees[j] == 0).collect();
    if !isolated.is_empty() {
        warnings.push(format!(
            "{} isolated unit(s) (indices {:?}); their spatial effect is fixed at zero",
            isolated.len(),
            isolated
        ));
    }

    StructureMatrix::from_triplets(
        n,
        triplets,
        n_components,
        constraints,
        graph.component_of.clone(),
        warnings,
    )
}

/// First-order random-walk structure over `k` ordered classes.
pub fn rw1_structure(k: usize) -> Result<StructureMatrix> {
    if k < 2 {
        return Err(Error::config(format!("random walk needs >= 2 classes, got {k}")));
    }
    let mut triplets = Vec::with_capacity(2 * k - 1);
    for j in 0..k {
        let d = if j == 0 || j == k - 1 { 1.0 } else { 2.0 };
        triplets.push((j, j, d));
    }
    for j in 0..k - 1 {
        triplets.push((j, j + 1, -1.0));
    }
    StructureMatrix::from_triplets(k, triplets, 1, vec![vec![1.0; k]], vec![0; k], Vec::new())
}

/// Exchangeable (identity-structure) effects over `k` levels.
pub fn iid_structure(k: usize) -> Result<StructureMatrix> {
    if k == 0 {
        return Err(Error::config("iid effect needs at least one level".to_string()));
    }
    let triplets = (0..k).map(|j| (j, j, 1.0)).collect();
    StructureMatrix::from_triplets(k, triplets, 0, Vec::new(), vec![0; k], Vec::new())
}

/// Rescale each component of `R` so the geometric mean of its constrained
/// marginal variances equals one.
///
/// Singleton components carry no variance (their effect is constrained to
/// zero) and are left untouched. Full-rank structures are scaled by the
/// geometric mean of their plain marginal variances.
pub fn scale_structure(s: &StructureMatrix) -> Result<StructureMatrix> {
    let variances = s.constrained_marginal_variances()?;
    let sizes = s.component_sizes();
    let n_components = s.n_components();

    let mut factors = vec![1.0; n_components];
    for c in 0..n_components {
        if s.rank_deficiency > 0 && sizes[c] < 2 {
            continue; // singleton: nothing to scale
        }
        let vars: Vec<f64> = (0..s.n)
            .filter(|&i| s.component_of[i] == c)
            .map(|i| variances[i])
            .collect();
        let reference = geometric_mean(&vars);
        if !(reference > 0.0) || !reference.is_finite() {
            return Err(Error::numerical(format!(
                "non-positive reference variance {reference} in component {c}"
            )));
        }
        factors[c] = reference;
    }

    let triplets = s
        .triplets
        .iter()
        .map(|&(i, j, v)| (i, j, v * factors[s.component_of[i]]))
        .collect();
    let mut scaled = StructureMatrix::from_triplets(
        s.n,
        triplets,
        s.rank_deficiency,
        s.constraints.clone(),
        s.component_of.clone(),
        s.warnings.clone(),
    )?;
    // compose with any scaling already applied
    scaled.scale_factors = factors
        .iter()
        .zip(&s.scale_factors)
        .map(|(f, prev)| f * prev)
        .collect();
    Ok(scaled)
}

/// Draw from the intrinsic field `N(0, (tau R)^+)` restricted to the
/// sum-to-zero constraints.
///
/// The null directions are filled in with unit precision to make the matrix
/// factorizable, a draw is taken by back-substitution, and the draw is then
/// projected onto the constraint set by conditioning by kriging. Because the
/// filled-in directions coincide with the constrained ones, the correction
/// removes exactly the arbitrary part.
pub fn sample_constrained(
    s: &StructureMatrix,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("precision must be positive, got {tau}")));
    }
    let mut q = s.to_dense() * tau;
    for row in &s.constraints {
        let count = row.iter().filter(|&&v| v != 0.0).count().max(1);
        for i in 0..s.n {
            for j in 0..s.n {
                q[(i, j)] += row[i] * row[j] / count as f64;
            }
        }
    }
    let chol = DenseChol::new(q, "field sampling")?;
    let z = DVector::from_iterator(s.n, (0..s.n).map(|_| standard_normal(rng)));
    let draw = chol.solve_lt(&z);
    if s.constraints.is_empty() {
        return Ok(draw);
    }
    let constraint_rows: Vec<DVector<f64>> = s
        .constraints
        .iter()
        .map(|r| DVector::from_column_slice(r))
        .collect();
    let cs = ConstraintSet::new(&constraint_rows, s.n)?;
    cs.correct(&chol, &draw)
}

/// Standard normal via Box–Muller from two uniform draws.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Write the structure as a coordinate-format table (`row,col,value`, upper
/// triangle, zero-based indices).
pub fn write_structure_csv(s: &StructureMatrix, path: &std::path::Path) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("row,col,value\n");
    let mut sorted = s.triplets.clone();
    sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    for (i, j, v) in sorted {
        let _ = writeln!(out, "{i},{j},{v}");
    }
    crate::cli::write_atomic(path, out.as_bytes())
}
