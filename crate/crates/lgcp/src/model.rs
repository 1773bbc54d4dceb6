//! Latent Gaussian model assembly.
//!
//! The linear predictor for pixel `i` is
//!
//! ```text
//! eta_i = b0 + x_i' b + U_{j(i)} + v1_{class(i)} + ... + vk_{level(i)}
//! ```
//!
//! collected as `eta = A x` over one latent vector `x` whose blocks are the
//! fixed effects, the per-unit spatial field, the per-class random-walk
//! effects, and the per-level exchangeable effects. The joint prior on `x`
//! is Gaussian with block-diagonal precision `Q(theta)`: a weak fixed
//! precision on the fixed effects and `exp(theta_b) * R_b` on each random
//! block, with the structure matrices scaled so every `exp(theta_b)` is a
//! comparable inverse-variance. Hyperparameters get penalized-complexity
//! priors: the block standard deviation `sigma = exp(-theta/2)` is
//! exponential with a chosen median, shrinking toward the constant model.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gmrf::{besag_structure, iid_structure, rw1_structure, scale_structure, StructureMatrix};
use crate::ingest::{assign_bins, bin_equidistant, AdjacencyGraph, MappingPartition, PixelTable};
use crate::linalg::{ConstraintSet, SparseRows};

/// Precision of the proper Gaussian prior on intercept and linear
/// coefficients: Normal(0, 1000^2).
pub const FIXED_EFFECT_PRECISION: f64 = 1e-6;

/// Default prior median for every block standard deviation.
pub const DEFAULT_PC_MEDIAN: f64 = 0.1;

/// Which terms enter the linear predictor.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub intercept: bool,
    /// Continuous covariates entering linearly.
    pub linear_effects: Vec<String>,
    /// Partition carrying the per-unit intrinsic spatial field.
    pub besag_partition: Option<String>,
    /// `(covariate, class count)` pairs with random-walk effects over
    /// equidistant classes.
    pub rw1_effects: Vec<(String, usize)>,
    /// Categorical covariates with exchangeable per-level effects.
    pub iid_effects: Vec<String>,
    /// Shared prior median for block standard deviations.
    pub pc_prior_median: f64,
    /// Per-block overrides, keyed by block name (`spatial:...`, `rw1:...`,
    /// `iid:...`).
    pub pc_prior_overrides: Vec<(String, f64)>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            intercept: true,
            linear_effects: Vec::new(),
            besag_partition: None,
            rw1_effects: Vec::new(),
            iid_effects: Vec::new(),
            pc_prior_median: DEFAULT_PC_MEDIAN,
            pc_prior_overrides: Vec::new(),
        }
    }
}

impl ModelSpec {
    fn validate(&self, table: &PixelTable) -> Result<()> {
        let mut names = BTreeSet::new();
        for name in self
            .linear_effects
            .iter()
            .chain(self.rw1_effects.iter().map(|(n, _)| n))
            .chain(self.iid_effects.iter())
        {
            if !names.insert(name.as_str()) {
                return Err(Error::config(format!("covariate `{name}` used in two effects")));
            }
        }
        for name in self.linear_effects.iter().chain(self.rw1_effects.iter().map(|(n, _)| n)) {
            if table.continuous(name).is_none() {
                return Err(Error::config(format!(
                    "model references continuous covariate `{name}` not present in the table"
                )));
            }
        }
        for name in &self.iid_effects {
            if table.categorical(name).is_none() {
                return Err(Error::config(format!(
                    "model references categorical covariate `{name}` not present in the table"
                )));
            }
        }
        if !(self.pc_prior_median > 0.0) {
            return Err(Error::config(format!(
                "prior median must be positive, got {}",
                self.pc_prior_median
            )));
        }
        Ok(())
    }

    fn prior_median_for(&self, block_name: &str) -> f64 {
        self.pc_prior_overrides
            .iter()
            .find(|(n, _)| n == block_name)
            .map(|(_, m)| *m)
            .unwrap_or(self.pc_prior_median)
    }
}

/// One contiguous slice of the latent vector.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered latent blocks: fixed effects first, then one block per random
/// effect.
#[derive(Debug, Clone)]
pub struct LatentLayout {
    pub blocks: Vec<Block>,
    pub n_latent: usize,
    /// Length of the fixed-effect block (intercept + linear coefficients).
    pub n_fixed: usize,
}

impl LatentLayout {
    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// A random-effect block: its position, scaled structure, and prior rate.
#[derive(Debug, Clone)]
pub struct RandomBlock {
    /// Index into `layout.blocks`.
    pub block_index: usize,
    pub structure: StructureMatrix,
    /// Exponential rate `ln 2 / median` of the prior on the block sd.
    pub pc_rate: f64,
}

/// How a design-matrix column is filled for a pixel.
#[derive(Debug, Clone)]
enum TermRule {
    Intercept,
    /// Covariate value itself is the entry.
    Linear { covariate: String },
    /// One unit indicator per pixel; unknown units contribute nothing.
    Spatial { partition: String, unit_ids: Vec<u64> },
    /// Class indicator from recorded bin edges (out-of-range values clamp
    /// into the end classes).
    Binned { covariate: String, edges: Vec<f64> },
    /// Level indicator from the recorded level order; unseen levels
    /// contribute nothing.
    Leveled { covariate: String, levels: Vec<String> },
}

/// A model bound to its training table: layout, design matrix, scaled
/// structures, constraints, and the recorded preprocessing needed to build
/// design rows for new tables.
#[derive(Debug, Clone)]
pub struct AssembledModel {
    pub spec: ModelSpec,
    pub layout: LatentLayout,
    /// `n_pixels x n_latent`, a handful of entries per row.
    pub design: SparseRows,
    pub counts: Vec<u64>,
    pub random_blocks: Vec<RandomBlock>,
    /// Sum-to-zero constraints embedded over the full latent vector.
    pub constraint_rows: Vec<DVector<f64>>,
    /// Per-term rules for constructing design rows (fixed terms first).
    terms: Vec<(usize, TermRule)>,
    pub warnings: Vec<String>,
}

impl AssembledModel {
    /// Bind a model spec to a table. The spatial effect, when present, needs
    /// the partition and its adjacency graph.
    pub fn assemble(
        spec: ModelSpec,
        table: &PixelTable,
        spatial: Option<(&MappingPartition, &AdjacencyGraph)>,
    ) -> Result<Self> {
        spec.validate(table)?;
        if spec.besag_partition.is_some() != spatial.is_some() {
            return Err(Error::config(
                "spatial effect declared without partition/adjacency (or vice versa)".to_string(),
            ));
        }

        let mut warnings = Vec::new();
        let mut blocks = Vec::new();
        let mut terms = Vec::new();
        let mut random_blocks = Vec::new();
        let mut offset = 0usize;

        // Fixed-effect block: intercept then linear coefficients.
        let n_fixed = spec.intercept as usize + spec.linear_effects.len();
        if n_fixed > 0 {
            blocks.push(Block { name: "fixed".to_string(), offset, len: n_fixed });
            let mut col = offset;
            if spec.intercept {
                terms.push((col, TermRule::Intercept));
                col += 1;
            }
            for name in &spec.linear_effects {
                terms.push((col, TermRule::Linear { covariate: name.clone() }));
                col += 1;
            }
            offset += n_fixed;
        }

        if let Some(partition_name) = &spec.besag_partition {
            let (partition, graph) = spatial.unwrap();
            if partition.name != *partition_name {
                return Err(Error::config(format!(
                    "model wants spatial effect on `{partition_name}` but got partition `{}`",
                    partition.name
                )));
            }
            if graph.n_units != partition.n_units() {
                return Err(Error::config(
                    "adjacency graph size does not match partition".to_string(),
                ));
            }
            let structure = scale_structure(&besag_structure(graph)?)?;
            warnings.extend(structure.warnings.iter().cloned());
            let name = format!("spatial:{partition_name}");
            let block_index = blocks.len();
            blocks.push(Block { name: name.clone(), offset, len: structure.n });
            terms.push((
                offset,
                TermRule::Spatial {
                    partition: partition_name.clone(),
                    unit_ids: partition.unit_ids.clone(),
                },
            ));
            random_blocks.push(RandomBlock {
                block_index,
                structure,
                pc_rate: std::f64::consts::LN_2 / spec.prior_median_for(&name),
            });
            offset += partition.n_units();
        }

        for (covariate, k) in &spec.rw1_effects {
            let column = table.continuous(covariate).unwrap();
            let (_, edges) = bin_equidistant(column, *k)?;
            let structure = scale_structure(&rw1_structure(*k)?)?;
            let name = format!("rw1:{covariate}");
            let block_index = blocks.len();
            blocks.push(Block { name: name.clone(), offset, len: *k });
            terms.push((offset, TermRule::Binned { covariate: covariate.clone(), edges }));
            random_blocks.push(RandomBlock {
                block_index,
                structure,
                pc_rate: std::f64::consts::LN_2 / spec.prior_median_for(&name),
            });
            offset += *k;
        }

        for covariate in &spec.iid_effects {
            let column = table.categorical(covariate).unwrap();
            let levels: Vec<String> =
                column.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            if levels.len() < 2 {
                return Err(Error::data(format!(
                    "categorical covariate `{covariate}` has a single level"
                )));
            }
            let structure = iid_structure(levels.len())?;
            let name = format!("iid:{covariate}");
            let block_index = blocks.len();
            blocks.push(Block { name: name.clone(), offset, len: levels.len() });
            terms.push((offset, TermRule::Leveled { covariate: covariate.clone(), levels }));
            random_blocks.push(RandomBlock {
                block_index,
                structure,
                pc_rate: std::f64::consts::LN_2 / spec.prior_median_for(&name),
            });
            offset += blocks.last().unwrap().len;
        }

        let n_latent = offset;
        if n_latent == 0 {
            return Err(Error::config("model has no effects at all".to_string()));
        }
        let layout = LatentLayout { blocks, n_latent, n_fixed };

        // Embed each block's sum-to-zero constraints into the full vector.
        let mut constraint_rows = Vec::new();
        for rb in &random_blocks {
            let block = &layout.blocks[rb.block_index];
            for row in &rb.structure.constraints {
                let mut full = DVector::zeros(n_latent);
                for (j, &v) in row.iter().enumerate() {
                    full[block.offset + j] = v;
                }
                constraint_rows.push(full);
            }
        }

        let mut model = AssembledModel {
            spec,
            layout,
            design: SparseRows::new(n_latent),
            counts: table.counts.clone(),
            random_blocks,
            constraint_rows,
            terms,
            warnings,
        };
        model.design = model.design_matrix_for(table)?;
        Ok(model)
    }

    /// Build the design matrix for any table with the covariates this model
    /// was trained on, using the recorded bin edges, level order, and unit
    /// ids. Unknown units/levels contribute no effect.
    pub fn design_matrix_for(&self, table: &PixelTable) -> Result<SparseRows> {
        let n = table.n_pixels();

        // Resolve each term to a per-pixel (column, value) generator upfront.
        enum Resolved<'a> {
            Constant(usize),
            Values(usize, &'a [f64]),
            Indices(usize, Vec<Option<usize>>),
        }
        let mut resolved = Vec::with_capacity(self.terms.len());
        for (col, rule) in &self.terms {
            match rule {
                TermRule::Intercept => resolved.push(Resolved::Constant(*col)),
                TermRule::Linear { covariate } => {
                    let values = table.continuous(covariate).ok_or_else(|| {
                        Error::data(format!("missing column `{covariate}`"))
                    })?;
                    resolved.push(Resolved::Values(*col, values));
                }
                TermRule::Spatial { partition, unit_ids } => {
                    let column = table.partition_column(partition).ok_or_else(|| {
                        Error::data(format!("missing column `{partition}`"))
                    })?;
                    let index: std::collections::HashMap<u64, usize> =
                        unit_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
                    let idx = column.iter().map(|u| index.get(u).copied()).collect();
                    resolved.push(Resolved::Indices(*col, idx));
                }
                TermRule::Binned { covariate, edges } => {
                    let values = table.continuous(covariate).ok_or_else(|| {
                        Error::data(format!("missing column `{covariate}`"))
                    })?;
                    let classes = assign_bins(values, edges);
                    resolved
                        .push(Resolved::Indices(*col, classes.iter().map(|c| Some(c - 1)).collect()));
                }
                TermRule::Leveled { covariate, levels } => {
                    let column = table.categorical(covariate).ok_or_else(|| {
                        Error::data(format!("missing column `{covariate}`"))
                    })?;
                    let index: std::collections::HashMap<&str, usize> =
                        levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
                    let idx = column.iter().map(|l| index.get(l.as_str()).copied()).collect();
                    resolved.push(Resolved::Indices(*col, idx));
                }
            }
        }

        let mut design = SparseRows::new(self.layout.n_latent);
        for i in 0..n {
            let mut row = Vec::with_capacity(resolved.len());
            for r in &resolved {
                match r {
                    Resolved::Constant(col) => row.push((*col, 1.0)),
                    Resolved::Values(col, values) => row.push((*col, values[i])),
                    Resolved::Indices(col, idx) => {
                        if let Some(j) = idx[i] {
                            row.push((col + j, 1.0));
                        }
                    }
                }
            }
            design.push_row(row);
        }
        Ok(design)
    }

    pub fn n_hyper(&self) -> usize {
        self.random_blocks.len()
    }

    pub fn n_latent(&self) -> usize {
        self.layout.n_latent
    }

    /// Human-readable label for each coordinate of a block: term names for
    /// the fixed block, unit ids for a spatial block, class indices for a
    /// random-walk block, and level names for an exchangeable block.
    pub fn block_labels(&self, block: &Block) -> Vec<String> {
        let mut labels = Vec::with_capacity(block.len);
        for (col, rule) in &self.terms {
            if *col < block.offset || *col >= block.offset + block.len {
                continue;
            }
            match rule {
                TermRule::Intercept => labels.push("(intercept)".to_string()),
                TermRule::Linear { covariate } => labels.push(covariate.clone()),
                TermRule::Spatial { unit_ids, .. } => {
                    labels.extend(unit_ids.iter().map(|id| id.to_string()));
                }
                TermRule::Binned { edges, .. } => {
                    labels.extend((0..edges.len() - 1).map(|j| j.to_string()));
                }
                TermRule::Leveled { levels, .. } => labels.extend(levels.iter().cloned()),
            }
        }
        labels
    }

    pub fn constraint_set(&self) -> Result<ConstraintSet> {
        if self.constraint_rows.is_empty() {
            Ok(ConstraintSet::empty(self.layout.n_latent))
        } else {
            ConstraintSet::new(&self.constraint_rows, self.layout.n_latent)
        }
    }

    /// Joint prior precision `Q(theta)` and its log generalized determinant
    /// (null-space dimensions excluded; the weak fixed-effect prior
    /// contributes its proper log-determinant).
    pub fn prior_precision(&self, theta: &[f64]) -> Result<(DMatrix<f64>, f64)> {
        if theta.len() != self.n_hyper() {
            return Err(Error::config(format!(
                "theta has {} entries, model has {} hyperparameters",
                theta.len(),
                self.n_hyper()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::numerical(format!("non-finite hyperparameters {theta:?}")));
        }
        let n = self.layout.n_latent;
        let mut q = DMatrix::zeros(n, n);
        let mut logdet = self.layout.n_fixed as f64 * FIXED_EFFECT_PRECISION.ln();
        for i in 0..self.layout.n_fixed {
            q[(i, i)] += FIXED_EFFECT_PRECISION;
        }
        for (rb, &th) in self.random_blocks.iter().zip(theta) {
            let tau = th.exp();
            let block = &self.layout.blocks[rb.block_index];
            rb.structure.add_to_dense(&mut q, block.offset, tau);
            logdet += rb.structure.logdet_plus_scaled(tau);
        }
        Ok((q, logdet))
    }

    /// Rank-one fillers for the constrained directions: `sum_c c c' / |c|^2`
    /// over the constraint rows.
    ///
    /// Added to a precision matrix, this makes it factorizable when its only
    /// null directions are (combinations of) the constraint rows — the
    /// situation with several intrinsic blocks, whose level is confounded
    /// with the intercept. Because the fill acts only orthogonally to the
    /// feasible subspace, every constrained quantity (determinant,
    /// covariance, kriging correction) is unchanged by it.
    pub fn constraint_fill(&self) -> DMatrix<f64> {
        let n = self.layout.n_latent;
        let mut fill = DMatrix::zeros(n, n);
        for row in &self.constraint_rows {
            let norm_sq = row.dot(row);
            for i in 0..n {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    fill[(i, j)] += row[i] * row[j] / norm_sq;
                }
            }
        }
        fill
    }

    /// Log density of the hyperparameter prior at `theta`.
    ///
    /// Each block sd `sigma = exp(-theta/2)` is Exponential(ln2/median), so
    /// the prior median of `sigma` is exactly the configured one; the change
    /// of variables to `theta` contributes `log(sigma/2)`.
    pub fn pc_prior_logdensity(&self, theta: &[f64]) -> f64 {
        self.random_blocks
            .iter()
            .zip(theta)
            .map(|(rb, &th)| {
                let sigma = (-th / 2.0).exp();
                rb.pc_rate.ln() - rb.pc_rate * sigma + sigma.ln() - std::f64::consts::LN_2
            })
            .sum()
    }

    /// Sum of `log(y_i!)`, the count-only part of the Poisson likelihood.
    pub fn log_factorial_counts(&self) -> f64 {
        self.counts.iter().map(|&y| statrs::function::gamma::ln_gamma(y as f64 + 1.0)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::build_adjacency;
    use approx::assert_abs_diff_eq;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    /// 6x6 grid, 3 vertical-strip units, one continuous and one categorical
    /// covariate.
    fn toy_table() -> PixelTable {
        let mut ids = Vec::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut units = Vec::new();
        let mut cont = Vec::new();
        let mut cat = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for y in 0..6i64 {
            for x in 0..6i64 {
                ids.push((y * 6 + x) as u64 + 1);
                xs.push(x);
                ys.push(y);
                units.push((x / 2) as u64 + 1);
                cont.push(rng.gen::<f64>() * 4.0 - 2.0);
                cat.push(["a", "b", "c"][(rng.gen::<f64>() * 3.0) as usize].to_string());
            }
        }
        PixelTable::from_columns(
            ids,
            xs,
            ys,
            vec![0; 36],
            vec![("grad".to_string(), cont)],
            vec![("rock".to_string(), cat)],
            vec![("unit".to_string(), units)],
        )
        .unwrap()
    }

    fn spatial_parts(table: &PixelTable) -> (MappingPartition, AdjacencyGraph) {
        let part = MappingPartition::from_table(table, "unit").unwrap();
        let graph = build_adjacency(table, &part, 1).unwrap();
        (part, graph)
    }

    #[test]
    fn intercept_only_predictor_is_constant() {
        let table = toy_table();
        let spec = ModelSpec { intercept: true, ..Default::default() };
        let model = AssembledModel::assemble(spec, &table, None).unwrap();
        assert_eq!(model.n_latent(), 1);
        let eta = model.design.mul_vec(&DVector::from_vec(vec![0.7]));
        assert!(eta.iter().all(|&e| e == 0.7));
    }

    #[test]
    fn linear_effect_multiplies_covariate() {
        let table = PixelTable::from_columns(
            vec![1],
            vec![0],
            vec![0],
            vec![0],
            vec![("g".to_string(), vec![2.0])],
            vec![],
            vec![],
        )
        .unwrap();
        let spec = ModelSpec {
            intercept: true,
            linear_effects: vec!["g".to_string()],
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, None).unwrap();
        let eta = model.design.mul_vec(&DVector::from_vec(vec![0.0, 0.5]));
        assert_eq!(eta[0], 1.0);
    }

    #[test]
    fn spatial_indicator_picks_the_pixel_unit() {
        let table = toy_table();
        let (part, graph) = spatial_parts(&table);
        let spec = ModelSpec {
            intercept: true,
            besag_partition: Some("unit".to_string()),
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, Some((&part, &graph))).unwrap();
        // Latent: [b0, U1, U2, U3]; pixel at x=5 sits in unit 3.
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.2]);
        let eta = model.design.mul_vec(&x);
        let pixel_in_unit3 = table.x.iter().position(|&px| px == 5).unwrap();
        assert_eq!(eta[pixel_in_unit3], 0.2);
        let pixel_in_unit1 = table.x.iter().position(|&px| px == 0).unwrap();
        assert_eq!(eta[pixel_in_unit1], 0.0);
    }

    #[test]
    fn predictor_reconstruction_is_exact_for_random_latents() {
        let table = toy_table();
        let (part, graph) = spatial_parts(&table);
        let spec = ModelSpec {
            intercept: true,
            linear_effects: vec!["grad".to_string()],
            besag_partition: Some("unit".to_string()),
            rw1_effects: vec![("grad".to_string(), 4)],
            iid_effects: vec!["rock".to_string()],
            ..Default::default()
        };
        // `grad` used twice (linear + binned) is rejected; drop the linear use.
        assert!(AssembledModel::assemble(spec, &table, Some((&part, &graph))).is_err());

        let spec = ModelSpec {
            intercept: true,
            besag_partition: Some("unit".to_string()),
            rw1_effects: vec![("grad".to_string(), 4)],
            iid_effects: vec!["rock".to_string()],
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, Some((&part, &graph))).unwrap();
        let n = model.n_latent();
        assert_eq!(n, 1 + 3 + 4 + 3);

        let (classes, _) = bin_equidistant(table.continuous("grad").unwrap(), 4).unwrap();
        let levels = ["a", "b", "c"];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let eta = model.design.mul_vec(&x);
            for i in 0..table.n_pixels() {
                let unit = part.unit_index[i];
                let level = levels
                    .iter()
                    .position(|l| *l == table.categorical("rock").unwrap()[i])
                    .unwrap();
                let manual = x[0] + x[1 + unit] + x[4 + classes[i] - 1] + x[8 + level];
                assert_eq!(eta[i], manual, "pixel {i}");
            }
        }
    }

    #[test]
    fn doubling_tau_doubles_the_iid_block() {
        let table = toy_table();
        let spec = ModelSpec {
            intercept: true,
            iid_effects: vec!["rock".to_string()],
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, None).unwrap();
        let (q1, _) = model.prior_precision(&[0.5f64.ln()]).unwrap();
        let (q2, _) = model.prior_precision(&[1.0f64.ln()]).unwrap();
        for j in 1..4 {
            assert_abs_diff_eq!(q2[(j, j)], 2.0 * q1[(j, j)], epsilon = 1e-15);
        }
        // fixed-effect corner unaffected by theta
        assert_eq!(q1[(0, 0)], q2[(0, 0)]);
    }

    #[test]
    fn iid_block_logdet_is_k_log_tau() {
        let table = toy_table();
        let spec = ModelSpec {
            intercept: false,
            iid_effects: vec!["rock".to_string()],
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, None).unwrap();
        assert_eq!(model.layout.n_fixed, 0);
        // 3 levels at tau = e^2 -> logdet = 3 * 2 = 6.
        let (_, logdet) = model.prior_precision(&[2.0]).unwrap();
        assert_abs_diff_eq!(logdet, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn besag_block_logdet_matches_eigenvalue_oracle() {
        let table = toy_table();
        let (part, graph) = spatial_parts(&table);
        let spec = ModelSpec {
            intercept: false,
            besag_partition: Some("unit".to_string()),
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, Some((&part, &graph))).unwrap();
        let structure = &model.random_blocks[0].structure;
        let eig = nalgebra::SymmetricEigen::new(structure.to_dense());
        let expected: f64 =
            eig.eigenvalues.iter().filter(|&&ev| ev > 1e-9).map(|ev| ev.ln()).sum();
        let (_, logdet) = model.prior_precision(&[0.0]).unwrap();
        assert_abs_diff_eq!(logdet, expected, epsilon = 1e-9);
    }

    #[test]
    fn prior_rate_comes_from_the_median() {
        let table = toy_table();
        let spec = ModelSpec {
            intercept: true,
            iid_effects: vec!["rock".to_string()],
            pc_prior_median: 0.1,
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, None).unwrap();
        assert_abs_diff_eq!(
            model.random_blocks[0].pc_rate,
            6.931471805599453,
            epsilon = 1e-12
        );
    }

    #[test]
    fn prior_density_integrates_to_one_and_median_splits_mass() {
        let table = toy_table();
        let spec = ModelSpec {
            intercept: true,
            iid_effects: vec!["rock".to_string()],
            pc_prior_median: 0.1,
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, None).unwrap();
        // Simpson over theta; sigma = exp(-theta/2) maps this to the whole
        // positive sigma axis.
        let simpson = |lo: f64, hi: f64, n: usize| -> f64 {
            let h = (hi - lo) / n as f64;
            let f = |t: f64| model.pc_prior_logdensity(&[t]).exp();
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(lo + i as f64 * h);
            }
            s * h / 3.0
        };
        let total = simpson(-25.0, 80.0, 8000);
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
        // Mass above the median sigma (theta below -2 ln m) is one half.
        let split = -2.0 * 0.1f64.ln();
        let upper_sigma_mass = simpson(-25.0, split, 4000);
        assert_abs_diff_eq!(upper_sigma_mass, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn prior_density_shrinks_with_sigma() {
        let table = toy_table();
        let spec = ModelSpec {
            intercept: true,
            iid_effects: vec!["rock".to_string()],
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, None).unwrap();
        // On the sigma scale the density is exponential, hence decreasing.
        let rate = model.random_blocks[0].pc_rate;
        let density = |sigma: f64| {
            let theta = -2.0 * sigma.ln();
            // divide out the Jacobian |dtheta/dsigma| = 2/sigma
            model.pc_prior_logdensity(&[theta]).exp() * 2.0 / sigma
        };
        let mut prev = f64::INFINITY;
        for i in 1..60 {
            let sigma = i as f64 * 0.05;
            let d = density(sigma);
            assert!(d < prev, "density not decreasing at sigma={sigma}");
            assert_abs_diff_eq!(d, rate * (-rate * sigma).exp(), epsilon = 1e-10);
            prev = d;
        }
    }

    #[test]
    fn joint_precision_is_positive_definite_under_constraints() {
        let table = toy_table();
        let (part, graph) = spatial_parts(&table);
        let spec = ModelSpec {
            intercept: true,
            besag_partition: Some("unit".to_string()),
            rw1_effects: vec![("grad".to_string(), 4)],
            iid_effects: vec!["rock".to_string()],
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, Some((&part, &graph))).unwrap();
        assert_eq!(model.n_hyper(), 3);
        let constraints = model.constraint_set().unwrap();
        assert_eq!(constraints.len(), 2); // besag (connected) + rw1

        for theta in [[-2.0, 0.0, 3.0], [1.0, 1.0, 1.0], [4.0, -3.0, 0.5]] {
            let (q, _) = model.prior_precision(&theta).unwrap();
            assert_eq!(q.transpose(), q);
            // PSD: eigenvalues nonnegative up to roundoff.
            let eig = nalgebra::SymmetricEigen::new(q.clone());
            assert!(eig.eigenvalues.iter().all(|&ev| ev > -1e-9));
            // With likelihood curvature plus the constraint fill the matrix
            // factorizes, and the constrained determinant does not depend on
            // the fill magnitude.
            let gram = model.design.weighted_gram(&DVector::from_element(36, 0.5));
            let fill = model.constraint_fill();
            let ld1 = constraints
                .constrained_log_det(
                    &crate::linalg::DenseChol::new(&q + &gram + &fill, "curved").unwrap(),
                )
                .unwrap();
            let ld2 = constraints
                .constrained_log_det(
                    &crate::linalg::DenseChol::new(&q + &gram + &fill * 2.5, "curved").unwrap(),
                )
                .unwrap();
            assert!(ld1.is_finite());
            assert_abs_diff_eq!(ld1, ld2, epsilon = 1e-8);
        }
    }

    #[test]
    fn theta_dimension_mismatch_is_rejected() {
        let table = toy_table();
        let spec = ModelSpec {
            intercept: true,
            iid_effects: vec!["rock".to_string()],
            ..Default::default()
        };
        let model = AssembledModel::assemble(spec, &table, None).unwrap();
        assert!(model.prior_precision(&[]).is_err());
        assert!(model.prior_precision(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn missing_covariate_is_a_config_error() {
        let table = toy_table();
        let spec = ModelSpec {
            intercept: true,
            linear_effects: vec!["nope".to_string()],
            ..Default::default()
        };
        let err = AssembledModel::assemble(spec, &table, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("nope"));
    }
}
