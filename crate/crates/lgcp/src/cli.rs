//! Command-line entry points and run configuration.
//!
//! One static binary with subcommands — `fit`, `predict`, `cv`, `simulate`,
//! `screen`, `compare`, `report` — all driven by a line-oriented
//! configuration file plus `--set section.key=value` overrides. Every
//! command is deterministic given the effective configuration: rerunning
//! yields byte-identical artifacts. Logs go to standard error; data goes
//! only to files, each starting with a comment line that records the tool
//! version, the configuration hash, and the seed. Exit codes: 0 success,
//! 2 configuration error, 3 data error, 4 numerical failure.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{self, ConfigFile};
use crate::error::{Error, Result};
use crate::inference::{
    fit_standardized, significance_label, FitOptions, PosteriorResult,
};
use crate::ingest::{
    build_adjacency, load_pixel_table, write_pixel_table, AdjacencyGraph, CovariateSpec,
    MappingPartition, PixelTable, Standardization, TableSchema,
};
use crate::metrics::{count_labels, hosmer_class, kfold_split, kfold_split_blocked, roc_auc, run_cv, CvOptions, CvReport};
use crate::model::{AssembledModel, ModelSpec};
use crate::predict::{
    aggregate_intensity, intensity_from_eta, susceptibility, Estimator, IntensitySurface,
    UnitIntensity,
};
use crate::simulate::{simulate_lgcp, write_truth_csv, SimulationConfig, TriggerConfig};

/// Write a file atomically: stage into a temp file in the target directory,
/// then rename over the destination. Readers never observe partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    use std::io::Write;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn log(msg: &str) {
    eprintln!("lgcp: {msg}");
}

#[derive(Debug, Parser)]
#[command(name = "lgcp", version, about = "Spatial count models on pixel grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration file.
    #[arg(long, short = 'c')]
    pub config: PathBuf,
    /// Override one setting, e.g. `--set run.seed=7` (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Cap the worker thread count (shorthand for `--set run.workers=N`).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory (shorthand for `--set paths.output=DIR`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model and write posterior artifacts.
    Fit(CommonArgs),
    /// Write fitted intensity and susceptibility per mapping partition.
    Predict(CommonArgs),
    /// K-fold cross-validation metrics.
    Cv(CommonArgs),
    /// Draw a synthetic dataset and its ground-truth sidecar.
    Simulate(CommonArgs),
    /// Rank single-covariate models by pixel AUC.
    Screen(CommonArgs),
    /// Compare trigger-only, latent-only, and combined models.
    Compare(CommonArgs),
    /// Render the full text report.
    Report(CommonArgs),
}

/// Dispatch a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let (args, command): (&CommonArgs, fn(&RunConfig) -> Result<Vec<PathBuf>>) =
        match &cli.command {
            Command::Fit(a) => (a, cmd_fit),
            Command::Predict(a) => (a, cmd_predict),
            Command::Cv(a) => (a, cmd_cv),
            Command::Simulate(a) => (a, cmd_simulate),
            Command::Screen(a) => (a, cmd_screen),
            Command::Compare(a) => (a, cmd_compare),
            Command::Report(a) => (a, cmd_report),
        };
    let run = RunConfig::load(args)?;
    if run.workers > 0 {
        // A second initialization in the same process is harmless: the
        // first pool wins and the pool size stays a cap, not a contract.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(run.workers).build_global();
    }
    command(&run)?;
    Ok(())
}

/// Keys understood per section; anything else is a configuration error.
const ALLOWED_KEYS: &[(&str, &[&str])] = &[
    ("run", &["seed", "workers"]),
    ("paths", &["data", "output", "model"]),
    ("model", config::MODEL_KEYS),
    ("data", &["partitions", "spacing"]),
    ("fit", &["estimator", "grid_step", "grid_radius"]),
    ("cv", &["k", "seed", "blocked"]),
    (
        "simulate",
        &[
            "width",
            "height",
            "units",
            "beta0",
            "sigma0",
            "seed",
            "covariates",
            "trigger_amplitude",
            "trigger_decay",
            "trigger_bumps",
            "trigger_bump_amplitude",
        ],
    ),
    ("screen", &["candidates"]),
    ("compare", &["trigger"]),
];

/// An effective run: merged configuration, identity hash, and the handful
/// of settings every command needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub config: ConfigFile,
    /// FNV-1a hash of the effective configuration (model file included).
    pub hash: String,
    /// Directory all artifacts are written into.
    pub out_dir: PathBuf,
    /// Directory paths in the configuration are resolved against (the
    /// configuration file's own directory).
    pub base: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

impl RunConfig {
    pub fn load(args: &CommonArgs) -> Result<Self> {
        let mut config = ConfigFile::from_path(&args.config)?;
        for spec in &args.set {
            config.apply_override(spec)?;
        }
        if let Some(w) = args.workers {
            config.apply_override(&format!("run.workers={w}"))?;
        }
        if let Some(out) = &args.output {
            config.apply_override(&format!("paths.output={}", out.display()))?;
        }
        let base = args
            .config
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();

        // A model file is the same grammar restricted to [model]; its
        // entries merge into the run configuration (and its settings are
        // part of the configuration hash).
        if let Some(model_path) = config.get_str("paths", "model").map(str::to_string) {
            if config.has_section("model") {
                return Err(Error::config(
                    "model is specified both inline ([model]) and as a file (paths.model)"
                        .to_string(),
                ));
            }
            let resolved =
                if Path::new(&model_path).is_absolute() { PathBuf::from(&model_path) } else { base.join(&model_path) };
            let model_config = ConfigFile::from_path(&resolved)?;
            model_config.validate_keys(&[("model", config::MODEL_KEYS)])?;
            config.merge(&model_config);
        }
        config.validate_keys(ALLOWED_KEYS)?;

        let seed = config.get_u64("run", "seed")?.unwrap_or(0);
        let workers = config.get_usize("run", "workers")?.unwrap_or(0);
        let out = config
            .get_str("paths", "output")
            .ok_or_else(|| Error::config("paths.output is required".to_string()))?;
        let out_dir = if Path::new(out).is_absolute() { PathBuf::from(out) } else { base.join(out) };
        let hash = config.hash_hex();
        Ok(RunConfig { config, hash, out_dir, base, seed, workers })
    }

    fn resolve(&self, path: &str) -> PathBuf {
        if Path::new(path).is_absolute() {
            PathBuf::from(path)
        } else {
            self.base.join(path)
        }
    }

    /// The `tool version / config hash / seed` line every artifact carries.
    pub fn meta_line(&self) -> String {
        format!("lgcp {} config={} seed={}", env!("CARGO_PKG_VERSION"), self.hash, self.seed)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        config::model_spec(&self.config)
    }

    fn estimator(&self) -> Result<Estimator> {
        match self.config.get_str("fit", "estimator") {
            None => Ok(Estimator::LognormalMean),
            Some(s) => Estimator::parse(s),
        }
    }

    fn fit_options(&self) -> Result<FitOptions> {
        let mut options = FitOptions::default();
        if let Some(v) = self.config.get_f64("fit", "grid_step")? {
            options.grid_step = v;
        }
        if let Some(v) = self.config.get_usize("fit", "grid_radius")? {
            options.grid_radius = v;
        }
        Ok(options)
    }

    fn partitions(&self) -> Vec<String> {
        self.config.get_list("data", "partitions")
    }

    /// Column schema implied by the model plus any extra linear covariates
    /// (screening candidates, a comparison trigger).
    fn schema(&self, spec: &ModelSpec, extra_linear: &[String]) -> TableSchema {
        let mut covariates: Vec<CovariateSpec> = Vec::new();
        let mut seen = BTreeSet::new();
        for name in &spec.linear_effects {
            if seen.insert(name.clone()) {
                covariates.push(CovariateSpec::linear(name.clone()));
            }
        }
        for (name, bins) in &spec.rw1_effects {
            if seen.insert(name.clone()) {
                covariates.push(CovariateSpec::binned(name.clone(), *bins));
            }
        }
        for name in &spec.iid_effects {
            if seen.insert(name.clone()) {
                covariates.push(CovariateSpec::categorical(name.clone()));
            }
        }
        for name in extra_linear {
            if seen.insert(name.clone()) {
                covariates.push(CovariateSpec::linear(name.clone()));
            }
        }
        let mut partitions = self.partitions();
        if let Some(p) = &spec.besag_partition {
            if !partitions.contains(p) {
                partitions.push(p.clone());
            }
        }
        TableSchema::new(covariates, partitions)
    }

    fn load_table(&self, schema: &TableSchema) -> Result<PixelTable> {
        let path = self
            .config
            .get_str("paths", "data")
            .ok_or_else(|| Error::config("paths.data is required".to_string()))?;
        load_pixel_table(&self.resolve(path), schema)
    }

    fn spatial_structures(
        &self,
        spec: &ModelSpec,
        table: &PixelTable,
    ) -> Result<Option<(MappingPartition, AdjacencyGraph)>> {
        match &spec.besag_partition {
            None => Ok(None),
            Some(name) => {
                let partition = MappingPartition::from_table(table, name)?;
                let spacing = self.config.get_u64("data", "spacing")?.unwrap_or(1) as i64;
                let graph = build_adjacency(table, &partition, spacing)?;
                Ok(Some((partition, graph)))
            }
        }
    }

    /// Write one CSV artifact with the standard metadata line.
    fn write_csv(&self, name: &str, columns: &str, rows: &[String]) -> Result<PathBuf> {
        let mut out = format!("# {}\n{columns}\n", self.meta_line());
        for row in rows {
            out.push_str(row);
            out.push('\n');
        }
        let path = self.out_dir.join(name);
        write_atomic(&path, out.as_bytes())?;
        log(&format!("wrote {}", path.display()));
        Ok(path)
    }
}

/// Everything a fitted run exposes to the artifact writers.
struct Fitted {
    spec: ModelSpec,
    table: PixelTable,
    spatial: Option<(MappingPartition, AdjacencyGraph)>,
    model: AssembledModel,
    result: PosteriorResult,
    standardization: Standardization,
    estimator: Estimator,
    surface: IntensitySurface,
}

fn fit_pipeline(run: &RunConfig) -> Result<Fitted> {
    let spec = run.model_spec()?;
    let schema = run.schema(&spec, &[]);
    let table = run.load_table(&schema)?;
    let spatial = run.spatial_structures(&spec, &table)?;
    log(&format!(
        "fitting: {} pixels, {} events",
        table.n_pixels(),
        table.total_count()
    ));
    let (model, result, standardization) = fit_standardized(
        &spec,
        &table,
        spatial.as_ref().map(|(p, g)| (p, g)),
        &run.fit_options()?,
    )?;
    for w in model.warnings.iter().chain(&result.warnings) {
        log(&format!("warning: {w}"));
    }
    let estimator = run.estimator()?;
    let surface = intensity_from_eta(&result.eta, estimator);
    Ok(Fitted { spec, table, spatial, model, result, standardization, estimator, surface })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Fit the model; write posterior artifacts (`summary.csv`, `fixed.csv`,
/// `blocks.csv`, `theta.csv`, `eta.csv`).
pub fn cmd_fit(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let fitted = fit_pipeline(run)?;
    let mut artifacts = Vec::new();

    // summary.csv: scalar facts about the run.
    let fitted_total: f64 = fitted.surface.lambda.iter().sum();
    let observed_total = fitted.table.total_count();
    let mut rows = vec![
        format!("pixels,{}", fitted.table.n_pixels()),
        format!("observed_total,{observed_total}"),
        format!("fitted_total,{}", fmt(fitted_total)),
        format!("estimator,{}", fitted.estimator.as_str()),
        format!("grid_points,{}", fitted.result.grid.points.len()),
    ];
    for (block_index, value) in fitted.result.theta_hat.iter().enumerate() {
        let block = &fitted.model.layout.blocks
            [fitted.model.random_blocks[block_index].block_index];
        rows.push(format!("theta_hat_{},{}", block.name, fmt(*value)));
        rows.push(format!("sigma_hat_{},{}", block.name, fmt((-value / 2.0).exp())));
    }
    let labels = count_labels(&fitted.table.counts);
    match roc_auc(&fitted.surface.lambda, &labels) {
        Ok(curve) => {
            rows.push(format!("in_sample_auc,{}", fmt(curve.auc)));
            rows.push(format!("in_sample_auc_class,{}", hosmer_class(curve.auc)));
        }
        Err(e) => log(&format!("in-sample AUC skipped ({e})")),
    }
    artifacts.push(run.write_csv("summary.csv", "key,value", &rows)?);

    // fixed.csv: fixed-effect posteriors on the standardized scale, with
    // the training location/scale of each covariate alongside.
    if let Some(block) = fitted.model.layout.block("fixed") {
        let names = fitted.model.block_labels(block);
        let summaries = fitted.result.block_summaries(block);
        let rows: Vec<String> = names
            .iter()
            .zip(summaries)
            .map(|(name, s)| {
                let (mean, sd) = fitted.standardization.lookup(name).unwrap_or((0.0, 1.0));
                format!(
                    "{name},{},{},{},{},{},{}",
                    fmt(s.mean),
                    fmt(s.sd),
                    fmt(s.q025),
                    fmt(s.q975),
                    fmt(mean),
                    fmt(sd)
                )
            })
            .collect();
        artifacts.push(run.write_csv(
            "fixed.csv",
            "term,mean,sd,q025,q975,covariate_mean,covariate_sd",
            &rows,
        )?);
    }

    // blocks.csv: every random-effect coordinate with its interval sign.
    let mut rows = Vec::new();
    for rb in &fitted.model.random_blocks {
        let block = &fitted.model.layout.blocks[rb.block_index];
        let labels = fitted.model.block_labels(block);
        for (label, s) in labels.iter().zip(fitted.result.block_summaries(block)) {
            rows.push(format!(
                "{},{label},{},{},{},{},{}",
                block.name,
                fmt(s.mean),
                fmt(s.sd),
                fmt(s.q025),
                fmt(s.q975),
                significance_label(s.q025, s.q975).as_str()
            ));
        }
    }
    artifacts.push(run.write_csv(
        "blocks.csv",
        "block,level,mean,sd,q025,q975,significance",
        &rows,
    )?);

    // theta.csv: the integration grid.
    let mut columns = String::new();
    for rb in &fitted.model.random_blocks {
        let block = &fitted.model.layout.blocks[rb.block_index];
        let _ = write!(columns, "theta_{},", block.name);
    }
    columns.push_str("log_post,weight");
    let rows: Vec<String> = fitted
        .result
        .grid
        .points
        .iter()
        .map(|p| {
            let mut row = String::new();
            for t in &p.theta {
                let _ = write!(row, "{},", fmt(*t));
            }
            let _ = write!(row, "{},{}", fmt(p.log_post), fmt(p.weight));
            row
        })
        .collect();
    artifacts.push(run.write_csv("theta.csv", &columns, &rows)?);

    // eta.csv: per-pixel linear predictor.
    let rows: Vec<String> = fitted
        .table
        .pixel_ids
        .iter()
        .zip(&fitted.result.eta)
        .map(|(id, e)| format!("{id},{},{}", fmt(e.mean), fmt(e.sd)))
        .collect();
    artifacts.push(run.write_csv("eta.csv", "pixel_id,eta_mean,eta_sd", &rows)?);

    Ok(artifacts)
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Fit, then write intensity and susceptibility surfaces: one pixel-level
/// CSV plus one per requested mapping partition.
pub fn cmd_predict(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let fitted = fit_pipeline(run)?;
    let mut artifacts = Vec::new();

    let rows: Vec<String> = (0..fitted.table.n_pixels())
        .map(|i| -> Result<String> {
            let lambda = fitted.surface.lambda[i];
            Ok(format!(
                "{},{},{},{},{},{}",
                fitted.table.pixel_ids[i],
                fitted.table.x[i],
                fitted.table.y[i],
                fitted.table.counts[i],
                fmt(lambda),
                fmt(susceptibility(lambda)?)
            ))
        })
        .collect::<Result<_>>()?;
    artifacts.push(run.write_csv(
        "intensity_pixel.csv",
        "pixel_id,x,y,count,lambda,susceptibility",
        &rows,
    )?);

    // The partition carrying the latent field also reports the field's
    // interval sign per unit.
    let significance = match (&fitted.spec.besag_partition, &fitted.spatial) {
        (Some(name), Some(_)) => {
            let block = fitted
                .model
                .layout
                .blocks
                .iter()
                .find(|b| b.name == format!("spatial:{name}"))
                .expect("spatial block exists when a partition is configured");
            Some((name.clone(), crate::inference::lse_significance(&fitted.result, block)))
        }
        _ => None,
    };

    let mut names = run.partitions();
    if let Some(p) = &fitted.spec.besag_partition {
        if !names.contains(p) {
            names.push(p.clone());
        }
    }
    for name in names {
        let partition = MappingPartition::from_table(&fitted.table, &name)?;
        let unit: UnitIntensity =
            aggregate_intensity(&fitted.surface, &partition, &fitted.table.counts)?;
        let with_sig = significance.as_ref().filter(|(n, _)| *n == name).map(|(_, s)| s);
        let rows: Vec<String> = (0..unit.unit_ids.len())
            .map(|u| {
                let mut row = format!(
                    "{},{},{},{}",
                    unit.unit_ids[u],
                    unit.counts[u],
                    fmt(unit.lambda[u]),
                    fmt(unit.susceptibility[u])
                );
                if let Some(sig) = with_sig {
                    let _ = write!(row, ",{}", sig[u].as_str());
                }
                row
            })
            .collect();
        let columns = if with_sig.is_some() {
            "unit_id,count,lambda,susceptibility,significance"
        } else {
            "unit_id,count,lambda,susceptibility"
        };
        artifacts.push(run.write_csv(&format!("intensity_{}.csv", sanitize(&name)), columns, &rows)?);
    }
    Ok(artifacts)
}

fn cv_report(run: &RunConfig) -> Result<CvReport> {
    let spec = run.model_spec()?;
    let schema = run.schema(&spec, &[]);
    let table = run.load_table(&schema)?;
    let spatial = run.spatial_structures(&spec, &table)?;
    let k = run.config.get_usize("cv", "k")?.unwrap_or(10);
    let seed = run.config.get_u64("cv", "seed")?.unwrap_or(run.seed);
    let plan = match run.config.get_str("cv", "blocked") {
        None => kfold_split(table.n_pixels(), k, seed)?,
        Some(name) => {
            let partition = MappingPartition::from_table(&table, name)?;
            kfold_split_blocked(&partition, k, seed)?
        }
    };
    log(&format!("cross-validating: {k} folds, seed {seed}"));
    let options = CvOptions { estimator: run.estimator()?, fit: run.fit_options()? };
    let report = run_cv(&spec, &table, spatial.as_ref().map(|(p, g)| (p, g)), &plan, &options)?;
    for w in &report.warnings {
        log(&format!("warning: {w}"));
    }
    Ok(report)
}

/// Cross-validate and write `metrics.csv` (`metric,partition,fold,value`).
pub fn cmd_cv(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let report = cv_report(run)?;
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{},{},{},{}", r.metric, r.partition, r.fold, fmt(r.value)))
        .collect();
    Ok(vec![run.write_csv("metrics.csv", "metric,partition,fold,value", &rows)?])
}

fn sim_config(run: &RunConfig) -> Result<SimulationConfig> {
    let mut sim = SimulationConfig::default();
    let cfg = &run.config;
    if let Some(v) = cfg.get_usize("simulate", "width")? {
        sim.width = v;
    }
    if let Some(v) = cfg.get_usize("simulate", "height")? {
        sim.height = v;
    }
    if let Some(v) = cfg.get_usize("simulate", "units")? {
        sim.n_units = v;
    }
    if let Some(v) = cfg.get_f64("simulate", "beta0")? {
        sim.beta0 = v;
    }
    if let Some(v) = cfg.get_f64("simulate", "sigma0")? {
        sim.sigma0 = v;
    }
    sim.seed = cfg.get_u64("simulate", "seed")?.unwrap_or(run.seed);
    sim.beta.clear();
    for item in cfg.get_list("simulate", "covariates") {
        let (name, coef) = item.split_once(':').ok_or_else(|| {
            Error::config(format!(
                "simulate.covariates: `{item}` is not of the form name:coefficient"
            ))
        })?;
        let coef: f64 = coef.trim().parse().map_err(|_| {
            Error::config(format!("simulate.covariates: `{item}` has a non-numeric coefficient"))
        })?;
        sim.beta.push((name.trim().to_string(), coef));
    }
    sim.trigger = match cfg.get_f64("simulate", "trigger_amplitude")? {
        None => None,
        Some(amplitude) => Some(TriggerConfig {
            amplitude,
            decay: cfg.get_f64("simulate", "trigger_decay")?.unwrap_or(5.0),
            bumps: cfg.get_usize("simulate", "trigger_bumps")?.unwrap_or(0),
            bump_amplitude: cfg.get_f64("simulate", "trigger_bump_amplitude")?.unwrap_or(0.0),
        }),
    };
    Ok(sim)
}

/// Draw one synthetic dataset; write `data.csv` (pixel table) and
/// `truth.csv` (latent truth sidecar).
pub fn cmd_simulate(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let sim = sim_config(run)?;
    log(&format!(
        "simulating: {}x{} grid, {} units, seed {}",
        sim.width, sim.height, sim.n_units, sim.seed
    ));
    let dataset = simulate_lgcp(&sim)?;
    std::fs::create_dir_all(&run.out_dir)?;
    let data_path = run.out_dir.join("data.csv");
    write_pixel_table(&dataset.table, &data_path, &[run.meta_line()])?;
    log(&format!("wrote {}", data_path.display()));
    let truth_path = run.out_dir.join("truth.csv");
    write_truth_csv(&dataset, &truth_path, &[run.meta_line()])?;
    log(&format!("wrote {}", truth_path.display()));
    Ok(vec![data_path, truth_path])
}

/// Fit `intercept + candidate` per screening candidate; report pixel AUC of
/// the susceptibility surface, best first.
fn screen_table(run: &RunConfig) -> Result<Vec<(String, f64)>> {
    let candidates = run.config.get_list("screen", "candidates");
    if candidates.is_empty() {
        return Err(Error::config("screen.candidates is required".to_string()));
    }
    let schema = TableSchema::new(
        candidates.iter().map(|c| CovariateSpec::linear(c.clone())).collect(),
        run.partitions(),
    );
    let table = run.load_table(&schema)?;
    let labels = count_labels(&table.counts);
    let fit_options = run.fit_options()?;
    let estimator = run.estimator()?;
    let mut rows: Vec<(String, f64)> = candidates
        .par_iter()
        .map(|candidate| -> Result<(String, f64)> {
            let spec = ModelSpec {
                linear_effects: vec![candidate.clone()],
                ..Default::default()
            };
            let (_, result, _) = fit_standardized(&spec, &table, None, &fit_options)?;
            let surface = intensity_from_eta(&result.eta, estimator);
            let scores: Vec<f64> =
                surface.lambda.iter().map(|&l| susceptibility(l)).collect::<Result<_>>()?;
            let auc = roc_auc(&scores, &labels)?.auc;
            Ok((candidate.clone(), auc))
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(rows)
}

/// Screen candidates and write the ranked `screen.csv` (`covariate,auc`).
pub fn cmd_screen(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let ranking = screen_table(run)?;
    let rows: Vec<String> =
        ranking.iter().map(|(name, auc)| format!("{name},{}", fmt(*auc))).collect();
    Ok(vec![run.write_csv("screen.csv", "covariate,auc", &rows)?])
}

/// The three comparison fits: shared covariates with the trigger, with the
/// latent field, and with both.
fn compare_table(run: &RunConfig) -> Result<(Vec<(String, f64)>, String)> {
    let trigger = run
        .config
        .get_str("compare", "trigger")
        .ok_or_else(|| Error::config("compare.trigger is required".to_string()))?
        .to_string();
    let base = run.model_spec()?;
    let partition_name = base.besag_partition.clone().ok_or_else(|| {
        Error::config("compare needs a latent field: set model.besag".to_string())
    })?;
    let shared: Vec<String> =
        base.linear_effects.iter().filter(|n| **n != trigger).cloned().collect();

    // The shared (non-trigger) part identifies the comparison; its hash is
    // reported so rows are verifiably like-for-like.
    let mut canonical = format!("intercept={}\n", base.intercept);
    let _ = writeln!(canonical, "linear={}", shared.join(","));
    for (name, k) in &base.rw1_effects {
        let _ = writeln!(canonical, "rw1={name}:{k}");
    }
    let _ = writeln!(canonical, "iid={}", base.iid_effects.join(","));
    let _ = writeln!(canonical, "pc_median={}", base.pc_prior_median);
    let shared_hash = format!("{:016x}", config::fnv1a(canonical.as_bytes()));

    let with_trigger = |spec: &ModelSpec| -> ModelSpec {
        let mut linear = shared.clone();
        linear.push(trigger.clone());
        ModelSpec { linear_effects: linear, ..spec.clone() }
    };
    let trigger_only = with_trigger(&ModelSpec { besag_partition: None, ..base.clone() });
    let lse_only = ModelSpec { linear_effects: shared.clone(), ..base.clone() };
    let both = with_trigger(&base);

    let schema = run.schema(&both, &[trigger.clone()]);
    let table = run.load_table(&schema)?;
    let partition = MappingPartition::from_table(&table, &partition_name)?;
    let spacing = run.config.get_u64("data", "spacing")?.unwrap_or(1) as i64;
    let graph = build_adjacency(&table, &partition, spacing)?;
    let labels = count_labels(&table.counts);
    let fit_options = run.fit_options()?;
    let estimator = run.estimator()?;

    let fits = [
        ("trigger-only", trigger_only),
        ("lse-only", lse_only),
        ("trigger+lse", both),
    ];
    let rows: Vec<(String, f64)> = fits
        .par_iter()
        .map(|(name, spec)| -> Result<(String, f64)> {
            log(&format!("comparing: fitting {name}"));
            let spatial =
                spec.besag_partition.as_ref().map(|_| (&partition, &graph));
            let (_, result, _) = fit_standardized(spec, &table, spatial, &fit_options)?;
            let surface = intensity_from_eta(&result.eta, estimator);
            let scores: Vec<f64> =
                surface.lambda.iter().map(|&l| susceptibility(l)).collect::<Result<_>>()?;
            Ok((name.to_string(), roc_auc(&scores, &labels)?.auc))
        })
        .collect::<Result<_>>()?;
    Ok((rows, shared_hash))
}

/// Compare the three configurations; write `compare.csv`
/// (`model,auc,shared_hash`).
pub fn cmd_compare(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let (rows, shared_hash) = compare_table(run)?;
    let rows: Vec<String> = rows
        .iter()
        .map(|(name, auc)| format!("{name},{},{shared_hash}", fmt(*auc)))
        .collect();
    Ok(vec![run.write_csv("compare.csv", "model,auc,shared_hash", &rows)?])
}

/// Render the full text report: fitted model, latent-field significance
/// listing, and — when configured — screening, comparison, and
/// cross-validation tables.
pub fn cmd_report(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let fitted = fit_pipeline(run)?;
    let mut text = format!("# {}\n", run.meta_line());

    let _ = writeln!(text, "\n== Fitted model ==");
    let _ = writeln!(
        text,
        "pixels: {}   observed events: {}   fitted total: {:.2}",
        fitted.table.n_pixels(),
        fitted.table.total_count(),
        fitted.surface.lambda.iter().sum::<f64>()
    );
    for (i, value) in fitted.result.theta_hat.iter().enumerate() {
        let block =
            &fitted.model.layout.blocks[fitted.model.random_blocks[i].block_index];
        let _ = writeln!(
            text,
            "block {}: posterior-mode sd {:.4}",
            block.name,
            (-value / 2.0).exp()
        );
    }
    let labels = count_labels(&fitted.table.counts);
    if let Ok(curve) = roc_auc(&fitted.surface.lambda, &labels) {
        let _ = writeln!(
            text,
            "in-sample pixel AUC: {:.4} ({})",
            curve.auc,
            hosmer_class(curve.auc)
        );
    }

    if let Some(block) = fitted.model.layout.block("fixed") {
        let _ = writeln!(text, "\n-- Fixed effects (standardized scale) --");
        let _ = writeln!(text, "{:<20} {:>10} {:>10} {:>10} {:>10}", "term", "mean", "sd", "2.5%", "97.5%");
        for (name, s) in
            fitted.model.block_labels(block).iter().zip(fitted.result.block_summaries(block))
        {
            let _ = writeln!(
                text,
                "{name:<20} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                s.mean, s.sd, s.q025, s.q975
            );
        }
    }

    if let (Some(name), Some(_)) = (&fitted.spec.besag_partition, &fitted.spatial) {
        let block_name = format!("spatial:{name}");
        let block = fitted
            .model
            .layout
            .block(&block_name)
            .expect("spatial block exists when a partition is configured");
        let labels = fitted.model.block_labels(block);
        let sig = crate::inference::lse_significance(&fitted.result, block);
        let _ = writeln!(text, "\n-- Latent spatial effect per unit ({name}) --");
        let _ = writeln!(
            text,
            "{:<12} {:>10} {:>10} {:>10} {:>10}  {}",
            "unit", "mean", "sd", "2.5%", "97.5%", "significance"
        );
        let summaries = fitted.result.block_summaries(block);
        for ((label, s), sig) in labels.iter().zip(summaries).zip(&sig) {
            let _ = writeln!(
                text,
                "{label:<12} {:>10.4} {:>10.4} {:>10.4} {:>10.4}  {}",
                s.mean,
                s.sd,
                s.q025,
                s.q975,
                sig.as_str()
            );
        }
        let count = |want: crate::inference::Significance| {
            sig.iter().filter(|s| **s == want).count()
        };
        let _ = writeln!(
            text,
            "summary: {} positive, {} negative, {} not significant",
            count(crate::inference::Significance::Positive),
            count(crate::inference::Significance::Negative),
            count(crate::inference::Significance::NotSignificant)
        );
    }

    if run.config.has_section("screen") {
        let _ = writeln!(text, "\n== Covariate screening ==");
        let _ = writeln!(text, "{:<20} {:>10}  {}", "covariate", "auc", "class");
        for (name, auc) in screen_table(run)? {
            let _ = writeln!(text, "{name:<20} {auc:>10.4}  {}", hosmer_class(auc));
        }
    }

    if run.config.has_section("compare") {
        let (rows, shared_hash) = compare_table(run)?;
        let _ = writeln!(text, "\n== Model comparison ==");
        let _ = writeln!(text, "{:<16} {:>10}", "model", "auc");
        for (name, auc) in &rows {
            let _ = writeln!(text, "{name:<16} {auc:>10.4}");
        }
        let _ = writeln!(text, "shared covariates: {shared_hash}");
    }

    if run.config.has_section("cv") {
        let report = cv_report(run)?;
        let _ = writeln!(text, "\n== Cross-validation ==");
        let _ = writeln!(text, "{:<8} {:<12} {:<10} {:>12}", "metric", "partition", "fold", "value");
        for r in &report.rows {
            let _ = writeln!(
                text,
                "{:<8} {:<12} {:<10} {:>12.6}",
                r.metric, r.partition, r.fold, r.value
            );
        }
    }

    let path = run.out_dir.join("report.txt");
    write_atomic(&path, text.as_bytes())?;
    log(&format!("wrote {}", path.display()));
    Ok(vec![path])
}
