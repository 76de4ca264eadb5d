//! Monte-Carlo drivers, data generators and JSON reports.
//!
//! Every driver is a pure function of its [`ExperimentConfig`]: trial `t` draws
//! all of its randomness from `seed.derive("TRIAL", t)`, trials run in
//! parallel, and results are collected in trial order. Reports therefore
//! reproduce byte for byte except for the wall-clock field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ann::{brute_force_near, AnnConfig, AnnIndex};
use crate::boosted::{decode_boosted, BoostedSketcher, Boosting};
use crate::cert::{certification_params, certification_trial, HardDistributionSpec};
use crate::error::{param, Error, Result};
use crate::estimator::{estimate_distance, EstimatorConfig, MultiScaleSketcher};
use crate::metric::{distance_of, lp_norm, Dataset, IntVector};
use crate::randomness::SharedSeed;
use crate::sketch::{
    collision_report, decode_single_scale, reference_decode, Overrides, SingleScaleSketch, SketchParams,
    Sketcher,
};

/// Which driver to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    /// FAR rate on pairs within `r`.
    #[default]
    Nonexpansion,
    /// FAR rate of a fixed point against the hard distribution.
    Contraction,
    /// Compact decoder against the full-information oracle.
    Oracle,
    /// Multiscale estimates on fixed pairs or on the hard distribution.
    Estimator,
    /// Near-neighbor recall, soundness and shrink on planted instances.
    Ann,
    /// Certificate emission and validity on the hard distribution.
    Certification,
}

/// Built-in point generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Generator {
    /// Coordinates `round(N(0, scale²))` clamped to `[−Δ, Δ]`; centered at 0.
    GaussianGrid {
        n: usize,
        dim: usize,
        scale: f64,
        range: i64,
    },
    /// The hard distribution with possibly rounded level sizes.
    Hard { p: u32, c: u32 },
    /// Gaussian-grid points plus queries with exactly one point within `r`
    /// and every other point at least `cr` away.
    Planted {
        n: usize,
        dim: usize,
        scale: f64,
        range: i64,
    },
}

/// Where points come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    File(PathBuf),
    Generator(Generator),
}

/// How the estimator driver samples pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// Fixed pairs at geometric distances; mean estimate must not exceed
    /// the true distance.
    #[default]
    Nonexpansion,
    /// Pairs from the hard distribution; mean estimate must reach
    /// `E‖X−Y‖_p/(64c)`.
    Contraction,
}

/// One experiment. Every field has a default; unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: SharedSeed,
    pub trials: usize,
    pub p: f64,
    /// Approximation or distortion parameter of the sketch under test.
    pub c: f64,
    pub r: f64,
    pub delta0: Option<f64>,
    pub eps: f64,
    pub overrides: Overrides,
    /// Boosting repetitions `T`; single-scale sketches when absent (except
    /// for drivers that always boost).
    pub reps: Option<u32>,
    /// Near-neighbor tree count `R`.
    pub trees: Option<u32>,
    pub tree_constant: f64,
    /// Near-neighbor depth.
    pub depth: Option<u32>,
    pub data: Option<DataSource>,
    pub estimator_mode: EstimatorMode,
    /// Number of fixed pairs (estimator) or queries (near neighbor).
    pub pairs: usize,
    /// Replaces the driver's primary acceptance threshold.
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: Kind::Nonexpansion,
            seed: SharedSeed::from_u64(0),
            trials: 1000,
            p: 4.0,
            c: 64.0,
            r: 8.0,
            delta0: None,
            eps: 0.5,
            overrides: Overrides::desk(),
            reps: None,
            trees: None,
            tree_constant: 3.0,
            depth: None,
            data: None,
            estimator_mode: EstimatorMode::Nonexpansion,
            pairs: 20,
            threshold: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if let Some(DataSource::File(path)) = &self.data {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "data file {} does not exist",
                    path.display()
                )));
            }
        }
        if let (Some(k), Some(u)) = (self.overrides.stored, self.overrides.universe) {
            if u < k {
                return Err(Error::Config(format!("override U = {u} is below k = {k}")));
            }
        }
        Ok(())
    }

    fn trial_seed(&self, t: usize) -> SharedSeed {
        self.seed.derive("TRIAL", t as u64)
    }
}

/// One acceptance check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">="`.
    pub comparison: String,
    pub threshold: f64,
    pub passed: bool,
}

impl Gate {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Gate {
            name: name.into(),
            value,
            comparison: "<=".into(),
            threshold,
            passed: value <= threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Gate {
            name: name.into(),
            value,
            comparison: ">=".into(),
            threshold,
            passed: value >= threshold,
        }
    }
}

/// Machine-readable experiment result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: Kind,
    pub seed: SharedSeed,
    pub config: ExperimentConfig,
    /// Resolved parameters, theory-derived values alongside overrides.
    pub params: Value,
    pub trials: usize,
    /// Primary rate (or mean) of the driver.
    pub rate: f64,
    /// Wilson 95% interval of `rate` when it is a proportion.
    pub wilson95: Option<[f64; 2]>,
    pub metrics: BTreeMap<String, f64>,
    pub gates: Vec<Gate>,
    pub records: Vec<Value>,
    pub wall_clock_secs: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Writes `report` as pretty JSON.
pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    report.write(path)
}

/// Reads a CSV dataset.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::load(path)
}

/// Wilson score interval at 95% confidence.
pub fn wilson95(successes: usize, n: usize) -> [f64; 2] {
    if n == 0 {
        return [0.0, 1.0];
    }
    let z = 1.959_963_984_540_054_f64;
    let n = n as f64;
    let phat = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (phat + z * z / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    [(center - half).max(0.0), (center + half).min(1.0)]
}

/// Mean and standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `round(N(0, scale²))` per coordinate, clamped to `[−Δ, Δ]`.
pub fn gaussian_point<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64, range: i64) -> IntVector {
    IntVector::new(
        (0..dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                ((g * scale).round() as i64).clamp(-range, range)
            })
            .collect(),
    )
}

/// An integer vector in a uniformly random direction with `ℓp` norm close
/// to `target` and never above `max(target, 1)`. Nonzero whenever
/// `target ≥ 1`.
pub fn perturbation<R: Rng + ?Sized>(rng: &mut R, dim: usize, p: f64, target: f64) -> IntVector {
    if target < 1.0 || dim == 0 {
        return IntVector::zeros(dim);
    }
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir
        .iter()
        .map(|g: &f64| g.abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p);
    let mut scale = target / norm;
    loop {
        let v: Vec<i64> = dir.iter().map(|g| (g * scale).round() as i64).collect();
        if v.iter().all(|&x| x == 0) {
            let mut v = vec![0i64; dim];
            v[rng.gen_range(0..dim)] = if rng.gen::<bool>() { 1 } else { -1 };
            return IntVector::new(v);
        }
        if crate::metric::norm_of(&v, p) <= target {
            return IntVector::new(v);
        }
        scale *= 0.95;
    }
}

fn clamp_add(x: &IntVector, v: &IntVector, range: i64) -> IntVector {
    IntVector::new(
        x.coords()
            .iter()
            .zip(v.coords())
            .map(|(a, b)| (a + b).clamp(-range, range))
            .collect(),
    )
}

/// Points of a built-in generator (the planted generator returns only the
/// data points; see [`planted_queries`]).
pub fn generate(generator: &Generator, seed: &SharedSeed) -> Result<Dataset> {
    let mut rng = seed.rng("generator");
    match *generator {
        Generator::GaussianGrid { n, dim, scale, range } | Generator::Planted { n, dim, scale, range } => {
            if n == 0 || dim == 0 {
                return Err(Error::EmptyDataset);
            }
            let points = (0..n)
                .map(|_| gaussian_point(&mut rng, dim, scale, range))
                .collect();
            Dataset::new(points, range)
        }
        Generator::Hard { p, c } => {
            let spec = HardDistributionSpec::with_rounded_levels(p, c)?;
            Dataset::new(vec![spec.sample_point_with(&mut rng)], c as i64)
        }
    }
}

/// A planted query: within `r` of `target`, at least `cr` from every other
/// point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedQuery {
    pub target: usize,
    pub query: IntVector,
}

/// Draws `count` planted queries, resampling until the separation holds.
pub fn planted_queries(
    data: &Dataset,
    count: usize,
    r: f64,
    c: f64,
    p: f64,
    seed: &SharedSeed,
) -> Result<Vec<PlantedQuery>> {
    let mut rng = seed.rng("planted");
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return param("could not plant queries; increase the data spread or reduce c·r");
        }
        let target = rng.gen_range(0..data.len());
        let radius = r * rng.gen_range(0.0..=1.0f64).max(1e-9);
        let v = perturbation(&mut rng, data.dim(), p, radius.max(1.0).min(r));
        let q = clamp_add(data.point(target), &v, data.range());
        if distance_of(q.coords(), data.point(target).coords(), p) > r {
            continue;
        }
        let separated = data
            .points()
            .iter()
            .enumerate()
            .all(|(i, x)| i == target || distance_of(x.coords(), q.coords(), p) >= c * r);
        if separated {
            out.push(PlantedQuery { target, query: q });
        }
    }
    Ok(out)
}

fn load_or_generate(cfg: &ExperimentConfig, default: Generator) -> Result<(Dataset, Option<Generator>)> {
    match cfg.data.clone().unwrap_or(DataSource::Generator(default)) {
        DataSource::File(path) => Ok((Dataset::load(path)?, None)),
        DataSource::Generator(g) => Ok((generate(&g, &cfg.seed.derive("DATA", 0))?, Some(g))),
    }
}

fn params_json(params: &SketchParams, boosting: Option<Boosting>) -> Result<Value> {
    let mut v = serde_json::to_value(params)?;
    if let Some(b) = boosting {
        v["boosting"] = json!({
            "delta0": b.delta0,
            "reps": b.reps()?,
            "reps_overridden": b.reps_override.is_some(),
            "reps_derived": crate::boosted::repetitions(b.delta0)?,
        });
    }
    Ok(v)
}

fn par_trials<T: Send>(
    cfg: &ExperimentConfig,
    f: impl Fn(usize, SharedSeed) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| f(t, cfg.trial_seed(t)))
        .collect()
}

fn boosting_for(cfg: &ExperimentConfig) -> Option<Boosting> {
    cfg.reps.map(|t| Boosting::fixed(cfg.delta0.unwrap_or(0.01), t))
}

/// FAR decision between `x` and `y` under single-scale or boosted sketches.
fn far(
    x: &IntVector,
    y: &IntVector,
    median: &IntVector,
    params: &SketchParams,
    boosting: Option<Boosting>,
    seed: &SharedSeed,
) -> Result<bool> {
    Ok(match boosting {
        None => {
            let sk = Sketcher::new(params.clone(), seed, x.dim())?;
            let (a, b) = (sk.sketch(x, median)?, sk.sketch(y, median)?);
            decode_single_scale(&a, &b, params)?.is_far()
        }
        Some(boost) => {
            let sk = BoostedSketcher::new(params.clone(), boost, seed, x.dim())?;
            let (a, b) = (sk.sketch(x, median)?, sk.sketch(y, median)?);
            decode_boosted(&a, &b, params)?.is_far()
        }
    })
}

/// Runs the configured driver.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let start = Instant::now();
    let mut report = match config.kind {
        Kind::Nonexpansion => nonexpansion(config),
        Kind::Contraction => contraction(config),
        Kind::Oracle => oracle(config),
        Kind::Estimator => match config.estimator_mode {
            EstimatorMode::Nonexpansion => estimator_nonexpansion(config),
            EstimatorMode::Contraction => estimator_contraction(config),
        },
        Kind::Ann => ann(config),
        Kind::Certification => certification(config),
    }?;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

fn base_report(cfg: &ExperimentConfig, params: Value) -> Report {
    Report {
        kind: cfg.kind,
        seed: cfg.seed.clone(),
        config: cfg.clone(),
        params,
        trials: cfg.trials,
        rate: 0.0,
        wilson95: None,
        metrics: BTreeMap::new(),
        gates: Vec::new(),
        records: Vec::new(),
        wall_clock_secs: 0.0,
    }
}

const DEFAULT_DIM: usize = 64;
const DEFAULT_SCALE: f64 = 10.0;
const DEFAULT_RANGE: i64 = 1000;

/// Draws `x` from the dataset (or generator) and `y = x + v` with
/// `r/2 ≤ ‖v‖_p ≤ r` (up to rounding), so every pair is close and most sit
/// near the boundary.
fn nonexpansion(cfg: &ExperimentConfig) -> Result<Report> {
    let params = SketchParams::canonical(cfg.c, cfg.p, cfg.overrides)?.with_scale(cfg.r)?;
    let boosting = boosting_for(cfg);
    let source = match &cfg.data {
        Some(DataSource::File(path)) => Some(Dataset::load(path)?),
        _ => None,
    };
    let (dim, scale, range) = match &cfg.data {
        Some(DataSource::Generator(Generator::GaussianGrid {
            dim, scale, range, ..
        })) => (*dim, *scale, *range),
        Some(DataSource::Generator(other)) => {
            return Err(Error::Config(format!(
                "nonexpansion needs gaussian-grid data, got {other:?}"
            )))
        }
        _ => (
            source.as_ref().map_or(DEFAULT_DIM, Dataset::dim),
            DEFAULT_SCALE,
            source.as_ref().map_or(DEFAULT_RANGE, Dataset::range),
        ),
    };
    let records = par_trials(cfg, |_, seed| {
        let mut rng = seed.rng("pair");
        let x = match &source {
            Some(d) => d.point(rng.gen_range(0..d.len())).clone(),
            None => gaussian_point(&mut rng, dim, scale, range),
        };
        let target = cfg.r * rng.gen_range(0.5..=1.0f64);
        let y = clamp_add(
            &x,
            &perturbation(&mut rng, dim, cfg.p, target),
            range.max(x.max_abs()),
        );
        let distance = distance_of(x.coords(), y.coords(), cfg.p);
        let far = far(
            &x,
            &y,
            &IntVector::zeros(dim),
            &params,
            boosting,
            &seed.derive("SKETCH", 0),
        )?;
        Ok((distance, far))
    })?;
    let fars = records.iter().filter(|r| r.1).count();
    let mut report = base_report(cfg, params_json(&params, boosting)?);
    report.rate = fars as f64 / cfg.trials as f64;
    report.wilson95 = Some(wilson95(fars, cfg.trials));
    let max_distance = records.iter().map(|r| r.0).fold(0.0, f64::max);
    report.metrics.insert("max_pair_distance".into(), max_distance);
    report
        .gates
        .push(Gate::at_most("pairs_within_r", max_distance, cfg.r));
    report.gates.push(Gate::at_most(
        "far_rate",
        report.rate,
        cfg.threshold.unwrap_or(0.05),
    ));
    report.records = records
        .iter()
        .map(|(d, f)| json!({"distance": d, "far": f}))
        .collect();
    Ok(report)
}

fn hard_spec(cfg: &ExperimentConfig) -> Result<HardDistributionSpec> {
    match &cfg.data {
        None => HardDistributionSpec::with_rounded_levels(12, 4),
        Some(DataSource::Generator(Generator::Hard { p, c })) => {
            HardDistributionSpec::with_rounded_levels(*p, *c)
        }
        Some(other) => Err(Error::Config(format!(
            "this driver needs the hard generator, got {other:?}"
        ))),
    }
}

/// Fixed `x ∼ μ`, `r = 2‖x‖_p/(c − 1)` (the boundary of the contraction
/// hypothesis, unless `r` is given explicitly as a smaller value), fresh
/// `y ∼ μ` and sketch seed per trial.
pub fn contraction_scale(x: &IntVector, c: f64, p: f64) -> Result<f64> {
    Ok(2.0 * lp_norm(x, p)? / (c - 1.0))
}

fn contraction(cfg: &ExperimentConfig) -> Result<Report> {
    let spec = hard_spec(cfg)?;
    let p = spec.p() as f64;
    let x = spec.sample_point_with(&mut cfg.seed.rng("fixed-x"));
    let boundary = contraction_scale(&x, cfg.c, p)?;
    let params = SketchParams::canonical(cfg.c, p, cfg.overrides)?.with_scale(boundary)?;
    let boosting = boosting_for(cfg);
    let zero = IntVector::zeros(spec.dim());
    let records = par_trials(cfg, |_, seed| {
        let y = spec.sample_point_with(&mut seed.rng("y"));
        far(&x, &y, &zero, &params, boosting, &seed.derive("SKETCH", 0))
    })?;
    let fars = records.iter().filter(|&&f| f).count();
    let mut report = base_report(cfg, params_json(&params, boosting)?);
    report.rate = fars as f64 / cfg.trials as f64;
    report.wilson95 = Some(wilson95(fars, cfg.trials));
    report.metrics.insert("x_norm".into(), lp_norm(&x, p)?);
    report.metrics.insert("r".into(), boundary);
    report
        .metrics
        .insert("theory_valid_floor".into(), params.theory.min_distortion);
    let default = if boosting.is_some() { 0.20 } else { 0.25 };
    report.gates.push(Gate::at_least(
        "far_rate",
        report.rate,
        cfg.threshold.unwrap_or(default),
    ));
    report.records = records.iter().map(|f| json!({"far": f})).collect();
    Ok(report)
}

/// Mix of close pairs (`y = x + v`, `‖v‖ ≤ r`) and independent pairs.
fn oracle(cfg: &ExperimentConfig) -> Result<Report> {
    let params = SketchParams::canonical(cfg.c, cfg.p, cfg.overrides)?.with_scale(cfg.r)?;
    let (dim, scale, range) = match &cfg.data {
        Some(DataSource::Generator(Generator::GaussianGrid {
            dim, scale, range, ..
        })) => (*dim, *scale, *range),
        None => (DEFAULT_DIM, DEFAULT_SCALE, DEFAULT_RANGE),
        Some(other) => {
            return Err(Error::Config(format!(
                "oracle needs gaussian-grid data, got {other:?}"
            )))
        }
    };
    let zero = IntVector::zeros(dim);
    let records = par_trials(cfg, |t, seed| {
        let mut rng = seed.rng("pair");
        let x = gaussian_point(&mut rng, dim, scale, range);
        let y = if t % 2 == 0 {
            let target = cfg.r * rng.gen_range(0.0..=4.0f64);
            clamp_add(&x, &perturbation(&mut rng, dim, cfg.p, target), range)
        } else {
            gaussian_point(&mut rng, dim, scale, range)
        };
        let sk = seed.derive("SKETCH", 0);
        let a = SingleScaleSketch::build(&x, &zero, &params, &sk)?;
        let b = SingleScaleSketch::build(&y, &zero, &params, &sk)?;
        let compact = decode_single_scale(&a, &b, &params)?;
        let full = reference_decode(&x, &y, &zero, &params, &sk)?;
        let report = collision_report(&x, &y, &zero, &params, &sk)?;
        Ok((compact, full, report))
    })?;
    let agree = records.iter().filter(|r| r.0 == r.1).count();
    let unexplained = records
        .iter()
        .filter(|r| r.0 != r.1 && !r.2.any_collision())
        .count();
    let mut report = base_report(cfg, params_json(&params, None)?);
    report.rate = agree as f64 / cfg.trials as f64;
    report.wilson95 = Some(wilson95(agree, cfg.trials));
    let count =
        |f: fn(&crate::sketch::CollisionReport) -> bool| records.iter().filter(|r| f(&r.2)).count() as f64;
    report.metrics.insert("h1_collisions".into(), count(|c| c.h1));
    report.metrics.insert("h2_collisions".into(), count(|c| c.h2));
    report
        .metrics
        .insert("truncations".into(), count(|c| c.truncation));
    report.metrics.insert(
        "far_rate".into(),
        records.iter().filter(|r| r.0.is_far()).count() as f64 / cfg.trials as f64,
    );
    report.gates.push(Gate::at_least(
        "agreement",
        report.rate,
        cfg.threshold.unwrap_or(0.999),
    ));
    report.gates.push(Gate::at_most(
        "unexplained_disagreements",
        unexplained as f64,
        0.0,
    ));
    report.records = records
        .iter()
        .map(|(c, f, r)| json!({"compact": c, "reference": f, "collisions": r}))
        .collect();
    Ok(report)
}

fn estimator_config(cfg: &ExperimentConfig, dim: usize, range: i64) -> EstimatorConfig {
    EstimatorConfig {
        c: cfg.c,
        p: cfg.p,
        dim,
        range,
        overrides: cfg.overrides,
        delta0: cfg.delta0,
        reps: cfg.reps,
    }
}

/// Fixed pair `k` of `count`, at a target distance spaced geometrically
/// between 1 and `dΔ/4`.
pub fn estimator_pair(
    k: usize,
    count: usize,
    dim: usize,
    range: i64,
    p: f64,
    seed: &SharedSeed,
) -> (IntVector, IntVector) {
    let mut rng = seed.derive("PAIR", k as u64).rng("pair");
    let top = (dim as f64 * range as f64 / 4.0).max(1.0);
    let frac = if count > 1 {
        k as f64 / (count - 1) as f64
    } else {
        0.0
    };
    let target = top.powf(frac);
    let x = gaussian_point(&mut rng, dim, range as f64 / 8.0, range);
    let v = perturbation(&mut rng, dim, p, target);
    (x.clone(), clamp_add(&x, &v, range))
}

fn estimator_nonexpansion(cfg: &ExperimentConfig) -> Result<Report> {
    let (dim, range) = match &cfg.data {
        Some(DataSource::Generator(Generator::GaussianGrid { dim, range, .. })) => (*dim, *range),
        None => (16, 100),
        Some(other) => {
            return Err(Error::Config(format!(
                "estimator needs gaussian-grid data, got {other:?}"
            )))
        }
    };
    let ecfg = estimator_config(cfg, dim, range);
    let zero = IntVector::zeros(dim);
    let mut report = base_report(cfg, serde_json::to_value(&ecfg)?);
    let mut worst_margin = f64::INFINITY;
    for k in 0..cfg.pairs {
        let (x, y) = estimator_pair(k, cfg.pairs, dim, range, cfg.p, &cfg.seed);
        let dist = distance_of(x.coords(), y.coords(), cfg.p);
        let estimates = par_trials(cfg, |_, seed| {
            let sk = MultiScaleSketcher::new(ecfg.clone(), &seed.derive("SKETCH", k as u64))?;
            estimate_distance(&sk.sketch(&x, &zero)?, &sk.sketch(&y, &zero)?)
        })?;
        let (mean, se) = mean_se(&estimates);
        let bound = dist + 3.0 * se;
        worst_margin = worst_margin.min(bound - mean);
        report
            .gates
            .push(Gate::at_most(&format!("pair_{k:02}_mean"), mean, bound));
        report
            .records
            .push(json!({"pair": k, "distance": dist, "mean": mean, "se": se}));
    }
    report.rate = worst_margin;
    report.metrics.insert("worst_margin".into(), worst_margin);
    Ok(report)
}

fn estimator_contraction(cfg: &ExperimentConfig) -> Result<Report> {
    let spec = hard_spec(cfg)?;
    let dim = spec.dim();
    let ecfg = EstimatorConfig {
        p: spec.p() as f64,
        ..estimator_config(cfg, dim, spec.c() as i64)
    };
    let zero = IntVector::zeros(dim);
    let records = par_trials(cfg, |_, seed| {
        let mut rng = seed.rng("pair");
        let x = spec.sample_point_with(&mut rng);
        let y = spec.sample_point_with(&mut rng);
        let sk = MultiScaleSketcher::new(ecfg.clone(), &seed.derive("SKETCH", 0))?;
        let est = estimate_distance(&sk.sketch(&x, &zero)?, &sk.sketch(&y, &zero)?)?;
        Ok((distance_of(x.coords(), y.coords(), ecfg.p), est))
    })?;
    let dists: Vec<f64> = records.iter().map(|r| r.0).collect();
    let ests: Vec<f64> = records.iter().map(|r| r.1).collect();
    let (mean_dist, _) = mean_se(&dists);
    let (mean_est, se) = mean_se(&ests);
    let mut report = base_report(cfg, serde_json::to_value(&ecfg)?);
    report.rate = mean_est;
    report.metrics.insert("mean_distance".into(), mean_dist);
    report.metrics.insert("mean_estimate".into(), mean_est);
    report.metrics.insert("se".into(), se);
    let floor = cfg.threshold.unwrap_or(mean_dist / (64.0 * cfg.c) - 3.0 * se);
    report
        .gates
        .push(Gate::at_least("mean_estimate", mean_est, floor));
    report.records = records
        .iter()
        .map(|(d, e)| json!({"distance": d, "estimate": e}))
        .collect();
    Ok(report)
}

/// Pooled shrink `Σ|X_σ| / Σ|X|` over descents with `‖q − m‖_p ≥ (c−1)r/2`.
pub fn pooled_shrink(pairs: &[(usize, usize)]) -> f64 {
    let (num, den) = pairs
        .iter()
        .fold((0usize, 0usize), |(a, b), &(x, xs)| (a + xs, b + x));
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn ann(cfg: &ExperimentConfig) -> Result<Report> {
    let default = Generator::Planted {
        n: 1000,
        dim: DEFAULT_DIM,
        scale: DEFAULT_SCALE,
        range: DEFAULT_RANGE,
    };
    let (data, _) = load_or_generate(cfg, default)?;
    let acfg = AnnConfig {
        r: cfg.r,
        c: cfg.c,
        p: cfg.p,
        eps: cfg.eps,
        tree_constant: cfg.tree_constant,
        depth: cfg.depth,
        trees: cfg.trees,
        overrides: cfg.overrides,
        reps: cfg.reps,
    };
    let queries = planted_queries(
        &data,
        cfg.pairs,
        cfg.r,
        cfg.c,
        cfg.p,
        &cfg.seed.derive("QUERIES", 0),
    )?;
    let index = AnnIndex::build(data, acfg, &cfg.seed.derive("INDEX", 0))?;
    let traces = queries
        .par_iter()
        .map(|q| index.query_traced(&q.query))
        .collect::<Result<Vec<_>>>()?;
    let data = index.data();
    let mut unsound = 0usize;
    let mut success = 0usize;
    let mut shrink = Vec::new();
    let mut records = Vec::new();
    for (q, t) in queries.iter().zip(&traces) {
        let dist = t
            .answer
            .map(|id| distance_of(data.point(id as usize).coords(), q.query.coords(), cfg.p));
        if let Some(d) = dist {
            if d <= cfg.c * cfg.r {
                success += 1;
            } else {
                unsound += 1;
            }
        }
        let (nearest, nd) = brute_force_near(data, &q.query, cfg.p)?;
        shrink.extend_from_slice(&t.shrink);
        records.push(json!({
            "target": q.target,
            "answer": t.answer,
            "answer_distance": dist,
            "nearest": nearest,
            "nearest_distance": nd,
            "trees_tried": t.trees_tried,
            "shrink": pooled_shrink(&t.shrink),
        }));
    }
    let n = queries.len();
    let mut report = base_report(
        cfg,
        json!({
            "sketch": params_json(index.params(), Some(index.config().boosting()))?,
            "ann": index.config(),
            "depth": index.depth(),
            "trees": index.roots().len(),
        }),
    );
    report.trials = n;
    report.rate = success as f64 / n.max(1) as f64;
    report.wilson95 = Some(wilson95(success, n));
    let pooled = pooled_shrink(&shrink);
    let mean_trees = traces.iter().map(|t| t.trees_tried as f64).sum::<f64>() / n.max(1) as f64;
    report.metrics.insert("pooled_shrink".into(), pooled);
    report.metrics.insert("mean_trees_tried".into(), mean_trees);
    report.metrics.insert("unsound_answers".into(), unsound as f64);
    report
        .gates
        .push(Gate::at_most("unsound_answers", unsound as f64, 0.0));
    report.gates.push(Gate::at_least(
        "recall",
        report.rate,
        cfg.threshold.unwrap_or(0.90),
    ));
    report.gates.push(Gate::at_most("pooled_shrink", pooled, 0.80));
    report.records = records;
    Ok(report)
}

fn certification(cfg: &ExperimentConfig) -> Result<Report> {
    let spec = hard_spec(cfg)?;
    let params = certification_params(&spec, cfg.r, cfg.overrides)?;
    let records = par_trials(cfg, |_, seed| certification_trial(&spec, &params, &seed))?;
    let emitted = records.iter().filter(|t| t.emission.is_some()).count();
    let invalid = records
        .iter()
        .filter(|t| t.emission.is_some() && !t.valid)
        .count();
    let implication_failures = records.iter().filter(|t| t.valid && t.distance < 2.0).count();
    let mut report = base_report(cfg, params_json(&params, None)?);
    report.rate = emitted as f64 / cfg.trials as f64;
    report.wilson95 = Some(wilson95(emitted, cfg.trials));
    let invalid_rate = if emitted == 0 {
        0.0
    } else {
        invalid as f64 / emitted as f64
    };
    report.metrics.insert("emitted".into(), emitted as f64);
    report.metrics.insert("invalid_rate".into(), invalid_rate);
    report.metrics.insert("r_prime".into(), params.r);
    report.gates.push(Gate::at_least(
        "emission_rate",
        report.rate,
        cfg.threshold.unwrap_or(0.05),
    ));
    report
        .gates
        .push(Gate::at_most("invalid_rate", invalid_rate, 0.01));
    report.gates.push(Gate::at_most(
        "implication_failures",
        implication_failures as f64,
        0.0,
    ));
    report.records = records
        .iter()
        .map(|t| serde_json::to_value(t).unwrap_or(Value::Null))
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_examples() {
        // Independent closed form at p̂ = 1/2, n = 100: 0.5 ± 0.0962…
        let [lo, hi] = wilson95(50, 100);
        assert!((lo - 0.403_831).abs() < 1e-5, "{lo}");
        assert!((hi - 0.596_169).abs() < 1e-5, "{hi}");
        let [lo, hi] = wilson95(0, 10);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.277_533).abs() < 1e-5, "{hi}");
    }

    #[test]
    fn mean_se_examples() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn perturbations_respect_radius() {
        let mut rng = SharedSeed::from_u64(3).rng("t");
        for i in 0..500 {
            let target = 1.0 + (i % 40) as f64;
            let v = perturbation(&mut rng, 64, 4.0, target);
            let n = lp_norm(&v, 4.0).unwrap();
            assert!(n <= target && n >= 1.0);
        }
        assert_eq!(perturbation(&mut rng, 8, 4.0, 0.5), IntVector::zeros(8));
    }

    #[test]
    fn config_defaults_and_unknown_fields() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"bogus": 1}"#),
            Err(Error::Config(_))
        ));
        let cfg = ExperimentConfig::from_json(
            r#"{"kind": "contraction", "data": {"generator": {"name": "hard", "p": 5, "c": 4}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.kind, Kind::Contraction);
        assert!(ExperimentConfig::from_json(r#"{"trials": 0}"#).is_ok());
        assert!(run_experiment(&ExperimentConfig {
            trials: 0,
            ..Default::default()
        })
        .is_err());
        let missing = ExperimentConfig {
            data: Some(DataSource::File("/nonexistent/x.csv".into())),
            ..Default::default()
        };
        assert!(matches!(run_experiment(&missing), Err(Error::Config(_))));
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = ExperimentConfig {
            trials: 50,
            r: 4.0,
            ..Default::default()
        };
        let mut a = run_experiment(&cfg).unwrap();
        let mut b = run_experiment(&cfg).unwrap();
        a.wall_clock_secs = 0.0;
        b.wall_clock_secs = 0.0;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.records.len(), 50);
    }

    #[test]
    fn planted_queries_are_separated() {
        let data = generate(
            &Generator::Planted {
                n: 200,
                dim: 16,
                scale: 10.0,
                range: 100,
            },
            &SharedSeed::from_u64(1),
        )
        .unwrap();
        let qs = planted_queries(&data, 20, 4.0, 2.0, 4.0, &SharedSeed::from_u64(2)).unwrap();
        for q in qs {
            for (i, x) in data.points().iter().enumerate() {
                let d = distance_of(x.coords(), q.query.coords(), 4.0);
                if i == q.target {
                    assert!(d <= 4.0);
                } else {
                    assert!(d >= 8.0);
                }
            }
        }
    }

    #[test]
    fn pooled_shrink_examples() {
        assert_eq!(pooled_shrink(&[]), 0.0);
        assert_eq!(pooled_shrink(&[(10, 5), (30, 15)]), 0.5);
    }
}
