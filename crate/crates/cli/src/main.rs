use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use avgsketch::ann::{AnnConfig, AnnIndex};
use avgsketch::estimator::{estimate_distance, EstimatorConfig, MultiScaleSketcher};
use avgsketch::experiment::{generate, run_experiment, DataSource, ExperimentConfig, Generator, Kind};
use avgsketch::metric::{coordinate_median, lp_distance, Dataset, IntVector};
use avgsketch::randomness::SharedSeed;
use avgsketch::sketch::Overrides;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Average-distortion sketches for integer lp metrics.
#[derive(Parser)]
#[command(name = "avgsketch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// 64-hex-digit master seed, or a decimal integer.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Report path; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config.
    Run(Common),
    /// Single-scale (or boosted, with `reps` set) sketch drivers.
    Sketch {
        #[arg(value_enum)]
        mode: SketchMode,
        #[command(flatten)]
        common: Common,
    },
    /// Multiscale estimator drivers, or a single estimate between two rows.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Estimate between rows `--rows I J` of this CSV instead.
        #[arg(long, requires = "rows")]
        data: Option<PathBuf>,
        #[arg(long, num_args = 2)]
        rows: Option<Vec<usize>>,
    },
    /// Near-neighbor index.
    Ann {
        #[command(subcommand)]
        action: AnnAction,
    },
    /// Certification driver on the hard distribution.
    Cert {
        #[arg(value_enum)]
        mode: CertMode,
        #[command(flatten)]
        common: Common,
    },
    /// Writes a generated dataset as CSV.
    Generate {
        #[arg(value_enum)]
        generator: GeneratorName,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 10.0)]
        scale: f64,
        #[arg(long, default_value_t = 1000)]
        range: i64,
        #[arg(long, default_value_t = 12)]
        p: u32,
        #[arg(long, default_value_t = 4)]
        c: u32,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SketchMode {
    Nonexpansion,
    Contraction,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum CertMode {
    Trial,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorName {
    GaussianGrid,
    Hard,
    Planted,
}

#[derive(Subcommand)]
enum AnnAction {
    /// Builds an index over a CSV dataset and saves it to a directory.
    Build {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        index: IndexArgs,
        /// Store children realized by the data, up to this many nodes.
        #[arg(long)]
        materialize: Option<usize>,
    },
    /// Queries a saved index with comma-separated vectors, one per argument.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(required = true, allow_hyphen_values = true)]
        vectors: Vec<String>,
    },
    /// Recall, soundness and shrink on a planted instance.
    Bench(Common),
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    r: f64,
    #[arg(long)]
    c: f64,
    #[arg(long, default_value_t = 4.0)]
    p: f64,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long)]
    trees: Option<u32>,
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    reps: Option<u32>,
    /// Use the theory-derived L, K, k, U instead of the engineering values.
    #[arg(long)]
    theory: bool,
    #[arg(long)]
    seed: Option<String>,
}

fn parse_seed(s: &str) -> Result<SharedSeed> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(SharedSeed::from_u64(v));
    }
    Ok(SharedSeed::from_hex(s)?)
}

fn parse_vector(s: &str) -> Result<IntVector> {
    let coords = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<i64>()
                .with_context(|| format!("bad coordinate {t:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntVector::new(coords))
}

fn resolve(common: &Common, kind: Kind) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if common.config.is_none() {
        cfg.kind = kind;
    } else if cfg.kind != kind {
        bail!("config describes a {:?} experiment, not {:?}", cfg.kind, kind);
    }
    if let Some(s) = &common.seed {
        cfg.seed = parse_seed(s)?;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    Ok(cfg)
}

fn execute(cfg: ExperimentConfig) -> Result<ExitCode> {
    let report = run_experiment(&cfg)?;
    match &cfg.out {
        Some(path) => report.write(path)?,
        None => println!("{}", report.to_json()?),
    }
    for g in &report.gates {
        let status = if g.passed { "PASS" } else { "FAIL" };
        eprintln!(
            "{status} {}: {} {} {}",
            g.name, g.value, g.comparison, g.threshold
        );
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("AVGSKETCH_THREADS") {
        let n: usize = v.parse().context("AVGSKETCH_THREADS must be an integer")?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(common) => {
            let path = common.config.clone().context("run needs --config")?;
            let kind = ExperimentConfig::load(&path)?.kind;
            execute(resolve(&common, kind)?)
        }
        Command::Sketch { mode, common } => {
            let kind = match mode {
                SketchMode::Nonexpansion => Kind::Nonexpansion,
                SketchMode::Contraction => Kind::Contraction,
                SketchMode::Oracle => Kind::Oracle,
            };
            execute(resolve(&common, kind)?)
        }
        Command::Estimate { common, data, rows } => match (data, rows) {
            (Some(path), Some(rows)) => {
                let cfg = resolve(&common, Kind::Estimator)?;
                let data = Dataset::load(&path)?;
                let (i, j) = (rows[0], rows[1]);
                if i >= data.len() || j >= data.len() {
                    bail!("rows must be below {}", data.len());
                }
                let ecfg = EstimatorConfig {
                    overrides: cfg.overrides,
                    delta0: cfg.delta0,
                    reps: cfg.reps,
                    ..EstimatorConfig::new(cfg.c, cfg.p, data.dim(), data.range())
                };
                let median = coordinate_median(&data)?;
                let sk = MultiScaleSketcher::new(ecfg, &cfg.seed)?;
                let (x, y) = (data.point(i), data.point(j));
                let est = estimate_distance(&sk.sketch(x, &median)?, &sk.sketch(y, &median)?)?;
                let exact = lp_distance(x, y, cfg.p)?;
                println!("{}", serde_json::json!({"estimate": est, "distance": exact}));
                Ok(ExitCode::SUCCESS)
            }
            _ => execute(resolve(&common, Kind::Estimator)?),
        },
        Command::Cert {
            mode: CertMode::Trial,
            common,
        } => execute(resolve(&common, Kind::Certification)?),
        Command::Cert {
            mode: CertMode::Sample,
            common,
        } => {
            let cfg = resolve(&common, Kind::Certification)?;
            let (p, c) = match cfg.data {
                Some(DataSource::Generator(Generator::Hard { p, c })) => (p, c),
                _ => (12, 4),
            };
            let spec = avgsketch::cert::HardDistributionSpec::with_rounded_levels(p, c)?;
            let mut rng = cfg.seed.rng("hard-sample");
            let points: Vec<IntVector> = (0..cfg.trials)
                .map(|_| spec.sample_point_with(&mut rng))
                .collect();
            let data = Dataset::new(points, c as i64)?;
            match &cfg.out {
                Some(path) => data.save(path)?,
                None => data.write_csv(std::io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Ann {
            action:
                AnnAction::Build {
                    data,
                    out,
                    index,
                    materialize,
                },
        } => {
            let data = Dataset::load(&data)?;
            let cfg = AnnConfig {
                depth: index.depth,
                trees: index.trees,
                reps: index.reps,
                overrides: if index.theory {
                    Overrides::default()
                } else {
                    Overrides::desk()
                },
                ..AnnConfig::new(index.r, index.c, index.p, index.eps)
            };
            let seed = index
                .seed
                .as_deref()
                .map(parse_seed)
                .transpose()?
                .unwrap_or_else(|| SharedSeed::from_u64(0));
            let mut built = AnnIndex::build(data, cfg, &seed)?;
            if let Some(budget) = materialize {
                built.materialize(budget)?;
            }
            built.save(&out)?;
            eprintln!(
                "saved {} trees of depth {} to {}",
                built.roots().len(),
                built.depth(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Ann {
            action: AnnAction::Query { index, vectors },
        } => {
            let index = AnnIndex::load(&index)?;
            for v in &vectors {
                let q = parse_vector(v)?;
                let trace = index.query_traced(&q)?;
                let distance = trace
                    .answer
                    .map(|id| lp_distance(index.data().point(id as usize), &q, index.config().p))
                    .transpose()?;
                println!(
                    "{}",
                    serde_json::json!({"answer": trace.answer, "distance": distance, "trees_tried": trace.trees_tried})
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Ann {
            action: AnnAction::Bench(common),
        } => execute(resolve(&common, Kind::Ann)?),
        Command::Generate {
            generator,
            n,
            dim,
            scale,
            range,
            p,
            c,
            seed,
            out,
        } => {
            let seed = seed
                .as_deref()
                .map(parse_seed)
                .transpose()?
                .unwrap_or_else(|| SharedSeed::from_u64(0));
            let g = match generator {
                GeneratorName::GaussianGrid => Generator::GaussianGrid { n, dim, scale, range },
                GeneratorName::Planted => Generator::Planted { n, dim, scale, range },
                GeneratorName::Hard => Generator::Hard { p, c },
            };
            let data = match g {
                Generator::Hard { p, c } => {
                    let spec = avgsketch::cert::HardDistributionSpec::with_rounded_levels(p, c)?;
                    let mut rng = seed.rng("hard-sample");
                    Dataset::new(
                        (0..n).map(|_| spec.sample_point_with(&mut rng)).collect(),
                        c as i64,
                    )?
                }
                ref other => generate(other, &seed)?,
            };
            data.save(&out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
