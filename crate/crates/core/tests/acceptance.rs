//! Acceptance gates. Each gate prints one `PASS`/`FAIL` line; the process
//! exits nonzero if any gate fails, after all gates have run.

use std::time::Instant;

use avgsketch::ann::{AnnConfig, AnnIndex};
use avgsketch::boosted::{BoostedSketch, BoostedSketcher, Boosting};
use avgsketch::cert::HardDistributionSpec;
use avgsketch::estimator::{EstimatorConfig, MultiScaleSketch, MultiScaleSketcher};
use avgsketch::experiment::{
    generate, run_experiment, DataSource, EstimatorMode, ExperimentConfig, Generator, Kind, Report,
};
use avgsketch::metric::{lp_distance, IntVector};
use avgsketch::randomness::SharedSeed;
use avgsketch::sketch::{Overrides, SingleScaleSketch, SketchParams};

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_report(report: &Report) -> Outcome {
    let detail = report
        .gates
        .iter()
        .map(|g| format!("{} {:.6} {} {}", g.name, g.value, g.comparison, g.threshold))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        passed: report.passed(),
        detail,
    }
}

fn seed(n: u64) -> SharedSeed {
    SharedSeed::from_u64(0xacce_0000 + n)
}

fn hard(p: u32, c: u32) -> Option<DataSource> {
    Some(DataSource::Generator(Generator::Hard { p, c }))
}

fn gate1_oracle() -> Outcome {
    let cfg = ExperimentConfig {
        kind: Kind::Oracle,
        seed: seed(1),
        trials: 10_000,
        r: 8.0,
        data: Some(DataSource::Generator(Generator::GaussianGrid {
            n: 1,
            dim: 64,
            scale: 10.0,
            range: 1000,
        })),
        ..Default::default()
    };
    let report = run_experiment(&cfg).expect("oracle driver");
    let mut out = from_report(&report);
    out.detail += &format!(
        "; h1 {} h2 {} truncations {}",
        report.metrics["h1_collisions"], report.metrics["h2_collisions"], report.metrics["truncations"]
    );
    out
}

fn close_rate(reps: Option<u32>, trials: usize) -> Report {
    let cfg = ExperimentConfig {
        kind: Kind::Nonexpansion,
        seed: seed(2),
        trials,
        r: 8.0,
        reps,
        delta0: reps.map(|_| 0.25),
        threshold: Some(0.05),
        ..Default::default()
    };
    run_experiment(&cfg).expect("non-expansion driver")
}

fn gate2_nonexpansion() -> Outcome {
    from_report(&close_rate(None, 10_000))
}

fn contraction_rate(reps: Option<u32>, trials: usize, threshold: f64) -> Report {
    let cfg = ExperimentConfig {
        kind: Kind::Contraction,
        seed: seed(3),
        trials,
        c: 25.0,
        reps,
        delta0: reps.map(|_| 0.25),
        threshold: Some(threshold),
        data: hard(12, 4),
        ..Default::default()
    };
    run_experiment(&cfg).expect("contraction driver")
}

fn gate3_contraction() -> Outcome {
    let report = contraction_rate(None, 10_000, 0.25);
    let mut out = from_report(&report);
    out.detail += &format!("; c_s 25, r {:.4}", report.metrics["r"]);
    out
}

fn gate4_boosting() -> Outcome {
    let single = close_rate(None, 10_000);
    let boosted = close_rate(Some(64), 10_000);
    let contraction = contraction_rate(Some(64), 2_000, 0.20);
    let below = boosted.rate < single.rate;
    Outcome {
        passed: below && contraction.passed(),
        detail: format!(
            "boosted close {:.5} < single close {:.5}: {below}; boosted contraction {:.4} >= 0.20",
            boosted.rate, single.rate, contraction.rate
        ),
    }
}

fn gate5_estimator_nonexpansion() -> Outcome {
    let cfg = ExperimentConfig {
        kind: Kind::Estimator,
        estimator_mode: EstimatorMode::Nonexpansion,
        seed: seed(5),
        trials: 1_000,
        pairs: 20,
        c: 4.0,
        reps: Some(64),
        data: Some(DataSource::Generator(Generator::GaussianGrid {
            n: 1,
            dim: 16,
            scale: 12.5,
            range: 100,
        })),
        ..Default::default()
    };
    let report = run_experiment(&cfg).expect("estimator driver");
    let worst = report.metrics["worst_margin"];
    let farthest = report
        .records
        .iter()
        .filter_map(|r| r["distance"].as_f64())
        .fold(0.0, f64::max);
    Outcome {
        passed: report.passed(),
        detail: format!("20 pairs, distances 1 to {farthest:.1}; smallest margin d + 3σ - mean {worst:.4}"),
    }
}

fn gate6_estimator_contraction() -> Outcome {
    let cfg = ExperimentConfig {
        kind: Kind::Estimator,
        estimator_mode: EstimatorMode::Contraction,
        seed: seed(6),
        trials: 10_000,
        c: 4.0,
        reps: Some(64),
        data: hard(5, 4),
        ..Default::default()
    };
    let report = run_experiment(&cfg).expect("estimator driver");
    let mut out = from_report(&report);
    out.detail += &format!("; E‖x−y‖ {:.4}", report.metrics["mean_distance"]);
    out
}

fn ann_report() -> Report {
    let cfg = ExperimentConfig {
        kind: Kind::Ann,
        seed: seed(7),
        r: 12.0,
        c: 3.0,
        p: 4.0,
        eps: 0.5,
        reps: Some(16),
        pairs: 500,
        data: Some(DataSource::Generator(Generator::Planted {
            n: 1000,
            dim: 64,
            scale: 10.0,
            range: 1000,
        })),
        ..Default::default()
    };
    run_experiment(&cfg).expect("near-neighbor driver")
}

fn gate7_ann_soundness(report: &Report) -> Outcome {
    let unsound = report.metrics["unsound_answers"];
    let answered = report.records.iter().filter(|r| !r["answer"].is_null()).count();
    Outcome {
        passed: unsound == 0.0,
        detail: format!(
            "{answered} answers over {} queries, {unsound} beyond cr",
            report.records.len()
        ),
    }
}

fn gate8_ann_recall(report: &Report) -> Outcome {
    let shrink = report.metrics["pooled_shrink"];
    Outcome {
        passed: report.rate >= 0.90 && shrink <= 0.80,
        detail: format!(
            "success {:.4} >= 0.90; pooled shrink {shrink:.4} <= 0.80; mean trees tried {:.3}",
            report.rate, report.metrics["mean_trees_tried"]
        ),
    }
}

fn gate9_certification() -> Outcome {
    let cfg = ExperimentConfig {
        kind: Kind::Certification,
        seed: seed(9),
        trials: 10_000,
        r: 1.9,
        data: hard(12, 4),
        ..Default::default()
    };
    from_report(&run_experiment(&cfg).expect("certification driver"))
}

fn gate10_hard_structure() -> Outcome {
    let spec = HardDistributionSpec::new(5, 4).expect("divisible parameters");
    let mut failures = Vec::new();
    if spec.sizes() != [8, 4, 2, 1] || spec.dim() != 16 {
        failures.push(format!("sizes {:?} over d {}", spec.sizes(), spec.dim()));
    }
    let expected: Vec<usize> = (0..=4).map(|v| spec.value_count(v)).collect();
    if expected != [8, 4, 2, 1, 1] {
        failures.push(format!("value counts {expected:?}"));
    }
    let mut rng = seed(10).rng("structure");
    for _ in 0..1_000 {
        let sets = spec.sample_sets(&mut rng);
        if !sets
            .windows(2)
            .all(|w| w[1].iter().all(|i| w[0].binary_search(i).is_ok()))
        {
            failures.push("sets are not nested".into());
            break;
        }
        let x = spec.sample_point_with(&mut rng);
        let counts: Vec<usize> = (0..=4)
            .map(|v| x.coords().iter().filter(|&&c| c == v).count())
            .collect();
        if counts != expected {
            failures.push(format!("sample value counts {counts:?}"));
            break;
        }
    }
    let trials = 10_000;
    let far = (0..trials)
        .filter(|_| {
            let x = spec.sample_point_with(&mut rng);
            let y = spec.sample_point_with(&mut rng);
            lp_distance(&x, &y, 5.0).unwrap() >= 4.0
        })
        .count();
    let rate = far as f64 / trials as f64;
    Outcome {
        passed: failures.is_empty() && rate >= 0.47,
        detail: format!("P[‖X−Y‖ ≥ c] {rate:.4} >= 0.47; structure failures {failures:?}"),
    }
}

fn gate11_determinism() -> Outcome {
    let mut failures = Vec::new();
    let params = SketchParams::canonical(64.0, 4.0, Overrides::desk())
        .unwrap()
        .with_scale(8.0)
        .unwrap();
    let data = generate(
        &Generator::GaussianGrid {
            n: 50,
            dim: 64,
            scale: 10.0,
            range: 1000,
        },
        &seed(11),
    )
    .unwrap();
    let zero = IntVector::zeros(64);
    for (i, x) in data.points().iter().enumerate().take(20) {
        let s = seed(100 + i as u64);
        let a = SingleScaleSketch::build(x, &zero, &params, &s).unwrap();
        let b = SingleScaleSketch::build(x, &zero, &params, &s).unwrap();
        if a.to_bytes() != b.to_bytes() || SingleScaleSketch::from_bytes(&a.to_bytes()).unwrap() != a {
            failures.push(format!("single-scale sketch {i}"));
        }
        let boost = Boosting::fixed(0.1, 8);
        let bs = BoostedSketcher::new(params.clone(), boost, &s, 64)
            .unwrap()
            .sketch(x, &zero)
            .unwrap();
        let again = BoostedSketch::build(x, &zero, &params, boost, &s).unwrap();
        if bs.to_bytes() != again.to_bytes() || BoostedSketch::from_bytes(&bs.to_bytes()).unwrap() != bs {
            failures.push(format!("boosted sketch {i}"));
        }
    }
    let ecfg = EstimatorConfig::new(4.0, 4.0, 64, 1000)
        .with_overrides(Overrides::desk())
        .with_reps(4);
    let ms = MultiScaleSketcher::new(ecfg.clone(), &seed(12))
        .unwrap()
        .sketch(data.point(0), &zero)
        .unwrap();
    let ms2 = MultiScaleSketcher::new(ecfg, &seed(12))
        .unwrap()
        .sketch(data.point(0), &zero)
        .unwrap();
    if ms.to_bytes() != ms2.to_bytes() || MultiScaleSketch::from_bytes(&ms.to_bytes()).unwrap() != ms {
        failures.push("multiscale sketch".into());
    }
    let acfg = AnnConfig {
        overrides: Overrides::desk(),
        reps: Some(8),
        depth: Some(3),
        trees: Some(2),
        ..AnnConfig::new(12.0, 3.0, 4.0, 0.5)
    };
    let build = || {
        let mut index = AnnIndex::build(data.clone(), acfg.clone(), &seed(13)).unwrap();
        index.materialize(1_000_000).unwrap();
        index
    };
    let (i1, i2) = (build(), build());
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    i1.save(d1.path()).unwrap();
    i2.save(d2.path()).unwrap();
    for name in ["manifest.json", "data.csv", "tree-000.bin", "tree-001.bin"] {
        if std::fs::read(d1.path().join(name)).unwrap() != std::fs::read(d2.path().join(name)).unwrap() {
            failures.push(format!("index file {name}"));
        }
    }
    if AnnIndex::load(d1.path()).unwrap() != i1 {
        failures.push("index round trip".into());
    }
    let cfg = ExperimentConfig {
        trials: 200,
        seed: seed(14),
        ..Default::default()
    };
    let mut r1 = run_experiment(&cfg).unwrap();
    let mut r2 = run_experiment(&cfg).unwrap();
    r1.wall_clock_secs = 0.0;
    r2.wall_clock_secs = 0.0;
    if r1.to_json().unwrap() != r2.to_json().unwrap() {
        failures.push("report".into());
    }
    Outcome {
        passed: failures.is_empty(),
        detail: format!("sketches, indices and reports reproduce; failures {failures:?}"),
    }
}

fn main() {
    let mut all = true;
    let mut run = |n: u32, name: &str, budget_secs: f64, gate: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = gate();
        let secs = start.elapsed().as_secs_f64();
        let status = if out.passed { "PASS" } else { "FAIL" };
        println!(
            "gate {n:2} {status} {name} [{secs:.1}s, budget {budget_secs}s] {}",
            out.detail
        );
        all &= out.passed;
    };
    run(1, "oracle equivalence", 60.0, &mut gate1_oracle);
    run(2, "single-scale non-expansion", 60.0, &mut gate2_nonexpansion);
    run(3, "single-scale contraction", 120.0, &mut gate3_contraction);
    run(4, "boosting", 300.0, &mut gate4_boosting);
    run(
        5,
        "estimator non-expansion",
        600.0,
        &mut gate5_estimator_nonexpansion,
    );
    run(
        6,
        "estimator average contraction",
        600.0,
        &mut gate6_estimator_contraction,
    );
    let start = Instant::now();
    let ann = ann_report();
    let ann_secs = start.elapsed().as_secs_f64();
    run(7, "near-neighbor soundness", 0.0, &mut || {
        gate7_ann_soundness(&ann)
    });
    run(8, "near-neighbor recall", 900.0, &mut || {
        let mut out = gate8_ann_recall(&ann);
        out.detail += &format!("; index and queries {ann_secs:.1}s");
        out
    });
    run(9, "certification", 300.0, &mut gate9_certification);
    run(
        10,
        "hard-distribution structure",
        60.0,
        &mut gate10_hard_structure,
    );
    run(11, "determinism and serialization", 60.0, &mut gate11_determinism);
    if !all {
        std::process::exit(1);
    }
}
