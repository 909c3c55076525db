//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fail.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use odt_demand::cluster::{count_elbow, fit_labeler, kmeans, CountScale, KMeansParams, LabelerConfig};
use odt_demand::data::{accuracy, derive_seed, rng_from_seed, Classifier, Learner};
use odt_demand::eval::{ConfusionMatrix, PRODUCTION_MATRIX, DISTRIBUTION_MATRIX};
use odt_demand::explain::{importance, sample_background, shapley_exact};
use odt_demand::fixtures::{blobs, blobs_split, BLOBS_WIDTH};
use odt_demand::hpo::{optimize, OptimizeOptions, OptimizeResult, TpeParams};
use odt_demand::ingest::{aggregate_distribution, aggregate_production, build_distribution_dataset};
use odt_demand::model::{ModelFamily, ModelSpec, Target};
use odt_demand::neural::{gradient_check, Activation, MlpConfig, Network, OutputActivation};
use odt_demand::synth::{generate_census, generate_trips, SynthConfig};
use odt_demand::trees::{Bagging, BaggingConfig, BaseEstimator, DecisionTree, TreeConfig};
use odt_demand::{Dataset, Real};

const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() < tol
}

fn metric_fixture(counts: [[usize; 3]; 3], rounded: [i64; 3], exact: [f64; 3], overall: (i64, f64)) -> Outcome {
    let cm = ConfusionMatrix::new(counts);
    let per = cm.per_class_accuracy();
    let all = match cm.overall_accuracy() {
        Ok(p) => p,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut ok = within(all.exact, overall.1, 1e-10) && all.rounded == overall.0;
    for c in 0..3 {
        ok &= per[c].is_some_and(|p| p.rounded == rounded[c] && within(p.exact, exact[c], 1e-10));
    }
    let shown: Vec<String> = per
        .iter()
        .map(|p| p.map_or("-".into(), |p| format!("{:.10}", p.exact)))
        .collect();
    outcome(ok, format!("per-class [{}], overall {:.10} -> {}", shown.join(", "), all.exact, all.rounded))
}

fn c1() -> Outcome {
    metric_fixture(
        PRODUCTION_MATRIX,
        [73, 53, 65],
        [16600.0 / 226.0, 11400.0 / 216.0, 5500.0 / 85.0],
        (64, 33500.0 / 527.0),
    )
}

fn c2() -> Outcome {
    metric_fixture(
        DISTRIBUTION_MATRIX,
        [95, 65, 63],
        [10700.0 / 113.0, 10900.0 / 168.0, 9800.0 / 156.0],
        (72, 31400.0 / 437.0),
    )
}

fn synth_counts(seed: u64) -> (Vec<u32>, Vec<u32>) {
    let cfg = SynthConfig::with_seed(seed);
    let census = generate_census(&cfg).expect("census");
    let trips = generate_trips(&cfg, &census).expect("trips");
    let cal = cfg.calendar().expect("calendar");
    let p = aggregate_production(&trips, &cal).expect("production");
    let d = aggregate_distribution(&trips, &cal, true).expect("distribution");
    (p.iter().map(|r| r.count).collect(), d.iter().map(|r| r.count).collect())
}

fn c3() -> Outcome {
    let (mut prod_hits, mut dist_hits) = (0, 0);
    let mut seen = Vec::new();
    for seed in 0..SEEDS {
        let (p, d) = synth_counts(seed);
        let params = KMeansParams::default();
        let elbow = count_elbow(&p, 10, CountScale::Log, &params).expect("elbow");
        let pl = fit_labeler(&p, &LabelerConfig::default()).expect("labeler");
        let dl = fit_labeler(&d, &LabelerConfig::default()).expect("labeler");
        prod_hits += usize::from(elbow.k == 3 && pl.boundaries == [1, 5]);
        dist_hits += usize::from(dl.boundaries == [1, 2]);
        seen.push(format!("{}:{:?}/{:?}", elbow.k, pl.boundaries, dl.boundaries));
    }
    outcome(
        prod_hits >= 9 && dist_hits >= 9,
        format!("production k=3,(1,5) on {prod_hits}/10, distribution (1,2) on {dist_hits}/10 [{}]", seen.join(" ")),
    )
}

/// Minimum distortion over every assignment of points to `k` labels.
fn exhaustive_distortion(x: &[f64], k: usize) -> f64 {
    let n = x.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sum = vec![0.0; k];
        let mut sq = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sum[l] += x[i];
            sq[l] += x[i] * x[i];
            cnt[l] += 1;
        }
        let d: f64 = (0..k)
            .filter(|&c| cnt[c] > 0)
            .map(|c| sq[c] - sum[c] * sum[c] / cnt[c] as f64)
            .sum();
        best = best.min(d);
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

fn c4() -> Outcome {
    let mut rng = rng_from_seed(4);
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for inst in 0..200u64 {
        let k = 2 + (inst % 2) as usize;
        let n = rng.random_range(k + 1..=12);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let points: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        let params = KMeansParams {
            seed: inst,
            restarts: 10,
            ..KMeansParams::default()
        };
        let got = kmeans(&points, k, &params).expect("kmeans").distortion;
        let want = exhaustive_distortion(&x, k);
        let gap = (got - want).abs();
        worst = worst.max(gap);
        hits += usize::from(gap <= 1e-9);
    }
    outcome(hits >= 198, format!("{hits}/200 match the exhaustive minimum, largest gap {worst:.2e}"))
}

fn c5() -> Outcome {
    let mut rng = rng_from_seed(5);
    let mut worst: f64 = 0.0;
    for i in 0..50usize {
        let cfg = MlpConfig {
            hidden_layers: 1 + (i / 4) % 6,
            neurons_per_hidden: rng.random_range(2..=8),
            hidden_activation: [Activation::Tanh, Activation::Relu][i % 2],
            output_activation: [OutputActivation::Softmax, OutputActivation::Sigmoid][(i / 2) % 2],
            ..MlpConfig::default()
        };
        let width = rng.random_range(2..=6);
        let mut net: Network<f64> = Network::new(width, &cfg, &mut rng);
        let jittered: Vec<f64> = net
            .parameters()
            .iter()
            .map(|p| p + rng.random_range(-0.1..0.1))
            .collect();
        net.set_parameters(&jittered).expect("parameter count");
        let rows: Vec<f64> = (0..8 * width).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..8).map(|r| r % 3).collect();
        let err = gradient_check(&net, &rows, &labels, 1e-6).expect("gradient check");
        worst = worst.max(err);
    }
    outcome(worst < 1e-4, format!("largest relative gradient error over 50 networks {worst:.2e}"))
}

fn blobs_specs() -> Vec<(ModelFamily, ModelSpec, bool)> {
    vec![
        (ModelFamily::RandomForest, ModelSpec::reference(ModelFamily::RandomForest, Target::Production), true),
        // forest base
        (ModelFamily::Bagging, ModelSpec::reference(ModelFamily::Bagging, Target::Distribution), true),
        (ModelFamily::Ann, ModelSpec::reference(ModelFamily::Ann, Target::Production), false),
        (ModelFamily::Dnn, ModelSpec::reference(ModelFamily::Dnn, Target::Production), false),
    ]
}

fn c6() -> Outcome {
    let (train, test): (Dataset, Dataset) = blobs_split(400, 6);
    let background = sample_background(&train, 100, 60);
    let instances = sample_background(&test, 20, 61);
    let dummy = BLOBS_WIDTH - 1;
    let mut ok = true;
    let mut notes = Vec::new();
    for (family, spec, is_tree) in blobs_specs() {
        let model = spec.fit(&train, 6).expect("fit");
        let sm = shapley_exact(&model, &instances, &background).expect("shapley");
        let mut gap: f64 = 0.0;
        let mut dummy_max: f64 = 0.0;
        for i in 0..sm.n_instances {
            let want = model.predict_proba(sm.instance(i));
            let got = sm.reconstruct(i);
            for c in 0..3 {
                gap = gap.max((got[c] - want[c]).abs());
                dummy_max = dummy_max.max(sm.value(i, dummy, c).abs());
            }
        }
        ok &= gap < 1e-8 && (!is_tree || dummy_max == 0.0);
        notes.push(format!("{} gap {gap:.1e} dummy {dummy_max:.1e}", family.label()));
    }
    outcome(ok, notes.join(", "))
}

fn search(d: &Dataset, seed: u64, n_startup: usize) -> OptimizeResult {
    let family = ModelFamily::RandomForest;
    let opts = OptimizeOptions {
        max_iterations: 30,
        folds: 10,
        tpe: TpeParams {
            n_startup,
            seed,
            ..TpeParams::default()
        },
        record_wall_time: false,
    };
    let build = |c: &odt_demand::hpo::Config| -> odt_demand::error::Result<Box<dyn Learner<Real>>> {
        Ok(Box::new(family.spec_from_config(c)?))
    };
    optimize(&family.search_space(), d, build, &opts, |_| Ok(())).expect("optimize")
}

fn monotone(r: &OptimizeResult) -> bool {
    r.incumbent_trace().windows(2).all(|w| w[1] <= w[0])
}

fn c7() -> Outcome {
    let mut wins = 0;
    let mut strict = 0;
    let mut mono = true;
    for seed in 0..20u64 {
        let d: Dataset = blobs(90, 700 + seed);
        let tpe = search(&d, seed, TpeParams::default().n_startup);
        let random = search(&d, seed, 30);
        mono &= monotone(&tpe) && monotone(&random);
        wins += usize::from(tpe.best_accuracy() >= random.best_accuracy());
        strict += usize::from(tpe.best_accuracy() > random.best_accuracy());
    }
    outcome(
        wins >= 12 && mono,
        format!("TPE >= random on {wins}/20 seeds ({strict} strictly), incumbent monotone: {mono}"),
    )
}

fn c8() -> Outcome {
    let (train, test): (Dataset, Dataset) = blobs_split(300, 8);
    let mut ok = true;
    let mut notes = Vec::new();
    for family in ModelFamily::ALL {
        let opts = OptimizeOptions {
            max_iterations: 10,
            folds: 5,
            tpe: TpeParams {
                seed: 8,
                ..TpeParams::default()
            },
            record_wall_time: false,
        };
        let build = |c: &odt_demand::hpo::Config| -> odt_demand::error::Result<Box<dyn Learner<Real>>> {
            Ok(Box::new(family.spec_from_config(c)?))
        };
        let r = optimize(&family.search_space(), &train, build, &opts, |_| Ok(())).expect("optimize");
        let spec = family.spec_from_config(&r.best_config).expect("spec");
        let model = spec.fit(&train, 8).expect("fit");
        let acc = accuracy(&model, &test);
        ok &= acc >= 0.90;
        notes.push(format!("{} {acc:.3}", family.label()));
    }
    let identity = BaggingConfig {
        base: BaseEstimator::Tree(TreeConfig::default()),
        n_estimators: 1,
        max_features: 1.0,
        max_samples: 1.0,
        bootstrap: false,
        bootstrap_features: false,
    };
    let bag = Bagging::fit(&train, &identity, 81).expect("bagging");
    let tree = DecisionTree::fit(&train, &TreeConfig::default(), 82).expect("tree");
    let mut rng = rng_from_seed(83);
    let mut same = 0;
    for _ in 0..1000 {
        let probe: Vec<f64> = (0..BLOBS_WIDTH).map(|_| rng.random_range(-4.0..12.0)).collect();
        same += usize::from(bag.predict_proba(&probe) == tree.predict_proba(&probe));
    }
    ok &= same == 1000;
    notes.push(format!("identity bagging agrees on {same}/1000 probes"));
    outcome(ok, notes.join(", "))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("read dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("prefix").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c9() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let config = tmp.path().join("config.json");
    // synthetic defaults with a reduced tuning budget
    let cfg = serde_json::json!({
        "seed": 9,
        "iterations": 8,
        "folds": 3,
        "max_rows": 2000,
        "max_epochs": 20,
        "instances": 20,
    });
    fs::write(&config, cfg.to_string()).expect("config");
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|r| tmp.path().join(r)).collect();
    for out in &runs {
        let status = Command::new(env!("CARGO_BIN_EXE_odt-demand"))
            .arg("report")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .status()
            .expect("spawn");
        if !status.success() {
            return outcome(false, format!("report exited with {status}"));
        }
    }
    let (a, b) = (files_under(&runs[0]), files_under(&runs[1]));
    if a != b {
        return outcome(false, "the two runs wrote different file sets");
    }
    let differing: Vec<String> = a
        .iter()
        .filter(|f| fs::read(runs[0].join(f)).ok() != fs::read(runs[1].join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    outcome(
        differing.is_empty() && a.iter().any(|f| f.ends_with("manifest_report.json")),
        format!("{} files compared, {} differ {:?}", a.len(), differing.len(), differing),
    )
}

fn c10() -> Outcome {
    let mut hits = 0;
    let mut tops = Vec::new();
    for seed in 0..SEEDS {
        let cfg = SynthConfig::with_seed(seed);
        let census = generate_census(&cfg).expect("census");
        let trips = generate_trips(&cfg, &census).expect("trips");
        let cal = cfg.calendar().expect("calendar");
        let rows = aggregate_distribution(&trips, &cal, true).expect("distribution");
        let counts: Vec<u32> = rows.iter().map(|r| r.count).collect();
        let labeler = fit_labeler(&counts, &LabelerConfig::default()).expect("labeler");
        let d: Dataset = build_distribution_dataset(&rows, &census, &labeler).expect("dataset");
        let train = sample_background(&d, 3000, derive_seed(seed, 0));
        let model = ModelSpec::reference(ModelFamily::RandomForest, Target::Distribution)
            .fit(&train, seed)
            .expect("fit");
        let background = sample_background(&train, 20, derive_seed(seed, 1));
        let instances = sample_background(&train, 20, derive_seed(seed, 2));
        let sm = shapley_exact(&model, &instances, &background).expect("shapley");
        let top = importance(&sm).expect("importance")[0].name.clone();
        hits += usize::from(top.starts_with("dest_"));
        tops.push(top);
    }
    outcome(hits >= 8, format!("destination feature ranked first on {hits}/10 seeds {tops:?}"))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        ("confusion metrics, first fixture", c1, Duration::from_secs(1)),
        ("confusion metrics, second fixture", c2, Duration::from_secs(1)),
        ("demand-level boundaries", c3, Duration::from_secs(30)),
        ("k-means vs exhaustive partition", c4, Duration::from_secs(60)),
        ("MLP gradient check", c5, Duration::from_secs(120)),
        ("Shapley efficiency and dummy", c6, Duration::from_secs(300)),
        ("TPE vs random search", c7, Duration::from_secs(900)),
        ("classifier sanity", c8, Duration::from_secs(600)),
        ("end-to-end determinism", c9, Duration::from_secs(1200)),
        ("destination demographics lead", c10, Duration::from_secs(1800)),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed < *budget;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name}: {} ({:.1}s, budget {}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
