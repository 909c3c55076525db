//! Pipeline stages behind the `odt-demand` executable.
//!
//! Each stage reads the artifacts of the stages before it from the output
//! directory, writes its own, and records every file it wrote in a
//! manifest with SHA-256 digests.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{count_elbow, fit_labeler, DemandLabeler, KMeansParams, LabelerConfig};
use crate::data::{derive_seed, LabeledDataset, ScalingKind};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix};
use crate::explain::{self, importance, sample_background, shapley_exact, shapley_sampled, MAX_EXACT_FEATURES};
use crate::hpo::{optimize, write_trial_log, OptimizeOptions, TpeParams, DEFAULT_FOLDS, DEFAULT_MAX_ITERATIONS};
use crate::ingest::{self, distribution_feature_meta, production_feature_meta, TripSchema};
use crate::model::{ModelArtifact, ModelFamily, ModelSpec, Target};
use crate::synth::{generate_census, generate_trips, SynthConfig};
use crate::Real;

/// Seed streams derived from the master seed.
const SPLIT_STREAM: u64 = 1;
const TUNE_STREAM: u64 = 2;
const FIT_STREAM: u64 = 3;
const BACKGROUND_STREAM: u64 = 4;
const INSTANCE_STREAM: u64 = 5;
const SUBSAMPLE_STREAM: u64 = 6;
const KMEANS_STREAM: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    /// Trip log; defaults to `<out>/trips.csv`.
    pub trips: Option<PathBuf>,
    /// Census table; defaults to `<out>/census.csv`.
    pub census: Option<PathBuf>,
    pub out: PathBuf,
    pub model: Target,
    pub family: Option<ModelFamily>,
    pub seed: u64,
    pub k: usize,
    pub k_max: usize,
    pub iterations: usize,
    pub folds: usize,
    pub test_fraction: f64,
    pub scaling: ScalingKind,
    /// Stratified subsample of the labelled dataset used for tuning,
    /// training and evaluation.
    pub max_rows: Option<usize>,
    /// Epoch cap applied to neural configurations.
    pub max_epochs: Option<usize>,
    pub include_intra_zone: bool,
    pub background: usize,
    pub instances: usize,
    /// Permutations for sampled attribution when a model has more than
    /// the exact-enumeration feature limit.
    pub permutations: usize,
    pub synth: SynthConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            trips: None,
            census: None,
            out: PathBuf::from("out"),
            model: Target::Production,
            family: None,
            seed: 0,
            k: 3,
            k_max: 10,
            iterations: DEFAULT_MAX_ITERATIONS,
            folds: DEFAULT_FOLDS,
            test_fraction: eval::DEFAULT_TEST_FRACTION,
            scaling: ScalingKind::MinMax,
            max_rows: None,
            max_epochs: None,
            include_intra_zone: true,
            background: explain::DEFAULT_BACKGROUND,
            instances: 50,
            permutations: 200,
            synth: SynthConfig::default(),
        }
    }
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must be in (0,1)"));
        }
        if self.background == 0 || self.instances == 0 {
            return Err(Error::config("background and instances must be at least 1"));
        }
        Ok(())
    }

    fn trips_path(&self) -> PathBuf {
        self.trips.clone().unwrap_or_else(|| self.out.join("trips.csv"))
    }

    fn census_path(&self) -> PathBuf {
        self.census.clone().unwrap_or_else(|| self.out.join("census.csv"))
    }

    fn target_dir(&self) -> PathBuf {
        self.out.join(self.model.key())
    }

    fn family_dir(&self, family: ModelFamily) -> PathBuf {
        self.target_dir().join(family.key())
    }

    fn families(&self) -> Vec<ModelFamily> {
        self.family.map_or_else(|| ModelFamily::ALL.to_vec(), |f| vec![f])
    }

    fn seed(&self, stream: u64) -> u64 {
        derive_seed(self.seed, stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Ingest,
    Cluster,
    Tune,
    Train,
    Evaluate,
    Explain,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Cluster => "cluster",
            Command::Tune => "tune",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Explain => "explain",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fixture {
    Table2,
    Table3,
}

impl Fixture {
    pub fn matrix(self) -> ConfusionMatrix {
        ConfusionMatrix::new(match self {
            Fixture::Table2 => eval::PRODUCTION_MATRIX,
            Fixture::Table3 => eval::DISTRIBUTION_MATRIX,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Fixture::Table2 => "table2",
            Fixture::Table3 => "table3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub target: Target,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects written files for the manifest.
struct Outputs {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(root: &Path) -> Self {
        Outputs {
            root: root.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn write(&mut self, path: PathBuf, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(fs::File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.files.retain(|p| p != &path);
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        self.write(path, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn text(&mut self, path: PathBuf, text: &str) -> Result<()> {
        self.write(path, |w| Ok(w.write_all(text.as_bytes())?))
    }

    fn manifest(mut self, command: Command, cfg: &ProjectConfig) -> Result<PathBuf> {
        self.files.sort();
        let files = self
            .files
            .iter()
            .map(|p| {
                let bytes = fs::read(p)?;
                Ok(ManifestEntry {
                    path: relative(&self.root, p),
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            command: command.name().to_string(),
            seed: cfg.seed,
            target: cfg.model,
            files,
        };
        let path = self.root.join(format!("manifest_{}.json", command.name()));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    require(path)?;
    Ok(BufReader::new(fs::File::open(path)?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Runs one stage and returns the manifest path, or `None` when results
/// went to stdout.
pub fn run(command: Command, cfg: &ProjectConfig, fixture: Option<Fixture>) -> Result<Option<PathBuf>> {
    cfg.validate()?;
    if is_stdout(cfg) {
        if command != Command::Evaluate {
            return Err(Error::config("`--out -` is only supported by evaluate"));
        }
    } else {
        fs::create_dir_all(&cfg.out)?;
    }
    let mut out = Outputs::new(&cfg.out);
    match command {
        Command::Synth => synth(cfg, &mut out)?,
        Command::Ingest => ingest(cfg, &mut out)?,
        Command::Cluster => cluster(cfg, &mut out)?,
        Command::Tune => {
            for f in cfg.families() {
                tune(cfg, f, &mut out)?;
            }
        }
        Command::Train => {
            for f in cfg.families() {
                train(cfg, f, &mut out)?;
            }
        }
        Command::Evaluate => match fixture {
            Some(fx) => evaluate_fixture(cfg, fx, &mut out)?,
            None => {
                for f in cfg.families() {
                    evaluate(cfg, f, &mut out)?;
                }
            }
        },
        Command::Explain => {
            for f in cfg.families() {
                explain(cfg, f, &mut out)?;
            }
        }
        Command::Report => report(cfg, &mut out)?,
    }
    if is_stdout(cfg) {
        return Ok(None);
    }
    out.manifest(command, cfg).map(Some)
}

fn synth(cfg: &ProjectConfig, out: &mut Outputs) -> Result<()> {
    let scfg = SynthConfig {
        seed: cfg.seed,
        ..cfg.synth.clone()
    };
    let census = generate_census(&scfg)?;
    let trips = generate_trips(&scfg, &census)?;
    log::info!("synthesized {} zones and {} trips", census.len(), trips.len());
    out.write(cfg.out.join("census.csv"), |w| ingest::write_census(w, &census))?;
    out.write(cfg.out.join("trips.csv"), |w| ingest::write_trips(w, &trips))?;
    out.json(cfg.out.join("synth_config.json"), &scfg)
}

fn ingest(cfg: &ProjectConfig, out: &mut Outputs) -> Result<()> {
    let census = ingest::parse_census(open(&cfg.census_path())?)?;
    let zones = census.profiles.keys().cloned().collect();
    let trips = ingest::parse_trips(open(&cfg.trips_path())?, &TripSchema::default(), Some(&zones))?;
    let calendar = ingest::ServiceCalendar::default();
    let (inside, outside): (Vec<_>, Vec<_>) = trips.records.into_iter().partition(|t| calendar.contains(t.date));
    let mut trip_rejects = trips.rejects;
    trip_rejects.extend(outside.iter().map(|t| ingest::Reject {
        line: 0,
        raw: format!("{},{},{}", t.origin_da, t.dest_da, t.date),
        reason: format!("date {} is outside the service calendar", t.date),
    }));
    let prod = ingest::aggregate_production(&inside, &calendar)?;
    let dist = ingest::aggregate_distribution(&inside, &calendar, cfg.include_intra_zone)?;
    log::info!(
        "{} trips -> {} production rows, {} distribution rows",
        inside.len(),
        prod.len(),
        dist.len()
    );
    out.write(cfg.out.join("production_counts.csv"), |w| ingest::write_production_rows(w, &prod))?;
    out.write(cfg.out.join("distribution_counts.csv"), |w| ingest::write_distribution_rows(w, &dist))?;
    out.write(cfg.out.join("rejects_trips.csv"), |w| ingest::write_rejects(w, &trip_rejects))?;
    out.write(cfg.out.join("rejects_census.csv"), |w| ingest::write_rejects(w, &census.rejects))
}

fn counts_path(cfg: &ProjectConfig) -> PathBuf {
    cfg.out.join(format!("{}_counts.csv", cfg.model.key()))
}

fn cluster(cfg: &ProjectConfig, out: &mut Outputs) -> Result<()> {
    let census = ingest::parse_census(open(&cfg.census_path())?)?.profiles;
    let path = counts_path(cfg);
    let params = KMeansParams {
        seed: cfg.seed(KMEANS_STREAM),
        ..KMeansParams::default()
    };
    let lcfg = LabelerConfig {
        k: cfg.k,
        kmeans: params,
        ..LabelerConfig::default()
    };
    let (counts, dataset, labeler): (Vec<u32>, LabeledDataset<Real>, DemandLabeler) = match cfg.model {
        Target::Production => {
            let rows = ingest::read_production_rows(open(&path)?)?;
            let counts: Vec<u32> = rows.iter().map(|r| r.count).collect();
            let labeler = fit_labeler(&counts, &lcfg)?;
            let d = ingest::build_production_dataset(&rows, &census, &labeler)?;
            (counts, d, labeler)
        }
        Target::Distribution => {
            let rows = ingest::read_distribution_rows(open(&path)?)?;
            let counts: Vec<u32> = rows.iter().map(|r| r.count).collect();
            let labeler = fit_labeler(&counts, &lcfg)?;
            let d = ingest::build_distribution_dataset(&rows, &census, &labeler)?;
            (counts, d, labeler)
        }
    };
    let elbow = count_elbow(&counts, cfg.k_max, lcfg.scale, &params)?;
    if elbow.k != cfg.k {
        log::warn!("elbow suggests k = {} but k = {} is configured", elbow.k, cfg.k);
    }
    let dir = cfg.target_dir();
    out.json(dir.join("labeler.json"), &labeler)?;
    out.write(dir.join("elbow.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["k", "distortion", "selected"])?;
        for (i, d) in elbow.curve.iter().enumerate() {
            c.write_record([(i + 1).to_string(), d.to_string(), u8::from(i + 1 == elbow.k).to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    out.write(dir.join("dataset.csv"), |w| write_dataset(w, &dataset))
}

pub fn write_dataset<W: Write>(w: W, d: &LabeledDataset<Real>) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = d.feature_meta().iter().map(|m| m.name.as_str()).collect();
    header.push("label");
    c.write_record(&header)?;
    for (i, row) in d.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(d.label(i).to_string());
        c.write_record(&rec)?;
    }
    c.flush()?;
    Ok(())
}

pub fn read_dataset<R: std::io::Read>(r: R, target: Target) -> Result<LabeledDataset<Real>> {
    let meta = match target {
        Target::Production => production_feature_meta(),
        Target::Distribution => distribution_feature_meta(),
    };
    let mut c = csv::Reader::from_reader(r);
    let header = c.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let expected: Vec<&str> = meta.iter().map(|m| m.name.as_str()).chain(["label"]).collect();
    if names != expected {
        return Err(Error::input(format!(
            "dataset header does not match the {} layout",
            target.key()
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in c.records() {
        let rec = rec?;
        for (j, v) in rec.iter().enumerate() {
            let bad = || Error::input(format!("bad value `{v}` in dataset column {}", j + 1));
            if j == meta.len() {
                labels.push(v.parse::<usize>().map_err(|_| bad())?);
            } else {
                features.push(v.parse::<Real>().map_err(|_| bad())?);
            }
        }
    }
    LabeledDataset::new(features, labels, meta)
}

/// Labelled dataset after the optional subsample, split into train and test.
fn load_split(cfg: &ProjectConfig) -> Result<(LabeledDataset<Real>, LabeledDataset<Real>)> {
    let dir = cfg.target_dir();
    require(&dir.join("labeler.json"))?;
    let mut d = read_dataset(open(&dir.join("dataset.csv"))?, cfg.model)?;
    if let Some(max) = cfg.max_rows.filter(|&m| m < d.n_rows()) {
        let fraction = max as f64 / d.n_rows() as f64;
        let (_, keep) = eval::split_indices(d.labels(), fraction, cfg.seed(SUBSAMPLE_STREAM))?;
        d = d.subset(&keep);
    }
    eval::split(&d, cfg.test_fraction, cfg.seed(SPLIT_STREAM))
}

fn tuned_or_reference(cfg: &ProjectConfig, family: ModelFamily) -> Result<ModelSpec> {
    let path = cfg.family_dir(family).join("best_spec.json");
    let spec = if path.is_file() {
        read_json(&path)?
    } else {
        ModelSpec::reference(family, cfg.model)
    };
    Ok(spec.with_scaling(cfg.scaling).with_max_epochs(cfg.max_epochs))
}

fn tune(cfg: &ProjectConfig, family: ModelFamily, out: &mut Outputs) -> Result<()> {
    let (train, _) = load_split(cfg)?;
    let opts = OptimizeOptions {
        max_iterations: cfg.iterations,
        folds: cfg.folds,
        tpe: TpeParams {
            seed: derive_seed(cfg.seed(TUNE_STREAM), family as u64),
            ..TpeParams::default()
        },
        record_wall_time: false,
    };
    let space = family.search_space();
    let build = |c: &crate::hpo::Config| -> Result<Box<dyn crate::data::Learner<Real>>> {
        let spec = family
            .spec_from_config(c)?
            .with_scaling(cfg.scaling)
            .with_max_epochs(cfg.max_epochs);
        Ok(Box::new(spec))
    };
    let result = optimize(&space, &train, build, &opts, |t| {
        log::info!("{} trial {}: objective {:.4}", family.key(), t.index, t.objective);
        Ok(())
    })?;
    let dir = cfg.family_dir(family);
    out.write(dir.join("trials.jsonl"), |w| write_trial_log(w, &result.trials))?;
    let best = family.spec_from_config(&result.best_config)?;
    out.json(dir.join("best_spec.json"), &best)
}

fn train(cfg: &ProjectConfig, family: ModelFamily, out: &mut Outputs) -> Result<()> {
    let (train, _) = load_split(cfg)?;
    let spec = tuned_or_reference(cfg, family)?;
    let seed = cfg.seed(FIT_STREAM);
    let model = spec.fit(&train, seed)?;
    let artifact = ModelArtifact {
        target: cfg.model,
        spec,
        feature_names: train.feature_meta().iter().map(|m| m.name.clone()).collect(),
        seed,
        model,
    };
    out.json(cfg.family_dir(family).join("model.json"), &artifact)
}

fn load_model(cfg: &ProjectConfig, family: ModelFamily) -> Result<ModelArtifact<Real>> {
    require(&cfg.target_dir().join("labeler.json"))?;
    read_json(&cfg.family_dir(family).join("model.json"))
}

fn write_evaluation(out: &mut Outputs, dir: &Path, name: &str, cm: &ConfusionMatrix) -> Result<()> {
    out.write(dir.join("confusion.csv"), |w| cm.write_csv(w))?;
    let summary = serde_json::json!({
        "name": name,
        "confusion": cm,
        "per_class": cm.per_class_accuracy(),
        "overall": cm.overall_accuracy().ok(),
    });
    out.json(dir.join("evaluation.json"), &summary)?;
    out.text(dir.join("evaluation.txt"), &format!("{name}\n{}", eval::format_confusion(cm)))
}

fn evaluate(cfg: &ProjectConfig, family: ModelFamily, out: &mut Outputs) -> Result<()> {
    let artifact = load_model(cfg, family)?;
    let (_, test) = load_split(cfg)?;
    let cm = eval::evaluate(&artifact.model, &test)?;
    if is_stdout(cfg) {
        print!("{}\n{}", family.label(), eval::format_confusion(&cm));
        return Ok(());
    }
    write_evaluation(out, &cfg.family_dir(family), family.label(), &cm)
}

fn is_stdout(cfg: &ProjectConfig) -> bool {
    cfg.out.as_os_str() == "-"
}

fn evaluate_fixture(cfg: &ProjectConfig, fixture: Fixture, out: &mut Outputs) -> Result<()> {
    let cm = fixture.matrix();
    if is_stdout(cfg) {
        print!("{}\n{}", fixture.name(), eval::format_confusion(&cm));
        return Ok(());
    }
    write_evaluation(out, &cfg.out.join("fixtures").join(fixture.name()), fixture.name(), &cm)
}

fn explain(cfg: &ProjectConfig, family: ModelFamily, out: &mut Outputs) -> Result<()> {
    let artifact = load_model(cfg, family)?;
    let (train, test) = load_split(cfg)?;
    explain_model(cfg, &artifact, &train, &test, &cfg.family_dir(family), out)
}

fn explain_model(
    cfg: &ProjectConfig,
    artifact: &ModelArtifact<Real>,
    train: &LabeledDataset<Real>,
    test: &LabeledDataset<Real>,
    dir: &Path,
    out: &mut Outputs,
) -> Result<()> {
    let background = sample_background(train, cfg.background, cfg.seed(BACKGROUND_STREAM));
    let instances = sample_background(test, cfg.instances, cfg.seed(INSTANCE_STREAM));
    let sm = if instances.n_cols() <= MAX_EXACT_FEATURES {
        shapley_exact(&artifact.model, &instances, &background)?
    } else {
        shapley_sampled(&artifact.model, &instances, &background, cfg.permutations, cfg.seed(INSTANCE_STREAM))?
    };
    let ranking = importance(&sm)?;
    out.write(dir.join("importance.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["rank", "feature", "mean_abs_shap"])?;
        for (i, r) in ranking.iter().enumerate() {
            c.write_record([(i + 1).to_string(), r.name.clone(), r.score.to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    out.write(dir.join("shap_summary.csv"), |w| explain::write_summary(&sm, w))?;
    for meta in sm.feature_meta.clone() {
        out.write(dir.join("dependency").join(format!("{}.csv", meta.name)), |w| {
            explain::write_dependency(&sm, &meta.name, w)
        })?;
    }
    Ok(())
}

/// Cluster, tune and train every family, compare them on the held-out
/// split and explain the best one. Synthesizes inputs when none exist.
fn report(cfg: &ProjectConfig, out: &mut Outputs) -> Result<()> {
    if cfg.trips.is_none() && cfg.census.is_none() && !(cfg.trips_path().is_file() && cfg.census_path().is_file()) {
        synth(cfg, out)?;
    }
    ingest(cfg, out)?;
    cluster(cfg, out)?;
    let families = cfg.families();
    for &f in &families {
        tune(cfg, f, out)?;
        train(cfg, f, out)?;
        evaluate(cfg, f, out)?;
    }
    let (train_d, test_d) = load_split(cfg)?;
    let specs = families
        .iter()
        .map(|&f| tuned_or_reference(cfg, f))
        .collect::<Result<Vec<_>>>()?;
    let learners: Vec<(String, &dyn crate::data::Learner<Real>)> = specs
        .iter()
        .map(|s| (s.family().label().to_string(), s as &dyn crate::data::Learner<Real>))
        .collect();
    let mut comparison = eval::compare_learners(&train_d, &test_d, &learners, cfg.seed(FIT_STREAM));
    for (r, s) in comparison.results.iter_mut().zip(&specs) {
        r.spec = Some(*s);
    }
    let dir = cfg.target_dir();
    out.json(dir.join("comparison.json"), &comparison)?;
    out.text(dir.join("comparison.txt"), &eval::format_report(&comparison))?;
    let best = comparison
        .best
        .as_deref()
        .and_then(|b| families.iter().copied().find(|f| f.label() == b))
        .ok_or_else(|| Error::input("no family produced a model"))?;
    let artifact = load_model(cfg, best)?;
    explain_model(cfg, &artifact, &train_d, &test_d, &dir.join("explain"), out)?;
    out.text(dir.join("explain").join("model.txt"), &format!("{}\n", best.key()))
}
