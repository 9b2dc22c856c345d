//! End-to-end runs: corpus -> attributions -> similarity -> consistency -> report.
//!
//! Every stage reads and writes the interchange files documented in the other
//! modules, so externally produced attribution files drop in at `score`.
//! Pairs are processed on a worker pool; results are collected in input order
//! and sorted by pair id before anything is aggregated or written, so the
//! pool width never changes the output.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{load_embeddings, read_embeddings, similarity_matrix, EmbeddingSpace};
use crate::analysis::{
    aggregate, correlate, correlation_plot_data, plot_data, read_scores, render_report,
    write_scores, AggregateOptions, ConsistencyReport, Correlation, OverallMode, PerformanceTable,
    ReportFormat, ScoredPair,
};
use crate::attribution::{
    attribute_pair, pair_up, read_attributions, write_attributions, AttributionPair,
    AttributionSettings, AttributionVector, Head, NormalizationMode, Quadrature, QuadratureRule,
    DEFAULT_STEPS,
};
use crate::corpus::{load_corpus, CorpusReader, ParallelPair, TokenizerPolicy};
use crate::error::{Error, Result};
use crate::model::{DifferentiableScorer, Pooling, ToyModel};
use crate::transport::{build_instance, solve, write_dump};

pub const ATTRIBUTIONS_FILE: &str = "attributions.jsonl";
pub const SCORES_FILE: &str = "pairs.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const PLOT_DATA_FILE: &str = "plot_data.csv";
pub const CORRELATION_FILE: &str = "correlation.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelSettings {
    pub dim: usize,
    pub classes: usize,
    pub pooling: Pooling,
}

impl Default for ToyModelSettings {
    fn default() -> Self {
        ToyModelSettings {
            dim: 16,
            classes: 3,
            pooling: Pooling::Linear,
        }
    }
}

/// Run configuration, read from TOML. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub attributions: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub tokenizer: TokenizerPolicy,
    pub steps: usize,
    pub rule: QuadratureRule,
    pub normalization: NormalizationMode,
    pub overall: OverallMode,
    pub include_source: bool,
    pub formats: Vec<String>,
    pub head: Option<Head>,
    pub performance: Option<PathBuf>,
    pub dump_plans: bool,
    pub toy_model: ToyModelSettings,
    pub embeddings: BTreeMap<String, PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            model: None,
            attributions: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: 0,
            tokenizer: TokenizerPolicy::Whitespace,
            steps: DEFAULT_STEPS,
            rule: QuadratureRule::Trapezoid,
            normalization: NormalizationMode::AbsL1,
            overall: OverallMode::PairMean,
            include_source: false,
            formats: vec!["markdown".into(), "csv".into(), "json".into()],
            head: None,
            performance: None,
            dump_plans: false,
            toy_model: ToyModelSettings::default(),
            embeddings: BTreeMap::new(),
        }
    }
}

/// What a stage needs from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    InitModel,
    Attribute,
    Score,
    Report,
    Correlate,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.model,
            &mut self.attributions,
            &mut self.performance,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
        self.embeddings.values_mut().for_each(fix);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn settings(&self) -> AttributionSettings {
        AttributionSettings {
            quadrature: Quadrature {
                steps: self.steps,
                rule: self.rule,
            },
            normalization: self.normalization,
        }
    }

    pub fn aggregate_options(&self) -> AggregateOptions {
        AggregateOptions {
            overall: self.overall,
            include_source: self.include_source,
        }
    }

    pub fn report_formats(&self) -> Result<Vec<ReportFormat>> {
        self.formats.iter().map(|f| f.parse()).collect()
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub fn validate(&self, stage: Stage) -> Result<()> {
        let need = |p: &Option<PathBuf>, key: &str| -> Result<()> {
            match p {
                None => Err(Error::Config(format!("'{key}' is required for this command"))),
                Some(p) if !p.exists() => {
                    Err(Error::Config(format!("{key} file {} does not exist", p.display())))
                }
                Some(_) => Ok(()),
            }
        };
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        self.report_formats()
            .map_err(|e| Error::Config(e.to_string()))?;
        match stage {
            Stage::InitModel => need(&self.corpus, "corpus"),
            Stage::Attribute => {
                if self.attributions.is_some() {
                    return Err(Error::Config(
                        "set exactly one of 'model' and 'attributions'".into(),
                    ));
                }
                need(&self.corpus, "corpus")?;
                need(&self.model, "model")
            }
            Stage::Score => {
                match (&self.model, &self.attributions) {
                    (Some(_), None) => {
                        need(&self.corpus, "corpus")?;
                        need(&self.model, "model")?;
                    }
                    (None, Some(_)) => need(&self.attributions, "attributions")?,
                    _ => {
                        return Err(Error::Config(
                            "set exactly one of 'model' and 'attributions'".into(),
                        ))
                    }
                }
                if self.embeddings.is_empty() {
                    return Err(Error::Config("no embedding tables configured".into()));
                }
                for (lang, path) in &self.embeddings {
                    if !path.exists() {
                        return Err(Error::Config(format!(
                            "embedding table for '{lang}' ({}) does not exist",
                            path.display()
                        )));
                    }
                }
                Ok(())
            }
            Stage::Report => Ok(()),
            Stage::Correlate => need(&self.performance, "performance"),
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Runs `f` over `items` on a pool of `workers` threads. Results keep input
/// order; the first failing item (in input order) decides the error.
fn par_map<T, U, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    let results: Vec<Result<U>> = pool(workers)?.install(|| items.par_iter().map(&f).collect());
    results.into_iter().collect()
}

pub fn attribute_corpus<M>(
    pairs: &[ParallelPair],
    model: &M,
    settings: &AttributionSettings,
    workers: usize,
) -> Result<Vec<AttributionVector>>
where
    M: DifferentiableScorer + Sync + ?Sized,
{
    let per_pair = par_map(pairs, workers, |pair| {
        attribute_pair(pair, model, settings).map_err(|e| e.at_stage(&pair.id, "attribution"))
    })?;
    let records: Vec<AttributionVector> = per_pair.into_iter().flatten().collect();
    if let Some(worst) = records
        .iter()
        .map(|r| r.convergence_delta)
        .max_by(f64::total_cmp)
    {
        log::info!(
            "attributed {} sentence(s); max completeness residual {worst:e}",
            records.len()
        );
    }
    Ok(records)
}

fn score_one(unit: &AttributionPair, space: &EmbeddingSpace, dump_dir: Option<&Path>) -> Result<ScoredPair> {
    let wrap = |stage| move |e: Error| e.at_stage(&unit.pair_id, stage);
    let source = unit.source.sentence().map_err(wrap("alignment"))?;
    let target = unit.target.sentence().map_err(wrap("alignment"))?;
    let sim = similarity_matrix(&source, &target, space).map_err(wrap("alignment"))?;
    let instance = build_instance(&unit.source.normalized, &unit.target.normalized, &sim.values)
        .map_err(wrap("transport"))?;
    let plan = solve(&instance).map_err(wrap("transport"))?;
    if let Some(dir) = dump_dir {
        let name: String = format!("{}__{}.txt", unit.pair_id, unit.head)
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
            .collect();
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_dump(BufWriter::new(file), &instance, &plan).map_err(|e| Error::io(&path, e))?;
    }
    Ok(ScoredPair {
        pair_id: unit.pair_id.clone(),
        head: unit.head,
        source_language: unit.source.language.clone(),
        target_language: unit.target.language.clone(),
        consistency: plan.objective,
        iterations: plan.iterations,
        masked_fraction: sim.masked_fraction(),
    })
}

/// Scores attribution records pairwise. With `head = None` the records must
/// all share one head.
pub fn score_attributions(
    records: Vec<AttributionVector>,
    space: &EmbeddingSpace,
    head: Option<Head>,
    workers: usize,
    dump_dir: Option<&Path>,
) -> Result<Vec<ScoredPair>> {
    let records: Vec<AttributionVector> = match head {
        Some(h) => records.into_iter().filter(|r| r.head == h).collect(),
        None => {
            let mut heads: Vec<Head> = records.iter().map(|r| r.head).collect();
            heads.sort();
            heads.dedup();
            if heads.len() > 1 {
                let names: Vec<String> = heads.iter().map(Head::to_string).collect();
                return Err(Error::InvalidArgument(format!(
                    "attributions mix heads ({}); choose one with 'head'",
                    names.join(", ")
                )));
            }
            records
        }
    };
    if records.is_empty() {
        return Err(Error::InvalidArgument("no attribution records to score".into()));
    }
    space.require(records.iter().map(|r| r.language.as_str()))?;
    let units = pair_up(records)?;
    par_map(&units, workers, |u| score_one(u, space, dump_dir))
}

fn load_space(cfg: &RunConfig) -> Result<EmbeddingSpace> {
    let mut space = EmbeddingSpace::new();
    for (lang, path) in &cfg.embeddings {
        let table = load_embeddings(path, lang, None, cfg.tokenizer.lowercases())?;
        log::info!("loaded {} vectors for '{lang}'", table.len());
        space.insert(table)?;
    }
    Ok(space)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_resolved_config(cfg: &RunConfig) -> Result<()> {
    write_file(&cfg.output_dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml().as_bytes())
}

/// Builds a seeded toy model over the corpus vocabulary.
pub fn init_model(cfg: &RunConfig) -> Result<ToyModel> {
    cfg.validate(Stage::InitModel)?;
    let pairs = load_corpus(cfg.corpus.as_ref().expect("validated"), cfg.tokenizer)?;
    let words = pairs.iter().flat_map(|p| {
        p.source
            .tokens()
            .iter()
            .chain(p.target.tokens())
            .filter(|t| t.kind.is_content())
            .map(|t| t.surface.clone())
    });
    let s = cfg.toy_model;
    ToyModel::seeded(words, s.dim, s.classes, cfg.seed, s.pooling)
}

fn attribute_from_config(cfg: &RunConfig) -> Result<Vec<AttributionVector>> {
    let model = ToyModel::load(cfg.model.as_ref().expect("validated"))?;
    let corpus = cfg.corpus.as_ref().expect("validated");
    let file = File::open(corpus).map_err(|e| Error::io(corpus, e))?;
    let pairs: Vec<ParallelPair> =
        CorpusReader::new(BufReader::new(file), cfg.tokenizer).collect::<Result<_>>()?;
    attribute_corpus(&pairs, &model, &cfg.settings(), cfg.worker_count())
}

/// `attribute`: writes one attribution record per pair side.
pub fn run_attribute(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate(Stage::Attribute)?;
    let records = attribute_from_config(cfg)?;
    create_dir(&cfg.output_dir)?;
    let out = cfg.output_dir.join(ATTRIBUTIONS_FILE);
    write_with(&out, |w| write_attributions(w, &records))?;
    write_resolved_config(cfg)?;
    Ok(out)
}

#[derive(Debug)]
pub struct ScoreOutcome {
    pub scores: Vec<ScoredPair>,
    pub report: ConsistencyReport,
    pub written: Vec<PathBuf>,
}

/// `score`: per-pair consistency plus the aggregated report.
pub fn run_score(cfg: &RunConfig) -> Result<ScoreOutcome> {
    cfg.validate(Stage::Score)?;
    let records = match &cfg.attributions {
        Some(path) => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            read_attributions(BufReader::new(file))?
        }
        None => attribute_from_config(cfg)?,
    };
    let space = load_space(cfg)?;
    create_dir(&cfg.output_dir)?;
    let dump_dir = if cfg.dump_plans {
        let d = cfg.output_dir.join("plans");
        create_dir(&d)?;
        Some(d)
    } else {
        None
    };
    let scores = score_attributions(records, &space, cfg.head, cfg.worker_count(), dump_dir.as_deref())?;
    let scores_path = cfg.output_dir.join(SCORES_FILE);
    write_with(&scores_path, |w| write_scores(w, &scores))?;
    let (report, mut written) = write_reports(cfg, &scores)?;
    written.insert(0, scores_path);
    write_resolved_config(cfg)?;
    Ok(ScoreOutcome {
        scores,
        report,
        written,
    })
}

fn write_reports(cfg: &RunConfig, scores: &[ScoredPair]) -> Result<(ConsistencyReport, Vec<PathBuf>)> {
    let report = aggregate(scores, cfg.aggregate_options())?;
    let perf = match &cfg.performance {
        Some(p) => Some(PerformanceTable::load(p)?),
        None => None,
    };
    let mut written = Vec::new();
    for format in cfg.report_formats()? {
        let path = cfg.output_dir.join(format!("report.{}", format.extension()));
        write_file(&path, render_report(&report, perf.as_ref(), format).as_bytes())?;
        written.push(path);
    }
    let plot = cfg.output_dir.join(PLOT_DATA_FILE);
    write_file(&plot, plot_data(&report).as_bytes())?;
    written.push(plot);
    Ok((report, written))
}

fn read_scores_file(path: &Path) -> Result<Vec<ScoredPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(BufReader::new(file))
}

/// `report`: re-renders reports from a per-pair scores file.
pub fn run_report(cfg: &RunConfig, scores: Option<&Path>) -> Result<Vec<PathBuf>> {
    cfg.validate(Stage::Report)?;
    let default = cfg.output_dir.join(SCORES_FILE);
    let scores = read_scores_file(scores.unwrap_or(&default))?;
    create_dir(&cfg.output_dir)?;
    Ok(write_reports(cfg, &scores)?.1)
}

/// `correlate`: Pearson correlation between per-language consistency and the
/// performance table; writes the plot-data series.
pub fn run_correlate(cfg: &RunConfig, scores: Option<&Path>) -> Result<(Correlation, PathBuf)> {
    cfg.validate(Stage::Correlate)?;
    let default = cfg.output_dir.join(SCORES_FILE);
    let scores = read_scores_file(scores.unwrap_or(&default))?;
    let report = aggregate(&scores, cfg.aggregate_options())?;
    let perf = PerformanceTable::load(cfg.performance.as_ref().expect("validated"))?;
    let corr = correlate(&report, &perf)?;
    create_dir(&cfg.output_dir)?;
    let out = cfg.output_dir.join(CORRELATION_FILE);
    write_file(&out, correlation_plot_data(&corr).as_bytes())?;
    Ok((corr, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Corpus,
    Attributions,
    Embeddings,
    Scores,
}

impl std::str::FromStr for FileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corpus" => Ok(FileKind::Corpus),
            "attributions" => Ok(FileKind::Attributions),
            "embeddings" => Ok(FileKind::Embeddings),
            "scores" => Ok(FileKind::Scores),
            other => Err(Error::InvalidArgument(format!("unknown file kind '{other}'"))),
        }
    }
}

/// Guesses the interchange kind from the first non-blank line.
pub fn detect_kind(path: &Path) -> Result<FileKind> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if !first.trim_start().starts_with('{') {
        return Ok(FileKind::Embeddings);
    }
    let v: serde_json::Value =
        serde_json::from_str(first).map_err(|e| Error::schema(1, e.to_string()))?;
    Ok(if v.get("side").is_some() {
        FileKind::Attributions
    } else if v.get("consistency").is_some() {
        FileKind::Scores
    } else {
        FileKind::Corpus
    })
}

/// Schema-checks one interchange file and returns the number of records.
pub fn validate_file(path: &Path, kind: FileKind, expected_dim: Option<usize>) -> Result<usize> {
    let open = || File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e));
    match kind {
        FileKind::Corpus => Ok(load_corpus(path, TokenizerPolicy::Whitespace)?.len()),
        FileKind::Attributions => {
            let records = read_attributions(open()?)?;
            let n = records.len();
            pair_up(records)?;
            Ok(n)
        }
        FileKind::Embeddings => {
            // The table's language is irrelevant to its layout.
            Ok(read_embeddings(open()?, "und", expected_dim, false)?.len())
        }
        FileKind::Scores => Ok(read_scores(open()?)?.len()),
    }
}
