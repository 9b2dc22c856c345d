use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrcons::analysis::OverallMode;
use attrcons::pipeline::{self, detect_kind, validate_file, FileKind, RunConfig};
use attrcons::{Error, Head, Pooling, QuadratureRule, TokenizerPolicy};
use clap::{Args, Parser, Subcommand};

/// Cross-lingual consistency of token attributions.
#[derive(Debug, Parser)]
#[command(name = "attrcons", version)]
struct Cli {
    /// TOML run configuration. Relative paths inside it resolve against its directory.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a seeded toy model over a corpus vocabulary.
    InitModel {
        #[command(flatten)]
        common: Common,
        /// Where to write the checkpoint (default: <output-dir>/model.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// linear or tanh
        #[arg(long)]
        pooling: Option<Pooling>,
    },
    /// Integrated-gradients attributions for every pair side.
    Attribute {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        attr: AttrOpts,
    },
    /// Per-pair consistency scores plus aggregated reports.
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        attr: AttrOpts,
        /// Precomputed attribution file (instead of corpus + model).
        #[arg(long)]
        attributions: Option<PathBuf>,
        /// Word-vector table for one language, as LANG=PATH. Repeatable.
        #[arg(long = "embedding", value_parser = parse_embedding)]
        embeddings: Vec<(String, PathBuf)>,
        /// classification, span_start or span_end
        #[arg(long)]
        head: Option<Head>,
        /// Write each transport instance and plan under <output-dir>/plans.
        #[arg(long)]
        dump_plans: bool,
        #[command(flatten)]
        report: ReportOpts,
    },
    /// Re-render reports from a per-pair scores file.
    Report {
        #[command(flatten)]
        common: Common,
        /// Scores file (default: <output-dir>/pairs.jsonl).
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        report: ReportOpts,
    },
    /// Pearson correlation of per-language consistency with task performance.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Scores file (default: <output-dir>/pairs.jsonl).
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        report: ReportOpts,
    },
    /// Schema-check interchange files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// corpus, attributions, embeddings or scores (default: detect)
        #[arg(long)]
        kind: Option<FileKind>,
        /// Required vector width for embedding tables.
        #[arg(long)]
        dim: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// whitespace or whitespace_lowercase
    #[arg(long)]
    tokenizer: Option<TokenizerPolicy>,
}

#[derive(Debug, Args)]
struct AttrOpts {
    /// Toy model checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Quadrature intervals along the integration path.
    #[arg(long)]
    steps: Option<usize>,
    /// trapezoid or left_riemann
    #[arg(long)]
    rule: Option<QuadratureRule>,
}

#[derive(Debug, Args)]
struct ReportOpts {
    /// Report formats to write (markdown, csv, json). Repeatable.
    #[arg(long = "format")]
    formats: Vec<String>,
    /// pair_mean or language_mean
    #[arg(long)]
    overall: Option<OverallMode>,
    /// Count targets that are also source languages in the overall.
    #[arg(long)]
    include_source: bool,
    /// CSV with a `language,metric` header.
    #[arg(long)]
    performance: Option<PathBuf>,
}

fn parse_embedding(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((lang, path)) if !lang.is_empty() && !path.is_empty() => Ok((lang.to_owned(), PathBuf::from(path))),
        _ => Err(format!("expected LANG=PATH, got '{s}'")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    fn apply(self, cfg: &mut RunConfig) {
        if self.corpus.is_some() {
            cfg.corpus = self.corpus;
        }
        set(&mut cfg.output_dir, self.output_dir);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.workers, self.workers);
        set(&mut cfg.tokenizer, self.tokenizer);
    }
}

impl AttrOpts {
    fn apply(self, cfg: &mut RunConfig) {
        if self.model.is_some() {
            cfg.model = self.model;
        }
        set(&mut cfg.steps, self.steps);
        set(&mut cfg.rule, self.rule);
    }
}

impl ReportOpts {
    fn apply(self, cfg: &mut RunConfig) {
        if !self.formats.is_empty() {
            cfg.formats = self.formats;
        }
        set(&mut cfg.overall, self.overall);
        cfg.include_source |= self.include_source;
        if self.performance.is_some() {
            cfg.performance = self.performance;
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
            other => other,
        }),
        None => Ok(RunConfig::default()),
    }
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::InitModel {
            common,
            out,
            dim,
            classes,
            pooling,
        } => {
            common.apply(&mut cfg);
            set(&mut cfg.toy_model.dim, dim);
            set(&mut cfg.toy_model.classes, classes);
            set(&mut cfg.toy_model.pooling, pooling);
            let model = pipeline::init_model(&cfg)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("model.json"));
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            model.save(&out)?;
            println!(
                "wrote {} ({} vocabulary rows, dim {})",
                out.display(),
                model.vocab_size(),
                cfg.toy_model.dim
            );
        }
        Command::Attribute { common, attr } => {
            common.apply(&mut cfg);
            attr.apply(&mut cfg);
            let out = pipeline::run_attribute(&cfg)?;
            list(&[out]);
        }
        Command::Score {
            common,
            attr,
            attributions,
            embeddings,
            head,
            dump_plans,
            report,
        } => {
            common.apply(&mut cfg);
            attr.apply(&mut cfg);
            report.apply(&mut cfg);
            if attributions.is_some() {
                cfg.attributions = attributions;
                // An attribution file on the command line replaces a model from the config.
                cfg.model = None;
            }
            cfg.embeddings.extend(embeddings);
            if head.is_some() {
                cfg.head = head;
            }
            cfg.dump_plans |= dump_plans;
            let outcome = pipeline::run_score(&cfg)?;
            list(&outcome.written);
            match outcome.report.overall {
                Some(c) => println!("overall C = {c:.3} over {} pair(s)", outcome.scores.len()),
                None => println!("overall C = n/a ({} pair(s), all excluded)", outcome.scores.len()),
            }
        }
        Command::Report { common, scores, report } => {
            common.apply(&mut cfg);
            report.apply(&mut cfg);
            list(&pipeline::run_report(&cfg, scores.as_deref())?);
        }
        Command::Correlate { common, scores, report } => {
            common.apply(&mut cfg);
            report.apply(&mut cfg);
            let (corr, out) = pipeline::run_correlate(&cfg, scores.as_deref())?;
            list(&[out]);
            println!("pearson r = {:.6} over {} language(s)", corr.coefficient, corr.points.len());
        }
        Command::Validate { files, kind, dim } => {
            for path in &files {
                let kind = match kind {
                    Some(k) => k,
                    None => detect_kind(path)?,
                };
                let n = validate_file(path, kind, dim).map_err(|e| match e {
                    Error::Schema { line, message } => Error::Schema {
                        line,
                        message: format!("{}: {message}", path.display()),
                    },
                    other => other,
                })?;
                println!("ok {} ({kind:?}, {n} records)", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
