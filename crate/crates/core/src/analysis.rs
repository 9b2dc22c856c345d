//! Per-language aggregation of consistency scores, the performance
//! correlation, and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attribution::Head;
use crate::error::{Error, Result};

/// Score for one scored unit (a pair under one attribution head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair_id: String,
    #[serde(default)]
    pub head: Head,
    pub source_language: String,
    pub target_language: String,
    pub consistency: f64,
    #[serde(default)]
    pub iterations: usize,
    /// Fraction of similarity entries that were masked (OOV, separators, padding).
    #[serde(default)]
    pub masked_fraction: f64,
}

pub fn write_scores<W: Write>(mut w: W, scores: &[ScoredPair]) -> std::io::Result<()> {
    for s in scores {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scores<R: BufRead>(reader: R) -> Result<Vec<ScoredPair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::schema(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: ScoredPair =
            serde_json::from_str(&line).map_err(|e| Error::schema(i + 1, e.to_string()))?;
        if !s.consistency.is_finite() {
            return Err(Error::schema(i + 1, "non-finite consistency"));
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallMode {
    /// Mean over every counted pair.
    #[default]
    PairMean,
    /// Mean of the per-language means.
    LanguageMean,
}

impl FromStr for OverallMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair_mean" => Ok(OverallMode::PairMean),
            "language_mean" => Ok(OverallMode::LanguageMean),
            other => Err(Error::InvalidArgument(format!("unknown overall mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub overall: OverallMode,
    /// Count pairs whose target language is also a source language in the overall.
    pub include_source: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub per_pair: BTreeMap<String, f64>,
    /// Keyed by target language.
    pub per_language: BTreeMap<String, LanguageStats>,
    /// `None` when every pair was excluded (for example an identity-only corpus).
    pub overall: Option<f64>,
    pub source_languages: BTreeSet<String>,
    pub options: AggregateOptions,
}

impl ConsistencyReport {
    pub fn total_pairs(&self) -> usize {
        self.per_pair.len()
    }

    fn counts_toward_overall(&self, language: &str) -> bool {
        self.options.include_source || !self.source_languages.contains(language)
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Folds per-pair scores into per-language means and an overall value.
/// Input order does not matter: everything is accumulated in sorted order.
pub fn aggregate(scores: &[ScoredPair], options: AggregateOptions) -> Result<ConsistencyReport> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scored pairs to aggregate".into()));
    }
    let mut sorted: Vec<&ScoredPair> = scores.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    let mut per_pair = BTreeMap::new();
    let mut by_language: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut source_languages = BTreeSet::new();
    for s in sorted {
        if per_pair.insert(s.pair_id.clone(), s.consistency).is_some() {
            return Err(Error::InvalidArgument(format!(
                "pair '{}' scored more than once",
                s.pair_id
            )));
        }
        by_language
            .entry(s.target_language.clone())
            .or_default()
            .push(s.consistency);
        source_languages.insert(s.source_language.clone());
    }
    let per_language: BTreeMap<String, LanguageStats> = by_language
        .iter()
        .map(|(lang, xs)| {
            let stats = LanguageStats {
                mean: mean(xs.iter().copied()).expect("non-empty"),
                count: xs.len(),
            };
            (lang.clone(), stats)
        })
        .collect();

    let mut report = ConsistencyReport {
        per_pair,
        per_language,
        overall: None,
        source_languages,
        options,
    };
    report.overall = match options.overall {
        OverallMode::PairMean => mean(
            by_language
                .iter()
                .filter(|(l, _)| report.counts_toward_overall(l))
                .flat_map(|(_, xs)| xs.iter().copied()),
        ),
        OverallMode::LanguageMean => mean(
            report
                .per_language
                .iter()
                .filter(|(l, _)| report.counts_toward_overall(l))
                .map(|(_, s)| s.mean),
        ),
    };
    Ok(report)
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Undefined("correlation needs at least 2 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in series".into()));
    }
    let constant = |s: &[f64]| s.iter().all(|&v| v == s[0]);
    if constant(x) || constant(y) {
        return Err(Error::Undefined("zero variance".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Task metric per language, each in [0, 1].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerformanceTable {
    metrics: BTreeMap<String, f64>,
}

impl PerformanceTable {
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut metrics = BTreeMap::new();
        for (lang, m) in entries {
            let lang = lang.into();
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::InvalidArgument(format!(
                    "metric for '{lang}' is {m}, expected a value in [0, 1]"
                )));
            }
            if metrics.insert(lang.clone(), m).is_some() {
                return Err(Error::InvalidArgument(format!("language '{lang}' listed twice")));
            }
        }
        Ok(PerformanceTable { metrics })
    }

    pub fn get(&self, language: &str) -> Option<f64> {
        self.metrics.get(language).copied()
    }

    pub fn len(&self) -> usize {
        self.metrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }

    /// Reads a CSV file with a `language,metric` header.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::schema(1, e.to_string()))?
            .clone();
        if headers.len() < 2 || &headers[0] != "language" || &headers[1] != "metric" {
            return Err(Error::schema(1, "expected header 'language,metric'"));
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::schema(line, e.to_string()))?;
            let value: f64 = rec[1]
                .parse()
                .map_err(|_| Error::schema(line, format!("non-numeric metric '{}'", &rec[1])))?;
            entries.push((rec[0].to_owned(), value));
        }
        Self::new(entries).map_err(|e| Error::schema(0, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(BufReader::new(file))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPoint {
    pub language: String,
    pub consistency: f64,
    pub performance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub coefficient: f64,
    pub points: Vec<CorrelationPoint>,
}

/// Pearson correlation of per-language consistency against performance,
/// over target languages present in both and not used as a source language.
pub fn correlate(report: &ConsistencyReport, perf: &PerformanceTable) -> Result<Correlation> {
    let points: Vec<CorrelationPoint> = report
        .per_language
        .iter()
        .filter(|(lang, _)| !report.source_languages.contains(*lang))
        .filter_map(|(lang, stats)| {
            perf.get(lang).map(|p| CorrelationPoint {
                language: lang.clone(),
                consistency: stats.mean,
                performance: p,
            })
        })
        .collect();
    if points.len() < 2 {
        return Err(Error::Undefined(format!(
            "only {} language(s) shared between report and performance table",
            points.len()
        )));
    }
    let x: Vec<f64> = points.iter().map(|p| p.consistency).collect();
    let y: Vec<f64> = points.iter().map(|p| p.performance).collect();
    Ok(Correlation {
        coefficient: pearson(&x, &y)?,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidArgument(format!("unknown report format '{other}'"))),
        }
    }
}

fn fixed3(x: f64) -> String {
    format!("{x:.3}")
}

fn rounded3(x: f64) -> Value {
    let r = (x * 1000.0).round() / 1000.0;
    // avoid "-0.0"
    json!(if r == 0.0 { 0.0 } else { r })
}

/// Renders the report. Output is a pure function of the inputs.
pub fn render_report(
    report: &ConsistencyReport,
    perf: Option<&PerformanceTable>,
    format: ReportFormat,
) -> String {
    let perf_of = |lang: &str| perf.and_then(|p| p.get(lang));
    let counted: usize = report
        .per_language
        .iter()
        .filter(|(l, _)| report.counts_toward_overall(l))
        .map(|(_, s)| s.count)
        .sum();
    match format {
        ReportFormat::Markdown => {
            let mut out = String::new();
            if perf.is_some() {
                out.push_str("| language | C | n | performance |\n|---|---|---|---|\n");
            } else {
                out.push_str("| language | C | n |\n|---|---|---|\n");
            }
            for (lang, s) in &report.per_language {
                let _ = write!(out, "| {lang} | {} | {} |", fixed3(s.mean), s.count);
                if perf.is_some() {
                    let p = perf_of(lang).map(fixed3).unwrap_or_else(|| "n/a".into());
                    let _ = write!(out, " {p} |");
                }
                out.push('\n');
            }
            let overall = report.overall.map(fixed3).unwrap_or_else(|| "n/a".into());
            let _ = write!(out, "| Overall | {overall} | {counted} |");
            if perf.is_some() {
                out.push_str(" |");
            }
            out.push('\n');
            out
        }
        ReportFormat::Csv => {
            let mut out = String::from(if perf.is_some() {
                "language,C,n,performance\n"
            } else {
                "language,C,n\n"
            });
            for (lang, s) in &report.per_language {
                let _ = write!(out, "{lang},{},{}", fixed3(s.mean), s.count);
                if perf.is_some() {
                    out.push(',');
                    if let Some(p) = perf_of(lang) {
                        out.push_str(&fixed3(p));
                    }
                }
                out.push('\n');
            }
            let _ = write!(
                out,
                "overall,{},{counted}",
                report.overall.map(fixed3).unwrap_or_default()
            );
            if perf.is_some() {
                out.push(',');
            }
            out.push('\n');
            out
        }
        ReportFormat::Json => {
            let languages: Vec<Value> = report
                .per_language
                .iter()
                .map(|(lang, s)| {
                    let mut v = json!({
                        "language": lang,
                        "consistency": rounded3(s.mean),
                        "count": s.count,
                    });
                    if perf.is_some() {
                        v["performance"] = perf_of(lang).map(rounded3).unwrap_or(Value::Null);
                    }
                    v
                })
                .collect();
            let doc = json!({
                "languages": languages,
                "overall": report.overall.map(rounded3).unwrap_or(Value::Null),
                "overall_count": counted,
                "overall_mode": report.options.overall,
                "include_source": report.options.include_source,
                "source_languages": report.source_languages,
                "pairs": report.total_pairs(),
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("json value serializes");
            s.push('\n');
            s
        }
    }
}

/// Two-column `language,consistency` series at full precision.
pub fn plot_data(report: &ConsistencyReport) -> String {
    let mut out = String::from("language,consistency\n");
    for (lang, s) in &report.per_language {
        let _ = writeln!(out, "{lang},{}", s.mean);
    }
    out
}

/// `language,consistency,performance` series behind a correlation.
pub fn correlation_plot_data(c: &Correlation) -> String {
    let mut out = String::from("language,consistency,performance\n");
    for p in &c.points {
        let _ = writeln!(out, "{},{},{}", p.language, p.consistency, p.performance);
    }
    out
}
