//! Integrated gradients at the embedding layer, aggregated to one score per
//! token and normalized into a distribution over content tokens.
//!
//! The path runs from a baseline (separators kept, every other token replaced
//! by padding) to the sentence's embeddings. Per-token attribution is the sum
//! of that token's row of the elementwise attribution matrix.
//!
//! # Interchange format
//!
//! Attribution files are JSONL, one record per pair side:
//!
//! ```text
//! {"pair_id":"p0","side":"source","language":"en","head":"classification",
//!  "target_class":1,"tokens":["[SEP]","hi","[SEP]"],
//!  "kinds":["separator","content","separator"],"raw":[0.0,0.42,0.0],
//!  "normalized":[0.0,1.0,0.0],"quadrature":{"steps":50,"rule":"trapezoid"},
//!  "convergence_delta":1.2e-17}
//! ```
//!
//! (shown wrapped; each record is a single line). `head` is one of
//! `classification`, `span_start`, `span_end` and defaults to
//! `classification`. `target_class` may be null for span heads.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelPair, Sentence, TokenKind};
use crate::error::{Error, Result};
use crate::model::DifferentiableScorer;

/// Tolerance on the sum of a normalized distribution.
pub const NORMALIZATION_TOL: f64 = 1e-9;

pub const DEFAULT_STEPS: usize = 50;

/// Path start point x' for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub embeddings: Array2<f64>,
}

/// Keeps separator rows and replaces every other row with the padding embedding.
pub fn make_baseline<M>(sentence: &Sentence, model: &M) -> Baseline
where
    M: DifferentiableScorer + ?Sized,
{
    let mut embeddings = model.embed(sentence);
    let pad = model.padding_embedding();
    for (mut row, token) in embeddings.rows_mut().into_iter().zip(sentence.tokens()) {
        if token.kind != TokenKind::Separator {
            row.assign(&pad);
        }
    }
    Baseline { embeddings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    LeftRiemann,
    #[default]
    Trapezoid,
}

impl QuadratureRule {
    /// `(alpha, weight)` nodes on [0, 1] for `steps` intervals.
    fn nodes(self, steps: usize) -> Vec<(f64, f64)> {
        let m = steps as f64;
        match self {
            QuadratureRule::LeftRiemann => (0..steps).map(|k| (k as f64 / m, 1.0 / m)).collect(),
            QuadratureRule::Trapezoid => (0..=steps)
                .map(|k| {
                    let w = if k == 0 || k == steps { 0.5 / m } else { 1.0 / m };
                    (k as f64 / m, w)
                })
                .collect(),
        }
    }
}

impl fmt::Display for QuadratureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuadratureRule::LeftRiemann => f.write_str("left_riemann"),
            QuadratureRule::Trapezoid => f.write_str("trapezoid"),
        }
    }
}

/// Elementwise attributions `(x - x') * integral of grad F along x' -> x`.
pub fn integrated_gradients<M>(
    x: &Array2<f64>,
    x_prime: &Array2<f64>,
    model: &M,
    class: usize,
    steps: usize,
    rule: QuadratureRule,
) -> Result<Array2<f64>>
where
    M: DifferentiableScorer + ?Sized,
{
    if x.dim() != x_prime.dim() {
        return Err(Error::Shape(format!(
            "input is {:?} but baseline is {:?}",
            x.dim(),
            x_prime.dim()
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("quadrature steps must be >= 1".into()));
    }
    let diff = x - x_prime;
    let mut integral = Array2::<f64>::zeros(x.raw_dim());
    for (alpha, weight) in rule.nodes(steps) {
        let point = x_prime + &(&diff * alpha);
        let grad = model.gradient(&point, class)?;
        integral.scaled_add(weight, &grad);
    }
    Ok(diff * integral)
}

/// Row sums: one raw score per token.
pub fn aggregate_attributions(lig: &Array2<f64>) -> Vec<f64> {
    lig.rows().into_iter().map(|r| r.sum()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Absolute value, then L1 normalization over content tokens.
    #[default]
    AbsL1,
}

/// Maps signed per-token scores to a distribution over content tokens.
///
/// Non-content slots always get 0. If every content score is 0 the result is
/// uniform over content tokens.
pub fn normalize_attributions(
    raw: &[f64],
    kinds: &[TokenKind],
    mode: NormalizationMode,
) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("no attribution scores".into()));
    }
    if raw.len() != kinds.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} tokens",
            raw.len(),
            kinds.len()
        )));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite attribution score".into()));
    }
    let content = kinds.iter().filter(|k| k.is_content()).count();
    if content == 0 {
        return Err(Error::InvalidArgument("no content tokens to normalize over".into()));
    }
    let NormalizationMode::AbsL1 = mode;
    let mass: Vec<f64> = raw
        .iter()
        .zip(kinds)
        .map(|(&r, k)| if k.is_content() { r.abs() } else { 0.0 })
        .collect();
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        Ok(mass.into_iter().map(|m| m / total).collect())
    } else {
        let u = 1.0 / content as f64;
        Ok(kinds.iter().map(|k| if k.is_content() { u } else { 0.0 }).collect())
    }
}

/// `|sum(lig) - (F(x) - F(x'))|`.
pub fn completeness_check<M>(
    lig: &Array2<f64>,
    model: &M,
    class: usize,
    x: &Array2<f64>,
    x_prime: &Array2<f64>,
) -> Result<f64>
where
    M: DifferentiableScorer + ?Sized,
{
    let delta = model.forward(x, class)? - model.forward(x_prime, class)?;
    Ok((lig.sum() - delta).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

/// Which model output was attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    #[default]
    Classification,
    SpanStart,
    SpanEnd,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::Classification => f.write_str("classification"),
            Head::SpanStart => f.write_str("span_start"),
            Head::SpanEnd => f.write_str("span_end"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrature {
    pub steps: usize,
    pub rule: QuadratureRule,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature {
            steps: DEFAULT_STEPS,
            rule: QuadratureRule::Trapezoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub pair_id: String,
    pub side: Side,
    pub language: String,
    #[serde(default)]
    pub head: Head,
    #[serde(default)]
    pub target_class: Option<usize>,
    pub tokens: Vec<String>,
    pub kinds: Vec<TokenKind>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub quadrature: Quadrature,
    pub convergence_delta: f64,
}

impl AttributionVector {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no tokens".into()));
        }
        if self.kinds.len() != n || self.raw.len() != n || self.normalized.len() != n {
            return Err(Error::Shape(format!(
                "tokens/kinds/raw/normalized lengths differ: {}/{}/{}/{}",
                n,
                self.kinds.len(),
                self.raw.len(),
                self.normalized.len()
            )));
        }
        if self.pair_id.is_empty() {
            return Err(Error::InvalidArgument("empty pair_id".into()));
        }
        crate::corpus::validate_language(&self.language)?;
        if self.quadrature.steps == 0 {
            return Err(Error::InvalidArgument("quadrature steps must be >= 1".into()));
        }
        if !self.convergence_delta.is_finite() || self.convergence_delta < 0.0 {
            return Err(Error::InvalidArgument("convergence_delta must be finite and >= 0".into()));
        }
        if self.raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite raw score".into()));
        }
        if let Some(i) = self.normalized.iter().position(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "normalized[{i}] = {} is not a non-negative weight",
                self.normalized[i]
            )));
        }
        let total: f64 = self.normalized.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "normalized weights sum to {total}, expected 1"
            )));
        }
        if let Some(i) = (0..n).find(|&i| self.kinds[i] == TokenKind::Padding && self.normalized[i] != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "padding slot {i} carries normalized weight"
            )));
        }
        for (i, (t, k)) in self.tokens.iter().zip(&self.kinds).enumerate() {
            if t.is_empty() && *k != TokenKind::Padding {
                return Err(Error::InvalidArgument(format!("token {i} has an empty surface")));
            }
        }
        if !self.kinds.iter().any(|k| k.is_content()) {
            return Err(Error::InvalidArgument("no content tokens".into()));
        }
        Ok(())
    }

    /// Rebuilds the tokenized sentence this record describes.
    pub fn sentence(&self) -> Result<Sentence> {
        Sentence::new(
            &self.language,
            self.tokens.iter().cloned().zip(self.kinds.iter().copied()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttributionSettings {
    pub quadrature: Quadrature,
    pub normalization: NormalizationMode,
}

/// Runs the full per-sentence attribution: baseline, path integral, row sums,
/// normalization and the completeness residual.
pub fn attribute_sentence<M>(
    pair_id: &str,
    side: Side,
    sentence: &Sentence,
    model: &M,
    class: usize,
    settings: &AttributionSettings,
) -> Result<AttributionVector>
where
    M: DifferentiableScorer + ?Sized,
{
    let x = model.embed(sentence);
    let baseline = make_baseline(sentence, model);
    let q = settings.quadrature;
    let lig = integrated_gradients(&x, &baseline.embeddings, model, class, q.steps, q.rule)?;
    let convergence_delta = completeness_check(&lig, model, class, &x, &baseline.embeddings)?;
    let raw = aggregate_attributions(&lig);
    let kinds = sentence.kinds();
    let normalized = normalize_attributions(&raw, &kinds, settings.normalization)?;
    Ok(AttributionVector {
        pair_id: pair_id.to_owned(),
        side,
        language: sentence.language().to_owned(),
        head: Head::Classification,
        target_class: Some(class),
        tokens: sentence.surfaces().into_iter().map(str::to_owned).collect(),
        kinds,
        raw,
        normalized,
        quadrature: q,
        convergence_delta,
    })
}

/// Attributes both sides of a pair to the class predicted on the source side.
pub fn attribute_pair<M>(
    pair: &ParallelPair,
    model: &M,
    settings: &AttributionSettings,
) -> Result<[AttributionVector; 2]>
where
    M: DifferentiableScorer + ?Sized,
{
    let class = model.predict(&model.embed(&pair.source))?;
    let source = attribute_sentence(&pair.id, Side::Source, &pair.source, model, class, settings)?;
    let target = attribute_sentence(&pair.id, Side::Target, &pair.target, model, class, settings)?;
    Ok([source, target])
}

pub fn write_attributions<'a, W, I>(mut writer: W, records: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a AttributionVector>,
{
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads and validates an attribution file. Errors carry the 1-based line.
pub fn read_attributions<R: BufRead>(reader: R) -> Result<Vec<AttributionVector>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::schema(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AttributionVector =
            serde_json::from_str(&line).map_err(|e| Error::schema(line_no, e.to_string()))?;
        rec.validate()
            .map_err(|e| Error::schema(line_no, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Source and target records for one scored unit.
#[derive(Debug, Clone)]
pub struct AttributionPair {
    pub pair_id: String,
    pub head: Head,
    pub source: AttributionVector,
    pub target: AttributionVector,
}

/// Groups records by `(pair_id, head)`, requiring exactly one record per side.
/// Output is sorted by pair id, then head.
pub fn pair_up(records: Vec<AttributionVector>) -> Result<Vec<AttributionPair>> {
    type Slot = (Option<AttributionVector>, Option<AttributionVector>);
    let mut groups: BTreeMap<(String, Head), Slot> = BTreeMap::new();
    for rec in records {
        let slot = groups.entry((rec.pair_id.clone(), rec.head)).or_default();
        let place = match rec.side {
            Side::Source => &mut slot.0,
            Side::Target => &mut slot.1,
        };
        if place.is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate {:?} record for pair '{}' ({})",
                rec.side, rec.pair_id, rec.head
            )));
        }
        *place = Some(rec);
    }
    groups
        .into_iter()
        .map(|((pair_id, head), slot)| match slot {
            (Some(source), Some(target)) => Ok(AttributionPair {
                pair_id,
                head,
                source,
                target,
            }),
            (None, _) => Err(Error::InvalidArgument(format!(
                "pair '{pair_id}' ({head}) has no source record"
            ))),
            (_, None) => Err(Error::InvalidArgument(format!(
                "pair '{pair_id}' ({head}) has no target record"
            ))),
        })
        .collect()
}

impl std::str::FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Head::Classification),
            "span_start" => Ok(Head::SpanStart),
            "span_end" => Ok(Head::SpanEnd),
            other => Err(Error::InvalidArgument(format!("unknown head '{other}'"))),
        }
    }
}

impl std::str::FromStr for QuadratureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left_riemann" => Ok(QuadratureRule::LeftRiemann),
            "trapezoid" => Ok(QuadratureRule::Trapezoid),
            other => Err(Error::InvalidArgument(format!("unknown quadrature rule '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, TokenizerPolicy};
    use crate::model::{Pooling, ToyModel};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(pooling: Pooling) -> ToyModel {
        ToyModel::seeded(["a", "b", "c", "d"], 3, 2, 5, pooling).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, l: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((l, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn baseline_keeps_separators() {
        let m = model(Pooling::Linear);
        let s = tokenize("a", "en", TokenizerPolicy::Whitespace).unwrap();
        let x = m.embed(&s);
        let b = make_baseline(&s, &m);
        assert_eq!(b.embeddings.row(0), x.row(0));
        assert!(b.embeddings.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(b.embeddings.row(2), x.row(2));
    }

    #[test]
    fn baseline_rowwise_on_mixed_fixture() {
        let m = model(Pooling::Linear);
        let s = Sentence::new(
            "en",
            [
                ("[SEP]", TokenKind::Separator),
                ("a", TokenKind::Content),
                ("[PAD]", TokenKind::Padding),
                ("zzz", TokenKind::Content),
            ],
        )
        .unwrap();
        let x = m.embed(&s);
        let b = make_baseline(&s, &m).embeddings;
        for (i, tok) in s.tokens().iter().enumerate() {
            let expected = if tok.kind == TokenKind::Separator {
                x.row(i).to_owned()
            } else {
                m.padding_embedding()
            };
            assert_eq!(b.row(i), expected.view(), "row {i}");
        }
    }

    #[test]
    fn linear_ig_is_closed_form_at_one_step() {
        let m = model(Pooling::Linear);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 4, 3);
        let xp = random_matrix(&mut rng, 4, 3);
        let grad = m.gradient(&x, 1).unwrap();
        let closed = (&x - &xp) * &grad;
        for rule in [QuadratureRule::LeftRiemann, QuadratureRule::Trapezoid] {
            let ig = integrated_gradients(&x, &xp, &m, 1, 1, rule).unwrap();
            let err = (&ig - &closed).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err <= 1e-12, "{rule}: {err}");
        }
    }

    #[test]
    fn zero_path_gives_zero() {
        let m = model(Pooling::Tanh);
        let x = array![[0.1, 0.2, 0.3], [0.4, -0.5, 0.6]];
        let ig = integrated_gradients(&x, &x, &m, 0, 10, QuadratureRule::Trapezoid).unwrap();
        assert!(ig.iter().all(|&v| v == 0.0));
        assert_eq!(completeness_check(&ig, &m, 0, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn shape_and_step_errors() {
        let m = model(Pooling::Linear);
        let x = Array2::zeros((2, 3));
        let xp = Array2::zeros((3, 3));
        assert!(matches!(
            integrated_gradients(&x, &xp, &m, 0, 5, QuadratureRule::Trapezoid),
            Err(Error::Shape(_))
        ));
        assert!(integrated_gradients(&x, &x, &m, 0, 0, QuadratureRule::Trapezoid).is_err());
    }

    #[test]
    fn tanh_trapezoid_matches_fine_riemann() {
        let m = model(Pooling::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 4, 3);
        let xp = random_matrix(&mut rng, 4, 3);
        let trap = integrated_gradients(&x, &xp, &m, 0, 512, QuadratureRule::Trapezoid).unwrap();
        let reference =
            integrated_gradients(&x, &xp, &m, 0, 100_001, QuadratureRule::LeftRiemann).unwrap();
        let err = (&trap - &reference).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn tanh_residual_shrinks_with_steps() {
        let m = model(Pooling::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 5, 3);
        let xp = random_matrix(&mut rng, 5, 3);
        let residual = |steps| {
            let ig = integrated_gradients(&x, &xp, &m, 1, steps, QuadratureRule::Trapezoid).unwrap();
            completeness_check(&ig, &m, 1, &x, &xp).unwrap()
        };
        assert!(residual(512) < residual(64));
    }

    #[test]
    fn aggregate_sums_rows() {
        assert_eq!(aggregate_attributions(&array![[1.0, -2.0, 0.5]]), vec![-0.5]);
        assert_eq!(aggregate_attributions(&Array2::zeros((3, 2))), vec![0.0; 3]);
    }

    #[test]
    fn aggregate_matches_scalar_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lig = random_matrix(&mut rng, 3, 4);
        let got = aggregate_attributions(&lig);
        for i in 0..3 {
            let mut s = 0.0;
            for k in 0..4 {
                s += lig[[i, k]];
            }
            assert!((got[i] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_abs_l1() {
        let kinds = [TokenKind::Content; 3];
        let w = normalize_attributions(&[1.0, -1.0, 2.0], &kinds, NormalizationMode::AbsL1).unwrap();
        assert_eq!(w, vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn normalize_all_zero_falls_back_to_uniform_content() {
        use TokenKind::*;
        let w = normalize_attributions(
            &[0.0; 4],
            &[Separator, Content, Content, Separator],
            NormalizationMode::AbsL1,
        )
        .unwrap();
        assert_eq!(w, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn normalize_zeroes_non_content() {
        use TokenKind::*;
        let w = normalize_attributions(
            &[5.0, 1.0, 3.0, -7.0],
            &[Separator, Content, Content, Padding],
            NormalizationMode::AbsL1,
        )
        .unwrap();
        assert_eq!(w, vec![0.0, 0.25, 0.75, 0.0]);
    }

    #[test]
    fn normalize_errors() {
        assert!(normalize_attributions(&[], &[], NormalizationMode::AbsL1).is_err());
        assert!(normalize_attributions(&[1.0], &[TokenKind::Separator], NormalizationMode::AbsL1).is_err());
        assert!(normalize_attributions(&[f64::NAN], &[TokenKind::Content], NormalizationMode::AbsL1).is_err());
    }

    #[test]
    fn linear_completeness_exact() {
        let m = model(Pooling::Linear);
        let s = tokenize("a b zz c", "en", TokenizerPolicy::Whitespace).unwrap();
        for steps in [1, 3, 50] {
            let v = attribute_sentence(
                "p",
                Side::Source,
                &s,
                &m,
                0,
                &AttributionSettings {
                    quadrature: Quadrature { steps, rule: QuadratureRule::Trapezoid },
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(v.convergence_delta <= 1e-10);
            v.validate().unwrap();
            assert_eq!(v.raw[0], 0.0);
            assert_eq!(v.raw[5], 0.0);
        }
    }

    #[test]
    fn attribute_pair_uses_source_prediction() {
        let m = model(Pooling::Tanh);
        let src = tokenize("a b", "en", TokenizerPolicy::Whitespace).unwrap();
        let tgt = tokenize("c d a", "es", TokenizerPolicy::Whitespace).unwrap();
        let pair = ParallelPair::new("x", src.clone(), tgt, None, false).unwrap();
        let [s, t] = attribute_pair(&pair, &m, &AttributionSettings::default()).unwrap();
        let class = m.predict(&m.embed(&src)).unwrap();
        assert_eq!(s.target_class, Some(class));
        assert_eq!(t.target_class, Some(class));
        assert_eq!(t.side, Side::Target);
        assert_eq!(t.language, "es");
    }

    #[test]
    fn records_roundtrip_and_pair_up() {
        let m = model(Pooling::Linear);
        let src = tokenize("a b", "en", TokenizerPolicy::Whitespace).unwrap();
        let tgt = tokenize("c", "de", TokenizerPolicy::Whitespace).unwrap();
        let pair = ParallelPair::new("p1", src, tgt, None, false).unwrap();
        let recs = attribute_pair(&pair, &m, &AttributionSettings::default()).unwrap();
        let mut buf = Vec::new();
        write_attributions(&mut buf, recs.iter().rev()).unwrap();
        let back = read_attributions(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        let paired = pair_up(back).unwrap();
        assert_eq!(paired.len(), 1);
        assert_eq!(paired[0].source, recs[0]);
        assert_eq!(paired[0].target, recs[1]);
    }

    #[test]
    fn pair_up_rejects_missing_side() {
        let m = model(Pooling::Linear);
        let src = tokenize("a", "en", TokenizerPolicy::Whitespace).unwrap();
        let v = attribute_sentence("p", Side::Source, &src, &m, 0, &AttributionSettings::default()).unwrap();
        assert!(pair_up(vec![v.clone()]).is_err());
        assert!(pair_up(vec![v.clone(), v]).is_err());
    }

    #[test]
    fn read_rejects_unnormalized() {
        let line = r#"{"pair_id":"p","side":"source","language":"en","tokens":["a","b"],"kinds":["content","content"],"raw":[1.0,1.0],"normalized":[0.5,0.6],"quadrature":{"steps":1,"rule":"trapezoid"},"convergence_delta":0.0}"#;
        match read_attributions(line.as_bytes()).unwrap_err() {
            Error::Schema { line, .. } => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        let ok = line.replace("0.6", "0.5");
        let recs = read_attributions(ok.as_bytes()).unwrap();
        assert_eq!(recs[0].head, Head::Classification);
        assert_eq!(recs[0].target_class, None);
    }
}
