//! A small differentiable text scorer: embedding lookup, mean pooling, an
//! optional `tanh`, then an affine map to class scores.
//!
//! With `Pooling::Linear` the score is linear in the embeddings, so the
//! integrated-gradients path integral has a closed form. `Pooling::Tanh` makes
//! the scorer genuinely curved for quadrature tests.
//!
//! # Checkpoint layout
//!
//! A checkpoint is one JSON object:
//!
//! | field            | type                 | meaning                                  |
//! |------------------|----------------------|------------------------------------------|
//! | `format`         | string               | always `"attrcons-toy-model/v1"`         |
//! | `seed`           | integer              | seed the weights were drawn from         |
//! | `pooling`        | `"linear"`/`"tanh"`  | nonlinearity after mean pooling          |
//! | `dim`            | integer              | embedding width d                        |
//! | `classes`        | integer              | class count K                            |
//! | `vocab`          | string array (V)     | surface of each embedding row            |
//! | `embedding`      | V arrays of d floats | row 0 is padding and must be all zero    |
//! | `output_weights` | d arrays of K floats |                                          |
//! | `output_bias`    | K floats             |                                          |
//!
//! Rows 0, 1 and 2 are reserved for `[PAD]`, `[UNK]` and `[SEP]`.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, TokenKind, PADDING_SURFACE, SEPARATOR_SURFACE};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "attrcons-toy-model/v1";
pub const UNKNOWN_SURFACE: &str = "[UNK]";

const PAD_ROW: usize = 0;
const UNK_ROW: usize = 1;
const SEP_ROW: usize = 2;

/// A scorer that is differentiable with respect to its embedding-layer input.
pub trait DifferentiableScorer {
    fn dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Embedding-layer input for a sentence, one row per token.
    fn embed(&self, sentence: &Sentence) -> Array2<f64>;

    /// Embedding of the padding token, used to build baselines.
    fn padding_embedding(&self) -> Array1<f64>;

    fn forward(&self, embeddings: &Array2<f64>, class: usize) -> Result<f64>;

    /// Gradient of `forward` with respect to `embeddings`.
    fn gradient(&self, embeddings: &Array2<f64>, class: usize) -> Result<Array2<f64>>;

    fn predict(&self, embeddings: &Array2<f64>) -> Result<usize> {
        let mut best = (0, f64::NEG_INFINITY);
        for class in 0..self.num_classes() {
            let score = self.forward(embeddings, class)?;
            if score > best.1 {
                best = (class, score);
            }
        }
        Ok(best.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Linear,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    vocab: HashMap<String, usize>,
    surfaces: Vec<String>,
    embedding: Array2<f64>,
    output_weights: Array2<f64>,
    output_bias: Array1<f64>,
    pooling: Pooling,
    seed: u64,
}

impl ToyModel {
    /// Draws all weights uniformly from [-1, 1) with a seeded ChaCha8 stream.
    /// `words` is deduplicated and sorted so the row layout is reproducible.
    pub fn seeded<I, S>(words: I, dim: usize, classes: usize, seed: u64, pooling: Pooling) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let reserved = [PADDING_SURFACE, UNKNOWN_SURFACE, SEPARATOR_SURFACE];
        let words: BTreeSet<String> = words
            .into_iter()
            .map(Into::into)
            .filter(|w| !reserved.contains(&w.as_str()))
            .collect();
        let surfaces: Vec<String> = reserved
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
        };
        let mut embedding = draw(surfaces.len(), dim);
        embedding.row_mut(PAD_ROW).fill(0.0);
        let output_weights = draw(dim, classes);
        let output_bias = draw(1, classes).row(0).to_owned();

        Self::from_parts(surfaces, embedding, output_weights, output_bias, pooling, seed)
    }

    pub fn from_parts(
        surfaces: Vec<String>,
        embedding: Array2<f64>,
        output_weights: Array2<f64>,
        output_bias: Array1<f64>,
        pooling: Pooling,
        seed: u64,
    ) -> Result<Self> {
        let (v, d) = embedding.dim();
        let k = output_bias.len();
        if d == 0 {
            return Err(Error::InvalidArgument("embedding dim must be >= 1".into()));
        }
        if k < 2 {
            return Err(Error::InvalidArgument("model needs at least 2 classes".into()));
        }
        if surfaces.len() != v {
            return Err(Error::Shape(format!(
                "{} vocab entries for {v} embedding rows",
                surfaces.len()
            )));
        }
        if output_weights.dim() != (d, k) {
            return Err(Error::Shape(format!(
                "output weights are {:?}, expected ({d}, {k})",
                output_weights.dim()
            )));
        }
        let reserved = [PADDING_SURFACE, UNKNOWN_SURFACE, SEPARATOR_SURFACE];
        if v < reserved.len() || surfaces[..3] != reserved {
            return Err(Error::InvalidArgument(
                "vocab must start with [PAD], [UNK], [SEP]".into(),
            ));
        }
        if embedding.row(PAD_ROW).iter().any(|&x| x != 0.0) {
            return Err(Error::InvalidArgument("padding row must be zero".into()));
        }
        let all_finite = embedding
            .iter()
            .chain(output_weights.iter())
            .chain(output_bias.iter())
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        let mut vocab = HashMap::with_capacity(v);
        for (row, s) in surfaces.iter().enumerate() {
            if vocab.insert(s.clone(), row).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocab entry '{s}'")));
            }
        }
        Ok(ToyModel {
            vocab,
            surfaces,
            embedding,
            output_weights,
            output_bias,
            pooling,
            seed,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embedding_matrix(&self) -> &Array2<f64> {
        &self.embedding
    }

    pub fn output_weights(&self) -> &Array2<f64> {
        &self.output_weights
    }

    pub fn output_bias(&self) -> &Array1<f64> {
        &self.output_bias
    }

    fn row_of(&self, surface: &str, kind: TokenKind) -> usize {
        match kind {
            TokenKind::Padding => PAD_ROW,
            TokenKind::Separator => self.vocab.get(surface).copied().unwrap_or(SEP_ROW),
            TokenKind::Content => self.vocab.get(surface).copied().unwrap_or(UNK_ROW),
        }
    }

    fn check(&self, embeddings: &Array2<f64>, class: usize) -> Result<()> {
        if class >= self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for {} classes",
                self.num_classes()
            )));
        }
        let (l, d) = embeddings.dim();
        if l == 0 || d != self.dim() {
            return Err(Error::Shape(format!(
                "embeddings are {l}x{d}, expected Lx{} with L >= 1",
                self.dim()
            )));
        }
        Ok(())
    }

    fn pooled(&self, embeddings: &Array2<f64>) -> Array1<f64> {
        let mean = embeddings.mean_axis(Axis(0)).expect("non-empty");
        match self.pooling {
            Pooling::Linear => mean,
            Pooling::Tanh => mean.mapv(f64::tanh),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &Checkpoint::from(self))
            .map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n")
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::schema(e.line(), e.to_string()))?;
        ckpt.into_model()
    }
}

impl DifferentiableScorer for ToyModel {
    fn dim(&self) -> usize {
        self.embedding.ncols()
    }

    fn num_classes(&self) -> usize {
        self.output_bias.len()
    }

    fn embed(&self, sentence: &Sentence) -> Array2<f64> {
        let mut out = Array2::zeros((sentence.len(), self.dim()));
        for (mut row, token) in out.rows_mut().into_iter().zip(sentence.tokens()) {
            row.assign(&self.embedding.row(self.row_of(&token.surface, token.kind)));
        }
        out
    }

    fn padding_embedding(&self) -> Array1<f64> {
        self.embedding.row(PAD_ROW).to_owned()
    }

    fn forward(&self, embeddings: &Array2<f64>, class: usize) -> Result<f64> {
        self.check(embeddings, class)?;
        let h = self.pooled(embeddings);
        Ok(h.dot(&self.output_weights.column(class)) + self.output_bias[class])
    }

    fn gradient(&self, embeddings: &Array2<f64>, class: usize) -> Result<Array2<f64>> {
        self.check(embeddings, class)?;
        let l = embeddings.nrows() as f64;
        let w = self.output_weights.column(class);
        let row = match self.pooling {
            Pooling::Linear => w.mapv(|x| x / l),
            Pooling::Tanh => {
                let h = self.pooled(embeddings);
                Array1::from_shape_fn(w.len(), |k| (1.0 - h[k] * h[k]) * w[k] / l)
            }
        };
        Ok(row
            .broadcast(embeddings.raw_dim())
            .expect("row broadcasts over L x d")
            .to_owned())
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    seed: u64,
    pooling: Pooling,
    dim: usize,
    classes: usize,
    vocab: Vec<String>,
    embedding: Vec<Vec<f64>>,
    output_weights: Vec<Vec<f64>>,
    output_bias: Vec<f64>,
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>, cols: usize, what: &str) -> Result<Array2<f64>> {
    let n = rows.len();
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Shape(format!(
            "{what} row {bad} has {} entries, expected {cols}",
            rows[bad].len()
        )));
    }
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| Error::Shape(format!("{what}: {e}")))
}

impl From<&ToyModel> for Checkpoint {
    fn from(m: &ToyModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            seed: m.seed,
            pooling: m.pooling,
            dim: m.dim(),
            classes: m.num_classes(),
            vocab: m.surfaces.clone(),
            embedding: to_rows(&m.embedding),
            output_weights: to_rows(&m.output_weights),
            output_bias: m.output_bias.to_vec(),
        }
    }
}

impl Checkpoint {
    fn into_model(self) -> Result<ToyModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint format '{}'",
                self.format
            )));
        }
        let embedding = from_rows(self.embedding, self.dim, "embedding")?;
        let output_weights = from_rows(self.output_weights, self.classes, "output_weights")?;
        if output_weights.nrows() != self.dim {
            return Err(Error::Shape(format!(
                "output_weights has {} rows, expected {}",
                output_weights.nrows(),
                self.dim
            )));
        }
        ToyModel::from_parts(
            self.vocab,
            embedding,
            output_weights,
            Array1::from(self.output_bias),
            self.pooling,
            self.seed,
        )
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Pooling::Linear),
            "tanh" => Ok(Pooling::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown pooling '{other}'"))),
        }
    }
}
