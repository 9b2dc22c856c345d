//! Context-free shared embedding space and token-level cosine similarity.
//!
//! Tables use the word2vec text layout: a header line `V d`, then `V` lines of
//! a token followed by `d` floats, all separated by whitespace.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::corpus::{Sentence, TokenKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    language: String,
    lowercase: bool,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
    duplicates: usize,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` entries. Later duplicates are
    /// dropped and counted. With `lowercase`, keys are folded before
    /// deduplication and lookups fold their argument the same way.
    pub fn from_entries<I>(language: &str, dim: usize, lowercase: bool, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be >= 1".into()));
        }
        let mut index = HashMap::new();
        let mut flat = Vec::new();
        let mut duplicates = 0;
        for (token, vector) in entries {
            if vector.len() != dim {
                return Err(Error::Shape(format!(
                    "vector for '{token}' has {} entries, expected {dim}",
                    vector.len()
                )));
            }
            let key = if lowercase { token.to_lowercase() } else { token };
            if index.contains_key(&key) {
                duplicates += 1;
                continue;
            }
            index.insert(key, index.len());
            flat.extend(vector);
        }
        let vectors = Array2::from_shape_vec((index.len(), dim), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(EmbeddingTable {
            language: language.to_owned(),
            lowercase,
            index,
            vectors,
            duplicates,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Number of entries dropped at load time because the token was already present.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn get(&self, token: &str) -> Option<ArrayView1<'_, f64>> {
        let row = if self.lowercase {
            self.index.get(&token.to_lowercase())
        } else {
            self.index.get(token)
        };
        row.map(|&r| self.vectors.row(r))
    }

    /// Tokens in row order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = vec![""; self.index.len()];
        for (t, &r) in &self.index {
            out[r] = t.as_str();
        }
        out
    }

    /// Returns a copy with every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingTable {
            vectors: &self.vectors * factor,
            ..self.clone()
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for (token, row) in self.tokens().into_iter().zip(self.vectors.rows()) {
            write!(w, "{token}")?;
            for x in row {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Parses a word-vector text table. Line numbers in errors are 1-based and
/// count the header.
pub fn read_embeddings<R: BufRead>(
    reader: R,
    language: &str,
    expected_dim: Option<usize>,
    lowercase: bool,
) -> Result<EmbeddingTable> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::schema(1, e.to_string()))?,
        None => return Err(Error::schema(1, "missing 'V d' header")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        [v, d] => match (v.parse::<usize>(), d.parse::<usize>()) {
            (Ok(v), Ok(d)) if d > 0 => (v, d),
            _ => return Err(Error::schema(1, format!("bad header '{header}'"))),
        },
        _ => return Err(Error::schema(1, format!("bad header '{header}'"))),
    };
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(Error::schema(
                1,
                format!("header dimension {dim} does not match expected {expected}"),
            ));
        }
    }

    let mut entries = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::schema(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if entries.len() == count {
            return Err(Error::schema(line_no, format!("more than {count} vectors")));
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-blank line").to_owned();
        let vector = parts
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::schema(line_no, format!("non-numeric entry '{p}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.len() != dim {
            return Err(Error::schema(
                line_no,
                format!("'{token}' has {} values, header says {dim}", vector.len()),
            ));
        }
        entries.push((token, vector));
    }
    if entries.len() != count {
        return Err(Error::schema(
            count + 1,
            format!("header promises {count} vectors, found {}", entries.len()),
        ));
    }
    let table = EmbeddingTable::from_entries(language, dim, lowercase, entries)?;
    if table.duplicates() > 0 {
        log::warn!(
            "{language}: {} duplicate token(s) ignored",
            table.duplicates()
        );
    }
    Ok(table)
}

pub fn load_embeddings(
    path: &Path,
    language: &str,
    expected_dim: Option<usize>,
    lowercase: bool,
) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), language, expected_dim, lowercase)
}

/// Per-language tables sharing one dimensionality.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingSpace {
    tables: BTreeMap<String, EmbeddingTable>,
}

impl EmbeddingSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table: EmbeddingTable) -> Result<()> {
        if let Some(existing) = self.tables.values().next() {
            if existing.dim() != table.dim() {
                return Err(Error::Shape(format!(
                    "table for '{}' has dim {}, but '{}' has dim {}",
                    table.language(),
                    table.dim(),
                    existing.language(),
                    existing.dim()
                )));
            }
        }
        self.tables.insert(table.language().to_owned(), table);
        Ok(())
    }

    pub fn get(&self, language: &str) -> Option<&EmbeddingTable> {
        self.tables.get(language)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    /// Errors listing every requested language that has no table.
    pub fn require<'a, I: IntoIterator<Item = &'a str>>(&self, languages: I) -> Result<()> {
        let mut missing: Vec<String> = languages
            .into_iter()
            .filter(|l| !self.tables.contains_key(*l))
            .map(str::to_owned)
            .collect();
        missing.sort();
        missing.dedup();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingTable { languages: missing })
        }
    }
}

/// Cosine similarity; 0 if either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(cosine_from_parts(dot, nu, nv))
}

fn cosine_from_parts(dot: f64, nu: f64, nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        (dot / (nu * nv)).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    /// Set where either token had no usable vector (OOV, zero norm, or a
    /// separator/padding slot). Masked entries are exactly 0.
    pub oov_mask: Array2<bool>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn masked_fraction(&self) -> f64 {
        let n = self.oov_mask.len();
        if n == 0 {
            return 0.0;
        }
        self.oov_mask.iter().filter(|&&m| m).count() as f64 / n as f64
    }
}

fn resolve<'a>(sentence: &Sentence, table: &'a EmbeddingTable) -> Vec<Option<(ArrayView1<'a, f64>, f64)>> {
    sentence
        .tokens()
        .iter()
        .map(|t| {
            if t.kind != TokenKind::Content {
                return None;
            }
            let v = table.get(&t.surface)?;
            let norm = v.dot(&v).sqrt();
            (norm > 0.0).then_some((v, norm))
        })
        .collect()
}

/// Pairwise cosine between source and target tokens in the shared space.
pub fn similarity_matrix(
    source: &Sentence,
    target: &Sentence,
    space: &EmbeddingSpace,
) -> Result<SimilarityMatrix> {
    space.require([source.language(), target.language()])?;
    let st = space.get(source.language()).expect("checked");
    let tt = space.get(target.language()).expect("checked");
    if st.dim() != tt.dim() {
        return Err(Error::Shape(format!(
            "tables for '{}' and '{}' differ in dim",
            st.language(),
            tt.language()
        )));
    }
    let src = resolve(source, st);
    let tgt = resolve(target, tt);
    let shape = (src.len(), tgt.len());
    let mut values = Array2::zeros(shape);
    let mut oov_mask = Array2::from_elem(shape, true);
    for (i, s) in src.iter().enumerate() {
        let Some((sv, sn)) = s else { continue };
        for (j, t) in tgt.iter().enumerate() {
            let Some((tv, tn)) = t else { continue };
            values[[i, j]] = cosine_from_parts(sv.dot(tv), *sn, *tn);
            oov_mask[[i, j]] = false;
        }
    }
    Ok(SimilarityMatrix { values, oov_mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, TokenizerPolicy};

    fn table(lang: &str, rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let dim = rows[0].1.len();
        EmbeddingTable::from_entries(
            lang,
            dim,
            false,
            rows.iter().map(|(t, v)| (t.to_string(), v.to_vec())),
        )
        .unwrap()
    }

    #[test]
    fn reads_valid_table() {
        let t = read_embeddings("2 3\na 1 2 3\nb 0 0 1\n".as_bytes(), "en", None, false).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.get("b").unwrap().to_vec(), vec![0.0, 0.0, 1.0]);
        assert!(t.get("c").is_none());
    }

    #[test]
    fn short_vector_errors_at_line_two() {
        match read_embeddings("1 3\na 1 2\n".as_bytes(), "en", None, false).unwrap_err() {
            Error::Schema { line, .. } => assert_eq!(line, 2),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn non_numeric_and_dim_mismatch() {
        match read_embeddings("2 2\na 1 2\nb 1 x\n".as_bytes(), "en", None, false).unwrap_err() {
            Error::Schema { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("'x'"));
            }
            e => panic!("{e:?}"),
        }
        assert!(read_embeddings("1 2\na 1 2\n".as_bytes(), "en", Some(3), false).is_err());
        assert!(read_embeddings("2 2\na 1 2\n".as_bytes(), "en", None, false).is_err());
        assert!(read_embeddings("1 2\na 1 2\nb 3 4\n".as_bytes(), "en", None, false).is_err());
        assert!(read_embeddings("".as_bytes(), "en", None, false).is_err());
    }

    #[test]
    fn duplicates_keep_first() {
        let t = read_embeddings("3 1\na 1\nb 2\na 3\n".as_bytes(), "en", None, false).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.duplicates(), 1);
        assert_eq!(t.get("a").unwrap()[0], 1.0);
    }

    #[test]
    fn lowercase_policy_folds_keys_and_lookups() {
        let t = read_embeddings("2 1\nHola 1\nhola 2\n".as_bytes(), "es", None, true).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("HOLA").unwrap()[0], 1.0);
        let strict = read_embeddings("2 1\nHola 1\nhola 2\n".as_bytes(), "es", None, false).unwrap();
        assert_eq!(strict.len(), 2);
        assert!(strict.get("HOLA").is_none());
    }

    #[test]
    fn write_then_read() {
        let t = table("en", &[("x", &[0.5, -1.25]), ("y", &[1e-3, 7.0])]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = read_embeddings(buf.as_slice(), "en", Some(2), false).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        for c in [0.001, 2.0, 1e6] {
            assert!((cosine(&[1.0, 1.0], &[2.0 * c, 2.0 * c]).unwrap() - 1.0).abs() < 1e-15);
        }
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn hand_built_two_by_two() {
        // en: a=(1,0), b=(1,1); es: c=(0,2), d=(3,4)
        let mut space = EmbeddingSpace::new();
        space.insert(table("en", &[("a", &[1.0, 0.0]), ("b", &[1.0, 1.0])])).unwrap();
        space.insert(table("es", &[("c", &[0.0, 2.0]), ("d", &[3.0, 4.0])])).unwrap();
        let s = tokenize("a b", "en", TokenizerPolicy::Whitespace).unwrap();
        let t = tokenize("c d", "es", TokenizerPolicy::Whitespace).unwrap();
        let m = similarity_matrix(&s, &t, &space).unwrap();
        assert_eq!(m.values.dim(), (4, 4));
        let r2 = 2f64.sqrt();
        let expected = [
            [0.0, 3.0 / 5.0],
            [1.0 / r2, 7.0 / (5.0 * r2)],
        ];
        for (i, row) in expected.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                assert!((m.values[[i + 1, j + 1]] - want).abs() < 1e-12);
                assert!(!m.oov_mask[[i + 1, j + 1]]);
            }
        }
        // separator rows and columns are masked zeros
        for k in 0..4 {
            for (i, j) in [(0, k), (3, k), (k, 0), (k, 3)] {
                assert_eq!(m.values[[i, j]], 0.0);
                assert!(m.oov_mask[[i, j]]);
            }
        }
    }

    #[test]
    fn oov_entries_masked() {
        let mut space = EmbeddingSpace::new();
        space.insert(table("en", &[("a", &[1.0, 0.0])])).unwrap();
        space.insert(table("de", &[("b", &[1.0, 0.0])])).unwrap();
        let s = tokenize("a zz", "en", TokenizerPolicy::Whitespace).unwrap();
        let t = tokenize("qq b", "de", TokenizerPolicy::Whitespace).unwrap();
        let m = similarity_matrix(&s, &t, &space).unwrap();
        assert_eq!(m.values[[2, 1]], 0.0);
        assert!(m.oov_mask[[2, 1]]);
        assert_eq!(m.values[[1, 2]], 1.0);
        assert!(!m.oov_mask[[1, 2]]);
    }

    #[test]
    fn identity_diagonal_is_one() {
        let mut space = EmbeddingSpace::new();
        space.insert(table("en", &[("a", &[1.0, 3.0]), ("b", &[-2.0, 0.5])])).unwrap();
        let s = tokenize("a b a", "en", TokenizerPolicy::Whitespace).unwrap();
        let m = similarity_matrix(&s, &s, &space).unwrap();
        for i in 1..4 {
            assert!((m.values[[i, i]] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_and_mismatched_tables() {
        let mut space = EmbeddingSpace::new();
        space.insert(table("en", &[("a", &[1.0, 0.0])])).unwrap();
        assert!(space.insert(table("fr", &[("a", &[1.0])])).is_err());
        let s = tokenize("a", "en", TokenizerPolicy::Whitespace).unwrap();
        let t = tokenize("a", "fr", TokenizerPolicy::Whitespace).unwrap();
        match similarity_matrix(&s, &t, &space).unwrap_err() {
            Error::MissingTable { languages } => assert_eq!(languages, vec!["fr"]),
            e => panic!("{e:?}"),
        }
    }
}
