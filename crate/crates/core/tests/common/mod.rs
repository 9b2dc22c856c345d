//! Test-only oracles and fixtures. Nothing here calls into the solver or the
//! attribution code paths it is used to check.
#![allow(dead_code)]

use std::collections::BTreeMap;

use attrcons::alignment::{EmbeddingSpace, EmbeddingTable};
use attrcons::attribution::{AttributionVector, Head, Quadrature, QuadratureRule, Side};
use attrcons::corpus::TokenKind;
use attrcons::model::{DifferentiableScorer, Pooling, ToyModel};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Transportation LP: brute-force vertex enumeration.
//
// In equality form (one slack per row and column) a basis corresponds to a
// spanning tree of the bipartite graph plus a ground node, i.e. to a rooted
// spanning forest of K_{l,l}: every tree component has exactly one node whose
// slack is basic (the root) and every other node is tight. Enumerating all
// acyclic edge subsets and every root choice therefore visits every basic
// solution; the best feasible one is the LP optimum.
// ---------------------------------------------------------------------------

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Best objective over all basic feasible solutions, plus the number of
/// feasible vertices visited.
pub fn vertex_enumeration_optimum(supply: &[f64], demand: &[f64], sim: &Array2<f64>) -> (f64, usize) {
    let l = supply.len();
    assert!(l <= 4, "enumeration is exponential; keep l <= 4");
    let nodes = 2 * l;
    let cap: Vec<f64> = supply.iter().chain(demand).copied().collect();
    let edges: Vec<(usize, usize)> = (0..l).flat_map(|i| (0..l).map(move |j| (i, j))).collect();
    let tol = 1e-12;
    let mut best = f64::NEG_INFINITY;
    let mut feasible = 0;

    for mask in 0u32..(1u32 << edges.len()) {
        let chosen: Vec<usize> = (0..edges.len()).filter(|e| mask >> e & 1 == 1).collect();
        let mut dsu = Dsu::new(nodes);
        if !chosen.iter().all(|&e| dsu.union(edges[e].0, l + edges[e].1)) {
            continue;
        }
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
        for &e in &chosen {
            let (i, j) = edges[e];
            adj[i].push((l + j, e));
            adj[l + j].push((i, e));
        }
        let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..nodes {
            comps.entry(dsu.find(v)).or_default().push(v);
        }
        let comps: Vec<Vec<usize>> = comps.into_values().collect();

        let mut choice = vec![0usize; comps.len()];
        loop {
            let roots: Vec<usize> = comps.iter().zip(&choice).map(|(c, &k)| c[k]).collect();
            if let Some(value) = solve_rooted_forest(&adj, &roots, &cap, &edges, sim, nodes, tol) {
                feasible += 1;
                best = best.max(value);
            }
            // mixed-radix increment over root choices
            let mut k = 0;
            while k < comps.len() {
                choice[k] += 1;
                if choice[k] < comps[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == comps.len() {
                break;
            }
        }
    }
    (best, feasible)
}

fn solve_rooted_forest(
    adj: &[Vec<(usize, usize)>],
    roots: &[usize],
    cap: &[f64],
    edges: &[(usize, usize)],
    sim: &Array2<f64>,
    nodes: usize,
    tol: f64,
) -> Option<f64> {
    let mut flow = vec![0.0; edges.len()];
    let mut objective = 0.0;
    for &root in roots {
        // BFS order from the root, remembering each node's parent edge.
        let mut order = vec![root];
        let mut parent_edge = vec![usize::MAX; nodes];
        let mut seen = vec![false; nodes];
        seen[root] = true;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &(w, e) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent_edge[w] = e;
                    order.push(w);
                }
            }
        }
        // Leaves first: a tight node's parent edge carries its remaining capacity.
        let mut load = vec![0.0; nodes];
        for &v in order.iter().skip(1).rev() {
            let e = parent_edge[v];
            let f = cap[v] - load[v];
            if f < -tol {
                return None;
            }
            flow[e] = f;
            let (i, j) = edges[e];
            let l = nodes / 2;
            let other = if v == i { l + j } else { i };
            load[other] += f;
        }
        if load[root] > cap[root] + tol {
            return None;
        }
        for &v in order.iter().skip(1) {
            let e = parent_edge[v];
            objective += flow[e] * sim[edges[e]];
        }
    }
    Some(objective)
}

/// Non-negative weights with small integer numerators, normalized.
pub fn rational_distribution(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    loop {
        let counts: Vec<u32> = (0..len).map(|_| rng.gen_range(0..=6)).collect();
        let total: u32 = counts.iter().sum();
        if total > 0 {
            return counts.iter().map(|&c| c as f64 / total as f64).collect();
        }
    }
}

/// Similarities on the grid k/8 in [-1, 1].
pub fn rational_sim(rng: &mut ChaCha8Rng, l: usize) -> Array2<f64> {
    Array2::from_shape_fn((l, l), |_| rng.gen_range(-8i32..=8) as f64 / 8.0)
}

// ---------------------------------------------------------------------------
// Model fixtures and a finite-difference gradient.
// ---------------------------------------------------------------------------

pub struct ModelFixture {
    pub model: ToyModel,
    pub x: Array2<f64>,
    pub x_prime: Array2<f64>,
    pub class: usize,
}

/// Random model with random input and baseline matrices of matching shape.
pub fn model_fixture(seed: u64, pooling: Pooling) -> ModelFixture {
    let mut r = rng(seed);
    let dim = r.gen_range(1..=8);
    let classes = r.gen_range(2..=4);
    let len = r.gen_range(1..=10);
    let model = ToyModel::seeded(["w0", "w1", "w2"], dim, classes, seed, pooling).unwrap();
    let x = Array2::from_shape_fn((len, dim), |_| r.gen_range(-1.0..1.0));
    let x_prime = Array2::from_shape_fn((len, dim), |_| r.gen_range(-1.0..1.0));
    let class = r.gen_range(0..classes);
    ModelFixture {
        model,
        x,
        x_prime,
        class,
    }
}

pub fn central_difference<M: DifferentiableScorer>(
    model: &M,
    x: &Array2<f64>,
    class: usize,
    step: f64,
) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    for idx in ndarray::indices(x.raw_dim()) {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[idx] += step;
        minus[idx] -= step;
        let f_plus = model.forward(&plus, class).unwrap();
        let f_minus = model.forward(&minus, class).unwrap();
        grad[idx] = (f_plus - f_minus) / (2.0 * step);
    }
    grad
}

/// Closed-form Pearson in one pass over raw sums.
pub fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

// ---------------------------------------------------------------------------
// Synthetic attribution corpora for scoring tests.
// ---------------------------------------------------------------------------

pub const LANGS: [&str; 4] = ["es", "de", "fr", "zh"];

/// A shared-space vocabulary: `words` tokens per language, each a random
/// vector of width `dim`.
pub fn synthetic_space(seed: u64, words: usize, dim: usize) -> EmbeddingSpace {
    let mut r = rng(seed);
    let mut space = EmbeddingSpace::new();
    for lang in std::iter::once("en").chain(LANGS) {
        let entries = (0..words).map(|k| {
            let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            (format!("{lang}{k}"), v)
        });
        space
            .insert(EmbeddingTable::from_entries(lang, dim, false, entries).unwrap())
            .unwrap();
    }
    space
}

pub fn record(pair_id: &str, side: Side, language: &str, words: &[String], weights: &[f64]) -> AttributionVector {
    let mut tokens = vec!["[SEP]".to_owned()];
    tokens.extend(words.iter().cloned());
    tokens.push("[SEP]".to_owned());
    let mut kinds = vec![TokenKind::Separator];
    kinds.extend(std::iter::repeat_n(TokenKind::Content, words.len()));
    kinds.push(TokenKind::Separator);
    let total: f64 = weights.iter().sum();
    let mut normalized = vec![0.0];
    normalized.extend(weights.iter().map(|w| w / total));
    normalized.push(0.0);
    let mut raw = vec![0.0];
    raw.extend(weights.iter().copied());
    raw.push(0.0);
    AttributionVector {
        pair_id: pair_id.to_owned(),
        side,
        language: language.to_owned(),
        head: Head::Classification,
        target_class: Some(0),
        tokens,
        kinds,
        raw,
        normalized,
        quadrature: Quadrature {
            steps: 50,
            rule: QuadratureRule::Trapezoid,
        },
        convergence_delta: 0.0,
    }
}

/// `pairs` English-source pairs with random lengths in `1..=max_len` content
/// tokens, drawn from the vocabulary of [`synthetic_space`].
pub fn synthetic_records(seed: u64, pairs: usize, max_len: usize, vocab: usize) -> Vec<AttributionVector> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(2 * pairs);
    for p in 0..pairs {
        let id = format!("p{p:06}");
        let tgt_lang = *LANGS.choose(&mut r).unwrap();
        for (side, lang) in [(Side::Source, "en"), (Side::Target, tgt_lang)] {
            let n = r.gen_range(1..=max_len);
            let words: Vec<String> = (0..n).map(|_| format!("{lang}{}", r.gen_range(0..vocab))).collect();
            let weights: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..1.0)).collect();
            out.push(record(&id, side, lang, &words, &weights));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// On-disk workspaces for end-to-end runs.
// ---------------------------------------------------------------------------

pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub corpus: std::path::PathBuf,
    pub model: std::path::PathBuf,
    pub embeddings: BTreeMap<String, std::path::PathBuf>,
    pub performance: std::path::PathBuf,
}

pub const WS_VOCAB: usize = 12;
pub const WS_DIM: usize = 6;

/// Writes a random corpus of `pairs` English-source pairs, word vectors for
/// every language, a seeded toy model over the corpus vocabulary and a
/// performance table. With `identity`, every target repeats its source.
pub fn workspace(seed: u64, pairs: usize, identity: bool) -> Workspace {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(seed);
    let mut corpus = String::new();
    let mut vocab = Vec::new();
    for p in 0..pairs {
        let n = r.gen_range(1..=6);
        let src: Vec<String> = (0..n).map(|_| format!("en{}", r.gen_range(0..WS_VOCAB))).collect();
        let (lang, tgt) = if identity {
            ("en", src.clone())
        } else {
            let lang = *LANGS.choose(&mut r).unwrap();
            let m = r.gen_range(1..=6);
            // an occasional out-of-vocabulary word
            let tgt: Vec<String> = (0..m)
                .map(|_| format!("{lang}{}", r.gen_range(0..WS_VOCAB + 2)))
                .collect();
            (lang, tgt)
        };
        vocab.extend(src.iter().cloned());
        vocab.extend(tgt.iter().cloned());
        let rec = serde_json::json!({
            "id": format!("p{p:04}"),
            "source": {"lang": "en", "text": src.join(" ")},
            "target": {"lang": lang, "text": tgt.join(" ")},
            "identity": identity,
        });
        corpus.push_str(&rec.to_string());
        corpus.push('\n');
    }
    let corpus_path = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus_path, corpus).unwrap();

    let space = synthetic_space(seed ^ 0x5eed, WS_VOCAB, WS_DIM);
    let mut embeddings = BTreeMap::new();
    for lang in space.languages().map(str::to_owned).collect::<Vec<_>>() {
        let path = dir.path().join(format!("{lang}.vec"));
        let mut f = std::fs::File::create(&path).unwrap();
        space.get(&lang).unwrap().write(&mut f).unwrap();
        f.flush().unwrap();
        embeddings.insert(lang, path);
    }

    let model = ToyModel::seeded(vocab, 8, 3, seed, Pooling::Tanh).unwrap();
    let model_path = dir.path().join("model.json");
    model.save(&model_path).unwrap();

    let performance = dir.path().join("performance.csv");
    std::fs::write(&performance, "language,metric\nes,0.81\nde,0.77\nfr,0.79\nzh,0.62\n").unwrap();

    Workspace {
        dir,
        corpus: corpus_path,
        model: model_path,
        embeddings,
        performance,
    }
}

impl Workspace {
    /// Fused config: corpus plus model, scored in one run.
    pub fn config(&self, out: &str) -> attrcons::RunConfig {
        attrcons::RunConfig {
            corpus: Some(self.corpus.clone()),
            model: Some(self.model.clone()),
            output_dir: self.dir.path().join(out),
            steps: 16,
            workers: 2,
            performance: Some(self.performance.clone()),
            embeddings: self.embeddings.clone(),
            ..Default::default()
        }
    }
}
