//! Reference-based response metrics: corpus BLEU, ROUGE-L, and the three
//! word-embedding scores.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("bad word-vector file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair {
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

impl EvalPair {
    pub fn from_text(hypothesis: &str, reference: &str) -> Self {
        EvalPair {
            hypothesis: hypothesis.split_whitespace().map(str::to_string).collect(),
            reference: reference.split_whitespace().map(str::to_string).collect(),
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Corpus-level cumulative BLEU over orders `1..=n_max` with uniform weights,
/// clipped counts and the standard brevity penalty, unsmoothed, times 100.
pub fn bleu(pairs: &[EvalPair], n_max: usize) -> Result<f64, MetricsError> {
    if !(1..=4).contains(&n_max) {
        return Err(MetricsError::Config(format!(
            "BLEU order {n_max} outside 1..=4"
        )));
    }
    if pairs.is_empty() {
        return Err(MetricsError::Config("no pairs to score".into()));
    }
    let mut matched = vec![0usize; n_max];
    let mut total = vec![0usize; n_max];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for p in pairs {
        hyp_len += p.hypothesis.len();
        ref_len += p.reference.len();
        for n in 1..=n_max {
            let refs = ngram_counts(&p.reference, n);
            for (gram, count) in ngram_counts(&p.hypothesis, n) {
                matched[n - 1] += count.min(refs.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    if hyp_len == 0 || matched.iter().zip(&total).any(|(&m, &t)| m == 0 || t == 0) {
        return Ok(0.0);
    }
    let log_precision: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / n_max as f64;
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * log_precision.exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        prev = cur;
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// Mean per-pair LCS F-measure `(1 + β²)PR / (R + β²P)` with β = 1.2, times 100.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Config("no pairs to score".into()));
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let lcs = lcs_len(&p.hypothesis, &p.reference);
            if lcs == 0 {
                return 0.0;
            }
            let precision = lcs as f64 / p.hypothesis.len() as f64;
            let recall = lcs as f64 / p.reference.len() as f64;
            (1.0 + b2) * precision * recall / (recall + b2 * precision)
        })
        .sum();
    Ok(100.0 * total / pairs.len() as f64)
}

/// Token vectors; tokens missing from the table count as zero vectors and are
/// skipped by every embedding score.
#[derive(Clone, Debug, Default)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        WordVectorTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        token: impl Into<String>,
        vector: Vec<f64>,
    ) -> Result<(), MetricsError> {
        if vector.len() != self.dim {
            return Err(MetricsError::Format(format!(
                "vector of width {} in a table of width {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Text format: one `token v1 ... vd` entry per line.
    pub fn from_text(text: &str) -> Result<Self, MetricsError> {
        let mut table: Option<WordVectorTable> = None;
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let vector = parts
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| MetricsError::Format(format!("line {}: {e}", lineno + 1)))?;
            let t = table.get_or_insert_with(|| WordVectorTable::new(vector.len()));
            t.insert(token, vector)
                .map_err(|e| MetricsError::Format(format!("line {}: {e}", lineno + 1)))?;
        }
        table.ok_or_else(|| MetricsError::Format("no vectors".into()))
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    fn lookup<'a>(&'a self, tokens: &[String]) -> Vec<&'a [f64]> {
        tokens.iter().filter_map(|t| self.get(t)).collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn sum_vectors(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for v in vs {
        for (o, x) in out.iter_mut().zip(*v) {
            *o += x;
        }
    }
    out
}

/// Per dimension, the value of largest magnitude (the maximum on ties).
fn extrema_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let max = vs.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
            let min = vs.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
            if max >= min.abs() {
                max
            } else {
                min
            }
        })
        .collect()
}

/// Mean over tokens of `from` of the best raw dot product with any token of
/// `to`, floored at zero.
fn greedy_direction(from: &[&[f64]], to: &[&[f64]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|x| {
            to.iter()
                .map(|y| x.iter().zip(*y).map(|(a, b)| a * b).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .sum();
    total / from.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingScores {
    pub average: f64,
    pub greedy: f64,
    pub extrema: f64,
}

/// Corpus means of the embedding average, greedy matching, and vector
/// extrema scores.
///
/// Greedy matching uses raw (unnormalized) dot products averaged over both
/// directions, so it exceeds 1 when vectors are longer than unit length.
/// A pair where either side has no known token scores 0 on every measure.
pub fn embedding_scores(
    pairs: &[EvalPair],
    table: Option<&WordVectorTable>,
) -> Result<EmbeddingScores, MetricsError> {
    let table = table.ok_or_else(|| MetricsError::Config("no word-vector table".into()))?;
    if pairs.is_empty() {
        return Err(MetricsError::Config("no pairs to score".into()));
    }
    let dim = table.dim();
    let (mut avg, mut greedy, mut ext) = (0.0, 0.0, 0.0);
    for p in pairs {
        let h = table.lookup(&p.hypothesis);
        let r = table.lookup(&p.reference);
        if h.is_empty() || r.is_empty() {
            continue;
        }
        avg += cosine(&sum_vectors(&h, dim), &sum_vectors(&r, dim));
        greedy += 0.5 * (greedy_direction(&h, &r) + greedy_direction(&r, &h));
        ext += cosine(&extrema_vector(&h, dim), &extrema_vector(&r, dim));
    }
    let n = pairs.len() as f64;
    Ok(EmbeddingScores {
        average: avg / n,
        greedy: greedy / n,
        extrema: ext / n,
    })
}

/// Ordered `metric<TAB>value` lines with four decimals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, f64)>,
}

impl Report {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, value) in &self.entries {
            let _ = writeln!(out, "{name}\t{value:.4}");
        }
        out
    }
}

/// BLEU-1..4 and ROUGE-L, plus embedding scores when a table is given.
pub fn evaluate(
    pairs: &[EvalPair],
    table: Option<&WordVectorTable>,
) -> Result<Report, MetricsError> {
    let mut report = Report::default();
    for n in 1..=4 {
        report.push(format!("bleu{n}"), bleu(pairs, n)?);
    }
    report.push("rouge_l", rouge_l(pairs)?);
    if table.is_some() {
        let e = embedding_scores(pairs, table)?;
        report.push("embedding_average", e.average);
        report.push("embedding_greedy", e.greedy);
        report.push("embedding_extrema", e.extrema);
    }
    Ok(report)
}
