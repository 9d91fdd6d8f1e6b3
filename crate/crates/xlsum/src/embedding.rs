//! Word-embedding tables, the `.vec` text format, and vector similarity.
//!
//! The `.vec` format is the plain-text word-vector layout: a header line
//! `<count> <dim>` followed by `count` rows `<token> <f1> ... <fdim>`,
//! UTF-8, single ASCII spaces, `.` as the decimal point. Vectors are held
//! as `f64` internally no matter the file precision.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::metrics::tokenize;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line 1: malformed header, expected \"<count> <dim>\": {0:?}")]
    MalformedHeader(String),
    #[error("line {line}: token {token:?} has {found} components, expected {expected}")]
    WrongComponentCount {
        line: usize,
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: component {field:?} is not a finite number")]
    InvalidComponent { line: usize, field: String },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("line {line}: empty token")]
    EmptyToken { line: usize },
    #[error("expected {expected} rows, file ends after {found}")]
    MissingRows { expected: usize, found: usize },
    #[error("line {line}: unexpected data after declared row count")]
    ExtraRows { line: usize },
    #[error("token {0:?} contains whitespace and cannot be stored")]
    InvalidToken(String),
    #[error("vector for {token:?} has dimension {found}, table dimension is {expected}")]
    DimensionMismatch {
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("vector for {0:?} has a non-finite component")]
    NonFiniteVector(String),
    #[error("cosine of vectors with different dimensions ({0} vs {1})")]
    CosineDimensionMismatch(usize, usize),
    #[error("cosine of a zero vector")]
    ZeroVector,
}

/// Fixed-dimension token vectors, insertion order preserved.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Append a token vector. Rejects duplicates, empty or whitespace-bearing
    /// tokens, wrong dimensions, and non-finite components.
    pub fn push(&mut self, token: &str, vector: &[f64]) -> Result<(), EmbeddingError> {
        if token.is_empty() {
            return Err(EmbeddingError::EmptyToken { line: 0 });
        }
        if token.chars().any(char::is_whitespace) {
            return Err(EmbeddingError::InvalidToken(token.to_string()));
        }
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                token: token.to_string(),
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFiniteVector(token.to_string()));
        }
        if self.index.contains_key(token) {
            return Err(EmbeddingError::DuplicateToken {
                line: 0,
                token: token.to_string(),
            });
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), self.row(i)))
    }

    /// Table with every vector scaled to unit L2 norm. Zero vectors are kept
    /// as-is so token sets stay aligned.
    pub fn unit_normalized(&self) -> EmbeddingTable {
        let mut out = self.clone();
        for i in 0..out.tokens.len() {
            let start = i * out.dim;
            let row = &mut out.data[start..start + out.dim];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in row.iter_mut() {
                    *x /= norm;
                }
            }
        }
        out
    }

    /// Parse the `.vec` text format from a reader.
    pub fn read_vec<R: Read>(reader: R) -> Result<Self, EmbeddingError> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| EmbeddingError::MalformedHeader(String::new()))??;
        let header = header.trim_end_matches('\r');
        let mut parts = header.split(' ');
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| EmbeddingError::MalformedHeader(header.to_string()))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| EmbeddingError::MalformedHeader(header.to_string()))?;
        if parts.next().is_some() || dim == 0 {
            return Err(EmbeddingError::MalformedHeader(header.to_string()));
        }

        let mut table = EmbeddingTable::new(dim);
        let mut vector = vec![0.0f64; dim];
        let mut line_no = 1usize;
        for line in lines {
            let line = line?;
            let line = line.trim_end_matches('\r');
            line_no += 1;
            if table.len() == count {
                if line.is_empty() {
                    continue;
                }
                return Err(EmbeddingError::ExtraRows { line: line_no });
            }
            let mut fields = line.split(' ');
            let token = fields.next().unwrap_or("");
            if token.is_empty() {
                return Err(EmbeddingError::EmptyToken { line: line_no });
            }
            let mut got = 0usize;
            for field in fields {
                if got < dim {
                    let value: f64 = field
                        .parse()
                        .map_err(|_| EmbeddingError::InvalidComponent {
                            line: line_no,
                            field: field.to_string(),
                        })?;
                    if !value.is_finite() {
                        return Err(EmbeddingError::InvalidComponent {
                            line: line_no,
                            field: field.to_string(),
                        });
                    }
                    vector[got] = value;
                }
                got += 1;
            }
            if got != dim {
                return Err(EmbeddingError::WrongComponentCount {
                    line: line_no,
                    token: token.to_string(),
                    expected: dim,
                    found: got,
                });
            }
            if table.index.contains_key(token) {
                return Err(EmbeddingError::DuplicateToken {
                    line: line_no,
                    token: token.to_string(),
                });
            }
            table.push(token, &vector)?;
        }
        if table.len() != count {
            return Err(EmbeddingError::MissingRows {
                expected: count,
                found: table.len(),
            });
        }
        Ok(table)
    }

    pub fn load_vec<P: AsRef<Path>>(path: P) -> Result<Self, EmbeddingError> {
        Self::read_vec(File::open(path)?)
    }

    /// Write the `.vec` text format. `f64` values are printed with Rust's
    /// shortest round-trip formatting, so a reload reproduces them exactly.
    pub fn write_vec<W: Write>(&self, writer: W) -> Result<(), EmbeddingError> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{} {}", self.len(), self.dim)?;
        let mut line = String::new();
        for (token, vector) in self.iter() {
            line.clear();
            line.push_str(token);
            for x in vector {
                let _ = write!(line, " {x}");
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_vec<P: AsRef<Path>>(&self, path: P) -> Result<(), EmbeddingError> {
        self.write_vec(File::create(path)?)
    }
}

/// Tokens with frequency counts, descending by count, ties lexicographic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<(String, u64)>,
}

impl Vocabulary {
    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(t, _)| t.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Top-`k` most frequent tokens of `texts` under [`tokenize`]. Returns fewer
/// than `k` entries when the corpus has fewer distinct tokens; an empty
/// corpus yields an empty vocabulary.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], k: usize) -> Vocabulary {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in texts {
        for token in tokenize(text.as_ref()) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(k);
    Vocabulary { entries }
}

/// Keep only tokens present in both the table and the vocabulary, in
/// vocabulary order.
pub fn restrict(table: &EmbeddingTable, vocab: &Vocabulary) -> EmbeddingTable {
    let mut out = EmbeddingTable::new(table.dim());
    for token in vocab.tokens() {
        if let Some(v) = table.vector(token) {
            out.push(token, v).expect("tokens from a valid table");
        }
    }
    out
}

/// Cosine similarity, clamped to `[-1, 1]` against rounding overshoot.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::CosineDimensionMismatch(u.len(), v.len()));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shuffle::SplitMix64;
    use std::io::Cursor;

    fn table_from(text: &str) -> Result<EmbeddingTable, EmbeddingError> {
        EmbeddingTable::read_vec(Cursor::new(text.as_bytes()))
    }

    #[test]
    fn load_minimal_file() {
        let t = table_from("2 3\na 1 0 0\nb 0 1 0\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.vector("a").unwrap(), &[1.0, 0.0, 0.0]);
        assert_eq!(t.tokens(), ["a", "b"]);
    }

    #[test]
    fn component_count_mismatch_rejected() {
        let err = table_from("1 3\na 1 0\n").unwrap_err();
        assert!(matches!(
            err,
            EmbeddingError::WrongComponentCount {
                expected: 3,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn duplicate_token_rejected() {
        let err = table_from("2 2\na 1 0\na 0 1\n").unwrap_err();
        assert!(matches!(err, EmbeddingError::DuplicateToken { line: 3, .. }));
    }

    #[test]
    fn malformed_header_rejected() {
        assert!(matches!(
            table_from("x 3\n").unwrap_err(),
            EmbeddingError::MalformedHeader(_)
        ));
        assert!(matches!(
            table_from("2\n").unwrap_err(),
            EmbeddingError::MalformedHeader(_)
        ));
    }

    #[test]
    fn non_numeric_component_rejected() {
        let err = table_from("1 2\na 1 oops\n").unwrap_err();
        assert!(matches!(err, EmbeddingError::InvalidComponent { .. }));
    }

    #[test]
    fn missing_and_extra_rows_rejected() {
        assert!(matches!(
            table_from("2 2\na 1 0\n").unwrap_err(),
            EmbeddingError::MissingRows {
                expected: 2,
                found: 1
            }
        ));
        assert!(matches!(
            table_from("1 2\na 1 0\nb 0 1\n").unwrap_err(),
            EmbeddingError::ExtraRows { line: 3 }
        ));
    }

    #[test]
    fn vec_round_trip_preserves_order_and_values() {
        let src = "3 2\nfirst 0.25 -1.5\nsecond 0.1 3.14159\nthird -0 7e-3\n";
        let t = table_from(src).unwrap();
        let mut buf = Vec::new();
        t.write_vec(&mut buf).unwrap();
        let t2 = EmbeddingTable::read_vec(Cursor::new(&buf)).unwrap();
        assert_eq!(t.tokens(), t2.tokens());
        for (a, b) in t.iter().zip(t2.iter()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn cosine_identity_orthogonal_and_diagonal() {
        let v = [3.0, -2.0, 0.5];
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - 0.70710678).abs() < 1e-8);
        assert!((c - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]).unwrap_err(),
            EmbeddingError::CosineDimensionMismatch(1, 2)
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(),
            EmbeddingError::ZeroVector
        ));
    }

    #[test]
    fn cosine_scale_invariant_for_positive_scalars() {
        let mut rng = SplitMix64::new(17);
        for _ in 0..100 {
            let u: Vec<f64> = (0..5).map(|_| rng.next_f64() - 0.5).collect();
            let v: Vec<f64> = (0..5).map(|_| rng.next_f64() - 0.5).collect();
            let alpha = rng.next_f64() * 10.0 + 0.01;
            let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            let a = cosine(&u, &v).unwrap();
            let b = cosine(&scaled, &v).unwrap();
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn build_vocab_counts_and_ties() {
        let v = build_vocab(&["a a b"], 1);
        assert_eq!(v.entries(), [("a".to_string(), 2)]);

        let v = build_vocab(&["a b", "b c"], 2);
        assert_eq!(
            v.entries(),
            [("b".to_string(), 2), ("a".to_string(), 1)]
        );

        assert!(build_vocab(&[] as &[&str], 5).is_empty());
    }

    #[test]
    fn build_vocab_caps_at_distinct_tokens() {
        let v = build_vocab(&["x y z"], 30000);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn build_vocab_matches_naive_recount() {
        let mut rng = SplitMix64::new(3);
        let alphabet = ["a", "b", "c", "d", "e"];
        for _ in 0..100 {
            let n_texts = 1 + (rng.next_u64() % 4) as usize;
            let texts: Vec<String> = (0..n_texts)
                .map(|_| {
                    let len = (rng.next_u64() % 12) as usize;
                    (0..len)
                        .map(|_| alphabet[(rng.next_u64() % 5) as usize])
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let vocab = build_vocab(&texts, 5);

            let mut naive: HashMap<&str, u64> = HashMap::new();
            for t in &texts {
                for tok in t.split_whitespace() {
                    *naive.entry(tok).or_insert(0) += 1;
                }
            }
            for (token, count) in vocab.entries() {
                assert_eq!(naive[token.as_str()], *count);
            }
        }
    }

    #[test]
    fn restrict_keeps_vocab_order() {
        let t = table_from("3 2\na 1 0\nb 0 1\nc 1 1\n").unwrap();
        let vocab = build_vocab(&["b"], 10);
        let r = restrict(&t, &vocab);
        assert_eq!(r.tokens(), ["b"]);

        let disjoint = build_vocab(&["z"], 10);
        assert!(restrict(&t, &disjoint).is_empty());

        // vocab order b then a wins over table order a then b
        let vocab = build_vocab(&["b b a"], 10);
        let r = restrict(&t, &vocab);
        assert_eq!(r.tokens(), ["b", "a"]);
    }
}
