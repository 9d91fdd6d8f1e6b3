//! Summarization and language-model dataset construction: first-paragraph
//! splitting, length filtering, deterministic splits, fine-tune portions,
//! and LM text normalization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::sentence_split;
use crate::shuffle::shuffled_indices;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid JSON record: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {field} must be non-empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("need at least 2 sentences to split off a summary, got {0}")]
    TooFewSentences(usize),
    #[error("split sizes (test {test} + val {val}) exceed dataset size {n}")]
    SplitTooLarge { test: usize, val: usize, n: usize },
    #[error("portion percentage {0} outside (0, 100]")]
    InvalidPercentage(f64),
    #[error("portion of an empty dataset")]
    EmptyPortion,
    #[error("statistics of an empty dataset")]
    EmptyDataset,
}

/// One document: id, news body, and reference summary.
///
/// Serialized as JSON Lines objects `{"id": ..., "text": ..., "summary": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPair {
    pub id: String,
    #[serde(rename = "text")]
    pub body: String,
    pub summary: String,
}

impl SummaryPair {
    pub fn total_chars(&self) -> usize {
        self.body.chars().count() + self.summary.chars().count()
    }
}

/// Read a dataset from JSON Lines; ids must be unique, text and summary
/// non-empty.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<SummaryPair>, CorpusError> {
    let mut out: Vec<SummaryPair> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let pair: SummaryPair =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                line: line_no,
                source,
            })?;
        if pair.id.is_empty() {
            return Err(CorpusError::EmptyField {
                line: line_no,
                field: "id",
            });
        }
        if pair.body.is_empty() {
            return Err(CorpusError::EmptyField {
                line: line_no,
                field: "text",
            });
        }
        if pair.summary.is_empty() {
            return Err(CorpusError::EmptyField {
                line: line_no,
                field: "summary",
            });
        }
        if !seen.insert(pair.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: pair.id,
            });
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn load_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<SummaryPair>, CorpusError> {
    read_jsonl(File::open(path)?)
}

pub fn write_jsonl<W: Write>(writer: W, pairs: &[SummaryPair]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(writer);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair).map_err(|source| CorpusError::Json {
            line: 0,
            source,
        })?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_jsonl<P: AsRef<Path>>(path: P, pairs: &[SummaryPair]) -> Result<(), CorpusError> {
    write_jsonl(File::create(path)?, pairs)
}

/// Raw article before summary extraction: either pre-segmented sentences or
/// plain text to be run through the sentence splitter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<String>>,
}

impl RawDocument {
    /// Sentence list, splitting `text` when no segmentation was provided.
    pub fn into_sentences(self) -> Vec<String> {
        match (self.sentences, self.text) {
            (Some(sentences), _) => sentences,
            (None, Some(text)) => sentence_split(&text),
            (None, None) => Vec::new(),
        }
    }
}

/// Read raw articles from JSON Lines (`{"id", "text"}` or
/// `{"id", "sentences"}`).
pub fn read_raw_jsonl<R: Read>(reader: R) -> Result<Vec<RawDocument>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            line: line_no,
            source,
        })?;
        if doc.id.is_empty() {
            return Err(CorpusError::EmptyField {
                line: line_no,
                field: "id",
            });
        }
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: doc.id,
            });
        }
        out.push(doc);
    }
    Ok(out)
}

pub fn load_raw_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<RawDocument>, CorpusError> {
    read_raw_jsonl(File::open(path)?)
}

/// Split leading sentences off as the summary and keep the rest as the body.
///
/// The next sentence is included in the summary iff the sentence count is
/// still below `max_lead_sentences` AND the accumulated character count is
/// still below `budget_chars`; the first sentence is always included and the
/// last sentence is never consumed, so both parts stay non-empty. Characters
/// are counted per sentence (joining spaces excluded); both parts are joined
/// with single spaces.
pub fn split_first_paragraph<S: AsRef<str>>(
    sentences: &[S],
    budget_chars: usize,
    max_lead_sentences: usize,
) -> Result<(String, String), CorpusError> {
    if sentences.len() < 2 {
        return Err(CorpusError::TooFewSentences(sentences.len()));
    }
    let max_lead = max_lead_sentences.max(1);
    let mut taken = 1usize;
    let mut chars = sentences[0].as_ref().chars().count();
    while taken < max_lead && chars < budget_chars && taken < sentences.len() - 1 {
        chars += sentences[taken].as_ref().chars().count();
        taken += 1;
    }
    let join = |part: &[S]| {
        part.iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok((join(&sentences[..taken]), join(&sentences[taken..])))
}

/// Which character count the length filter inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthMeasure {
    /// Characters of body + summary.
    Total,
    /// Characters of the body only.
    Body,
}

/// Keep pairs whose measured length is within `[min_chars, max_chars]`,
/// bounds inclusive, input order preserved.
pub fn length_filter(
    pairs: Vec<SummaryPair>,
    min_chars: usize,
    max_chars: usize,
    measure: LengthMeasure,
) -> Vec<SummaryPair> {
    pairs
        .into_iter()
        .filter(|p| {
            let len = match measure {
                LengthMeasure::Total => p.total_chars(),
                LengthMeasure::Body => p.body.chars().count(),
            };
            (min_chars..=max_chars).contains(&len)
        })
        .collect()
}

/// Deterministic split specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

/// Train/validation/test lists produced by [`make_splits`].
#[derive(Debug, Clone)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then test = first `test_size` items, val = the next
/// `val_size`, train = the rest. Disjoint and covering by construction.
pub fn make_splits<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<Splits<T>, CorpusError> {
    let n = items.len();
    if spec.test_size + spec.val_size > n {
        return Err(CorpusError::SplitTooLarge {
            test: spec.test_size,
            val: spec.val_size,
            n,
        });
    }
    let order = shuffled_indices(n, spec.seed);
    let pick = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| items[i].clone()).collect()
    };
    let test = pick(0..spec.test_size);
    let val = pick(spec.test_size..spec.test_size + spec.val_size);
    let train = pick(spec.test_size + spec.val_size..n);
    Ok(Splits { train, val, test })
}

/// Take `ceil(pct/100 * n)` items as a prefix of the seeded shuffle, so
/// portions at increasing percentages are nested supersets. Ceiling keeps a
/// 1% portion of 117,563 items at 1,176.
pub fn sample_portion<T: Clone>(
    items: &[T],
    pct: f64,
    seed: u64,
) -> Result<Vec<T>, CorpusError> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(CorpusError::InvalidPercentage(pct));
    }
    let n = items.len();
    let k = portion_size(n, pct);
    if k == 0 {
        return Err(CorpusError::EmptyPortion);
    }
    let order = shuffled_indices(n, seed);
    Ok(order[..k].iter().map(|&i| items[i].clone()).collect())
}

fn portion_size(n: usize, pct: f64) -> usize {
    if pct.fract() == 0.0 {
        // exact integer ceiling, immune to float rounding
        let p = pct as usize;
        (p * n).div_ceil(100)
    } else {
        (pct / 100.0 * n as f64).ceil() as usize
    }
}

/// One normalized sentence for LM training: letters lowercased, everything
/// else untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord(String);

impl SentenceRecord {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::ops::Deref for SentenceRecord {
    type Target = str;

    fn deref(&self) -> &str {
        &self.0
    }
}

/// Lowercase alphabetic characters only; punctuation, digits, and special
/// characters pass through unchanged.
pub fn lm_normalize(sentence: &str) -> SentenceRecord {
    SentenceRecord(lm_normalize_str(sentence))
}

pub(crate) fn lm_normalize_str(sentence: &str) -> String {
    let mut out = String::with_capacity(sentence.len());
    for c in sentence.chars() {
        if c.is_alphabetic() {
            out.extend(c.to_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

/// Dataset-level averages over a set of texts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub avg_sentences: f64,
    pub avg_chars: f64,
    /// Total characters over total sentences.
    pub avg_sentence_chars: f64,
}

/// Arithmetic means over the texts; sentence counting uses
/// [`sentence_split`].
pub fn corpus_stats<S: AsRef<str>>(texts: &[S]) -> Result<CorpusStats, CorpusError> {
    if texts.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut total_sentences = 0usize;
    let mut total_chars = 0usize;
    for text in texts {
        let text = text.as_ref();
        total_sentences += sentence_split(text).len();
        total_chars += text.chars().count();
    }
    let n = texts.len() as f64;
    Ok(CorpusStats {
        count: texts.len(),
        avg_sentences: total_sentences as f64 / n,
        avg_chars: total_chars as f64 / n,
        avg_sentence_chars: if total_sentences == 0 {
            0.0
        } else {
            total_chars as f64 / total_sentences as f64
        },
    })
}
