//! Text-overlap scores: ROUGE-N, ROUGE-L, and a greedy-matching embedding
//! score over a pluggable vector table.
//!
//! No stemming or stopword removal; the tokenizer is language-agnostic.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::embedding::{cosine, EmbeddingTable};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no in-vocabulary token on the {0} side")]
    NoInVocabToken(&'static str),
}

/// Lowercase and split on maximal runs of non-alphanumeric characters.
/// Digits are kept as tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Precision / recall / F-score triple.
///
/// `f` is 0 when `p + r = 0`, otherwise `(1 + beta^2) * p * r / (r + beta^2 * p)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64, beta: f64) -> Self {
        let f = if precision + recall == 0.0 {
            0.0
        } else {
            let b2 = beta * beta;
            (1.0 + b2) * precision * recall / (recall + b2 * precision)
        };
        Prf {
            precision,
            recall,
            f,
        }
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap: matches are summed as
/// `min(count_cand, count_ref)` per distinct n-gram. Degenerate inputs
/// produce zero components rather than errors.
pub fn rouge_n<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize, beta: f64) -> Prf {
    let cand: Vec<&str> = cand.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let cand_counts = ngram_counts(&cand, n);
    let ref_counts = ngram_counts(&reference, n);
    let cand_total: usize = cand_counts.values().sum();
    let ref_total: usize = ref_counts.values().sum();

    let matches: usize = cand_counts
        .iter()
        .filter_map(|(gram, c)| ref_counts.get(gram).map(|r| (*c).min(*r)))
        .sum();

    let precision = if cand_total == 0 {
        0.0
    } else {
        matches as f64 / cand_total as f64
    };
    let recall = if ref_total == 0 {
        0.0
    } else {
        matches as f64 / ref_total as f64
    };
    Prf::from_pr(precision, recall, beta)
}

/// Longest common subsequence length, two-row DP over the shorter side.
pub fn lcs_len<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let (short, long): (Vec<&str>, Vec<&str>) = if a.len() <= b.len() {
        (
            a.iter().map(AsRef::as_ref).collect(),
            b.iter().map(AsRef::as_ref).collect(),
        )
    } else {
        (
            b.iter().map(AsRef::as_ref).collect(),
            a.iter().map(AsRef::as_ref).collect(),
        )
    };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut curr = vec![0usize; short.len() + 1];
    for x in &long {
        for (j, y) in short.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}

/// ROUGE-L: `p = LCS/|cand|`, `r = LCS/|ref|`, F per [`Prf::from_pr`].
pub fn rouge_l<S: AsRef<str>>(cand: &[S], reference: &[S], beta: f64) -> Prf {
    let lcs = lcs_len(cand, reference) as f64;
    let precision = if cand.is_empty() {
        0.0
    } else {
        lcs / cand.len() as f64
    };
    let recall = if reference.is_empty() {
        0.0
    } else {
        lcs / reference.len() as f64
    };
    Prf::from_pr(precision, recall, beta)
}

/// Greedy max-cosine token matching plus the fraction of tokens that were
/// in-vocabulary on each side.
#[derive(Debug, Clone, Copy)]
pub struct EmbedScore {
    pub score: Prf,
    pub cand_coverage: f64,
    pub ref_coverage: f64,
}

/// Greedy embedding score: recall is the mean over in-vocab reference tokens
/// of the best cosine against any in-vocab candidate token; precision is the
/// mirror image. Out-of-vocabulary tokens (and zero vectors) are skipped and
/// reported through the coverage fractions. Negative best-matches are floored
/// at zero so all components stay in `[0, 1]`.
pub fn embed_score<S: AsRef<str>>(
    cand: &[S],
    reference: &[S],
    emb: &EmbeddingTable,
    beta: f64,
) -> Result<EmbedScore, MetricError> {
    let lookup = |tokens: &[S]| -> (Vec<Vec<f64>>, f64) {
        let vecs: Vec<Vec<f64>> = tokens
            .iter()
            .filter_map(|t| emb.vector(t.as_ref()))
            .filter(|v| v.iter().any(|x| *x != 0.0))
            .map(<[f64]>::to_vec)
            .collect();
        let coverage = if tokens.is_empty() {
            0.0
        } else {
            vecs.len() as f64 / tokens.len() as f64
        };
        (vecs, coverage)
    };
    let (cand_vecs, cand_coverage) = lookup(cand);
    let (ref_vecs, ref_coverage) = lookup(reference);
    if cand_vecs.is_empty() {
        return Err(MetricError::NoInVocabToken("candidate"));
    }
    if ref_vecs.is_empty() {
        return Err(MetricError::NoInVocabToken("reference"));
    }

    let best_against = |from: &[Vec<f64>], against: &[Vec<f64>]| -> f64 {
        let total: f64 = from
            .iter()
            .map(|u| {
                against
                    .iter()
                    .map(|v| cosine(u, v).expect("nonzero, equal-dim vectors"))
                    .fold(f64::NEG_INFINITY, f64::max)
                    .max(0.0)
            })
            .sum();
        total / from.len() as f64
    };
    let precision = best_against(&cand_vecs, &ref_vecs);
    let recall = best_against(&ref_vecs, &cand_vecs);
    Ok(EmbedScore {
        score: Prf::from_pr(precision, recall, beta),
        cand_coverage,
        ref_coverage,
    })
}

/// Macro vs micro aggregation for corpus-level ROUGE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Mean of per-document precision/recall/F.
    Macro,
    /// Pooled match and n-gram counts over all documents.
    Micro,
}

/// Corpus-level ROUGE-N over `(candidate, reference)` token pairs.
pub fn corpus_rouge_n<S: AsRef<str>>(
    pairs: &[(Vec<S>, Vec<S>)],
    n: usize,
    beta: f64,
    agg: Aggregation,
) -> Prf {
    match agg {
        Aggregation::Macro => macro_average(pairs.iter().map(|(c, r)| rouge_n(c, r, n, beta))),
        Aggregation::Micro => {
            let mut matches = 0usize;
            let mut cand_total = 0usize;
            let mut ref_total = 0usize;
            for (cand, reference) in pairs {
                let cand: Vec<&str> = cand.iter().map(AsRef::as_ref).collect();
                let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
                let cc = ngram_counts(&cand, n);
                let rc = ngram_counts(&reference, n);
                cand_total += cc.values().sum::<usize>();
                ref_total += rc.values().sum::<usize>();
                matches += cc
                    .iter()
                    .filter_map(|(g, c)| rc.get(g).map(|r| (*c).min(*r)))
                    .sum::<usize>();
            }
            let p = if cand_total == 0 {
                0.0
            } else {
                matches as f64 / cand_total as f64
            };
            let r = if ref_total == 0 {
                0.0
            } else {
                matches as f64 / ref_total as f64
            };
            Prf::from_pr(p, r, beta)
        }
    }
}

/// Corpus-level ROUGE-L over `(candidate, reference)` token pairs.
pub fn corpus_rouge_l<S: AsRef<str>>(
    pairs: &[(Vec<S>, Vec<S>)],
    beta: f64,
    agg: Aggregation,
) -> Prf {
    match agg {
        Aggregation::Macro => macro_average(pairs.iter().map(|(c, r)| rouge_l(c, r, beta))),
        Aggregation::Micro => {
            let mut lcs_total = 0usize;
            let mut cand_total = 0usize;
            let mut ref_total = 0usize;
            for (cand, reference) in pairs {
                lcs_total += lcs_len(cand, reference);
                cand_total += cand.len();
                ref_total += reference.len();
            }
            let p = if cand_total == 0 {
                0.0
            } else {
                lcs_total as f64 / cand_total as f64
            };
            let r = if ref_total == 0 {
                0.0
            } else {
                lcs_total as f64 / ref_total as f64
            };
            Prf::from_pr(p, r, beta)
        }
    }
}

fn macro_average(scores: impl Iterator<Item = Prf>) -> Prf {
    let mut p = 0.0;
    let mut r = 0.0;
    let mut f = 0.0;
    let mut n = 0usize;
    for s in scores {
        p += s.precision;
        r += s.recall;
        f += s.f;
        n += 1;
    }
    if n == 0 {
        return Prf::default();
    }
    Prf {
        precision: p / n as f64,
        recall: r / n as f64,
        f: f / n as f64,
    }
}
