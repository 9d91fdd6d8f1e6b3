//! Supervised cross-lingual mapping via orthogonal Procrustes, plus
//! translation-retrieval evaluation.
//!
//! Given paired vectors X (target language) and Y (source language), the
//! mapping `W = U Vᵀ` from the SVD `U Σ Vᵀ = XᵀY` minimizes `‖XW − Y‖_F`
//! over orthogonal matrices. Applying `W` moves the whole target space into
//! the source space, where translations are retrieved by cosine.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::{cosine, EmbeddingTable};

const ORTHOGONALITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected \"src_word<TAB>tgt_word\", got {got:?}")]
    MalformedLexiconLine { line: usize, got: String },
    #[error("line {line}: empty word in lexicon pair")]
    EmptyWord { line: usize },
    #[error("embedding dimensions differ: target {tgt}, source {src}")]
    DimensionMismatch { tgt: usize, src: usize },
    #[error("no lexicon pair has both words in vocabulary")]
    NoSurvivingPairs,
    #[error("matrix shapes are incompatible: {0}")]
    ShapeMismatch(String),
    #[error("input matrix contains a non-finite entry")]
    NonFiniteInput,
    #[error("SVD did not produce an orthogonal map (residual {0:e})")]
    SvdFailure(f64),
    #[error("map dimension {map} does not match table dimension {table}")]
    MapDimensionMismatch { map: usize, table: usize },
    #[error("no evaluable pairs: every test pair has an out-of-vocabulary word")]
    NoEvaluablePairs,
}

/// Ordered (source word, target word) pairs. Exact duplicates are dropped on
/// load; a word may still appear in several distinct pairs.
#[derive(Debug, Clone, Default)]
pub struct BilingualLexicon {
    pairs: Vec<(String, String)>,
}

impl BilingualLexicon {
    pub fn from_pairs<I, S, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut out = Vec::new();
        for (s, t) in pairs {
            let pair = (s.into(), t.into());
            if !out.contains(&pair) {
                out.push(pair);
            }
        }
        Self { pairs: out }
    }

    /// Parse the TSV lexicon format: one `src<TAB>tgt` per line, `#` comment
    /// lines and blank lines ignored.
    pub fn read_tsv<R: Read>(reader: R) -> Result<Self, AlignmentError> {
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let src = fields.next().unwrap_or("");
            let tgt = match fields.next() {
                Some(t) => t,
                None => {
                    return Err(AlignmentError::MalformedLexiconLine {
                        line: line_no,
                        got: line.to_string(),
                    })
                }
            };
            if fields.next().is_some() {
                return Err(AlignmentError::MalformedLexiconLine {
                    line: line_no,
                    got: line.to_string(),
                });
            }
            if src.is_empty() || tgt.is_empty() {
                return Err(AlignmentError::EmptyWord { line: line_no });
            }
            let pair = (src.to_string(), tgt.to_string());
            if !pairs.contains(&pair) {
                pairs.push(pair);
            }
        }
        Ok(Self { pairs })
    }

    pub fn load_tsv<P: AsRef<Path>>(path: P) -> Result<Self, AlignmentError> {
        Self::read_tsv(File::open(path)?)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Orthogonal map taking target-language vectors into the source space.
#[derive(Debug, Clone)]
pub struct OrthogonalMap {
    w: DMatrix<f64>,
    train_loss: f64,
}

impl OrthogonalMap {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// Frobenius residual `‖XW − Y‖_F` on the training pairs.
    pub fn train_loss(&self) -> f64 {
        self.train_loss
    }

    /// `max |WᵀW − I|`, the orthogonality residual.
    pub fn orthogonality_residual(&self) -> f64 {
        let d = self.w.nrows();
        let gram = self.w.transpose() * &self.w;
        let eye = DMatrix::<f64>::identity(d, d);
        (gram - eye).abs().max()
    }
}

/// Training matrices for the pairs whose words exist in both tables: row `i`
/// of `x` is the target vector of surviving pair `i`, row `i` of `y` its
/// source vector. `kept` holds the surviving indices into `lex.pairs()`.
#[derive(Debug)]
pub struct PairedMatrices {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub kept: Vec<usize>,
}

pub fn pair_matrices(
    lex: &BilingualLexicon,
    tgt: &EmbeddingTable,
    src: &EmbeddingTable,
) -> Result<PairedMatrices, AlignmentError> {
    if tgt.dim() != src.dim() {
        return Err(AlignmentError::DimensionMismatch {
            tgt: tgt.dim(),
            src: src.dim(),
        });
    }
    let dim = tgt.dim();
    let mut rows_x: Vec<f64> = Vec::new();
    let mut rows_y: Vec<f64> = Vec::new();
    let mut kept = Vec::new();
    for (i, (src_word, tgt_word)) in lex.pairs().iter().enumerate() {
        match (tgt.vector(tgt_word), src.vector(src_word)) {
            (Some(tv), Some(sv)) => {
                rows_x.extend_from_slice(tv);
                rows_y.extend_from_slice(sv);
                kept.push(i);
            }
            _ => continue,
        }
    }
    if kept.is_empty() {
        return Err(AlignmentError::NoSurvivingPairs);
    }
    let n = kept.len();
    Ok(PairedMatrices {
        x: DMatrix::from_row_slice(n, dim, &rows_x),
        y: DMatrix::from_row_slice(n, dim, &rows_y),
        kept,
    })
}

/// Solve `argmin_W ‖XW − Y‖_F` over orthogonal `W` via the SVD of `XᵀY`.
pub fn procrustes(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<OrthogonalMap, AlignmentError> {
    if x.shape() != y.shape() || x.nrows() == 0 {
        return Err(AlignmentError::ShapeMismatch(format!(
            "X is {:?}, Y is {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(AlignmentError::NonFiniteInput);
    }
    let m = x.transpose() * y;
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(AlignmentError::SvdFailure(f64::INFINITY)),
    };
    let w = u * v_t;
    let train_loss = (x * &w - y).norm();
    let map = OrthogonalMap { w, train_loss };
    let residual = map.orthogonality_residual();
    if residual > ORTHOGONALITY_TOLERANCE {
        return Err(AlignmentError::SvdFailure(residual));
    }
    Ok(map)
}

/// Replace every vector `v` with `vW`; token set and order unchanged.
pub fn apply_map(
    map: &OrthogonalMap,
    table: &EmbeddingTable,
) -> Result<EmbeddingTable, AlignmentError> {
    if table.dim() != map.dim() {
        return Err(AlignmentError::MapDimensionMismatch {
            map: map.dim(),
            table: table.dim(),
        });
    }
    let dim = table.dim();
    let mut out = EmbeddingTable::new(dim);
    let mut mapped = vec![0.0f64; dim];
    for (token, v) in table.iter() {
        for (j, slot) in mapped.iter_mut().enumerate() {
            *slot = (0..dim).map(|i| v[i] * map.matrix()[(i, j)]).sum();
        }
        out.push(token, &mapped).expect("tokens from a valid table");
    }
    Ok(out)
}

/// Retrieval precision plus how many pairs could not be evaluated.
#[derive(Debug, Clone)]
pub struct RetrievalPrecision {
    /// `(k, fraction of evaluable pairs whose source word is in the top-k)`.
    pub at: Vec<(usize, f64)>,
    pub evaluated: usize,
    pub skipped_oov: usize,
}

/// For each test pair, rank all source tokens by cosine against the mapped
/// target-word vector and check whether the true source word appears in the
/// top `k`. Pairs with an out-of-vocabulary word on either side are excluded
/// from the denominator and reported in `skipped_oov`.
pub fn precision_at_k(
    mapped: &EmbeddingTable,
    src: &EmbeddingTable,
    test: &BilingualLexicon,
    ks: &[usize],
) -> Result<RetrievalPrecision, AlignmentError> {
    if mapped.dim() != src.dim() {
        return Err(AlignmentError::DimensionMismatch {
            tgt: mapped.dim(),
            src: src.dim(),
        });
    }
    let max_k = ks.iter().copied().max().unwrap_or(1).max(1);
    let evaluable: Vec<(&str, &[f64])> = test
        .pairs()
        .iter()
        .filter_map(|(src_word, tgt_word)| {
            let query = mapped.vector(tgt_word)?;
            if !src.contains(src_word) {
                return None;
            }
            Some((src_word.as_str(), query))
        })
        .collect();
    let skipped_oov = test.len() - evaluable.len();
    if evaluable.is_empty() {
        return Err(AlignmentError::NoEvaluablePairs);
    }

    let hits: Vec<usize> = evaluable
        .par_iter()
        .map(|(src_word, query)| {
            // rank of the true word among all source tokens, 1-based
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(max_k + 1);
            let mut target_rank = usize::MAX;
            let mut scores: Vec<(f64, usize)> = src
                .tokens()
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    let c = cosine(query, src.row(i)).unwrap_or(-2.0);
                    (c, i)
                })
                .collect();
            scores.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            best.extend(scores.into_iter().take(max_k));
            for (rank, (_, i)) in best.iter().enumerate() {
                if src.tokens()[*i] == *src_word {
                    target_rank = rank + 1;
                    break;
                }
            }
            target_rank
        })
        .collect();

    let at = ks
        .iter()
        .map(|&k| {
            let hit = hits.iter().filter(|&&rank| rank <= k).count();
            (k, hit as f64 / evaluable.len() as f64)
        })
        .collect();
    Ok(RetrievalPrecision {
        at,
        evaluated: evaluable.len(),
        skipped_oov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shuffle::SplitMix64;
    use std::io::Cursor;

    pub(crate) fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.next_f64() * 2.0 - 1.0)
    }

    /// Random orthogonal matrix via QR of a random square matrix.
    pub(crate) fn random_orthogonal(rng: &mut SplitMix64, d: usize) -> DMatrix<f64> {
        let qr = random_matrix(rng, d, d).qr();
        qr.q()
    }

    #[test]
    fn lexicon_tsv_parses_dedupes_and_errors() {
        let lex =
            BilingualLexicon::read_tsv(Cursor::new("# comment\ncat\tmačka\ncat\tmačka\ndog\tpes\n"))
                .unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.pairs()[0], ("cat".to_string(), "mačka".to_string()));

        let err = BilingualLexicon::read_tsv(Cursor::new("no_tab_here\n")).unwrap_err();
        assert!(matches!(err, AlignmentError::MalformedLexiconLine { line: 1, .. }));
        let err = BilingualLexicon::read_tsv(Cursor::new("a\t\n")).unwrap_err();
        assert!(matches!(err, AlignmentError::EmptyWord { line: 1 }));
    }

    fn table(entries: &[(&str, &[f64])], dim: usize) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(dim);
        for (tok, v) in entries {
            t.push(tok, v).unwrap();
        }
        t
    }

    #[test]
    fn pair_matrices_drops_oov_and_reports_kept() {
        let tgt = table(&[("uno", &[1.0, 0.0]), ("dos", &[0.0, 1.0])], 2);
        let src = table(
            &[("one", &[1.0, 0.0]), ("two", &[0.0, 1.0]), ("three", &[1.0, 1.0])],
            2,
        );
        let lex = BilingualLexicon::from_pairs([
            ("one", "uno"),
            ("two", "dos"),
            ("three", "tres"), // tgt OOV
        ]);
        let pm = pair_matrices(&lex, &tgt, &src).unwrap();
        assert_eq!(pm.kept, vec![0, 1]);
        assert_eq!(pm.x.nrows(), 2);

        let lex = BilingualLexicon::from_pairs([("missing", "also_missing")]);
        assert!(matches!(
            pair_matrices(&lex, &tgt, &src).unwrap_err(),
            AlignmentError::NoSurvivingPairs
        ));
    }

    #[test]
    fn pair_matrices_identity_lexicon_gives_equal_rows() {
        let t = table(&[("w1", &[0.5, 0.25]), ("w2", &[-1.0, 2.0])], 2);
        let lex = BilingualLexicon::from_pairs([("w1", "w1"), ("w2", "w2")]);
        let pm = pair_matrices(&lex, &t, &t).unwrap();
        assert_eq!(pm.x, pm.y);
    }

    #[test]
    fn procrustes_identity_case() {
        let mut rng = SplitMix64::new(5);
        let x = random_matrix(&mut rng, 20, 4);
        let map = procrustes(&x, &x).unwrap();
        let eye = DMatrix::<f64>::identity(4, 4);
        assert!((map.matrix() - eye).abs().max() < 1e-8);
        assert!(map.train_loss() < 1e-8);
    }

    #[test]
    fn procrustes_recovers_exact_rotation() {
        // X rows e1, e2; Y rows e2, -e1: the 90-degree rotation
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let map = procrustes(&x, &y).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((map.matrix() - &expected).abs().max() < 1e-12);
        assert!(((&x * map.matrix()) - &y).abs().max() < 1e-12);
    }

    #[test]
    fn procrustes_recovers_random_rotation() {
        let mut rng = SplitMix64::new(11);
        let r = random_orthogonal(&mut rng, 10);
        let x = random_matrix(&mut rng, 50, 10);
        let y = &x * &r;
        let map = procrustes(&x, &y).unwrap();
        assert!((map.matrix() - &r).abs().max() < 1e-6);
    }

    #[test]
    fn procrustes_rejects_bad_input() {
        let x = DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(matches!(
            procrustes(&x, &y).unwrap_err(),
            AlignmentError::NonFiniteInput
        ));
        let y3 = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert!(matches!(
            procrustes(&y, &y3).unwrap_err(),
            AlignmentError::ShapeMismatch(_)
        ));
    }

    #[test]
    fn orthogonality_invariant_on_random_instances() {
        let mut rng = SplitMix64::new(23);
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 30, 8);
            let y = random_matrix(&mut rng, 30, 8);
            let map = procrustes(&x, &y).unwrap();
            assert!(map.orthogonality_residual() <= 1e-6);
        }
    }

    #[test]
    fn apply_map_identity_rotation_and_norms() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.25, -0.5])], 2);
        let eye = procrustes(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let mapped = apply_map(&eye, &t).unwrap();
        assert_eq!(mapped.vector("a").unwrap(), t.vector("a").unwrap());
        assert_eq!(mapped.tokens(), t.tokens());

        let rot = procrustes(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        )
        .unwrap();
        let mapped = apply_map(&rot, &t).unwrap();
        let got = mapped.vector("a").unwrap();
        assert!((got[0] - 0.0).abs() < 1e-12 && (got[1] - 1.0).abs() < 1e-12);

        // norm preservation on random vectors
        let mut rng = SplitMix64::new(31);
        let w = procrustes(
            &random_matrix(&mut rng, 40, 6),
            &random_matrix(&mut rng, 40, 6),
        )
        .unwrap();
        let mut big = EmbeddingTable::new(6);
        for i in 0..100 {
            let v: Vec<f64> = (0..6).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
            big.push(&format!("t{i}"), &v).unwrap();
        }
        let mapped = apply_map(&w, &big).unwrap();
        for (tok, v) in big.iter() {
            let before: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let after: f64 = mapped
                .vector(tok)
                .unwrap()
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            assert!((before - after).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_map_preserves_pairwise_cosines() {
        let mut rng = SplitMix64::new(37);
        let w = procrustes(
            &random_matrix(&mut rng, 30, 5),
            &random_matrix(&mut rng, 30, 5),
        )
        .unwrap();
        let mut t = EmbeddingTable::new(5);
        for i in 0..20 {
            let v: Vec<f64> = (0..5).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            t.push(&format!("t{i}"), &v).unwrap();
        }
        let mapped = apply_map(&w, &t).unwrap();
        for i in 0..t.len() {
            for j in (i + 1)..t.len() {
                let before = cosine(t.row(i), t.row(j)).unwrap();
                let after = cosine(mapped.row(i), mapped.row(j)).unwrap();
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn precision_self_retrieval_and_errors() {
        let t = table(
            &[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[0.6, 0.8])],
            2,
        );
        let lex = BilingualLexicon::from_pairs([("a", "a"), ("b", "b"), ("c", "c")]);
        let p = precision_at_k(&t, &t, &lex, &[1]).unwrap();
        assert_eq!(p.at, vec![(1, 1.0)]);
        assert_eq!(p.evaluated, 3);
        assert_eq!(p.skipped_oov, 0);

        let oov = BilingualLexicon::from_pairs([("zz", "yy")]);
        assert!(matches!(
            precision_at_k(&t, &t, &oov, &[1]).unwrap_err(),
            AlignmentError::NoEvaluablePairs
        ));
    }

    #[test]
    fn precision_invariant_under_uniform_query_scaling() {
        let mut rng = SplitMix64::new(41);
        let mut tgt = EmbeddingTable::new(4);
        let mut src = EmbeddingTable::new(4);
        let mut pairs = Vec::new();
        for i in 0..30 {
            let v: Vec<f64> = (0..4).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            tgt.push(&format!("t{i}"), &v).unwrap();
            let u: Vec<f64> = (0..4).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            src.push(&format!("s{i}"), &u).unwrap();
            pairs.push((format!("s{i}"), format!("t{i}")));
        }
        let lex = BilingualLexicon::from_pairs(pairs);
        let base = precision_at_k(&tgt, &src, &lex, &[1, 5]).unwrap();

        let mut scaled = EmbeddingTable::new(4);
        for (tok, v) in tgt.iter() {
            let sv: Vec<f64> = v.iter().map(|x| x * 3.5).collect();
            scaled.push(tok, &sv).unwrap();
        }
        let after = precision_at_k(&scaled, &src, &lex, &[1, 5]).unwrap();
        assert_eq!(base.at, after.at);
    }
}
