//! End-to-end orchestration and the evaluation report over generated vs
//! reference summaries.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alignment::{apply_map, pair_matrices, precision_at_k, procrustes, BilingualLexicon};
use crate::charlm::{CharLm, CharLmError, TrainConfig};
use crate::corpus::load_jsonl;
use crate::embedding::EmbeddingTable;
use crate::metrics::{corpus_rouge_l, corpus_rouge_n, tokenize, Aggregation, Prf};
use crate::rerank::{
    assemble_summary, load_hypotheses, write_summaries, ExternalScores, RerankOptions, ScorerSet,
    SelectionStrategy, SCORER_BERT, SCORER_LM, SCORER_LOSS, SCORER_ROUGE_L,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(
        "generated and reference ids differ; only generated: {only_generated:?}, only references: {only_references:?}"
    )]
    KeyMismatch {
        only_generated: Vec<String>,
        only_references: Vec<String>,
    },
    #[error("no documents to evaluate")]
    Empty,
    #[error("need at least 2 reports to compare, got {0}")]
    TooFewReports(usize),
    #[error("reports carry inconsistent metric sets: {0}")]
    InconsistentMetrics(String),
    #[error("strategy needs {resource}, but no {missing} was configured")]
    MissingResource {
        resource: &'static str,
        missing: &'static str,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lm(#[from] CharLmError),
}

/// Split after `.`, `!` or `?` followed by whitespace and an uppercase
/// letter or digit. A period right after a two-letter alphabetic token is
/// treated as an abbreviation and does not split.
pub fn sentence_split(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c == '.' || c == '!' || c == '?' {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            let boundary = j > i + 1
                && j < chars.len()
                && (chars[j].is_uppercase() || chars[j].is_numeric());
            if boundary && !(c == '.' && two_letter_abbreviation(&chars, i)) {
                let sentence: String = chars[start..=i].iter().collect();
                let sentence = sentence.trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    let tail: String = chars[start..].iter().collect();
    let tail = tail.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

fn two_letter_abbreviation(chars: &[char], dot: usize) -> bool {
    let mut k = dot;
    let mut letters = 0usize;
    while k > 0 && chars[k - 1].is_alphabetic() {
        letters += 1;
        k -= 1;
        if letters > 2 {
            return false;
        }
    }
    letters == 2 && (k == 0 || !chars[k - 1].is_alphanumeric())
}

/// Evaluation-report row: generation statistics plus ROUGE (macro-averaged
/// by default) and optional bits per character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub n_docs: usize,
    pub avg_sentences: f64,
    pub avg_chars: f64,
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits_per_char: Option<f64>,
}

impl EvalReport {
    pub fn read_json<R: Read>(reader: R) -> Result<Self, EvalError> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self, EvalError> {
        Self::read_json(File::open(path)?)
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writeln!(writer)?;
        Ok(())
    }
}

/// Score generated against reference summaries, keyed by document id. The
/// key sets must match exactly; ROUGE is aggregated per `agg`, generation
/// statistics are computed over the generated side, and bits per character
/// micro-averaged when a model is given.
pub fn evaluate(
    model_name: &str,
    generated: &BTreeMap<String, String>,
    references: &BTreeMap<String, String>,
    lm: Option<&CharLm>,
    beta: f64,
    agg: Aggregation,
) -> Result<EvalReport, EvalError> {
    if generated.is_empty() && references.is_empty() {
        return Err(EvalError::Empty);
    }
    let only_generated: Vec<String> = generated
        .keys()
        .filter(|k| !references.contains_key(*k))
        .cloned()
        .collect();
    let only_references: Vec<String> = references
        .keys()
        .filter(|k| !generated.contains_key(*k))
        .cloned()
        .collect();
    if !only_generated.is_empty() || !only_references.is_empty() {
        return Err(EvalError::KeyMismatch {
            only_generated,
            only_references,
        });
    }

    let pairs: Vec<(Vec<String>, Vec<String>)> = generated
        .iter()
        .map(|(id, cand)| (tokenize(cand), tokenize(&references[id])))
        .collect();
    let rouge1 = corpus_rouge_n(&pairs, 1, beta, agg);
    let rouge2 = corpus_rouge_n(&pairs, 2, beta, agg);
    let rouge_l = corpus_rouge_l(&pairs, beta, agg);

    let mut total_sentences = 0usize;
    let mut total_chars = 0usize;
    for text in generated.values() {
        total_sentences += sentence_split(text).len();
        total_chars += text.chars().count();
    }
    let n = generated.len();
    let bits_per_char = match lm {
        Some(lm) => {
            let texts: Vec<&str> = generated.values().map(String::as_str).collect();
            Some(lm.corpus_bits_per_char(&texts)?)
        }
        None => None,
    };
    Ok(EvalReport {
        model_name: model_name.to_string(),
        n_docs: n,
        avg_sentences: total_sentences as f64 / n as f64,
        avg_chars: total_chars as f64 / n as f64,
        rouge1,
        rouge2,
        rouge_l,
        bits_per_char,
    })
}

/// One line of a comparison: a report's headline scores and their deltas
/// against the baseline (first) report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_name: String,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub delta_rouge1: f64,
    pub delta_rouge2: f64,
    pub delta_rouge_l: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits_per_char: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_bits_per_char: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

/// Deltas of every report against the first one.
pub fn compare_reports(reports: &[EvalReport]) -> Result<Comparison, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let base = &reports[0];
    for r in reports {
        if r.bits_per_char.is_some() != base.bits_per_char.is_some() {
            return Err(EvalError::InconsistentMetrics(format!(
                "bits_per_char present in {:?} but not in {:?}",
                if base.bits_per_char.is_some() {
                    &base.model_name
                } else {
                    &r.model_name
                },
                if base.bits_per_char.is_some() {
                    &r.model_name
                } else {
                    &base.model_name
                },
            )));
        }
    }
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            model_name: r.model_name.clone(),
            rouge1_f: r.rouge1.f,
            rouge2_f: r.rouge2.f,
            rouge_l_f: r.rouge_l.f,
            delta_rouge1: r.rouge1.f - base.rouge1.f,
            delta_rouge2: r.rouge2.f - base.rouge2.f,
            delta_rouge_l: r.rouge_l.f - base.rouge_l.f,
            bits_per_char: r.bits_per_char,
            delta_bits_per_char: r
                .bits_per_char
                .and_then(|b| base.bits_per_char.map(|bb| b - bb)),
        })
        .collect();
    Ok(Comparison {
        baseline: base.model_name.clone(),
        rows,
    })
}

impl std::fmt::Display for Comparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name_width = self
            .rows
            .iter()
            .map(|r| r.model_name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(
            f,
            "{:<name_width$}  {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "model", "R1", "R2", "RL", "dR1", "dR2", "dRL"
        )?;
        for row in &self.rows {
            write!(
                f,
                "{:<name_width$}  {:>8.4} {:>8.4} {:>8.4} {:>+8.4} {:>+8.4} {:>+8.4}",
                row.model_name,
                row.rouge1_f,
                row.rouge2_f,
                row.rouge_l_f,
                row.delta_rouge1,
                row.delta_rouge2,
                row.delta_rouge_l
            )?;
            if let (Some(bits), Some(delta)) = (row.bits_per_char, row.delta_bits_per_char) {
                write!(f, " {bits:>8.4} {delta:>+8.4}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn default_seed() -> u64 {
    42
}
fn default_beta() -> f64 {
    1.0
}
fn default_lm_order() -> usize {
    6
}
fn default_beam_cap() -> usize {
    64
}
fn default_dedupe_min() -> usize {
    3
}
fn default_dedupe_max() -> usize {
    10
}
fn default_budget_chars() -> usize {
    300
}
fn default_max_lead() -> usize {
    3
}
fn default_min_chars() -> usize {
    1000
}
fn default_max_chars() -> usize {
    3000
}

/// Everything a pipeline run needs: input paths, the selection strategy,
/// seeds, and the numeric knobs. Relative paths are resolved against the
/// config file's directory by [`PipelineConfig::load`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model_name: String,
    pub out_dir: PathBuf,
    pub hypotheses: PathBuf,
    /// Reference corpus in dataset JSONL form (`id`/`text`/`summary`).
    pub references: PathBuf,
    pub strategy: String,
    #[serde(default)]
    pub src_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub tgt_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub train_lexicon: Option<PathBuf>,
    /// Already-aligned embedding table, used instead of the align stage.
    #[serde(default)]
    pub aligned_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub lm_model: Option<PathBuf>,
    /// Plain-text LM corpus, one sentence per line; trained when no model
    /// file is given.
    #[serde(default)]
    pub lm_corpus: Option<PathBuf>,
    #[serde(default)]
    pub external_perplexities: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub unit_norm: bool,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lm_order")]
    pub lm_order: usize,
    #[serde(default = "default_beam_cap")]
    pub beam_cap: usize,
    #[serde(default = "default_dedupe_min")]
    pub dedupe_min_n: usize,
    #[serde(default = "default_dedupe_max")]
    pub dedupe_max_n: usize,
    /// Corpus-construction knobs, echoed into the manifest so a run records
    /// how its reference corpus was prepared.
    #[serde(default = "default_budget_chars")]
    pub budget_chars: usize,
    #[serde(default = "default_max_lead")]
    pub max_lead_sentences: usize,
    #[serde(default = "default_min_chars")]
    pub min_chars: usize,
    #[serde(default = "default_max_chars")]
    pub max_chars: usize,
}

impl PipelineConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let mut config: PipelineConfig = serde_json::from_reader(File::open(path)?)?;
        if let Some(dir) = path.parent() {
            config.resolve_relative_to(dir);
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_relative_to(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.hypotheses);
        fix(&mut self.references);
        for opt in [
            &mut self.src_embeddings,
            &mut self.tgt_embeddings,
            &mut self.train_lexicon,
            &mut self.aligned_embeddings,
            &mut self.lm_model,
            &mut self.lm_corpus,
            &mut self.external_perplexities,
        ] {
            if let Some(p) = opt {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let fail = |msg: String| Err(EvalError::InvalidConfig(msg));
        if self.model_name.is_empty() {
            return fail("model_name is empty".into());
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return fail(format!("beta {} must be positive", self.beta));
        }
        if self.lm_order < 1 {
            return fail("lm_order must be >= 1".into());
        }
        if self.beam_cap < 1 {
            return fail("beam_cap must be >= 1".into());
        }
        if self.dedupe_min_n < 1 || self.dedupe_min_n > self.dedupe_max_n {
            return fail(format!(
                "dedupe n-gram range [{}, {}] is invalid",
                self.dedupe_min_n, self.dedupe_max_n
            ));
        }
        if self.budget_chars < 1 || self.max_lead_sentences < 1 {
            return fail("first-paragraph knobs must be >= 1".into());
        }
        if self.min_chars > self.max_chars {
            return fail(format!(
                "length filter bounds [{}, {}] are inverted",
                self.min_chars, self.max_chars
            ));
        }
        self.strategy
            .parse::<SelectionStrategy>()
            .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// A failed stage, with the stage name and the underlying cause.
#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

fn stage<E: std::error::Error + Send + Sync + 'static>(
    name: &'static str,
) -> impl Fn(E) -> PipelineError {
    move |source| PipelineError {
        stage: name,
        source: Box::new(source),
    }
}

/// Paths written by a pipeline run plus the final report.
#[derive(Debug)]
pub struct PipelineOutputs {
    pub report: EvalReport,
    pub summaries_path: PathBuf,
    pub report_path: PathBuf,
    pub manifest_path: PathBuf,
    pub aligned_path: Option<PathBuf>,
    /// Retrieval precision of the alignment stage, when it ran and the
    /// config carried a lexicon.
    pub alignment_p1: Option<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    strategy: String,
    config: &'a PipelineConfig,
    /// SHA-256 of every input file, keyed by path.
    input_digests: BTreeMap<String, String>,
}

fn sha256_hex(path: &Path) -> std::io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)?;
    Ok(format!("{:x}", hasher.finalize()))
}

enum LmResource {
    None,
    Model(CharLm),
    External(ExternalScores),
}

/// Execute align, rerank, and evaluate on the configured inputs, writing
/// summaries, report, and a run manifest under `out_dir`. Any stage error
/// aborts with the stage name; files already written by the failed run are
/// removed.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutputs, PipelineError> {
    let mut created: Vec<PathBuf> = Vec::new();
    let result = run_pipeline_inner(config, &mut created);
    if result.is_err() {
        for path in created {
            let _ = std::fs::remove_file(path);
        }
    }
    result
}

fn run_pipeline_inner(
    config: &PipelineConfig,
    created: &mut Vec<PathBuf>,
) -> Result<PipelineOutputs, PipelineError> {
    config.validate().map_err(stage("config"))?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(stage("config"))?;
    let strategy: SelectionStrategy = config
        .strategy
        .parse()
        .map_err(stage("config"))?;
    let needs = |name: &str| strategy.scorer_names().contains(&name);

    // align
    let mut aligned_path = None;
    let mut alignment_p1 = None;
    let embeddings: Option<EmbeddingTable> = if let Some(path) = &config.aligned_embeddings {
        Some(EmbeddingTable::load_vec(path).map_err(stage("align"))?)
    } else if let (Some(src), Some(tgt), Some(dict)) = (
        &config.src_embeddings,
        &config.tgt_embeddings,
        &config.train_lexicon,
    ) {
        let src = EmbeddingTable::load_vec(src).map_err(stage("align"))?;
        let tgt = EmbeddingTable::load_vec(tgt).map_err(stage("align"))?;
        let (src, tgt) = if config.unit_norm {
            (src.unit_normalized(), tgt.unit_normalized())
        } else {
            (src, tgt)
        };
        let lexicon = BilingualLexicon::load_tsv(dict).map_err(stage("align"))?;
        let paired = pair_matrices(&lexicon, &tgt, &src).map_err(stage("align"))?;
        let map = procrustes(&paired.x, &paired.y).map_err(stage("align"))?;
        let mapped = apply_map(&map, &tgt).map_err(stage("align"))?;
        let out = config.out_dir.join("aligned.vec");
        mapped.save_vec(&out).map_err(stage("align"))?;
        created.push(out.clone());
        aligned_path = Some(out);
        if let Ok(p) = precision_at_k(&mapped, &src, &lexicon, &[1]) {
            alignment_p1 = Some(p.at[0].1);
        }
        Some(mapped)
    } else {
        None
    };
    if needs(SCORER_BERT) && embeddings.is_none() {
        return Err(stage("align")(EvalError::MissingResource {
            resource: "bert_score",
            missing: "embedding table (aligned_embeddings or src/tgt/lexicon)",
        }));
    }

    // language model
    let lm = if needs(SCORER_LM) {
        if let Some(path) = &config.external_perplexities {
            LmResource::External(ExternalScores::load_tsv(path).map_err(stage("language-model"))?)
        } else if let Some(path) = &config.lm_model {
            LmResource::Model(CharLm::load_from(path).map_err(stage("language-model"))?)
        } else if let Some(path) = &config.lm_corpus {
            let file = File::open(path).map_err(stage("language-model"))?;
            let sentences: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(stage("language-model"))?;
            let lm = CharLm::train(
                &sentences,
                &TrainConfig {
                    order: config.lm_order,
                    seed: config.seed,
                    ..TrainConfig::default()
                },
            )
            .map_err(stage("language-model"))?;
            let out = config.out_dir.join("model.clm");
            lm.save_to(&out).map_err(stage("language-model"))?;
            created.push(out);
            LmResource::Model(lm)
        } else {
            return Err(stage("language-model")(EvalError::MissingResource {
                resource: "lm_perplexity",
                missing: "lm_model, lm_corpus, or external_perplexities",
            }));
        }
    } else {
        LmResource::None
    };

    // rerank
    let sets = load_hypotheses(&config.hypotheses, config.beam_cap).map_err(stage("rerank"))?;
    let mut scorers = ScorerSet::new(config.beta);
    for name in strategy.scorer_names() {
        if scorers.has(name) {
            continue;
        }
        scorers = match name {
            SCORER_ROUGE_L => scorers.with_rouge_l(),
            SCORER_LOSS => scorers.with_internal_loss(),
            SCORER_BERT => scorers.with_bert_score(embeddings.as_ref().expect("checked above")),
            SCORER_LM => match &lm {
                LmResource::Model(model) => scorers.with_lm(model),
                LmResource::External(ext) => scorers.with_external_perplexity(ext),
                LmResource::None => unreachable!("checked above"),
            },
            other => {
                return Err(stage("rerank")(crate::rerank::RerankError::UnknownScorer(
                    other.to_string(),
                )))
            }
        };
    }
    let opts = RerankOptions {
        dedupe_min_n: config.dedupe_min_n,
        dedupe_max_n: config.dedupe_max_n,
        beam_cap: config.beam_cap,
    };
    let summaries: Vec<_> = sets
        .par_iter()
        .map(|set| assemble_summary(set, &strategy, &scorers, &opts))
        .collect::<Result<_, _>>()
        .map_err(stage("rerank"))?;
    let summaries_path = config.out_dir.join("summaries.jsonl");
    let file = File::create(&summaries_path).map_err(stage("rerank"))?;
    created.push(summaries_path.clone());
    write_summaries(file, &summaries).map_err(stage("rerank"))?;

    // evaluate
    let references_pairs = load_jsonl(&config.references).map_err(stage("evaluate"))?;
    let references: BTreeMap<String, String> = references_pairs
        .into_iter()
        .map(|p| (p.id, p.summary))
        .collect();
    let generated: BTreeMap<String, String> = summaries
        .iter()
        .map(|s| (s.doc_id.clone(), s.summary.clone()))
        .collect();
    let lm_for_eval = match &lm {
        LmResource::Model(model) => Some(model),
        _ => None,
    };
    let report = evaluate(
        &config.model_name,
        &generated,
        &references,
        lm_for_eval,
        config.beta,
        Aggregation::Macro,
    )
    .map_err(stage("evaluate"))?;
    let report_path = config.out_dir.join("report.json");
    let file = File::create(&report_path).map_err(stage("evaluate"))?;
    created.push(report_path.clone());
    report.write_json(file).map_err(stage("evaluate"))?;

    // manifest
    let mut input_digests = BTreeMap::new();
    let inputs = [
        Some(&config.hypotheses),
        Some(&config.references),
        config.src_embeddings.as_ref(),
        config.tgt_embeddings.as_ref(),
        config.train_lexicon.as_ref(),
        config.aligned_embeddings.as_ref(),
        config.lm_model.as_ref(),
        config.lm_corpus.as_ref(),
        config.external_perplexities.as_ref(),
    ];
    for path in inputs.into_iter().flatten() {
        let digest = sha256_hex(path).map_err(stage("manifest"))?;
        input_digests.insert(path.display().to_string(), digest);
    }
    let manifest = Manifest {
        tool: "xlsum",
        version: env!("CARGO_PKG_VERSION"),
        strategy: strategy.to_string(),
        config,
        input_digests,
    };
    let manifest_path = config.out_dir.join("manifest.json");
    let mut file = File::create(&manifest_path).map_err(stage("manifest"))?;
    created.push(manifest_path.clone());
    serde_json::to_writer_pretty(&mut file, &manifest)
        .map_err(|e| stage("manifest")(EvalError::Json(e)))?;
    writeln!(file).map_err(stage("manifest"))?;

    Ok(PipelineOutputs {
        report,
        summaries_path,
        report_path,
        manifest_path,
        aligned_path,
        alignment_p1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_split_basic_rule() {
        assert_eq!(sentence_split("A b. C d."), vec!["A b.", "C d."]);
        assert_eq!(sentence_split(""), Vec::<String>::new());
    }

    #[test]
    fn sentence_split_two_letter_abbreviation_guard() {
        assert_eq!(
            sentence_split("dr. Novak je prišel."),
            vec!["dr. Novak je prišel."]
        );
        assert_eq!(sentence_split("Št. 5 je zmagala. Res je."), vec![
            "Št. 5 je zmagala.",
            "Res je."
        ]);
    }

    #[test]
    fn sentence_split_needs_whitespace_and_capital() {
        assert_eq!(sentence_split("ver 2.5 je tu"), vec!["ver 2.5 je tu"]);
        assert_eq!(sentence_split("konec. in naprej"), vec!["konec. in naprej"]);
        assert_eq!(
            sentence_split("Prva! Druga? Tretja."),
            vec!["Prva!", "Druga?", "Tretja."]
        );
        assert_eq!(sentence_split("Konec leta 2020. 5 jih je."), vec![
            "Konec leta 2020.",
            "5 jih je."
        ]);
    }

    fn doc_map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn evaluate_identity_scores_one() {
        let gen = doc_map(&[("d1", "The cat sat."), ("d2", "Another one here.")]);
        let report = evaluate("self", &gen, &gen, None, 1.0, Aggregation::Macro).unwrap();
        assert_eq!(report.rouge1.f, 1.0);
        assert_eq!(report.rouge2.f, 1.0);
        assert_eq!(report.rouge_l.f, 1.0);
        assert_eq!(report.n_docs, 2);
        assert!(report.bits_per_char.is_none());
    }

    #[test]
    fn evaluate_hand_counted_rouge1() {
        let gen = doc_map(&[("d", "the cat sat")]);
        let refs = doc_map(&[("d", "the cat ran")]);
        let report = evaluate("m", &gen, &refs, None, 1.0, Aggregation::Macro).unwrap();
        assert!((report.rouge1.f - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn evaluate_key_mismatch_reports_symmetric_difference() {
        let gen = doc_map(&[("a", "x"), ("b", "y")]);
        let refs = doc_map(&[("b", "y"), ("c", "z")]);
        let err = evaluate("m", &gen, &refs, None, 1.0, Aggregation::Macro).unwrap_err();
        match err {
            EvalError::KeyMismatch {
                only_generated,
                only_references,
            } => {
                assert_eq!(only_generated, vec!["a"]);
                assert_eq!(only_references, vec!["c"]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let gen = doc_map(&[("a", "one two"), ("b", "three four"), ("c", "five")]);
        let refs = doc_map(&[("c", "five six"), ("a", "one two"), ("b", "three")]);
        let r1 = evaluate("m", &gen, &refs, None, 1.0, Aggregation::Macro).unwrap();
        // rebuilt in a different insertion order
        let gen2: BTreeMap<String, String> = gen.clone().into_iter().rev().collect();
        let r2 = evaluate("m", &gen2, &refs, None, 1.0, Aggregation::Macro).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn report_json_round_trip() {
        let gen = doc_map(&[("d", "the cat sat")]);
        let refs = doc_map(&[("d", "the cat ran")]);
        let report = evaluate("m", &gen, &refs, None, 1.0, Aggregation::Macro).unwrap();
        let mut buf = Vec::new();
        report.write_json(&mut buf).unwrap();
        let back = EvalReport::read_json(buf.as_slice()).unwrap();
        assert_eq!(report, back);

        let value: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        for key in [
            "model_name",
            "n_docs",
            "avg_sentences",
            "avg_chars",
            "rouge1",
            "rouge2",
            "rouge_l",
        ] {
            assert!(value.get(key).is_some(), "missing report field {key}");
        }
    }

    #[test]
    fn compare_reports_deltas() {
        let gen = doc_map(&[("d", "alpha beta gamma")]);
        let refs = doc_map(&[("d", "alpha beta delta")]);
        let base = evaluate("base", &gen, &refs, None, 1.0, Aggregation::Macro).unwrap();
        let identical = EvalReport {
            model_name: "same".into(),
            ..base.clone()
        };
        let cmp = compare_reports(&[base.clone(), identical]).unwrap();
        assert_eq!(cmp.baseline, "base");
        assert_eq!(cmp.rows[1].delta_rouge1, 0.0);
        assert_eq!(cmp.rows[1].delta_rouge_l, 0.0);

        let mut better = base.clone();
        better.model_name = "variant".into();
        better.rouge1.f = base.rouge1.f + 0.05;
        let cmp = compare_reports(&[base.clone(), better]).unwrap();
        assert!((cmp.rows[1].delta_rouge1 - 0.05).abs() < 1e-12);

        assert!(matches!(
            compare_reports(&[base.clone()]).unwrap_err(),
            EvalError::TooFewReports(1)
        ));

        let mut with_bits = base.clone();
        with_bits.model_name = "bits".into();
        with_bits.bits_per_char = Some(2.0);
        assert!(matches!(
            compare_reports(&[base, with_bits]).unwrap_err(),
            EvalError::InconsistentMetrics(_)
        ));
    }

    #[test]
    fn comparison_json_round_trip() {
        let gen = doc_map(&[("d", "a b c")]);
        let refs = doc_map(&[("d", "a b d")]);
        let base = evaluate("base", &gen, &refs, None, 1.0, Aggregation::Macro).unwrap();
        let variant = EvalReport {
            model_name: "v".into(),
            ..base.clone()
        };
        let cmp = compare_reports(&[base, variant]).unwrap();
        let json = serde_json::to_string(&cmp).unwrap();
        let back: Comparison = serde_json::from_str(&json).unwrap();
        assert_eq!(cmp, back);
        // renders without panicking and carries one line per report + header
        assert_eq!(format!("{cmp}").lines().count(), 3);
    }
}
