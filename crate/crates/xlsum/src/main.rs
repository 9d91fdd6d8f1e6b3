use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use xlsum::alignment::{apply_map, pair_matrices, precision_at_k, procrustes, BilingualLexicon};
use xlsum::charlm::{CharLm, DiscountConfig, TrainConfig};
use xlsum::corpus::{
    length_filter, load_raw_jsonl, make_splits, sample_portion, save_jsonl, split_first_paragraph,
    LengthMeasure, SplitSpec, SummaryPair,
};
use xlsum::embedding::EmbeddingTable;
use xlsum::harness::{compare_reports, evaluate, run_pipeline, EvalReport, PipelineConfig};
use xlsum::metrics::Aggregation;
use xlsum::rerank::{
    assemble_summary, load_hypotheses, load_summaries, write_summaries, ExternalScores,
    RerankOptions, ScorerSet, SelectionStrategy, SCORER_BERT, SCORER_LM, SCORER_LOSS,
    SCORER_ROUGE_L,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

/// Cross-lingual summarization support toolkit: embedding alignment, corpus
/// construction, character-level perplexity, beam reranking, evaluation.
#[derive(Parser)]
#[command(name = "xlsum", version, about)]
struct Cli {
    /// Seed for every seeded operation of the invoked command
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output format for reports and tables
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a summarization dataset from raw articles: first-paragraph
    /// extraction, length filter, and train/val/test splits
    PrepareCorpus {
        /// Raw articles JSONL: {"id", "text"} or {"id", "sentences"}
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Minimum retained length in characters
        #[arg(long, default_value_t = 1000)]
        min: usize,
        /// Maximum retained length in characters
        #[arg(long, default_value_t = 3000)]
        max: usize,
        /// What the length filter measures
        #[arg(long, value_enum, default_value_t = MeasureArg::Total)]
        measure: MeasureArg,
        /// Test set size
        #[arg(long, default_value_t = 5000)]
        test: usize,
        /// Validation set size
        #[arg(long, default_value_t = 5000)]
        val: usize,
        /// Character budget for the summary paragraph
        #[arg(long, default_value_t = 300)]
        budget_chars: usize,
        /// Maximum sentences in the summary paragraph
        #[arg(long, default_value_t = 3)]
        max_lead: usize,
    },

    /// Take a nested seeded portion of a dataset
    SamplePortion {
        #[arg(long = "in")]
        input: PathBuf,
        /// Percentage in (0, 100]
        #[arg(long)]
        pct: f64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Map target-language embeddings into the source space via orthogonal
    /// Procrustes over a bilingual dictionary
    Align {
        /// Source-language .vec file
        #[arg(long)]
        src: PathBuf,
        /// Target-language .vec file
        #[arg(long)]
        tgt: PathBuf,
        /// Bilingual lexicon TSV (src_word<TAB>tgt_word)
        #[arg(long)]
        dict: PathBuf,
        /// Output .vec file for the mapped target table
        #[arg(long)]
        out: PathBuf,
        /// Scale all vectors to unit norm before fitting
        #[arg(long)]
        unit_norm: bool,
    },

    /// Translation-retrieval precision of a mapped table against a source
    /// table
    EvalAlignment {
        #[arg(long)]
        mapped: PathBuf,
        #[arg(long)]
        src: PathBuf,
        /// Test lexicon TSV
        #[arg(long)]
        dict: PathBuf,
        /// Comma-separated list of k values
        #[arg(long, default_value = "1,5,10", value_delimiter = ',')]
        k: Vec<usize>,
    },

    /// Train the character n-gram language model
    TrainCharlm {
        /// Plain-text corpus, one sentence per line
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 6)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
        /// Fold characters seen fewer times than this into UNK
        #[arg(long, default_value_t = 2)]
        min_count: u64,
        /// Fixed discount in (0,1); fitted on a held-out slice when omitted
        #[arg(long)]
        discount: Option<f64>,
    },

    /// Score texts from a JSONL file in bits per character
    Perplexity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON field holding the text to score
        #[arg(long, default_value = "summary")]
        field: String,
        /// Unweighted mean over texts instead of the char-weighted mean
        #[arg(long = "macro")]
        macro_average: bool,
        /// Truncate each text to this many characters before scoring
        #[arg(long)]
        max_chars: Option<usize>,
    },

    /// Select the best hypothesis per extracted sentence and assemble
    /// summaries
    Rerank {
        #[arg(long)]
        hyps: PathBuf,
        /// "best:<scorer>" or "filter:<scorer>:<k>,best:<scorer>" over
        /// rouge_l, bert_score, internal_loss, lm_perplexity
        #[arg(long)]
        strategy: String,
        /// Embedding .vec table for bert_score
        #[arg(long)]
        emb: Option<PathBuf>,
        /// Trained .clm model for lm_perplexity
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Precomputed perplexities TSV (doc_id, beam, hyp, bits)
        #[arg(long)]
        ext_ppl: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        beam_cap: usize,
        #[arg(long, default_value_t = 3)]
        dedupe_min: usize,
        #[arg(long, default_value_t = 10)]
        dedupe_max: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },

    /// Score generated summaries against references
    Evaluate {
        /// Summaries JSONL from rerank
        #[arg(long)]
        generated: PathBuf,
        /// Dataset JSONL with reference summaries
        #[arg(long)]
        references: PathBuf,
        /// Model name recorded in the report
        #[arg(long, default_value = "model")]
        name: String,
        /// Optional .clm model for the perplexity column
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Write the report JSON here as well as stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pool n-gram counts over documents instead of macro-averaging
        #[arg(long)]
        micro: bool,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },

    /// Delta table of evaluation reports against the first one
    Compare {
        /// Two or more report JSON files; the first is the baseline
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },

    /// Run align, rerank, and evaluate end to end from a config file
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MeasureArg {
    Total,
    Body,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring thread pool")?;
    }
    match cli.command {
        Command::PrepareCorpus {
            input,
            out_dir,
            min,
            max,
            measure,
            test,
            val,
            budget_chars,
            max_lead,
        } => prepare_corpus(
            &input,
            &out_dir,
            min,
            max,
            measure,
            test,
            val,
            cli.seed,
            budget_chars,
            max_lead,
        ),
        Command::SamplePortion { input, pct, out } => {
            let pairs = xlsum::corpus::load_jsonl(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let portion = sample_portion(&pairs, pct, cli.seed)?;
            save_jsonl(&out, &portion)?;
            println!(
                "{}",
                serde_json::json!({"input": pairs.len(), "portion": portion.len(), "pct": pct})
            );
            Ok(())
        }
        Command::Align {
            src,
            tgt,
            dict,
            out,
            unit_norm,
        } => align(&src, &tgt, &dict, &out, unit_norm),
        Command::EvalAlignment {
            mapped,
            src,
            dict,
            k,
        } => eval_alignment(&mapped, &src, &dict, &k, cli.format),
        Command::TrainCharlm {
            corpus,
            order,
            out,
            min_count,
            discount,
        } => train_charlm(&corpus, order, &out, min_count, discount, cli.seed),
        Command::Perplexity {
            model,
            input,
            field,
            macro_average,
            max_chars,
        } => perplexity(&model, &input, &field, macro_average, max_chars),
        Command::Rerank {
            hyps,
            strategy,
            emb,
            lm,
            ext_ppl,
            out,
            beam_cap,
            dedupe_min,
            dedupe_max,
            beta,
        } => rerank(
            &hyps, &strategy, emb, lm, ext_ppl, &out, beam_cap, dedupe_min, dedupe_max, beta,
        ),
        Command::Evaluate {
            generated,
            references,
            name,
            lm,
            out,
            micro,
            beta,
        } => evaluate_cmd(
            &generated,
            &references,
            &name,
            lm,
            out,
            micro,
            beta,
            cli.format,
        ),
        Command::Compare { reports } => compare(&reports, cli.format),
        Command::Pipeline { config } => {
            let config = PipelineConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let outputs = run_pipeline(&config)?;
            let mut info = serde_json::json!({
                "report": outputs.report,
                "summaries": outputs.summaries_path,
                "report_path": outputs.report_path,
                "manifest": outputs.manifest_path,
            });
            if let Some(p) = &outputs.aligned_path {
                info["aligned"] = serde_json::json!(p);
            }
            if let Some(p1) = outputs.alignment_p1 {
                info["alignment_p1"] = serde_json::json!(p1);
            }
            println!("{}", serde_json::to_string_pretty(&info)?);
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn prepare_corpus(
    input: &PathBuf,
    out_dir: &PathBuf,
    min: usize,
    max: usize,
    measure: MeasureArg,
    test: usize,
    val: usize,
    seed: u64,
    budget_chars: usize,
    max_lead: usize,
) -> Result<()> {
    let raw = load_raw_jsonl(input).with_context(|| format!("reading {}", input.display()))?;
    let input_count = raw.len();
    let mut skipped_short = 0usize;
    let mut pairs: Vec<SummaryPair> = Vec::new();
    for doc in raw {
        let id = doc.id.clone();
        let sentences = doc.into_sentences();
        match split_first_paragraph(&sentences, budget_chars, max_lead) {
            Ok((summary, body)) => pairs.push(SummaryPair { id, body, summary }),
            Err(_) => skipped_short += 1,
        }
    }
    let measure = match measure {
        MeasureArg::Total => LengthMeasure::Total,
        MeasureArg::Body => LengthMeasure::Body,
    };
    let kept = length_filter(pairs, min, max, measure);
    let after_filter = kept.len();
    let splits = make_splits(
        &kept,
        &SplitSpec {
            test_size: test,
            val_size: val,
            seed,
        },
    )?;
    std::fs::create_dir_all(out_dir)?;
    save_jsonl(out_dir.join("train.jsonl"), &splits.train)?;
    save_jsonl(out_dir.join("val.jsonl"), &splits.val)?;
    save_jsonl(out_dir.join("test.jsonl"), &splits.test)?;
    println!(
        "{}",
        serde_json::json!({
            "input": input_count,
            "skipped_short": skipped_short,
            "after_filter": after_filter,
            "train": splits.train.len(),
            "val": splits.val.len(),
            "test": splits.test.len(),
        })
    );
    Ok(())
}

fn align(
    src: &PathBuf,
    tgt: &PathBuf,
    dict: &PathBuf,
    out: &PathBuf,
    unit_norm: bool,
) -> Result<()> {
    let src_table =
        EmbeddingTable::load_vec(src).with_context(|| format!("reading {}", src.display()))?;
    let tgt_table =
        EmbeddingTable::load_vec(tgt).with_context(|| format!("reading {}", tgt.display()))?;
    let (src_table, tgt_table) = if unit_norm {
        (src_table.unit_normalized(), tgt_table.unit_normalized())
    } else {
        (src_table, tgt_table)
    };
    let lexicon =
        BilingualLexicon::load_tsv(dict).with_context(|| format!("reading {}", dict.display()))?;
    let paired = pair_matrices(&lexicon, &tgt_table, &src_table)?;
    let dropped = lexicon.len() - paired.kept.len();
    let map = procrustes(&paired.x, &paired.y)?;
    let mapped = apply_map(&map, &tgt_table)?;
    mapped.save_vec(out)?;
    println!(
        "{}",
        serde_json::json!({
            "dim": mapped.dim(),
            "pairs_kept": paired.kept.len(),
            "pairs_dropped": dropped,
            "train_loss": map.train_loss(),
            "orthogonality_residual": map.orthogonality_residual(),
            "out": out,
        })
    );
    Ok(())
}

fn eval_alignment(
    mapped: &PathBuf,
    src: &PathBuf,
    dict: &PathBuf,
    ks: &[usize],
    format: Format,
) -> Result<()> {
    let mapped_table = EmbeddingTable::load_vec(mapped)?;
    let src_table = EmbeddingTable::load_vec(src)?;
    let lexicon = BilingualLexicon::load_tsv(dict)?;
    let p = precision_at_k(&mapped_table, &src_table, &lexicon, ks)?;
    match format {
        Format::Json => println!(
            "{}",
            serde_json::json!({
                "precision": p
                    .at
                    .iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect::<BTreeMap<String, f64>>(),
                "evaluated": p.evaluated,
                "skipped_oov": p.skipped_oov,
            })
        ),
        Format::Tsv => {
            println!("k\tprecision");
            for (k, v) in &p.at {
                println!("{k}\t{v}");
            }
        }
    }
    Ok(())
}

fn train_charlm(
    corpus: &PathBuf,
    order: usize,
    out: &PathBuf,
    min_count: u64,
    discount: Option<f64>,
    seed: u64,
) -> Result<()> {
    let file = File::open(corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let sentences: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let config = TrainConfig {
        order,
        seed,
        min_char_count: min_count,
        discount: match discount {
            Some(d) => DiscountConfig::Fixed(d),
            None => TrainConfig::default().discount,
        },
    };
    let lm = CharLm::train(&sentences, &config)?;
    lm.save_to(out)?;
    println!(
        "{}",
        serde_json::json!({
            "order": lm.order(),
            "alphabet": lm.alphabet_size(),
            "discounts": lm.discounts(),
            "sentences": sentences.len(),
            "out": out,
        })
    );
    Ok(())
}

fn perplexity(
    model: &PathBuf,
    input: &PathBuf,
    field: &str,
    macro_average: bool,
    max_chars: Option<usize>,
) -> Result<()> {
    let lm = CharLm::load_from(model)?;
    let file = File::open(input).with_context(|| format!("reading {}", input.display()))?;
    let mut texts: Vec<String> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?;
        let text = value
            .get(field)
            .and_then(|v| v.as_str())
            .with_context(|| format!("line {}: no string field {field:?}", i + 1))?;
        let text = match max_chars {
            Some(cap) => text.chars().take(cap).collect(),
            None => text.to_string(),
        };
        texts.push(text);
    }
    let bits = if macro_average {
        lm.corpus_bits_per_char_macro(&texts)?
    } else {
        lm.corpus_bits_per_char(&texts)?
    };
    println!(
        "{}",
        serde_json::json!({
            "bits_per_char": bits,
            "texts": texts.len(),
            "average": if macro_average { "macro" } else { "micro" },
        })
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rerank(
    hyps: &PathBuf,
    strategy: &str,
    emb: Option<PathBuf>,
    lm: Option<PathBuf>,
    ext_ppl: Option<PathBuf>,
    out: &PathBuf,
    beam_cap: usize,
    dedupe_min: usize,
    dedupe_max: usize,
    beta: f64,
) -> Result<()> {
    let strategy: SelectionStrategy = strategy.parse()?;
    let sets = load_hypotheses(hyps, beam_cap)?;

    let emb_table = emb.map(EmbeddingTable::load_vec).transpose()?;
    let lm_model = lm.map(CharLm::load_from).transpose()?;
    let ext_scores = ext_ppl.map(ExternalScores::load_tsv).transpose()?;

    let mut scorers = ScorerSet::new(beta);
    for name in strategy.scorer_names() {
        if scorers.has(name) {
            continue;
        }
        scorers = match name {
            SCORER_ROUGE_L => scorers.with_rouge_l(),
            SCORER_LOSS => scorers.with_internal_loss(),
            SCORER_BERT => match &emb_table {
                Some(table) => scorers.with_bert_score(table),
                None => bail!("strategy needs bert_score but no --emb table was given"),
            },
            SCORER_LM => match (&ext_scores, &lm_model) {
                (Some(ext), _) => scorers.with_external_perplexity(ext),
                (None, Some(model)) => scorers.with_lm(model),
                (None, None) => {
                    bail!("strategy needs lm_perplexity but neither --lm nor --ext-ppl was given")
                }
            },
            other => bail!("unknown scorer {other:?} in strategy"),
        };
    }
    let opts = RerankOptions {
        dedupe_min_n: dedupe_min,
        dedupe_max_n: dedupe_max,
        beam_cap,
    };
    use rayon::prelude::*;
    let summaries: Vec<_> = sets
        .par_iter()
        .map(|set| assemble_summary(set, &strategy, &scorers, &opts))
        .collect::<Result<_, _>>()?;
    write_summaries(File::create(out)?, &summaries)?;
    println!(
        "{}",
        serde_json::json!({"documents": summaries.len(), "out": out})
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    generated: &PathBuf,
    references: &PathBuf,
    name: &str,
    lm: Option<PathBuf>,
    out: Option<PathBuf>,
    micro: bool,
    beta: f64,
    format: Format,
) -> Result<()> {
    let generated_map: BTreeMap<String, String> = load_summaries(generated)?
        .into_iter()
        .map(|s| (s.doc_id, s.summary))
        .collect();
    let references_map: BTreeMap<String, String> = xlsum::corpus::load_jsonl(references)?
        .into_iter()
        .map(|p| (p.id, p.summary))
        .collect();
    let lm_model = lm.map(CharLm::load_from).transpose()?;
    let agg = if micro {
        Aggregation::Micro
    } else {
        Aggregation::Macro
    };
    let report = evaluate(
        name,
        &generated_map,
        &references_map,
        lm_model.as_ref(),
        beta,
        agg,
    )?;
    if let Some(path) = out {
        report.write_json(File::create(&path)?)?;
    }
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Tsv => {
            println!(
                "model_name\tn_docs\tavg_sentences\tavg_chars\trouge1_f\trouge2_f\trouge_l_f\tbits_per_char"
            );
            println!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                report.model_name,
                report.n_docs,
                report.avg_sentences,
                report.avg_chars,
                report.rouge1.f,
                report.rouge2.f,
                report.rouge_l.f,
                report
                    .bits_per_char
                    .map_or(String::new(), |b| b.to_string()),
            );
        }
    }
    Ok(())
}

fn compare(paths: &[PathBuf], format: Format) -> Result<()> {
    let reports: Vec<EvalReport> = paths
        .iter()
        .map(|p| EvalReport::load_json(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    let cmp = compare_reports(&reports)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&cmp)?),
        Format::Tsv => {
            println!(
                "model\trouge1_f\trouge2_f\trouge_l_f\tdelta_rouge1\tdelta_rouge2\tdelta_rouge_l\tbits_per_char\tdelta_bits"
            );
            for row in &cmp.rows {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    row.model_name,
                    row.rouge1_f,
                    row.rouge2_f,
                    row.rouge_l_f,
                    row.delta_rouge1,
                    row.delta_rouge2,
                    row.delta_rouge_l,
                    row.bits_per_char.map_or(String::new(), |b| b.to_string()),
                    row.delta_bits_per_char
                        .map_or(String::new(), |b| b.to_string()),
                );
            }
        }
    }
    let _ = std::io::stdout().flush();
    Ok(())
}
