//! Character-level n-gram language model scoring text in bits per character.
//!
//! Probabilities come from recursive interpolation with absolute
//! discounting: at each context length the observed counts lose a fixed
//! discount per distinct successor, and the freed mass is spread over the
//! next-shorter context, bottoming out in a uniform floor over the alphabet.
//! Every distribution therefore sums to one and assigns positive mass to
//! every symbol.
//!
//! # Model file layout (version 1)
//!
//! Little-endian throughout. A symbol is a tag byte (`0` = BOS, `1` = UNK,
//! `2` = character) followed, for characters, by the `u32` Unicode scalar.
//!
//! ```text
//! magic            4 bytes  "XCLM"
//! version          u32
//! order            u32
//! support length   u32      followed by that many symbols (sorted)
//! discounts        order x f64 (context lengths 0..order-1)
//! levels           for each context length k in 0..order:
//!   context count  u64
//!   per context:   k symbols, total u64, successor count u32,
//!                  then (symbol, count u64) per successor (sorted)
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::lm_normalize_str;
use crate::shuffle::shuffled_indices;

const MAGIC: &[u8; 4] = b"XCLM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CharLmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("character {0:?} is not in the model alphabet and the model has no UNK symbol")]
    UnknownChar(char),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {found} (this build reads up to {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

/// BOS appears only in contexts; UNK and characters form the distribution
/// support. Variant order defines the serialization sort order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Symbol {
    Bos,
    Unk,
    Char(char),
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    succ: BTreeMap<Symbol, u64>,
}

/// Average entropy per character in bits, with the number of characters it
/// was averaged over.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PerplexityScore {
    pub bits_per_char: f64,
    pub char_count: usize,
}

/// How the per-order discounts are chosen during training.
#[derive(Debug, Clone)]
pub enum DiscountConfig {
    Fixed(f64),
    /// Grid-search each order's discount to minimize bits on a seeded
    /// held-out slice of the corpus.
    FitHeldOut { fraction: f64, grid: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Context length is `order - 1`.
    pub order: usize,
    /// Drives held-out selection; also part of the determinism contract.
    pub seed: u64,
    /// Characters seen fewer times than this are merged into UNK.
    pub min_char_count: u64,
    pub discount: DiscountConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            order: 6,
            seed: 42,
            min_char_count: 2,
            discount: DiscountConfig::FitHeldOut {
                fraction: 0.05,
                grid: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            },
        }
    }
}

const DEFAULT_DISCOUNT: f64 = 0.75;

/// Character-level n-gram model with absolute-discount interpolation.
#[derive(Debug, Clone)]
pub struct CharLm {
    order: usize,
    /// Distribution support, sorted; never contains BOS.
    support: Vec<Symbol>,
    /// One discount per context length `0..order`.
    discounts: Vec<f64>,
    /// `levels[k]` maps contexts of length `k` to successor counts.
    levels: Vec<BTreeMap<Vec<Symbol>, ContextCounts>>,
}

impl CharLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alphabet_size(&self) -> usize {
        self.support.len()
    }

    pub fn has_unk(&self) -> bool {
        self.support.binary_search(&Symbol::Unk).is_ok()
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    /// Model that assigns exactly `1/|chars|` to every character, for
    /// calibration. The support is exactly the normalized character set —
    /// no UNK — so scoring text outside it is an error.
    pub fn uniform<I: IntoIterator<Item = char>>(chars: I) -> Result<Self, CharLmError> {
        let mut support: Vec<Symbol> = chars
            .into_iter()
            .flat_map(|c| lm_normalize_str(&c.to_string()).chars().collect::<Vec<_>>())
            .map(Symbol::Char)
            .collect();
        support.sort_unstable();
        support.dedup();
        if support.is_empty() {
            return Err(CharLmError::InvalidConfig("empty alphabet".into()));
        }
        Ok(Self {
            order: 1,
            support,
            discounts: vec![DEFAULT_DISCOUNT],
            levels: vec![BTreeMap::new()],
        })
    }

    /// Train on sentences (normalized internally). Context counts are
    /// accumulated per sentence with BOS padding; rare characters fold into
    /// UNK; discounts come from `config.discount`.
    pub fn train<S: AsRef<str>>(
        sentences: &[S],
        config: &TrainConfig,
    ) -> Result<Self, CharLmError> {
        if config.order < 1 {
            return Err(CharLmError::InvalidConfig("order must be >= 1".into()));
        }
        if let DiscountConfig::Fixed(d) = config.discount {
            if !(0.0 < d && d < 1.0) {
                return Err(CharLmError::InvalidConfig(format!(
                    "discount {d} outside (0, 1)"
                )));
            }
        }
        if let DiscountConfig::FitHeldOut { fraction, ref grid } = config.discount {
            if !(0.0..1.0).contains(&fraction) {
                return Err(CharLmError::InvalidConfig(format!(
                    "held-out fraction {fraction} outside [0, 1)"
                )));
            }
            if grid.iter().any(|d| !(0.0 < *d && *d < 1.0)) {
                return Err(CharLmError::InvalidConfig(
                    "discount grid values must lie in (0, 1)".into(),
                ));
            }
        }

        let normalized: Vec<String> = sentences
            .iter()
            .map(|s| lm_normalize_str(s.as_ref()))
            .filter(|s| !s.is_empty())
            .collect();
        if normalized.is_empty() {
            return Err(CharLmError::EmptyCorpus);
        }

        // held-out slice for discount fitting
        let (train_idx, heldout_idx): (Vec<usize>, Vec<usize>) = match config.discount {
            DiscountConfig::FitHeldOut { fraction, .. } => {
                let n = normalized.len();
                let h = ((fraction * n as f64).floor() as usize).min(n - 1);
                let order = shuffled_indices(n, config.seed);
                (order[h..].to_vec(), order[..h].to_vec())
            }
            DiscountConfig::Fixed(_) => ((0..normalized.len()).collect(), Vec::new()),
        };

        let mut char_counts: BTreeMap<char, u64> = BTreeMap::new();
        for &i in &train_idx {
            for c in normalized[i].chars() {
                *char_counts.entry(c).or_insert(0) += 1;
            }
        }
        if char_counts.is_empty() {
            return Err(CharLmError::EmptyCorpus);
        }
        let mut support: Vec<Symbol> = char_counts
            .iter()
            .filter(|(_, &n)| n >= config.min_char_count)
            .map(|(&c, _)| Symbol::Char(c))
            .collect();
        support.push(Symbol::Unk);
        support.sort_unstable();

        let mut model = CharLm {
            order: config.order,
            support,
            discounts: vec![DEFAULT_DISCOUNT; config.order],
            levels: vec![BTreeMap::new(); config.order],
        };
        for &i in &train_idx {
            model.count_sentence(&normalized[i]);
        }

        if let DiscountConfig::Fixed(d) = config.discount {
            model.discounts = vec![d; config.order];
        } else if let DiscountConfig::FitHeldOut { ref grid, .. } = config.discount {
            let heldout: Vec<&str> = heldout_idx.iter().map(|&i| normalized[i].as_str()).collect();
            model.fit_discounts(&heldout, grid);
        }
        Ok(model)
    }

    fn map_symbols(&self, text: &str) -> Result<Vec<Symbol>, CharLmError> {
        let has_unk = self.has_unk();
        text.chars()
            .map(|c| {
                let sym = Symbol::Char(c);
                if self.support.binary_search(&sym).is_ok() {
                    Ok(sym)
                } else if has_unk {
                    Ok(Symbol::Unk)
                } else {
                    Err(CharLmError::UnknownChar(c))
                }
            })
            .collect()
    }

    fn count_sentence(&mut self, sentence: &str) {
        let ctx_len = self.order - 1;
        let mut padded: Vec<Symbol> = vec![Symbol::Bos; ctx_len];
        padded.extend(
            sentence
                .chars()
                .map(|c| {
                    let sym = Symbol::Char(c);
                    if self.support.binary_search(&sym).is_ok() {
                        sym
                    } else {
                        Symbol::Unk
                    }
                }),
        );
        for p in ctx_len..padded.len() {
            let next = padded[p];
            for k in 0..self.order {
                let ctx = &padded[p - k..p];
                let level = &mut self.levels[k];
                if let Some(cc) = level.get_mut(ctx) {
                    cc.total += 1;
                    *cc.succ.entry(next).or_insert(0) += 1;
                } else {
                    let mut cc = ContextCounts::default();
                    cc.total = 1;
                    cc.succ.insert(next, 1);
                    level.insert(ctx.to_vec(), cc);
                }
            }
        }
    }

    fn fit_discounts(&mut self, heldout: &[&str], grid: &[f64]) {
        if heldout.iter().all(|s| s.is_empty()) || grid.is_empty() {
            return;
        }
        let eval = |model: &CharLm, discounts: &[f64]| -> f64 {
            heldout
                .iter()
                .map(|s| model.score_symbols_with(discounts, s))
                .sum()
        };
        for k in 0..self.order {
            let mut trial = self.discounts.clone();
            let mut best_d = trial[k];
            let mut best_bits = eval(self, &trial);
            for &cand in grid {
                trial[k] = cand;
                let bits = eval(self, &trial);
                if bits < best_bits {
                    best_bits = bits;
                    best_d = cand;
                }
            }
            self.discounts[k] = best_d;
        }
    }

    fn score_symbols_with(&self, discounts: &[f64], sentence: &str) -> f64 {
        let ctx_len = self.order - 1;
        let mut padded: Vec<Symbol> = vec![Symbol::Bos; ctx_len];
        padded.extend(sentence.chars().map(|c| {
            let sym = Symbol::Char(c);
            if self.support.binary_search(&sym).is_ok() {
                sym
            } else {
                Symbol::Unk
            }
        }));
        let mut bits = 0.0;
        for p in ctx_len..padded.len() {
            let prob = self.prob_with(discounts, &padded[p - ctx_len..p], padded[p]);
            bits -= prob.log2();
        }
        bits
    }

    fn prob_with(&self, discounts: &[f64], ctx: &[Symbol], sym: Symbol) -> f64 {
        if let Some(cc) = self.levels[ctx.len()].get(ctx) {
            if cc.total > 0 {
                let d = discounts[ctx.len()];
                let total = cc.total as f64;
                let cnt = cc.succ.get(&sym).copied().unwrap_or(0) as f64;
                let discounted = (cnt - d).max(0.0) / total;
                let lambda = d * cc.succ.len() as f64 / total;
                let lower = if ctx.is_empty() {
                    1.0 / self.support.len() as f64
                } else {
                    self.prob_with(discounts, &ctx[1..], sym)
                };
                return discounted + lambda * lower;
            }
        }
        if ctx.is_empty() {
            1.0 / self.support.len() as f64
        } else {
            self.prob_with(discounts, &ctx[1..], sym)
        }
    }

    /// `-(1/N) * sum(log2 p(c_i | context))` over every character of the
    /// normalized text, scored as one sentence with BOS padding.
    pub fn bits_per_char(&self, text: &str) -> Result<PerplexityScore, CharLmError> {
        let (bits, n) = self.score_text(text)?;
        Ok(PerplexityScore {
            bits_per_char: bits / n as f64,
            char_count: n,
        })
    }

    fn score_text(&self, text: &str) -> Result<(f64, usize), CharLmError> {
        let normalized = lm_normalize_str(text);
        let syms = self.map_symbols(&normalized)?;
        if syms.is_empty() {
            return Err(CharLmError::EmptyText);
        }
        let ctx_len = self.order - 1;
        let mut padded: Vec<Symbol> = vec![Symbol::Bos; ctx_len];
        padded.extend(&syms);
        let mut bits = 0.0;
        for p in ctx_len..padded.len() {
            let prob = self.prob_with(&self.discounts, &padded[p - ctx_len..p], padded[p]);
            bits -= prob.log2();
        }
        Ok((bits, syms.len()))
    }

    /// Character-weighted (micro) mean: total bits over total characters,
    /// context reset at each text. Texts empty after normalization are
    /// skipped; an all-empty sequence is an error.
    pub fn corpus_bits_per_char<S: AsRef<str>>(&self, texts: &[S]) -> Result<f64, CharLmError> {
        let mut total_bits = 0.0;
        let mut total_chars = 0usize;
        for text in texts {
            match self.score_text(text.as_ref()) {
                Ok((bits, n)) => {
                    total_bits += bits;
                    total_chars += n;
                }
                Err(CharLmError::EmptyText) => continue,
                Err(e) => return Err(e),
            }
        }
        if total_chars == 0 {
            return Err(CharLmError::EmptyText);
        }
        Ok(total_bits / total_chars as f64)
    }

    /// Macro mean: unweighted average of per-text bits per character.
    pub fn corpus_bits_per_char_macro<S: AsRef<str>>(
        &self,
        texts: &[S],
    ) -> Result<f64, CharLmError> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for text in texts {
            match self.bits_per_char(text.as_ref()) {
                Ok(score) => {
                    sum += score.bits_per_char;
                    n += 1;
                }
                Err(CharLmError::EmptyText) => continue,
                Err(e) => return Err(e),
            }
        }
        if n == 0 {
            return Err(CharLmError::EmptyText);
        }
        Ok(sum / n as f64)
    }

    /// Probability of each support symbol after the given context text
    /// (normalized, BOS-padded). Sums to 1 within float error.
    pub fn distribution_after(&self, context: &str) -> Result<Vec<f64>, CharLmError> {
        let normalized = lm_normalize_str(context);
        let syms = self.map_symbols(&normalized)?;
        let ctx_len = self.order - 1;
        let mut padded: Vec<Symbol> = vec![Symbol::Bos; ctx_len];
        padded.extend(&syms);
        let ctx = &padded[padded.len() - ctx_len..];
        Ok(self
            .support
            .iter()
            .map(|&s| self.prob_with(&self.discounts, ctx, s))
            .collect())
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), CharLmError> {
        let mut w = BufWriter::new(writer);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.order as u32).to_le_bytes())?;
        w.write_all(&(self.support.len() as u32).to_le_bytes())?;
        for sym in &self.support {
            write_symbol(&mut w, *sym)?;
        }
        for d in &self.discounts {
            w.write_all(&d.to_le_bytes())?;
        }
        for level in &self.levels {
            w.write_all(&(level.len() as u64).to_le_bytes())?;
            for (ctx, cc) in level {
                for sym in ctx {
                    write_symbol(&mut w, *sym)?;
                }
                w.write_all(&cc.total.to_le_bytes())?;
                w.write_all(&(cc.succ.len() as u32).to_le_bytes())?;
                for (sym, count) in &cc.succ {
                    write_symbol(&mut w, *sym)?;
                    w.write_all(&count.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_to<P: AsRef<Path>>(&self, path: P) -> Result<(), CharLmError> {
        self.save(File::create(path)?)
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, CharLmError> {
        let mut r = BufReader::new(reader);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| CharLmError::BadMagic)?;
        if &magic != MAGIC {
            return Err(CharLmError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version > FORMAT_VERSION {
            return Err(CharLmError::VersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let order = read_u32(&mut r)? as usize;
        if order == 0 {
            return Err(CharLmError::Corrupt("order is zero".into()));
        }
        let support_len = read_u32(&mut r)? as usize;
        let mut support = Vec::with_capacity(support_len);
        for _ in 0..support_len {
            support.push(read_symbol(&mut r)?);
        }
        if support.is_empty() || support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CharLmError::Corrupt("support not sorted or empty".into()));
        }
        if support.contains(&Symbol::Bos) {
            return Err(CharLmError::Corrupt("BOS in distribution support".into()));
        }
        let mut discounts = Vec::with_capacity(order);
        for _ in 0..order {
            let d = read_f64(&mut r)?;
            if !(0.0 < d && d < 1.0) {
                return Err(CharLmError::Corrupt(format!("discount {d} outside (0, 1)")));
            }
            discounts.push(d);
        }
        let mut levels = Vec::with_capacity(order);
        for k in 0..order {
            let n_contexts = read_u64(&mut r)? as usize;
            let mut level = BTreeMap::new();
            for _ in 0..n_contexts {
                let mut ctx = Vec::with_capacity(k);
                for _ in 0..k {
                    ctx.push(read_symbol(&mut r)?);
                }
                let total = read_u64(&mut r)?;
                let n_succ = read_u32(&mut r)? as usize;
                let mut succ = BTreeMap::new();
                let mut sum = 0u64;
                for _ in 0..n_succ {
                    let sym = read_symbol(&mut r)?;
                    let count = read_u64(&mut r)?;
                    sum += count;
                    succ.insert(sym, count);
                }
                if sum != total || succ.len() != n_succ {
                    return Err(CharLmError::Corrupt(
                        "successor counts do not add up".into(),
                    ));
                }
                level.insert(ctx, ContextCounts { total, succ });
            }
            levels.push(level);
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(CharLmError::Corrupt("trailing bytes".into()));
        }
        Ok(CharLm {
            order,
            support,
            discounts,
            levels,
        })
    }

    pub fn load_from<P: AsRef<Path>>(path: P) -> Result<Self, CharLmError> {
        Self::load(File::open(path)?)
    }
}

fn write_symbol<W: Write>(w: &mut W, sym: Symbol) -> std::io::Result<()> {
    match sym {
        Symbol::Bos => w.write_all(&[0]),
        Symbol::Unk => w.write_all(&[1]),
        Symbol::Char(c) => {
            w.write_all(&[2])?;
            w.write_all(&(c as u32).to_le_bytes())
        }
    }
}

fn read_symbol<R: Read>(r: &mut R) -> Result<Symbol, CharLmError> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| CharLmError::Corrupt("truncated symbol".into()))?;
    match tag[0] {
        0 => Ok(Symbol::Bos),
        1 => Ok(Symbol::Unk),
        2 => {
            let cp = read_u32(r)?;
            char::from_u32(cp)
                .map(Symbol::Char)
                .ok_or_else(|| CharLmError::Corrupt(format!("invalid code point {cp}")))
        }
        t => Err(CharLmError::Corrupt(format!("unknown symbol tag {t}"))),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CharLmError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| CharLmError::Corrupt("truncated integer".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CharLmError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| CharLmError::Corrupt("truncated integer".into()))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, CharLmError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| CharLmError::Corrupt("truncated float".into()))?;
    Ok(f64::from_le_bytes(buf))
}
