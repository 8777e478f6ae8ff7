//! Sentence-level BLEU and ROUGE-n over a fixed, reproducible tokenization.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("candidate and references must be non-empty")]
    EmptyInput,
    #[error("weights must be finite, non-negative and not all zero")]
    InvalidWeights,
    #[error("reference {index} has {len} tokens, too short for {n}-grams")]
    DegenerateReference { index: usize, len: usize, n: usize },
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
}

pub type Result<T> = std::result::Result<T, TextError>;

/// BLEU-1 preset: unigram precision only.
pub const BLEU1_WEIGHTS: [f64; 4] = [1.0, 0.0, 0.0, 0.0];
/// BLEU-4 preset: 4-gram precision only.
pub const BLEU4_WEIGHTS: [f64; 4] = [0.0, 0.0, 0.0, 1.0];

/// A normalized token sequence.
///
/// Normalization is fixed so scores are bit-reproducible: lowercase the text,
/// replace every character outside `[a-z0-9]` with a space, then split on
/// whitespace. Tokens are never empty; the sequence itself may be.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokenize(text: &str) -> TokenSeq {
        let lowered = text.to_lowercase();
        let mapped: String = lowered
            .chars()
            .map(|c| if c.is_ascii_lowercase() || c.is_ascii_digit() { c } else { ' ' })
            .collect();
        TokenSeq(mapped.split_whitespace().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *map.entry(gram).or_insert(0) += 1;
        }
    }
    map
}

fn ngram_total(len: usize, n: usize) -> usize {
    if len >= n {
        len - n + 1
    } else {
        0
    }
}

/// Optional BLEU smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    /// Plain sentence BLEU: any zero weighted precision zeroes the score.
    #[default]
    None,
    /// Add one to numerator and denominator of each precision of order 2 and
    /// above. Unigram precision and empty n-gram sets are left untouched.
    AddOne,
}

/// Sentence BLEU with clipped modified n-gram precisions up to order 4.
///
/// `weights` are the per-order weights `w_1..w_4`; only orders with positive
/// weight contribute. The brevity penalty uses the reference length closest
/// to the candidate length, preferring the shorter on ties.
pub fn bleu(candidate: &TokenSeq, references: &[TokenSeq], weights: [f64; 4]) -> Result<f64> {
    bleu_with(candidate, references, weights, Smoothing::None)
}

pub fn bleu_with(
    candidate: &TokenSeq,
    references: &[TokenSeq],
    weights: [f64; 4],
    smoothing: Smoothing,
) -> Result<f64> {
    if candidate.is_empty() || references.is_empty() || references.iter().any(TokenSeq::is_empty) {
        return Err(TextError::EmptyInput);
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(TextError::InvalidWeights);
    }

    let c = candidate.len();
    let r = references
        .iter()
        .map(TokenSeq::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("references checked non-empty");
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };

    let mut log_sum = 0.0f64;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let n = i + 1;
        let cand_counts = ngram_counts(candidate.tokens(), n);
        let total = ngram_total(c, n);
        if total == 0 {
            return Ok(0.0);
        }
        let mut matched = 0usize;
        for (gram, &count) in &cand_counts {
            let clip = references
                .iter()
                .map(|r| ngram_counts(r.tokens(), n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            matched += count.min(clip);
        }
        let (num, den) = match smoothing {
            Smoothing::AddOne if n >= 2 => (matched + 1, total + 1),
            _ => (matched, total),
        };
        if num == 0 {
            return Ok(0.0);
        }
        log_sum += w * (num as f64 / den as f64).ln();
    }
    Ok(bp * log_sum.exp())
}

/// ROUGE-n recall: clipped candidate matches over reference n-gram counts,
/// averaged across references.
pub fn rouge_n(candidate: &TokenSeq, references: &[TokenSeq], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(TextError::InvalidOrder);
    }
    if references.is_empty() {
        return Err(TextError::EmptyInput);
    }
    for (index, r) in references.iter().enumerate() {
        if r.len() < n {
            return Err(TextError::DegenerateReference { index, len: r.len(), n });
        }
    }
    let cand_counts = ngram_counts(candidate.tokens(), n);
    let mut sum = 0.0f64;
    for r in references {
        let ref_counts = ngram_counts(r.tokens(), n);
        let total: usize = ref_counts.values().sum();
        let matched: usize = ref_counts
            .iter()
            .map(|(gram, &rc)| rc.min(cand_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        sum += matched as f64 / total as f64;
    }
    Ok(sum / references.len() as f64)
}
