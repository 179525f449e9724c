use std::ops::Range;

use crate::textprep::{render_encoder_input, MarkerSet, SequencePair};

/// Splits text into tokens, reported as byte ranges into the input.
pub trait Tokenizer: Send + Sync {
    fn spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    out.push(s..i);
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(s..text.len());
        }
        out
    }
}

fn keep_prefix(text: &str, spans: &[Range<usize>], keep: usize) -> String {
    match keep {
        0 => String::new(),
        k if k >= spans.len() => text.to_string(),
        k => text[..spans[k - 1].end].to_string(),
    }
}

/// Fits a pair into `max_tokens` including marker tokens. Tokens are dropped
/// from the end of `second` first, then from the end of `first`; a non-empty
/// `first` always keeps at least one token, even if that exceeds the budget.
pub fn truncate_pair(
    pair: &SequencePair,
    tokenizer: &dyn Tokenizer,
    max_tokens: usize,
    markers: &MarkerSet,
) -> SequencePair {
    let empty = SequencePair { first: String::new(), second: String::new(), post_id: String::new(), label: None };
    let overhead = tokenizer.count(&render_encoder_input(&empty, markers));
    let budget = max_tokens.saturating_sub(overhead);
    let first = tokenizer.spans(&pair.first);
    let second = tokenizer.spans(&pair.second);
    if first.len() + second.len() <= budget {
        return pair.clone();
    }
    let keep_first = if first.is_empty() { 0 } else { budget.clamp(1, first.len()) };
    let keep_second = budget.saturating_sub(keep_first).min(second.len());
    SequencePair {
        first: keep_prefix(&pair.first, &first, keep_first),
        second: keep_prefix(&pair.second, &second, keep_second),
        post_id: pair.post_id.clone(),
        label: pair.label,
    }
}
