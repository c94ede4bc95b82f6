//! Rule-based word tokenizer shared by token budgeting and the text metrics.
//!
//! The rules, applied to every whitespace-separated chunk:
//!
//! 1. Trailing non-alphanumeric characters are split off one character per token.
//! 2. Leading non-alphanumeric characters are split off one character per token,
//!    unless the rest of the chunk is itself a contraction suffix (`'m`, `n't`, ...).
//! 3. The remaining core has contraction suffixes peeled from its end, so
//!    `I'm` becomes `I` + `'m` and `don't` becomes `do` + `n't`.
//!
//! Every emitted token re-tokenizes to itself, which makes `tokenize` stable on
//! its own space-joined output.

use std::ops::Range;

/// Contraction suffixes, longest first so `n't` wins over shorter matches.
const CONTRACTIONS: [&str; 7] = ["n't", "'re", "'ve", "'ll", "'m", "'s", "'d"];

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn is_edge_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Compares `chars` against an ASCII contraction pattern, accepting the
/// typographic apostrophe and any letter case.
fn matches_suffix(chars: &[char], suffix: &str) -> bool {
    if chars.len() != suffix.len() {
        // Patterns are ASCII, so byte length is char count.
        return false;
    }
    chars.iter().zip(suffix.chars()).all(|(&c, p)| {
        if p == '\'' {
            is_apostrophe(c)
        } else {
            c.to_lowercase().eq(p.to_lowercase())
        }
    })
}

fn is_contraction(chars: &[char]) -> bool {
    CONTRACTIONS.iter().any(|s| matches_suffix(chars, s))
}

/// Byte ranges of every token in `text`, in order.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut chunk_start = None;
    for (idx, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                split_chunk(text, start, idx, &mut spans);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(idx);
        }
    }
    if let Some(start) = chunk_start {
        split_chunk(text, start, text.len(), &mut spans);
    }
    spans
}

fn split_chunk(text: &str, start: usize, end: usize, spans: &mut Vec<Range<usize>>) {
    let chunk = &text[start..end];
    if chunk.chars().all(char::is_alphanumeric) {
        spans.push(start..end);
        return;
    }
    // (byte offset, char) pairs of the chunk plus a sentinel end offset.
    let chars: Vec<(usize, char)> = text[start..end]
        .char_indices()
        .map(|(i, c)| (start + i, c))
        .collect();
    let plain: Vec<char> = chars.iter().map(|&(_, c)| c).collect();
    let offset = |i: usize| chars.get(i).map_or(end, |&(o, _)| o);

    let mut hi = plain.len();
    while hi > 0 && is_edge_punct(plain[hi - 1]) {
        hi -= 1;
    }
    let mut lo = 0;
    while lo < hi && is_edge_punct(plain[lo]) && !is_contraction(&plain[lo..hi]) {
        lo += 1;
    }

    for i in 0..lo {
        spans.push(offset(i)..offset(i + 1));
    }

    if lo < hi {
        let mut core_hi = hi;
        let mut suffixes = Vec::new();
        while !is_contraction(&plain[lo..core_hi]) {
            let found = CONTRACTIONS.iter().find_map(|s| {
                let n = s.len();
                let core_len = core_hi - lo;
                if core_len <= n {
                    return None;
                }
                let cut = core_hi - n;
                (matches_suffix(&plain[cut..core_hi], s) && plain[cut - 1].is_alphanumeric())
                    .then_some(cut)
            });
            match found {
                Some(cut) => {
                    suffixes.push(offset(cut)..offset(core_hi));
                    core_hi = cut;
                }
                None => break,
            }
        }
        spans.push(offset(lo)..offset(core_hi));
        spans.extend(suffixes.into_iter().rev());
    }

    for i in hi..plain.len() {
        spans.push(offset(i)..offset(i + 1));
    }
}

/// Splits `text` into tokens, preserving case.
pub fn split_tokens(text: &str) -> Vec<&str> {
    token_spans(text).into_iter().map(|r| &text[r]).collect()
}

/// Approximate token count used for budget enforcement.
pub fn approx_token_count(text: &str) -> usize {
    token_spans(text).len()
}

/// Lowercased tokens, as consumed by the evaluation metrics.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    split_tokens(&lowered).into_iter().map(str::to_owned).collect()
}

/// Keeps the first `max_tokens` tokens of `text`, cutting at the end of the
/// last kept token. Returns the input unchanged when it already fits.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let spans = token_spans(text);
    if spans.len() <= max_tokens {
        return text;
    }
    if max_tokens == 0 {
        return "";
    }
    &text[..spans[max_tokens - 1].end]
}

/// Whitespace word count, the unit used for length targets.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_match_golden_examples() {
        assert_eq!(approx_token_count(""), 0);
        assert_eq!(approx_token_count("hello world"), 2);
        assert_eq!(
            split_tokens("I'm here, friend."),
            vec!["I", "'m", "here", ",", "friend", "."]
        );
    }

    #[test]
    fn lowercase_tokens() {
        assert_eq!(tokenize_lower("Hello, world"), vec!["hello", ",", "world"]);
        assert_eq!(tokenize_lower("Don't"), vec!["do", "n't"]);
        assert_eq!(tokenize_lower("'I'm"), vec!["'", "i", "'m"]);
        assert_eq!(tokenize_lower("players'"), vec!["players", "'"]);
        assert_eq!(tokenize_lower("rock'n'roll"), vec!["rock'n'roll"]);
        assert_eq!(tokenize_lower("1,000 gold!!"), vec!["1,000", "gold", "!", "!"]);
        assert_eq!(tokenize_lower("it\u{2019}s"), vec!["it", "\u{2019}s"]);
    }

    #[test]
    fn bare_contraction_is_one_token() {
        assert_eq!(split_tokens("'m"), vec!["'m"]);
        assert_eq!(split_tokens("n't"), vec!["n't"]);
        assert_eq!(split_tokens("he's'll"), vec!["he", "'s", "'ll"]);
    }

    #[test]
    fn truncation_keeps_prefix_tokens() {
        assert_eq!(truncate_tokens("one two, three", 2), "one two");
        assert_eq!(truncate_tokens("one two, three", 3), "one two,");
        assert_eq!(truncate_tokens("one", 5), "one");
        assert_eq!(truncate_tokens("one", 0), "");
    }

    proptest! {
        #[test]
        fn tokenize_is_stable_on_joined_output(s in "[a-zA-Z0-9 ,.!?'\u{2019}\"-]{0,40}") {
            let first = tokenize_lower(&s);
            let second = tokenize_lower(&first.join(" "));
            prop_assert_eq!(first, second);
        }

        #[test]
        fn no_empty_tokens(s in "\\PC{0,40}") {
            prop_assert!(split_tokens(&s).iter().all(|t| !t.is_empty()));
        }
    }
}
