//! Token counting for prompts and samples.

/// Counts tokens in text. Implementations must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Local fallback tokenizer: each maximal run of word characters (letters,
/// digits, `_`) is one token, and every other non-whitespace character is a
/// token of its own. Whitespace is free.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalTokenizer;

impl Tokenizer for LexicalTokenizer {
    fn count(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for ch in text.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !ch.is_whitespace() {
                    count += 1;
                }
            }
        }
        count
    }
}

pub fn count_tokens(text: &str, tokenizer: &dyn Tokenizer) -> usize {
    tokenizer.count(text)
}
