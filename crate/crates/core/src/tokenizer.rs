//! Whitespace/punctuation tokenizer shared by every context in a session.

use std::sync::OnceLock;

use regex::Regex;

use crate::backend::{BackendError, TokenId, Vocabulary};

/// Token used for words missing from the vocabulary, when the vocabulary has it.
pub const UNK: &str = "<unk>";

fn pieces() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[\p{L}\p{N}]+(?:['’-][\p{L}\p{N}]+)*|[^\s\p{L}\p{N}]").expect("valid regex")
    })
}

/// Splits text into word and single-character punctuation pieces.
pub fn split(text: &str) -> Vec<&str> {
    pieces().find_iter(text).map(|m| m.as_str()).collect()
}

/// Maps text onto vocabulary ids. Lookup tries the exact piece first, then
/// its lowercase form, then `<unk>`.
pub fn encode(vocab: &Vocabulary, text: &str) -> Result<Vec<TokenId>, BackendError> {
    let unk = vocab.id(UNK);
    split(text)
        .into_iter()
        .map(|piece| {
            vocab
                .id(piece)
                .or_else(|| vocab.id(&piece.to_lowercase()))
                .or(unk)
                .ok_or_else(|| BackendError::Tokenize(piece.to_string()))
        })
        .collect()
}

fn glues_left(token: &str) -> bool {
    matches!(token, "." | "," | ";" | ":" | "!" | "?" | ")" | "]" | "%")
}

/// Renders token ids back to text and returns each token's byte range in it.
pub fn decode(vocab: &Vocabulary, ids: &[TokenId]) -> (String, Vec<(usize, usize)>) {
    let mut text = String::new();
    let mut offsets = Vec::with_capacity(ids.len());
    let mut prev_open = true;
    for &id in ids {
        let token = vocab.token(id).unwrap_or(UNK);
        if !prev_open && !glues_left(token) {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(token);
        offsets.push((start, text.len()));
        prev_open = matches!(token, "(" | "[");
    }
    (text, offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::new(words.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            split("Write a one-week plan, please.\nBe concise"),
            vec!["Write", "a", "one-week", "plan", ",", "please", ".", "Be", "concise"]
        );
    }

    #[test]
    fn unknown_words_fall_back_to_unk() {
        let v = vocab(&["<unk>", "write", "a"]);
        assert_eq!(encode(&v, "Write a poem").unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn unknown_without_unk_is_rejected() {
        let v = vocab(&["write", "a"]);
        let err = encode(&v, "write a poem").unwrap_err();
        assert!(matches!(err, BackendError::Tokenize(ref w) if w == "poem"));
    }

    #[test]
    fn decode_attaches_punctuation() {
        let v = vocab(&["oh", "boy", ",", "it", "works", "."]);
        let (text, offsets) = decode(&v, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(text, "oh boy, it works.");
        assert_eq!(&text[offsets[4].0..offsets[4].1], "works");
    }
}
