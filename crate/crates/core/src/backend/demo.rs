//! A small hand-shaped toy model for demos and the CLI default.
//!
//! Style words (`funny`, `formal`, `table`, ...) boost a themed group of output
//! tokens when they appear in a context, and content words (`price`,
//! `design`, ...) boost their own group. Every token inhibits itself and
//! nudges the stop token upward, so generations end after a couple dozen
//! tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ToyModel, ToyModelSpec, EOS};
use crate::tokenizer::UNK;

const NEUTRAL: &[&str] = &[
    "the", "phone", "screen", "both", "is", "has", "and", "a", "great", "choice", "for",
    "everyday", "use", "it", "offers", "solid", "pixel", "iphone", ".", ",", "we", "think",
    "you", "will", "like", "this", "one", "request", "extension", "week", "project",
];

/// (trigger words, boosted outputs, suppressed outputs)
const THEMES: &[(&[&str], &[&str], &[&str])] = &[
    (
        &["funny", "humorous", "playful"],
        &["oh", "boy", "!", "glitter", "spoon", "hilarious", "anthem", "banana", "wild"],
        &["furthermore", "regarding", "sincerely", "accordingly"],
    ),
    (
        &["formal", "professional", "polite"],
        &["furthermore", "regarding", "sincerely", "respectfully", "accordingly", "kindly"],
        &["oh", "boy", "!", "banana", "wild", "lol"],
    ),
    (
        &["sarcastic"],
        &["sure", "totally", "obviously", "genius", "lol"],
        &["sincerely", "kindly"],
    ),
    (
        &["friendly", "warm", "casual"],
        &["hi", "thanks", "cheers", "hope", "well", "wishes"],
        &["respectfully", "accordingly"],
    ),
    (
        &["enthusiastic", "excited"],
        &["amazing", "exciting", "love", "join", "!"],
        &["accordingly"],
    ),
    (
        &["concise", "brief", "short"],
        &["<eos>"],
        &["furthermore", "hilarious"],
    ),
    (
        &["table"],
        &["|", "row", "column", "---"],
        &[],
    ),
    (
        &["price", "cost", "budget"],
        &["dollars", "cheaper", "value", "deal"],
        &[],
    ),
    (
        &["design", "aesthetics"],
        &["sleek", "glass", "curves", "colors"],
        &[],
    ),
    (
        &["camera"],
        &["photos", "lens", "zoom", "night"],
        &[],
    ),
    (
        &["battery"],
        &["hours", "charge", "lasts"],
        &[],
    ),
    (
        &["hardware"],
        &["chip", "processor", "memory"],
        &[],
    ),
];

const PROMPT_WORDS: &[&str] = &[
    "write", "blog", "post", "comparing", "compare", "of", "in", "paragraphs", "add", "be",
    "keep", "use", "email", "to", "my", "boss", "asking", "closing", "bullet", "points", "with",
    "comparison", "15", "8", "3", "an", "make", "tone", "explain", "what",
];

/// Token list of the demo model: specials, then every listed word once.
pub fn demo_tokens() -> Vec<String> {
    let mut tokens = vec![UNK.to_string(), EOS.to_string()];
    let themed = THEMES
        .iter()
        .flat_map(|(t, b, s)| t.iter().chain(b.iter()).chain(s.iter()));
    for w in NEUTRAL.iter().chain(PROMPT_WORDS).chain(themed) {
        if !tokens.iter().any(|t| t == w) {
            tokens.push(w.to_string());
        }
    }
    tokens
}

pub fn demo_spec() -> ToyModelSpec {
    let tokens = demo_tokens();
    let n = tokens.len();
    let idx = |w: &str| tokens.iter().position(|t| t == w).expect("demo token");
    let eos = idx(EOS);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    let mut bias = vec![-2.0; n];
    for w in NEUTRAL {
        bias[idx(w)] = 1.0;
    }
    bias[eos] = -7.0;
    bias[idx(UNK)] = -20.0;

    let mut influence = vec![vec![0.0; n]; n];
    for (triggers, boosted, suppressed) in THEMES {
        for t in *triggers {
            let row = &mut influence[idx(t)];
            for b in *boosted {
                row[idx(b)] += if *b == EOS { 2.5 } else { 4.0 };
            }
            for s in *suppressed {
                row[idx(s)] -= 2.0;
            }
        }
    }
    for (i, row) in influence.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v += rng.random_range(-0.25..=0.25);
        }
        row[i] -= 6.0;
        if i != idx(UNK) {
            row[eos] += 0.4;
        }
    }
    ToyModelSpec {
        tokens,
        bias,
        influence,
    }
}

pub fn demo_model() -> ToyModel {
    ToyModel::new(demo_spec()).expect("demo spec is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::LogitBackend;
    use crate::tokenizer;

    #[test]
    fn demo_model_is_well_formed() {
        let m = demo_model();
        let ids = tokenizer::encode(m.vocabulary(), "Write a funny blog post. Be funny").unwrap();
        let h = m.open_context(&ids).unwrap();
        let lp = m.next_logprobs_batch(&[&h]).unwrap();
        lp[0].validate().unwrap();
    }
}
