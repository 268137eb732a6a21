//! Rule tables for the offline extractor.
//!
//! Match order is fixed: numeric, then binary, then categorical, then
//! continuous. Within a group, rules apply in file order, and the first rule
//! to claim a span wins.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ExtractError;
use crate::prompt::Dimension;

const DEFAULT_LEXICON: &str = include_str!("../../assets/lexicon.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternRule {
    /// Regex; the `anchor` group (or the whole match) is the anchor span.
    pub pattern: String,
    #[serde(default)]
    pub dimension: Dimension,
    /// Option bank for categorical rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermRule {
    pub term: String,
    #[serde(default)]
    pub dimension: Dimension,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconFile {
    pub numeric: Vec<PatternRule>,
    pub binary: Vec<PatternRule>,
    pub categorical: Vec<PatternRule>,
    pub continuous: Vec<TermRule>,
    #[serde(default)]
    pub intensifiers: Vec<String>,
    #[serde(default)]
    pub clause_verbs: Vec<String>,
    #[serde(default)]
    pub genres: Vec<String>,
    #[serde(default)]
    pub number_words: BTreeMap<String, u64>,
    /// Regexes removed from the base once modulated anchors are gone; the
    /// `strip` group (or the whole match) is removed.
    #[serde(default)]
    pub neutral_strip: Vec<String>,
    #[serde(default)]
    pub option_banks: BTreeMap<String, Vec<String>>,
    /// Fallback bank per dimension for categorical options.
    #[serde(default)]
    pub dimension_banks: BTreeMap<String, String>,
}

pub(crate) struct Compiled {
    pub regex: Regex,
    pub dimension: Dimension,
    pub bank: Option<String>,
}

/// A loaded and compiled lexicon.
pub struct ExtractionLexicon {
    pub file: LexiconFile,
    pub(crate) numeric: Vec<Compiled>,
    pub(crate) binary: Vec<Compiled>,
    pub(crate) categorical: Vec<Compiled>,
    pub(crate) continuous: Vec<Compiled>,
    pub(crate) neutral_strip: Vec<Regex>,
}

impl std::fmt::Debug for ExtractionLexicon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtractionLexicon")
            .field("numeric", &self.numeric.len())
            .field("binary", &self.binary.len())
            .field("categorical", &self.categorical.len())
            .field("continuous", &self.continuous.len())
            .finish()
    }
}

fn compile(p: &str) -> Result<Regex, ExtractError> {
    Regex::new(p).map_err(|e| ExtractError::Lexicon(format!("{p:?}: {e}")))
}

fn compile_rules(rules: &[PatternRule]) -> Result<Vec<Compiled>, ExtractError> {
    rules
        .iter()
        .map(|r| {
            Ok(Compiled {
                regex: compile(&r.pattern)?,
                dimension: r.dimension,
                bank: r.bank.clone(),
            })
        })
        .collect()
}

impl ExtractionLexicon {
    pub fn from_file(file: LexiconFile) -> Result<Self, ExtractError> {
        if file.numeric.is_empty()
            || file.binary.is_empty()
            || file.categorical.is_empty()
            || file.continuous.is_empty()
        {
            return Err(ExtractError::Lexicon("all four rule lists must be non-empty".into()));
        }
        let mut terms = file.continuous.clone();
        // longer terms first so "beginner-friendly" beats "friendly"
        terms.sort_by_key(|t| std::cmp::Reverse(t.term.len()));
        let continuous = terms
            .iter()
            .map(|t| {
                Ok(Compiled {
                    regex: compile(&format!(
                        r"(?i)(?:^|[^\w-])(?P<anchor>{})(?:$|[^\w-])",
                        regex::escape(&t.term)
                    ))?,
                    dimension: t.dimension,
                    bank: None,
                })
            })
            .collect::<Result<_, ExtractError>>()?;
        Ok(Self {
            numeric: compile_rules(&file.numeric)?,
            binary: compile_rules(&file.binary)?,
            categorical: compile_rules(&file.categorical)?,
            continuous,
            neutral_strip: file
                .neutral_strip
                .iter()
                .map(|p| compile(p))
                .collect::<Result<_, _>>()?,
            file,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ExtractError> {
        let file: LexiconFile =
            serde_json::from_str(text).map_err(|e| ExtractError::Lexicon(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExtractError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ExtractError::Lexicon(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    /// The lexicon shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("built-in lexicon is valid")
    }

    pub fn number_value(&self, word: &str) -> Option<u64> {
        word.parse::<u64>()
            .ok()
            .or_else(|| self.file.number_words.get(&word.to_lowercase()).copied())
    }

    pub fn is_genre(&self, text: &str) -> bool {
        let t = text.trim().to_lowercase();
        let t = t
            .strip_prefix("a ")
            .or_else(|| t.strip_prefix("an "))
            .unwrap_or(&t);
        self.file.genres.iter().any(|g| g == t)
    }

    pub fn bank(&self, name: &str) -> Option<&[String]> {
        self.file.option_banks.get(name).map(Vec::as_slice)
    }

    pub fn dimension_bank(&self, dimension: Dimension) -> Option<&[String]> {
        let key = serde_json::to_value(dimension).ok()?;
        let name = self.file.dimension_banks.get(key.as_str()?)?;
        self.bank(name)
    }

    pub fn dimension_of_term(&self, term: &str) -> Dimension {
        self.file
            .continuous
            .iter()
            .find(|t| t.term.eq_ignore_ascii_case(term))
            .map(|t| t.dimension)
            .unwrap_or_default()
    }
}
