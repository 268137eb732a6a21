//! Deterministic rule engine: extraction, segmentation and option banks.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::lexicon::{Compiled, ExtractionLexicon};
use super::{ExtractError, Segmentation};
use crate::prompt::{AttrOption, Attribute, AttributeKind, NumericValue, Span};

pub const MIN_OPTIONS: usize = 3;
pub const MAX_OPTIONS: usize = 5;

/// Lowercase-hyphenated identifier derived from free text.
pub fn slugify(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

/// Assigns slug ids, suffixing `-2`, `-3`, ... on collisions.
pub(crate) fn assign_ids(attrs: &mut [Attribute]) {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for a in attrs.iter_mut() {
        let mut base = slugify(&a.anchor_text);
        if base.is_empty() {
            base = a.kind.to_string();
        }
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        a.id = if *n == 1 { base } else { format!("{base}-{n}") };
    }
}

fn anchor_of<'h>(caps: &regex::Captures<'h>) -> regex::Match<'h> {
    caps.name("anchor").unwrap_or_else(|| caps.get(0).expect("group 0"))
}

pub(crate) fn extract(lex: &ExtractionLexicon, raw: &str) -> Vec<Attribute> {
    let groups: [(AttributeKind, &[Compiled]); 4] = [
        (AttributeKind::Numeric, &lex.numeric),
        (AttributeKind::Binary, &lex.binary),
        (AttributeKind::Categorical, &lex.categorical),
        (AttributeKind::Continuous, &lex.continuous),
    ];
    let mut out: Vec<Attribute> = Vec::new();
    for (kind, rules) in groups {
        for rule in rules {
            let mut pos = 0;
            while pos <= raw.len() {
                let Some(caps) = rule.regex.captures_at(raw, pos) else {
                    break;
                };
                let m = anchor_of(&caps);
                let whole = caps.get(0).expect("group 0");
                pos = if m.end() > pos { m.end() } else { whole.end().max(pos + 1) };
                let span = Span::new(m.start(), m.end());
                if span.is_empty()
                    || lex.is_genre(m.as_str())
                    || out.iter().any(|a| a.anchor.overlaps(&span))
                {
                    continue;
                }
                let mut attr = Attribute::new("", kind, span, raw);
                attr.dimension = rule.dimension;
                if kind == AttributeKind::Numeric {
                    let Some(num) = caps.name("num") else { continue };
                    let Some(value) = lex.number_value(num.as_str()) else {
                        continue;
                    };
                    attr.numeric = Some(NumericValue {
                        value,
                        unit: caps.name("unit").map(|u| u.as_str().to_string()).unwrap_or_default(),
                        number_span: Span::new(num.start() - m.start(), num.end() - m.start()),
                    });
                }
                out.push(attr);
            }
        }
    }
    out.sort_by_key(|a| a.anchor.start);
    assign_ids(&mut out);
    out
}

struct Tracked {
    id: String,
    span: Option<Span>,
    protected: bool,
}

/// Text under deletion/replacement with anchor spans kept in sync.
struct EditBuffer {
    text: String,
    tracked: Vec<Tracked>,
    edited: bool,
}

impl EditBuffer {
    fn span_of(&self, id: &str) -> Option<Span> {
        self.tracked.iter().find(|t| t.id == id).and_then(|t| t.span)
    }

    fn can_edit(&self, span: Span) -> bool {
        !self
            .tracked
            .iter()
            .any(|t| t.protected && t.span.is_some_and(|s| s.overlaps(&span)))
    }

    fn replace(&mut self, span: Span, with: &str) -> bool {
        if !self.can_edit(span) || span.end > self.text.len() {
            return false;
        }
        if &self.text[span.start..span.end] == with {
            return true;
        }
        self.text.replace_range(span.start..span.end, with);
        self.edited = true;
        let delta = with.len() as isize - span.len() as isize;
        for t in &mut self.tracked {
            if let Some(s) = t.span {
                if s.start >= span.end && !(span.is_empty() && s.start == span.start && false) {
                    t.span = Some(Span::new(
                        (s.start as isize + delta) as usize,
                        (s.end as isize + delta) as usize,
                    ));
                } else if s.end > span.start {
                    t.span = None;
                }
            }
        }
        true
    }

    fn remove(&mut self, span: Span) -> bool {
        let ok = self.replace(span, "");
        if ok {
            self.fix_article(span.start);
        }
        ok
    }

    /// Repairs a/an agreement across a deletion point.
    fn fix_article(&mut self, at: usize) {
        static BEFORE: OnceLock<Regex> = OnceLock::new();
        let before = BEFORE.get_or_init(|| Regex::new(r"(?:^|\s)(a|an|A|An)\s*$").expect("regex"));
        let Some(caps) = before.captures(&self.text[..at]) else {
            return;
        };
        let art = caps.get(1).expect("group");
        let next = self.text[at..].trim_start().chars().next();
        let Some(next) = next else { return };
        if !next.is_alphabetic() {
            return;
        }
        let vowel = "aeiouAEIOU".contains(next);
        let replacement = match (art.as_str(), vowel) {
            ("a", true) => "an",
            ("A", true) => "An",
            ("an", false) => "a",
            ("An", false) => "A",
            _ => return,
        };
        self.replace(Span::new(art.start(), art.end()), replacement);
    }

    /// Applies `regex` right to left, replacing group `target` (or the whole
    /// match) with `with`, skipping matches that touch protected spans.
    fn replace_all(&mut self, regex: &Regex, target: &str, with: impl Fn(&regex::Captures) -> String) {
        let edits: Vec<(Span, String)> = regex
            .captures_iter(&self.text)
            .map(|c| {
                let m = c.name(target).unwrap_or_else(|| c.get(0).expect("group"));
                (Span::new(m.start(), m.end()), with(&c))
            })
            .collect();
        for (span, text) in edits.into_iter().rev() {
            self.replace(span, &text);
        }
    }
}

const GLUE_BEFORE: &[&str] = &[", and ", ", but ", ", or ", " and ", " but ", " or ", ", ", " "];
const GLUE_AFTER: &[&str] = &[", and ", " and ", ", "];

/// Removal span for a phrase together with its coordinating glue.
fn with_glue(text: &str, span: Span) -> Span {
    let before = &text[..span.start];
    let after = &text[span.end..];
    for g in GLUE_BEFORE.iter().take(GLUE_BEFORE.len() - 1) {
        if before.ends_with(g) {
            return Span::new(span.start - g.len(), span.end);
        }
    }
    for g in GLUE_AFTER {
        if after.starts_with(g) {
            return Span::new(span.start, span.end + g.len());
        }
    }
    if before.ends_with(' ') {
        return Span::new(span.start - 1, span.end);
    }
    if after.starts_with(' ') {
        return Span::new(span.start, span.end + 1);
    }
    span
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn decapitalize_word(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) if c.as_str().chars().all(|x| !x.is_uppercase()) => {
            f.to_lowercase().collect::<String>() + c.as_str()
        }
        _ => s.to_string(),
    }
}

fn trim_directive(s: &str) -> String {
    s.trim()
        .trim_end_matches(['.', '!', '?', ',', ';', ':'])
        .trim()
        .to_string()
}

/// Verb-fronted directive for a binary anchor.
pub fn binary_directive(anchor: &str) -> String {
    let anchor = trim_directive(anchor);
    let (head, rest) = anchor.split_once(' ').unwrap_or((&anchor, ""));
    let verb = match head.to_lowercase().as_str() {
        "using" | "with" => "Use".to_string(),
        "including" => "Include".to_string(),
        "adding" => "Add".to_string(),
        _ => capitalize(head),
    };
    if rest.is_empty() {
        verb
    } else {
        format!("{verb} {rest}")
    }
}

fn is_clause_delim(c: char) -> bool {
    matches!(c, ',' | ';' | ':' | '.' | '!' | '?' | '\n')
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\n')
}

const LEAD_GLUE: &[&str] = &["and ", "but ", "so ", "please ", "also "];

/// Removes a continuous anchor that ends an imperative clause such as
/// "keep the closing friendly". Returns the directive when it applies.
fn clause_removal(lex: &ExtractionLexicon, buf: &mut EditBuffer, span: Span) -> Option<String> {
    let text = &buf.text;
    let cs = text[..span.start]
        .char_indices()
        .rev()
        .find(|(_, c)| is_clause_delim(*c))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let rest = &text[span.end..];
    let ce = rest
        .char_indices()
        .find(|(_, c)| is_clause_delim(*c))
        .map(|(i, _)| i)
        .into_iter()
        .chain([" and ", " but "].iter().filter_map(|g| rest.find(g)))
        .min()
        .map_or(text.len(), |i| span.end + i);
    if !text[span.end..ce].trim().is_empty() {
        return None;
    }
    let mut core_start = cs + (text[cs..].len() - text[cs..].trim_start().len());
    loop {
        let rest = text[core_start..span.start].to_lowercase();
        match LEAD_GLUE.iter().find(|g| rest.starts_with(*g)) {
            Some(g) => core_start += g.len(),
            None => break,
        }
    }
    let first = text[core_start..span.end]
        .split_whitespace()
        .next()?
        .to_lowercase();
    if !lex.file.clause_verbs.contains(&first) {
        return None;
    }
    // a clause that starts the prompt is the task itself unless it is short
    let core = text[core_start..ce].to_string();
    if cs == 0 && core.split_whitespace().count() > 4 {
        return None;
    }
    let delim = text[..cs].chars().last();
    let removal = match delim {
        Some(',') | Some(';') | Some(':') => Span::new(cs - 1, ce),
        Some(_) => {
            // standalone sentence: take its terminator and leading space
            let end = match text[ce..].chars().next() {
                Some(c) if is_sentence_end(c) => ce + c.len_utf8(),
                _ => ce,
            };
            Span::new(cs, end)
        }
        None => {
            let after = &text[ce..];
            let glue = [", and ", ", ", " and ", ". ", "."]
                .iter()
                .find(|g| after.starts_with(*g))
                .map_or(0, |g| g.len());
            Span::new(0, ce + glue)
        }
    };
    if !buf.remove(removal) {
        return None;
    }
    Some(capitalize(&trim_directive(&core)))
}

fn intensifier_start(lex: &ExtractionLexicon, text: &str, start: usize) -> usize {
    let mut s = start;
    'outer: loop {
        let before = &text[..s];
        for w in &lex.file.intensifiers {
            let pat = format!(" {w} ");
            let lower = before.to_lowercase();
            if lower.ends_with(&pat) || lower == format!("{w} ") {
                s -= w.len() + 1;
                continue 'outer;
            }
        }
        return s;
    }
}

fn style_phrase(lex: &ExtractionLexicon, text: &str, span: Span) -> Option<(Span, Span)> {
    let intens = lex
        .file
        .intensifiers
        .iter()
        .map(|w| regex::escape(w))
        .collect::<Vec<_>>()
        .join("|");
    let pattern = format!(
        r"(?i)\s*\b(?:in|with)\s+(?:a|an)\s+(?P<core>(?:(?:{intens})\s+)*{})\s+(?:tone|way|style|manner|voice|register|fashion)\b",
        regex::escape(&text[span.start..span.end])
    );
    let re = Regex::new(&pattern).ok()?;
    let found = re
        .captures_iter(text)
        .find(|c| {
            let m = c.get(0).expect("group");
            m.start() <= span.start && m.end() >= span.end
        })
        .map(|c| {
            let m = c.get(0).expect("group");
            let core = c.name("core").expect("core");
            (Span::new(m.start(), m.end()), Span::new(core.start(), core.end()))
        });
    found
}

fn continuous_removal(lex: &ExtractionLexicon, buf: &mut EditBuffer, span: Span) -> Option<String> {
    if let Some(d) = clause_removal(lex, buf, span) {
        return Some(d);
    }
    if let Some((whole, core)) = style_phrase(lex, &buf.text, span) {
        let directive = format!("Be {}", decapitalize_word(&buf.text[core.start..core.end]));
        if buf.remove(whole) {
            return Some(directive);
        }
    }
    let start = intensifier_start(lex, &buf.text, span.start);
    let core = Span::new(start, span.end);
    let directive = format!("Be {}", decapitalize_word(&buf.text[core.start..core.end]));
    let removal = with_glue(&buf.text, core);
    if buf.remove(removal) || buf.remove(core) {
        Some(directive)
    } else {
        None
    }
}

fn binary_removal(buf: &mut EditBuffer, span: Span) -> Option<String> {
    let text = &buf.text;
    let anchor = text[span.start..span.end].to_string();
    let directive = binary_directive(&anchor);
    let ss = text[..span.start]
        .char_indices()
        .rev()
        .find(|(_, c)| is_sentence_end(*c))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let se = text[span.end..]
        .char_indices()
        .find(|(_, c)| is_sentence_end(*c))
        .map(|(i, _)| span.end + i)
        .unwrap_or(text.len());
    let body = text[ss..se].trim();
    if body.eq_ignore_ascii_case(anchor.trim()) {
        let mut end = se;
        if let Some(c) = text[se..].chars().next() {
            if is_sentence_end(c) {
                end += c.len_utf8();
            }
        }
        if ss == 0 {
            end += text[end..].len() - text[end..].trim_start().len();
        }
        let removal = Span::new(ss, end);
        if buf.remove(removal) {
            return Some(directive);
        }
    }
    let removal = with_glue(&buf.text, span);
    if buf.remove(removal) || buf.remove(span) {
        Some(directive)
    } else {
        None
    }
}

fn cleanup(buf: &mut EditBuffer) {
    static RULES: OnceLock<Vec<Regex>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        [
            r" {2,}",
            r" +(?P<p>[,.;:!?])",
            r",\s*(?P<p>[.!?])",
            r"^[\s,;:]+",
            r"\s+$",
            r"(?P<lead>(?:^|[.!?]\s+))(?i:and|but|so)\s+",
        ]
        .iter()
        .map(|p| Regex::new(p).expect("regex"))
        .collect()
    });
    buf.replace_all(&rules[0], "", |_| " ".into());
    buf.replace_all(&rules[1], "", |c| c["p"].to_string());
    buf.replace_all(&rules[2], "", |c| c["p"].to_string());
    buf.replace_all(&rules[3], "", |_| String::new());
    buf.replace_all(&rules[4], "", |_| String::new());
    buf.replace_all(&rules[5], "", |c| c["lead"].to_string());
    if let Some(first) = buf.text.chars().next() {
        if first.is_lowercase() {
            let up: String = first.to_uppercase().collect();
            buf.replace(Span::new(0, first.len_utf8()), &up);
        }
    }
}

pub(crate) fn segment(
    lex: &ExtractionLexicon,
    raw: &str,
    attrs: &[Attribute],
) -> Result<Segmentation, ExtractError> {
    let mut buf = EditBuffer {
        text: raw.to_string(),
        tracked: attrs
            .iter()
            .map(|a| Tracked {
                id: a.id.clone(),
                span: Some(a.anchor),
                protected: !a.kind.is_modulated(),
            })
            .collect(),
        edited: false,
    };
    let mut mods: Vec<&Attribute> = attrs.iter().filter(|a| a.kind.is_modulated()).collect();
    mods.sort_by_key(|a| std::cmp::Reverse(a.anchor.start));
    let mut directives = BTreeMap::new();
    for a in &mods {
        let Some(span) = buf.span_of(&a.id) else {
            return Err(ExtractError::Segment(format!(
                "anchor of {:?} was consumed by another removal",
                a.id
            )));
        };
        let directive = match a.kind {
            AttributeKind::Binary => binary_removal(&mut buf, span),
            _ => continuous_removal(lex, &mut buf, span),
        }
        .ok_or_else(|| {
            ExtractError::Segment(format!("cannot remove {:?} from the prompt", a.anchor_text))
        })?;
        directives.insert(a.id.clone(), directive);
    }
    if !mods.is_empty() {
        for re in &lex.neutral_strip {
            let mut pos = 0;
            while pos < buf.text.len() {
                let Some(c) = re.captures_at(&buf.text, pos) else { break };
                let m = c.name("strip").unwrap_or_else(|| c.get(0).expect("group"));
                let span = Span::new(m.start(), m.end());
                let end = c.get(0).expect("group").end();
                if !span.is_empty() && buf.remove(span) {
                    pos = span.start;
                } else {
                    pos = end.max(pos + 1);
                }
            }
        }
    }
    if buf.edited {
        cleanup(&mut buf);
    }
    if buf.text.chars().all(|c| !c.is_alphanumeric()) {
        return Err(ExtractError::EmptyBase);
    }
    let base_anchors = attrs
        .iter()
        .filter(|a| !a.kind.is_modulated())
        .map(|a| {
            buf.span_of(&a.id)
                .map(|s| (a.id.clone(), s))
                .ok_or_else(|| ExtractError::Segment(format!("lost anchor of {:?}", a.id)))
        })
        .collect::<Result<_, _>>()?;
    Ok(Segmentation {
        base: buf.text,
        directives,
        base_anchors,
    })
}

/// Short label: first three words, first letter capitalized.
pub fn option_label(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().take(3).collect();
    capitalize(&words.join(" "))
}

fn bank_for<'a>(lex: &'a ExtractionLexicon, raw: &str, attr: &Attribute) -> &'a [String] {
    let anchor = attr.anchor_text.to_lowercase();
    let banks = &lex.file.option_banks;
    if let Some(b) = banks
        .values()
        .find(|b| b.iter().any(|e| e.to_lowercase() == anchor))
    {
        return b;
    }
    for rule in &lex.categorical {
        let hit = rule.regex.captures_iter(raw).any(|c| {
            let m = anchor_of(&c);
            m.start() == attr.anchor.start && m.end() == attr.anchor.end
        });
        if let Some(b) = rule.bank.as_deref().filter(|_| hit).and_then(|n| lex.bank(n)) {
            return b;
        }
    }
    let pieces: Vec<&str> = anchor
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|w| !w.is_empty() && *w != "and" && *w != "or")
        .collect();
    if let Some(b) = banks
        .values()
        .find(|b| b.iter().any(|e| pieces.contains(&e.to_lowercase().as_str())))
    {
        return b;
    }
    lex.dimension_bank(attr.dimension)
        .or_else(|| lex.bank("focus"))
        .unwrap_or(&[])
}

/// Options for a categorical attribute: the anchor text first, then bank
/// entries, three to five in total.
pub(crate) fn options(lex: &ExtractionLexicon, raw: &str, attr: &Attribute) -> Vec<AttrOption> {
    let mut texts = vec![attr.anchor_text.clone()];
    let fallback = lex.dimension_bank(attr.dimension).unwrap_or(&[]);
    let focus = lex.bank("focus").unwrap_or(&[]);
    let primary = bank_for(lex, raw, attr);
    for (i, bank) in [primary, fallback, focus].into_iter().enumerate() {
        if i > 0 && texts.len() >= MIN_OPTIONS {
            break;
        }
        for e in bank {
            if texts.len() >= MAX_OPTIONS {
                break;
            }
            if !texts.iter().any(|t| t.eq_ignore_ascii_case(e)) {
                texts.push(e.clone());
            }
        }
    }
    texts
        .into_iter()
        .map(|t| AttrOption::new(option_label(&t), t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> ExtractionLexicon {
        ExtractionLexicon::builtin()
    }

    fn summary(attrs: &[Attribute]) -> Vec<(AttributeKind, &str)> {
        attrs.iter().map(|a| (a.kind, a.anchor_text.as_str())).collect()
    }

    #[test]
    fn slugs() {
        assert_eq!(slugify("Add a table for comparison"), "add-a-table-for-comparison");
        assert_eq!(slugify("like I'm five"), "like-i-m-five");
        assert_eq!(slugify("  "), "");
    }

    #[test]
    fn email_prompt_extraction() {
        let raw = "Write a concise and formal email to my boss asking for a one-week extension";
        let attrs = extract(&lex(), raw);
        assert_eq!(
            summary(&attrs),
            vec![
                (AttributeKind::Continuous, "concise"),
                (AttributeKind::Continuous, "formal"),
                (AttributeKind::Categorical, "my boss"),
                (AttributeKind::Numeric, "one-week"),
            ]
        );
        let week = &attrs[3];
        assert_eq!(week.numeric.as_ref().unwrap().value, 1);
        assert_eq!(week.id, "one-week");
    }

    #[test]
    fn genre_is_not_extracted() {
        let raw = "Write a funny blog post in 3 paragraphs";
        let attrs = extract(&lex(), raw);
        assert_eq!(
            summary(&attrs),
            vec![
                (AttributeKind::Continuous, "funny"),
                (AttributeKind::Numeric, "3 paragraphs"),
            ]
        );
    }

    #[test]
    fn nothing_to_extract() {
        assert!(extract(&lex(), "Hello").is_empty());
    }

    #[test]
    fn adjacent_terms_are_both_found() {
        let attrs = extract(&lex(), "Write a short formal note");
        assert_eq!(attrs.len(), 2);
    }

    #[test]
    fn compound_term_wins_over_its_suffix() {
        let attrs = extract(&lex(), "Explain recursion in a beginner-friendly way");
        assert_eq!(summary(&attrs), vec![(AttributeKind::Continuous, "beginner-friendly")]);
    }

    #[test]
    fn binary_directive_templates() {
        assert_eq!(binary_directive("use bullet points"), "Use bullet points");
        assert_eq!(binary_directive("using bullet points"), "Use bullet points");
        assert_eq!(binary_directive("with examples"), "Use examples");
        assert_eq!(binary_directive("Add a table for comparison."), "Add a table for comparison");
    }

    #[test]
    fn segmentation_removes_binary_sentence() {
        let raw = "Write a funny blog post in 3 paragraphs comparing the price and hardware of iPhone 15 and Pixel 8. Add a table for comparison.";
        let attrs = extract(&lex(), raw);
        let seg = segment(&lex(), raw, &attrs).unwrap();
        assert_eq!(
            seg.base,
            "Write a blog post in 3 paragraphs comparing the price and hardware of iPhone 15 and Pixel 8."
        );
        assert_eq!(seg.directives["funny"], "Be funny");
        assert_eq!(seg.directives["add-a-table-for-comparison"], "Add a table for comparison");
        let s = seg.base_anchors["3-paragraphs"];
        assert_eq!(&seg.base[s.start..s.end], "3 paragraphs");
    }

    #[test]
    fn style_phrase_and_intensifier() {
        let raw = "Explain what a large language model is in a very playful way.";
        let attrs = extract(&lex(), raw);
        let seg = segment(&lex(), raw, &attrs).unwrap();
        assert_eq!(seg.base, "Explain what a large language model is.");
        assert_eq!(seg.directives["playful"], "Be very playful");
    }

    #[test]
    fn leading_imperative_clause() {
        let raw = "Be concise and explain recursion.";
        let attrs = extract(&lex(), raw);
        let seg = segment(&lex(), raw, &attrs).unwrap();
        assert_eq!(seg.base, "Explain recursion.");
        assert_eq!(seg.directives["concise"], "Be concise");
    }

    #[test]
    fn removal_that_empties_prompt_is_rejected() {
        let raw = "Be concise.";
        let attrs = extract(&lex(), raw);
        assert!(matches!(segment(&lex(), raw, &attrs), Err(ExtractError::EmptyBase)));
    }

    #[test]
    fn article_agreement_after_removal() {
        let raw = "Write an enthusiastic post about the fair.";
        let attrs = extract(&lex(), raw);
        let seg = segment(&lex(), raw, &attrs).unwrap();
        assert_eq!(seg.base, "Write a post about the fair.");
    }

    #[test]
    fn audience_options() {
        let raw = "Write an email to my boss";
        let attrs = extract(&lex(), raw);
        let opts = options(&lex(), raw, &attrs[0]);
        let texts: Vec<&str> = opts.iter().map(|o| o.text.as_str()).collect();
        assert_eq!(texts, vec!["my boss", "a peer collaborator", "a customer", "a family member"]);
    }

    #[test]
    fn comparison_options() {
        let raw = "Compare the price of iPhone 15 and Pixel 8";
        let attrs = extract(&lex(), raw);
        let opts = options(&lex(), raw, &attrs[0]);
        let labels: Vec<&str> = opts.iter().map(|o| o.value.as_str()).collect();
        for want in ["Price", "Camera", "Battery", "Design"] {
            assert!(labels.contains(&want), "{labels:?}");
        }
        assert!((MIN_OPTIONS..=MAX_OPTIONS).contains(&opts.len()));
    }
}
