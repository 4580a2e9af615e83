//! Extraction of typed answers from free-text model output.
//!
//! Labels and trading actions are found by a case-insensitive whole-word scan:
//! a match must be bounded by non-alphanumeric characters (or the ends of the
//! text). By default a trailing `s` is tolerated ("claims" matches `claim`)
//! and the earliest match in the text wins.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ParseFailure {
    #[error("no label found")]
    NoLabelFound,
    #[error("labels {0:?} match at the same position")]
    AmbiguousLabel(Vec<String>),
    #[error("no trading action found")]
    NoActionFound,
    #[error("summary is empty")]
    EmptySummary,
    #[error("invalid choices: {0}")]
    InvalidChoices(String),
}

/// Byte range `[start, end)` in the raw text.
pub type Span = (usize, usize);

/// A parse result that keeps the raw text it came from. A span is present
/// exactly when a value is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome<T> {
    result: Result<T, ParseFailure>,
    matched_span: Option<Span>,
    raw_text: String,
}

impl<T> ParseOutcome<T> {
    pub fn success(value: T, span: Span, raw_text: impl Into<String>) -> Self {
        Self {
            result: Ok(value),
            matched_span: Some(span),
            raw_text: raw_text.into(),
        }
    }

    pub fn failure(reason: ParseFailure, raw_text: impl Into<String>) -> Self {
        Self {
            result: Err(reason),
            matched_span: None,
            raw_text: raw_text.into(),
        }
    }

    pub fn result(&self) -> Result<&T, &ParseFailure> {
        self.result.as_ref()
    }

    pub fn value(&self) -> Option<&T> {
        self.result.as_ref().ok()
    }

    pub fn is_success(&self) -> bool {
        self.result.is_ok()
    }

    pub fn matched_span(&self) -> Option<Span> {
        self.matched_span
    }

    pub fn matched_text(&self) -> Option<&str> {
        self.matched_span.map(|(s, e)| &self.raw_text[s..e])
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> ParseOutcome<U> {
        ParseOutcome {
            result: self.result.map(f),
            matched_span: self.matched_span,
            raw_text: self.raw_text,
        }
    }
}

/// Canonical (lowercase) class label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(value: &str) -> Self {
        Self(value.trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TradingAction {
    Buy,
    Hold,
    Sell,
}

impl TradingAction {
    pub const ALL: [TradingAction; 3] = [TradingAction::Buy, TradingAction::Sell, TradingAction::Hold];

    /// Signed position: buy → +1, hold → 0, sell → −1.
    pub fn exposure(self) -> f64 {
        match self {
            TradingAction::Buy => 1.0,
            TradingAction::Hold => 0.0,
            TradingAction::Sell => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TradingAction::Buy => "buy",
            TradingAction::Hold => "hold",
            TradingAction::Sell => "sell",
        }
    }
}

impl fmt::Display for TradingAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    /// First occurrence in the text wins.
    #[default]
    Earliest,
    /// Last occurrence in the text wins.
    Latest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub rule: MatchRule,
    /// Accept a trailing `s` after the word.
    pub plural_tolerant: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            rule: MatchRule::Earliest,
            plural_tolerant: true,
        }
    }
}

/// Every whole-word occurrence of `word` in `text`, as byte spans. `word`
/// must already be lowercase.
fn occurrences(text: &str, word: &str, plural_tolerant: bool) -> Vec<Span> {
    let mut out = Vec::new();
    if word.is_empty() {
        return out;
    }
    let mut prev: Option<char> = None;
    for (start, c) in text.char_indices() {
        let at_boundary = prev.is_none_or(|p| !p.is_alphanumeric());
        prev = Some(c);
        if !at_boundary {
            continue;
        }
        let Some(end) = match_lowercase_prefix(&text[start..], word) else {
            continue;
        };
        let end = start + end;
        let rest = &text[end..];
        let mut next = rest.chars();
        match next.next() {
            None => out.push((start, end)),
            Some(n) if !n.is_alphanumeric() => out.push((start, end)),
            Some('s' | 'S') if plural_tolerant && next.next().is_none_or(|n| !n.is_alphanumeric()) => {
                out.push((start, end + 1))
            }
            _ => {}
        }
    }
    out
}

/// If `text` starts with `word` ignoring case, the byte length consumed.
fn match_lowercase_prefix(text: &str, word: &str) -> Option<usize> {
    let mut want = word.chars();
    let mut consumed = 0;
    let mut pending: Vec<char> = Vec::new();
    for (i, c) in text.char_indices() {
        pending.clear();
        pending.extend(c.to_lowercase());
        for lc in &pending {
            if want.next() != Some(*lc) {
                return None;
            }
        }
        consumed = i + c.len_utf8();
        if want.as_str().is_empty() {
            return Some(consumed);
        }
    }
    want.as_str().is_empty().then_some(consumed)
}

/// Finds the winning choice per `opts.rule`. Returns the index into `words`.
fn scan(raw: &str, words: &[&str], opts: MatchOptions) -> Result<(usize, Span), Option<Vec<String>>> {
    let mut best: Option<(usize, Span)> = None;
    let mut tied: Vec<usize> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let occ = occurrences(raw, w, opts.plural_tolerant);
        let candidate = match opts.rule {
            MatchRule::Earliest => occ.first(),
            MatchRule::Latest => occ.last(),
        };
        let Some(&span) = candidate else { continue };
        match best {
            None => {
                best = Some((i, span));
                tied = vec![i];
            }
            Some((_, b)) if span.0 == b.0 => tied.push(i),
            Some((_, b)) => {
                let better = match opts.rule {
                    MatchRule::Earliest => span.0 < b.0,
                    MatchRule::Latest => span.0 > b.0,
                };
                if better {
                    best = Some((i, span));
                    tied = vec![i];
                }
            }
        }
    }
    match best {
        None => Err(None),
        Some(_) if tied.len() > 1 => Err(Some(tied.iter().map(|&i| words[i].to_string()).collect())),
        Some(hit) => Ok(hit),
    }
}

pub fn parse_label(raw: &str, choices: &[String]) -> ParseOutcome<Label> {
    parse_label_with(raw, choices, MatchOptions::default())
}

pub fn parse_label_with(raw: &str, choices: &[String], opts: MatchOptions) -> ParseOutcome<Label> {
    if choices.is_empty() {
        return ParseOutcome::failure(ParseFailure::InvalidChoices("no choices".into()), raw);
    }
    let words: Vec<String> = choices.iter().map(|c| c.trim().to_lowercase()).collect();
    if words.iter().any(String::is_empty) {
        return ParseOutcome::failure(ParseFailure::InvalidChoices("empty choice".into()), raw);
    }
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    match scan(raw, &refs, opts) {
        Ok((i, span)) => ParseOutcome::success(Label(words[i].clone()), span, raw),
        Err(None) => ParseOutcome::failure(ParseFailure::NoLabelFound, raw),
        Err(Some(tied)) => ParseOutcome::failure(ParseFailure::AmbiguousLabel(tied), raw),
    }
}

pub fn parse_trading_action(raw: &str) -> ParseOutcome<TradingAction> {
    parse_trading_action_with(raw, MatchOptions::default())
}

pub fn parse_trading_action_with(raw: &str, opts: MatchOptions) -> ParseOutcome<TradingAction> {
    let words: Vec<&str> = TradingAction::ALL.iter().map(|a| a.as_str()).collect();
    match scan(raw, &words, opts) {
        Ok((i, span)) => ParseOutcome::success(TradingAction::ALL[i], span, raw),
        Err(_) => ParseOutcome::failure(ParseFailure::NoActionFound, raw),
    }
}

const ROLE_PREFIXES: [&str; 6] = [
    "### response:",
    "summary:",
    "answer:",
    "response:",
    "assistant:",
    "output:",
];

const QUOTE_PAIRS: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')];

fn strip_once(s: &str) -> &str {
    let s = s.trim();
    for p in ROLE_PREFIXES {
        if let Some(head) = s.get(..p.len()) {
            if head.eq_ignore_ascii_case(p) {
                return &s[p.len()..];
            }
        }
    }
    for (open, close) in QUOTE_PAIRS {
        if s.chars().count() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return &s[open.len_utf8()..s.len() - close.len_utf8()];
        }
    }
    s
}

/// Strips role prefixes ("Summary:", "Answer:", ...), enclosing quotes and
/// surrounding whitespace, repeatedly until nothing changes.
pub fn extract_summary(raw: &str) -> Result<String, ParseFailure> {
    let mut cur = raw;
    loop {
        let next = strip_once(cur);
        if next.len() == cur.len() {
            break;
        }
        cur = next;
    }
    if cur.is_empty() {
        Err(ParseFailure::EmptySummary)
    } else {
        Ok(cur.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cp() -> Vec<String> {
        vec!["claim".into(), "premise".into()]
    }

    #[test]
    fn label_direct_containment() {
        let out = parse_label("The answer is Premise.", &cp());
        assert_eq!(out.value(), Some(&Label::new("premise")));
        assert_eq!(out.matched_text(), Some("Premise"));
    }

    #[test]
    fn earliest_match_wins() {
        let out = parse_label("claim. No wait — premise", &cp());
        assert_eq!(out.value(), Some(&Label::new("claim")));
        let latest = parse_label_with(
            "claim. No wait — premise",
            &cp(),
            MatchOptions {
                rule: MatchRule::Latest,
                ..Default::default()
            },
        );
        assert_eq!(latest.value(), Some(&Label::new("premise")));
    }

    #[test]
    fn no_label() {
        let out = parse_label("I cannot determine this.", &cp());
        assert_eq!(out.result(), Err(&ParseFailure::NoLabelFound));
        assert_eq!(out.matched_span(), None);
        assert_eq!(out.raw_text(), "I cannot determine this.");
    }

    #[test]
    fn whole_words_only() {
        assert!(!parse_label("reclaimed premises-free", &["claim".to_string()]).is_success());
        assert!(!parse_label("claimant", &cp()).is_success());
        let out = parse_label("Claims.", &cp());
        assert_eq!(out.matched_text(), Some("Claims"));
        let strict = parse_label_with(
            "Claims.",
            &cp(),
            MatchOptions {
                plural_tolerant: false,
                ..Default::default()
            },
        );
        assert!(!strict.is_success());
        assert!(parse_label("(claim)", &cp()).is_success());
        assert!(parse_label("**PREMISE**", &cp()).is_success());
    }

    #[test]
    fn overlapping_choices_are_ambiguous() {
        let choices = vec!["claim".to_string(), "claims".to_string()];
        assert!(matches!(
            parse_label("claims", &choices).result(),
            Err(ParseFailure::AmbiguousLabel(_))
        ));
    }

    #[test]
    fn multibyte_text_spans() {
        let raw = "Ünïcode → PREMISE ✓";
        let out = parse_label(raw, &cp());
        assert_eq!(out.matched_text(), Some("PREMISE"));
        // 'İ' lowercases to two chars; must not panic or misalign
        assert!(!parse_label("İİİ", &cp()).is_success());
    }

    #[test]
    fn trading_actions() {
        assert_eq!(
            parse_trading_action("Decision: BUY because momentum...").value(),
            Some(&TradingAction::Buy)
        );
        assert_eq!(parse_trading_action("hold").value(), Some(&TradingAction::Hold));
        assert_eq!(
            parse_trading_action("The stock looks risky.").result(),
            Err(&ParseFailure::NoActionFound)
        );
        assert_eq!(TradingAction::Sell.exposure(), -1.0);
    }

    #[test]
    fn summaries() {
        assert_eq!(extract_summary("Summary: Profits rose 10%.").unwrap(), "Profits rose 10%.");
        assert_eq!(extract_summary("Profits rose.").unwrap(), "Profits rose.");
        assert_eq!(extract_summary("   "), Err(ParseFailure::EmptySummary));
        assert_eq!(
            extract_summary("  ANSWER: \"Summary: Shares fell.\"\n").unwrap(),
            "Shares fell."
        );
        assert_eq!(extract_summary("“Quoted”").unwrap(), "Quoted");
        assert_eq!(extract_summary("\""), Ok("\"".to_string()));
        assert_eq!(extract_summary("Summary:"), Err(ParseFailure::EmptySummary));
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{3,8}"
    }

    proptest! {
        #[test]
        fn single_occurrence_always_found(
            choices in proptest::collection::hash_set(word(), 2..5),
            pick in any::<prop::sample::Index>(),
            before in "[ .,!?a-zA-Z0-9]{0,30}",
            after in "[ .,!?a-zA-Z0-9]{0,30}",
            upper in any::<bool>(),
        ) {
            let choices: Vec<String> = choices.into_iter().collect();
            let target = choices[pick.index(choices.len())].clone();
            let shown = if upper { target.to_uppercase() } else { target.clone() };
            let raw = format!("{before} {shown} {after}");
            let occurrences_of_choices: usize = choices
                .iter()
                .map(|c| occurrences(&raw, c, true).len())
                .sum();
            prop_assume!(occurrences_of_choices == 1);
            let out = parse_label(&raw, &choices);
            prop_assert_eq!(out.value(), Some(&Label::new(&target)));
        }

        #[test]
        fn extract_summary_idempotent(s in "[ \"'“”‘’a-zA-Z:.#]{0,40}") {
            if let Ok(once) = extract_summary(&s) {
                prop_assert_eq!(extract_summary(&once), Ok(once.clone()));
            }
        }
    }
}
