//! The tagged output schema `<reasoning>…</reasoning><answer>…</answer>`.
//!
//! Tag scoring: tags are checked in schema order. A tag scores when it
//! occurs exactly once in the text and after the previously scored tag;
//! the first tag that fails ends the count, so only the contiguous valid
//! prefix of the schema is credited.
//!
//! Body extraction is independent of scoring. The answer body runs from the
//! last `<answer>` to the first `</answer>` after it; the reasoning body runs
//! from the first `<reasoning>` to the last `</reasoning>` before that answer.
//! This makes `parse(render(r, s))` recover `r` even when `r` itself contains
//! tag strings.

use serde::{Deserialize, Serialize};

use crate::stance::{LabelSpace, Stance};

pub const REASONING_OPEN: &str = "<reasoning>";
pub const REASONING_CLOSE: &str = "</reasoning>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

pub const TAGS: [&str; 4] = [REASONING_OPEN, REASONING_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseResult {
    /// Per tag, in schema order: did it score.
    pub tags_found: [bool; 4],
    pub reasoning_body: Option<String>,
    pub answer_body: Option<String>,
    /// `None` when no stance could be resolved.
    pub stance: Option<Stance>,
}

impl ParseResult {
    pub fn tag_count(&self) -> u8 {
        self.tags_found.iter().filter(|b| **b).count() as u8
    }

    pub fn is_well_formed(&self) -> bool {
        self.tag_count() == 4
    }
}

/// Renders a completion in the schema. Nothing is escaped.
pub fn render(reasoning: &str, stance: Stance) -> String {
    format!(
        "{REASONING_OPEN}{reasoning}{REASONING_CLOSE}{ANSWER_OPEN}{}{ANSWER_CLOSE}",
        stance.coded()
    )
}

/// Parses against the full ternary label space. Total: never panics.
pub fn parse(text: &str) -> ParseResult {
    parse_in(text, LabelSpace::Ternary)
}

/// Parses, resolving the stance only within `space`.
pub fn parse_in(text: &str, space: LabelSpace) -> ParseResult {
    let tags_found = score_tags(text);

    let answer = text.rfind(ANSWER_OPEN).and_then(|open| {
        let start = open + ANSWER_OPEN.len();
        text[start..]
            .find(ANSWER_CLOSE)
            .map(|len| (open, &text[start..start + len]))
    });
    let limit = text.rfind(ANSWER_OPEN).unwrap_or(text.len());
    let reasoning = text.find(REASONING_OPEN).and_then(|open| {
        let start = open + REASONING_OPEN.len();
        if start > limit {
            return None;
        }
        text[start..limit]
            .rfind(REASONING_CLOSE)
            .map(|len| &text[start..start + len])
    });

    let answer_body = answer.map(|(_, body)| body.to_string());
    let stance = answer_body
        .as_deref()
        .and_then(|b| extract_stance(b, space));
    ParseResult {
        tags_found,
        reasoning_body: reasoning.map(str::to_string),
        answer_body,
        stance,
    }
}

fn score_tags(text: &str) -> [bool; 4] {
    let mut found = [false; 4];
    let mut cursor = 0;
    for (i, tag) in TAGS.iter().enumerate() {
        let mut hits = text.match_indices(tag);
        let (Some((pos, _)), None) = (hits.next(), hits.next()) else {
            break;
        };
        if pos < cursor {
            break;
        }
        found[i] = true;
        cursor = pos + tag.len();
    }
    found
}

/// Resolves a stance from an answer body.
///
/// A leading letter code (`A`, `A)`, `A) Yes`) wins; otherwise the first
/// bare label word. A stance outside `space` is unresolved.
pub fn extract_stance(answer_body: &str, space: LabelSpace) -> Option<Stance> {
    let is_sep = |c: char| !c.is_alphanumeric();
    let mut words = answer_body.split(is_sep).filter(|w| !w.is_empty());
    let first = words.next()?;

    let found = if first.chars().count() == 1 {
        first
            .chars()
            .next()
            .and_then(Stance::from_letter)
            .or_else(|| Stance::from_label(first))
    } else {
        None
    };
    let found = found.or_else(|| {
        std::iter::once(first)
            .chain(answer_body.split(is_sep).filter(|w| !w.is_empty()).skip(1))
            .find_map(Stance::from_label)
    });
    found.filter(|s| space.contains(*s))
}
