//! Constrained-choice parsing of model output.
//!
//! Text and labels are case-folded, stripped of accents and reduced to word
//! tokens. A response matches an option when it equals the option label, or
//! failing that when exactly one option's label occurs in it as a whole-word
//! sequence. An occurrence nested inside a longer matching label ("accurato"
//! inside "piuttosto accurato") does not count.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::criteria::{AnswerSchema, AnswerValue, SchemaKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("RESPONSE_UNPARSEABLE: no option found in response")]
    Unparseable,
    #[error("RESPONSE_AMBIGUOUS: response names several options ({})", .0.join(", "))]
    Ambiguous(Vec<String>),
    #[error("SUBANSWER_MISSING: affirmative answer without an issue")]
    SubanswerMissing,
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Unparseable => "RESPONSE_UNPARSEABLE",
            ParseError::Ambiguous(_) => "RESPONSE_AMBIGUOUS",
            ParseError::SubanswerMissing => "SUBANSWER_MISSING",
        }
    }
}

/// A parsed answer; `sub_answer` is only set for compound schemas.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub answer: AnswerValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_answer: Option<AnswerValue>,
}

/// Case-folds, strips accents and splits into alphanumeric word tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let folded: String = text
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    folded.split_whitespace().map(str::to_string).collect()
}

fn occurrences(haystack: &[String], needle: &[String]) -> Vec<(usize, usize)> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()] == *needle)
        .map(|i| (i, i + needle.len()))
        .collect()
}

fn match_single(raw: &str, schema: &AnswerSchema, language: &str) -> Result<AnswerValue, ParseError> {
    let text = normalize_tokens(raw);
    // every option is known by its canonical and its localized label
    let forms: Vec<(usize, Vec<String>)> = schema
        .options
        .iter()
        .enumerate()
        .flat_map(|(i, o)| {
            let mut labels = vec![normalize_tokens(&o.label)];
            let local = normalize_tokens(o.display_label(language));
            if !labels.contains(&local) {
                labels.push(local);
            }
            labels.into_iter().map(move |l| (i, l))
        })
        .collect();

    if let Some((i, _)) = forms.iter().find(|(_, l)| *l == text) {
        return Ok(AnswerValue::new(&schema.options[*i].label));
    }

    let spans: Vec<(usize, (usize, usize))> = forms
        .iter()
        .flat_map(|(i, l)| occurrences(&text, l).into_iter().map(move |s| (*i, s)))
        .collect();
    let standalone = |(option, (start, end)): &(usize, (usize, usize))| {
        !spans.iter().any(|(other, (s, e))| {
            other != option && *s <= *start && *end <= *e && (e - s) > (end - start)
        })
    };
    let mut matched: Vec<usize> = spans.iter().filter(|s| standalone(s)).map(|(i, _)| *i).collect();
    matched.sort_unstable();
    matched.dedup();
    match matched.as_slice() {
        [] => Err(ParseError::Unparseable),
        [only] => Ok(AnswerValue::new(&schema.options[*only].label)),
        many => Err(ParseError::Ambiguous(
            many.iter().map(|i| schema.options[*i].label.clone()).collect(),
        )),
    }
}

/// Parses a raw response against `schema`; compound schemas are parsed head
/// first, then the issue when the head is affirmative.
pub fn parse_response(raw: &str, schema: &AnswerSchema, language: &str) -> Result<ParsedAnswer, ParseError> {
    let answer = match_single(raw, schema, language)?;
    let sub_answer = match (&schema.kind, &schema.sub_schema) {
        (SchemaKind::Compound, Some(sub)) if Some(&answer) == schema.affirmative().as_ref() => {
            match match_single(raw, sub, language) {
                Ok(issue) => Some(issue),
                Err(ParseError::Unparseable) => return Err(ParseError::SubanswerMissing),
                Err(e) => return Err(e),
            }
        }
        _ => None,
    };
    Ok(ParsedAnswer { answer, sub_answer })
}
