//! Mapping raw answer options to stances.
//!
//! Per-item recoding tables live in the dataset file (`scheme_maps`), so a
//! new scheme is a data change. The functions here only look tables up.

use crate::error::{Error, Result};
use crate::stance::Stance;
use crate::survey::{Question, RecodingScheme};

/// Collapses a four-point Likert answer to a binary stance.
pub fn collapse_likert(option: &str) -> Result<Stance> {
    match option.trim().to_ascii_lowercase().as_str() {
        "yes" | "rather yes" => Ok(Stance::Yes),
        "rather no" | "no" => Ok(Stance::No),
        other => Err(Error::Recode(format!("not a 4-point Likert option: {other:?}"))),
    }
}

/// Maps a 1-based option index to a stance under `scheme`.
pub fn recode_item(question: &Question, chosen_index: usize, scheme: RecodingScheme) -> Result<Stance> {
    let table = question.scheme_maps.get(scheme.key()).ok_or_else(|| {
        Error::Recode(format!(
            "question {}: no {:?} table",
            question.id,
            scheme.key()
        ))
    })?;
    if chosen_index == 0 || chosen_index > table.len() {
        return Err(Error::Recode(format!(
            "question {}: option {chosen_index} out of range 1..={}",
            question.id,
            table.len()
        )));
    }
    Ok(table[chosen_index - 1])
}

/// ANES recoding; identical to [`recode_item`] but named for the survey it serves.
pub fn recode_anes(question: &Question, chosen_index: usize, scheme: RecodingScheme) -> Result<Stance> {
    recode_item(question, chosen_index, scheme)
}
