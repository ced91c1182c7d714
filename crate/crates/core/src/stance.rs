//! Canonical answer categories and the label spaces datasets declare.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A survey answer in canonical form.
///
/// The letter codes are fixed: `A` is Yes, `B` is No, `C` is Neutral. They
/// match the legend shown to the agent in the system prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stance {
    Yes,
    No,
    Neutral,
}

impl Stance {
    /// Canonical order, also used to break ties (Yes before No before Neutral).
    pub const ALL: [Stance; 3] = [Stance::Yes, Stance::No, Stance::Neutral];

    pub fn letter(self) -> char {
        match self {
            Stance::Yes => 'A',
            Stance::No => 'B',
            Stance::Neutral => 'C',
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stance::Yes => "Yes",
            Stance::No => "No",
            Stance::Neutral => "Neutral",
        }
    }

    pub fn from_letter(c: char) -> Option<Stance> {
        match c.to_ascii_uppercase() {
            'A' => Some(Stance::Yes),
            'B' => Some(Stance::No),
            'C' => Some(Stance::Neutral),
            _ => None,
        }
    }

    /// Case-insensitive match on the bare label word.
    pub fn from_label(word: &str) -> Option<Stance> {
        Stance::ALL
            .into_iter()
            .find(|s| s.label().eq_ignore_ascii_case(word))
    }

    /// Position in [`Stance::ALL`].
    pub fn index(self) -> usize {
        match self {
            Stance::Yes => 0,
            Stance::No => 1,
            Stance::Neutral => 2,
        }
    }

    /// Yes and No swap; Neutral has no opposite.
    pub fn flipped(self) -> Option<Stance> {
        match self {
            Stance::Yes => Some(Stance::No),
            Stance::No => Some(Stance::Yes),
            Stance::Neutral => None,
        }
    }

    /// The `A) Yes` shape requested by the system prompt.
    pub fn coded(self) -> String {
        format!("{}) {}", self.letter(), self.label())
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Some(st) = Stance::from_label(t) {
            return Ok(st);
        }
        let mut chars = t.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if let Some(st) = Stance::from_letter(c) {
                return Ok(st);
            }
        }
        Err(format!("unknown stance token {t:?}"))
    }
}

/// The set of stances a dataset may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Stance>", into = "Vec<Stance>")]
pub enum LabelSpace {
    /// `{Yes, No}`
    Binary,
    /// `{Yes, No, Neutral}`
    Ternary,
}

impl LabelSpace {
    pub fn stances(self) -> &'static [Stance] {
        match self {
            LabelSpace::Binary => &Stance::ALL[..2],
            LabelSpace::Ternary => &Stance::ALL,
        }
    }

    pub fn len(self) -> usize {
        self.stances().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn contains(self, s: Stance) -> bool {
        self.stances().contains(&s)
    }
}

impl TryFrom<Vec<Stance>> for LabelSpace {
    type Error = String;

    fn try_from(mut v: Vec<Stance>) -> Result<Self, Self::Error> {
        v.sort();
        v.dedup();
        match v.as_slice() {
            [Stance::Yes, Stance::No] => Ok(LabelSpace::Binary),
            [Stance::Yes, Stance::No, Stance::Neutral] => Ok(LabelSpace::Ternary),
            other => Err(format!("unsupported label space {other:?}")),
        }
    }
}

impl From<LabelSpace> for Vec<Stance> {
    fn from(s: LabelSpace) -> Self {
        s.stances().to_vec()
    }
}
