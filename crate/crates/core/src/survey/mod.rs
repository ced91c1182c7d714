//! Survey datasets in canonical form: loading, validation, recoding,
//! splitting and answer inversion.

mod groups;
mod recode;
mod split;

pub use groups::{anes_ideologies, assign_group, parties};
pub use recode::{collapse_likert, recode_anes, recode_item};
pub use split::{split_random, split_topic_stratified, Split, SplitStrategy};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stance::{LabelSpace, Stance};

/// Number of smartvote policy topics.
pub const SMARTVOTE_TOPICS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Survey {
    Smartvote,
    #[serde(alias = "WoM")]
    Wom,
    #[serde(alias = "ANES")]
    Anes,
}

impl Survey {
    pub fn name(self) -> &'static str {
        match self {
            Survey::Smartvote => "smartvote",
            Survey::Wom => "wom",
            Survey::Anes => "anes",
        }
    }

    pub fn country(self) -> Country {
        match self {
            Survey::Smartvote => Country::CH,
            Survey::Wom => Country::DE,
            Survey::Anes => Country::US,
        }
    }
}

impl fmt::Display for Survey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Survey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smartvote" => Ok(Survey::Smartvote),
            "wom" | "wahl-o-mat" => Ok(Survey::Wom),
            "anes" => Ok(Survey::Anes),
            other => Err(Error::Config(format!("unknown survey {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecodingScheme {
    None,
    Conservative,
    Aggressive,
}

impl RecodingScheme {
    /// Key of this scheme's table in `Question::scheme_maps`.
    pub fn key(self) -> &'static str {
        match self {
            RecodingScheme::None => "none",
            RecodingScheme::Conservative => "conservative",
            RecodingScheme::Aggressive => "aggressive",
        }
    }
}

impl std::str::FromStr for RecodingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(RecodingScheme::None),
            "conservative" => Ok(RecodingScheme::Conservative),
            "aggressive" => Ok(RecodingScheme::Aggressive),
            other => Err(Error::Config(format!("unknown recoding scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Candidate,
    Party,
    Respondent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Country {
    CH,
    DE,
    US,
}

impl Country {
    pub fn code(self) -> &'static str {
        match self {
            Country::CH => "CH",
            Country::DE => "DE",
            Country::US => "US",
        }
    }

    /// Substituted for `[NATIONALITY]` in the system prompt.
    pub fn nationality(self) -> &'static str {
        match self {
            Country::CH => "Swiss",
            Country::DE => "German",
            Country::US => "US",
        }
    }

    /// Substituted for `[COUNTRY]` in the argument-generation prompt.
    pub fn name(self) -> &'static str {
        match self {
            Country::CH => "Switzerland",
            Country::DE => "Germany",
            Country::US => "the USA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Left,
    Center,
    Right,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Left, Group::Center, Group::Right];

    pub fn name(self) -> &'static str {
        match self {
            Group::Left => "Left",
            Group::Center => "Center",
            Group::Right => "Right",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A policy item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default)]
    pub raw_options: Vec<String>,
    /// scheme key -> stance per option (1-based option `i` at index `i - 1`).
    #[serde(default)]
    pub scheme_maps: BTreeMap<String, Vec<Stance>>,
}

/// One persona: a candidate, party or respondent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitProfile {
    pub unit_id: String,
    pub kind: UnitKind,
    pub country: Country,
    pub party_or_ideology: String,
    /// Filled from the group tables on load; a value present in the file
    /// must agree with the lookup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    #[serde(default)]
    pub responses: BTreeMap<String, Stance>,
    /// 1-based raw option indices, kept so the dataset can be recoded.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub raw_responses: BTreeMap<String, usize>,
    /// Free-text position explanations (Wahl-o-Mat), keyed by question id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub comments: BTreeMap<String, String>,
}

impl UnitProfile {
    pub fn group(&self) -> Group {
        self.group.expect("group is assigned on load")
    }

    pub fn response(&self, question_id: &str) -> Option<Stance> {
        self.responses.get(question_id).copied()
    }
}

/// A validated dataset. Immutable after load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetFile", into = "DatasetFile")]
pub struct Dataset {
    pub survey: Survey,
    pub label_space: LabelSpace,
    pub recoding_scheme: RecodingScheme,
    pub questions: Vec<Question>,
    pub units: Vec<UnitProfile>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    survey: Survey,
    label_space: LabelSpace,
    recoding_scheme: RecodingScheme,
    questions: Vec<Question>,
    units: Vec<UnitProfile>,
}

impl TryFrom<DatasetFile> for Dataset {
    type Error = Error;

    fn try_from(f: DatasetFile) -> Result<Self> {
        Dataset::new(f.survey, f.label_space, f.recoding_scheme, f.questions, f.units)
    }
}

impl From<Dataset> for DatasetFile {
    fn from(d: Dataset) -> Self {
        DatasetFile {
            survey: d.survey,
            label_space: d.label_space,
            recoding_scheme: d.recoding_scheme,
            questions: d.questions,
            units: d.units,
        }
    }
}

impl Dataset {
    /// Validates and assembles a dataset, assigning ideology groups.
    pub fn new(
        survey: Survey,
        label_space: LabelSpace,
        recoding_scheme: RecodingScheme,
        questions: Vec<Question>,
        mut units: Vec<UnitProfile>,
    ) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Load("no units".into()));
        }
        if questions.is_empty() {
            return Err(Error::Load("no questions".into()));
        }
        let mut index = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            if index.insert(q.id.clone(), i).is_some() {
                return Err(Error::Load(format!("duplicate question id {:?}", q.id)));
            }
            for (scheme, table) in &q.scheme_maps {
                if !q.raw_options.is_empty() && table.len() != q.raw_options.len() {
                    return Err(Error::Load(format!(
                        "question {}: {scheme} table has {} entries for {} options",
                        q.id,
                        table.len(),
                        q.raw_options.len()
                    )));
                }
                if let Some(bad) = table.iter().find(|s| !label_space.contains(**s)) {
                    return Err(Error::Load(format!(
                        "question {}: {scheme} table maps to {bad}, outside the label space",
                        q.id
                    )));
                }
            }
        }
        if survey == Survey::Smartvote {
            let mut topics = BTreeSet::new();
            for q in &questions {
                match &q.topic {
                    Some(t) if !t.trim().is_empty() => {
                        topics.insert(t.as_str());
                    }
                    _ => return Err(Error::Load(format!("smartvote question {} has no topic", q.id))),
                }
            }
            if topics.len() > SMARTVOTE_TOPICS {
                return Err(Error::Load(format!(
                    "smartvote has {} topics, expected at most {SMARTVOTE_TOPICS}",
                    topics.len()
                )));
            }
        }

        let mut seen = BTreeSet::new();
        for u in &mut units {
            if !seen.insert(u.unit_id.clone()) {
                return Err(Error::Load(format!("duplicate unit id {:?}", u.unit_id)));
            }
            let looked_up = assign_group(u.country, &u.party_or_ideology)
                .map_err(|e| Error::Load(format!("unit {}: {e}", u.unit_id)))?;
            match u.group {
                Some(g) if g != looked_up => {
                    return Err(Error::Load(format!(
                        "unit {}: group {g} disagrees with lookup {looked_up}",
                        u.unit_id
                    )))
                }
                _ => u.group = Some(looked_up),
            }
            for (qid, stance) in &u.responses {
                if !index.contains_key(qid) {
                    return Err(Error::Load(format!(
                        "unit {}: response to unknown question id {qid:?}",
                        u.unit_id
                    )));
                }
                if !label_space.contains(*stance) {
                    return Err(Error::Load(format!(
                        "unit {}: stance {stance} on {qid} outside the label space",
                        u.unit_id
                    )));
                }
            }
            for (qid, raw) in &u.raw_responses {
                let Some(&qi) = index.get(qid) else {
                    return Err(Error::Load(format!(
                        "unit {}: raw response to unknown question id {qid:?}",
                        u.unit_id
                    )));
                };
                if recoding_scheme == RecodingScheme::None && questions[qi].scheme_maps.is_empty() {
                    continue;
                }
                let recoded = recode_item(&questions[qi], *raw, recoding_scheme)?;
                if let Some(stance) = u.responses.get(qid) {
                    if *stance != recoded {
                        return Err(Error::Load(format!(
                            "unit {}: response {stance} on {qid} disagrees with raw option {raw} ({recoded})",
                            u.unit_id
                        )));
                    }
                }
            }
        }
        Ok(Dataset {
            survey,
            label_space,
            recoding_scheme,
            questions,
            units,
            index,
        })
    }

    /// Reads a canonical dataset file; `survey`, when given, must match the file.
    pub fn load(path: impl AsRef<Path>, survey: Option<Survey>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        let d = Self::from_json(&text)?;
        if let Some(s) = survey {
            if s != d.survey {
                return Err(Error::Load(format!(
                    "{}: file declares survey {}, expected {s}",
                    path.display(),
                    d.survey
                )));
            }
        }
        Ok(d)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::Load(e.to_string()))?;
        Dataset::try_from(file)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.index.get(id).map(|&i| &self.questions[i])
    }

    pub fn unit(&self, unit_id: &str) -> Option<&UnitProfile> {
        self.units.iter().find(|u| u.unit_id == unit_id)
    }

    pub fn country(&self) -> Country {
        self.survey.country()
    }

    /// Recomputes every response from the raw option indices under `scheme`.
    pub fn recoded(&self, scheme: RecodingScheme) -> Result<Dataset> {
        let mut units = self.units.clone();
        for u in &mut units {
            if u.raw_responses.is_empty() {
                return Err(Error::Recode(format!(
                    "unit {} carries no raw responses to recode",
                    u.unit_id
                )));
            }
            let mut responses = BTreeMap::new();
            for (qid, raw) in &u.raw_responses {
                let q = self.question(qid).expect("validated on load");
                responses.insert(qid.clone(), recode_item(q, *raw, scheme)?);
            }
            u.responses = responses;
        }
        Dataset::new(self.survey, self.label_space, scheme, self.questions.clone(), units)
    }

    /// Counterfactual dataset with every Yes and No swapped.
    pub fn invert_answers(&self) -> Result<Dataset> {
        if self.label_space != LabelSpace::Binary {
            return Err(Error::Unsupported(format!(
                "answer inversion needs a binary label space; {} is ternary",
                self.survey
            )));
        }
        let mut out = self.clone();
        for u in &mut out.units {
            for s in u.responses.values_mut() {
                *s = s.flipped().expect("binary stances flip");
            }
            // Raw indices no longer describe the inverted answers.
            u.raw_responses.clear();
        }
        Ok(out)
    }
}

/// Free-function form of [`Dataset::load`].
pub fn load_dataset(path: impl AsRef<Path>, survey: Survey) -> Result<Dataset> {
    Dataset::load(path, Some(survey))
}

/// Free-function form of [`Dataset::invert_answers`].
pub fn invert_answers(dataset: &Dataset) -> Result<Dataset> {
    dataset.invert_answers()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn question(id: &str, topic: Option<&str>) -> Question {
        Question {
            id: id.into(),
            text: format!("Should the state fund {id}?"),
            topic: topic.map(str::to_string),
            raw_options: Vec::new(),
            scheme_maps: BTreeMap::new(),
        }
    }

    pub fn unit(id: &str, country: Country, party: &str, responses: &[(&str, Stance)]) -> UnitProfile {
        UnitProfile {
            unit_id: id.into(),
            kind: UnitKind::Candidate,
            country,
            party_or_ideology: party.into(),
            group: None,
            responses: responses.iter().map(|(q, s)| (q.to_string(), *s)).collect(),
            raw_responses: BTreeMap::new(),
            comments: BTreeMap::new(),
        }
    }

    /// 12 topics x 5 questions, 18 candidates with alternating answers.
    pub fn smartvote() -> Dataset {
        let mut questions = Vec::new();
        for t in 0..12 {
            for k in 0..5 {
                questions.push(question(&format!("q{t:02}_{k}"), Some(&format!("topic{t:02}"))));
            }
        }
        let parties = ["SVP", "SP", "FDP", "The Center", "Green Party", "GLP"];
        let mut units = Vec::new();
        for (pi, p) in parties.iter().enumerate() {
            for c in 0..3 {
                let responses: Vec<(String, Stance)> = questions
                    .iter()
                    .enumerate()
                    .map(|(i, q)| {
                        let yes = (i + pi + c) % 3 != 0;
                        (q.id.clone(), if yes { Stance::Yes } else { Stance::No })
                    })
                    .collect();
                let r: Vec<(&str, Stance)> = responses.iter().map(|(q, s)| (q.as_str(), *s)).collect();
                units.push(unit(&format!("{p}-{c}"), Country::CH, p, &r));
            }
        }
        Dataset::new(Survey::Smartvote, LabelSpace::Binary, RecodingScheme::None, questions, units).unwrap()
    }
}
