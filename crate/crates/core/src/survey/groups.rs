//! Left / Center / Right assignment for parties and ideology self-placements.

use crate::error::{Error, Result};
use crate::survey::{Country, Group};

// Keyed by (country, party) so that the Swiss and German FDP resolve differently.
const SWISS_PARTIES: &[(&[&str], Group)] = &[
    (&["SVP", "SVP/UDC", "Swiss People's Party"], Group::Right),
    (&["SP", "SP/PS", "Social Democratic Party"], Group::Left),
    (&["FDP", "FDP.The Liberals", "FDP/PLR"], Group::Right),
    (&["The Center", "Die Mitte", "Mitte", "Centre", "The Centre"], Group::Center),
    (&["Green Party", "Greens", "GPS", "Grüne"], Group::Left),
    (&["GLP", "Green Liberal Party", "glp"], Group::Center),
];

const GERMAN_PARTIES: &[(&[&str], Group)] = &[
    (&["CDU/CSU", "CDU", "CSU", "Union"], Group::Right),
    (&["SPD"], Group::Center),
    (&["Grüne", "GRÜNE", "Gruene", "Bündnis 90/Die Grünen", "Greens"], Group::Left),
    (&["FDP"], Group::Center),
    (&["Die Linke", "DIE LINKE", "Linke"], Group::Left),
    (&["AfD"], Group::Right),
];

const ANES_IDEOLOGY: &[(&str, Group)] = &[
    ("Extremely liberal", Group::Left),
    ("Liberal", Group::Left),
    ("Slightly liberal", Group::Center),
    ("Moderate", Group::Center),
    ("Slightly conservative", Group::Center),
    ("Conservative", Group::Right),
    ("Extremely conservative", Group::Right),
];

/// The seven ANES self-placement answers, most liberal first.
pub fn anes_ideologies() -> impl Iterator<Item = &'static str> {
    ANES_IDEOLOGY.iter().map(|(name, _)| *name)
}

/// Canonical party names per country, in table order.
pub fn parties(country: Country) -> Vec<&'static str> {
    let table = match country {
        Country::CH => SWISS_PARTIES,
        Country::DE => GERMAN_PARTIES,
        Country::US => return Vec::new(),
    };
    table.iter().map(|(names, _)| names[0]).collect()
}

/// Resolves a party (CH, DE) or an ideology self-placement (US) to its group.
pub fn assign_group(country: Country, party_or_ideology: &str) -> Result<Group> {
    let key = party_or_ideology.trim();
    let hit = match country {
        Country::CH => lookup_party(SWISS_PARTIES, key),
        Country::DE => lookup_party(GERMAN_PARTIES, key),
        Country::US => ANES_IDEOLOGY
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(key))
            .map(|(_, g)| *g),
    };
    hit.ok_or_else(|| {
        Error::Mapping(format!(
            "no group for {key:?} in country {}",
            country.code()
        ))
    })
}

fn lookup_party(table: &[(&[&str], Group)], key: &str) -> Option<Group> {
    table
        .iter()
        .find(|(names, _)| names.iter().any(|n| n.eq_ignore_ascii_case(key)))
        .map(|(_, g)| *g)
}
