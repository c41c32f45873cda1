//! Country and political-position labels, and the combined content level
//! used by the topic model.
//!
//! Content levels are enumerated country-major: `level = country * 3 + pos`
//! with positions ordered Left, Center, Right.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_COUNTRIES: [&str; 8] = [
    "belgium",
    "france",
    "germany",
    "italy",
    "netherlands",
    "poland",
    "slovenia",
    "spain",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolPos {
    Left,
    Center,
    Right,
}

impl PolPos {
    pub const ALL: [PolPos; 3] = [PolPos::Left, PolPos::Center, PolPos::Right];

    pub fn index(self) -> usize {
        match self {
            PolPos::Left => 0,
            PolPos::Center => 1,
            PolPos::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolPos::Left => "left",
            PolPos::Center => "center",
            PolPos::Right => "right",
        }
    }
}

impl fmt::Display for PolPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered set of country codes. The first entry is the reference level of
/// the prevalence design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountrySet {
    names: Vec<String>,
}

impl Default for CountrySet {
    fn default() -> Self {
        Self {
            names: DEFAULT_COUNTRIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CountrySet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let names: Vec<String> = names.into_iter().map(|s| s.as_ref().trim().to_lowercase()).collect();
        if names.is_empty() {
            return Err(Error::Config("country set is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::Config("empty country code".into()));
            }
            if names[..i].contains(n) {
                return Err(Error::Config(format!("country '{n}' listed twice")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// Case-insensitive lookup.
    pub fn index_of(&self, code: &str) -> Option<usize> {
        let code = code.trim();
        self.names.iter().position(|n| n.eq_ignore_ascii_case(code))
    }

    pub fn n_levels(&self) -> usize {
        self.names.len() * 3
    }

    pub fn level(&self, country: usize, pos: PolPos) -> usize {
        country * 3 + pos.index()
    }

    pub fn level_label(&self, level: usize) -> String {
        let g = GroupLabel::from_level(level);
        format!("{}_{}", self.names[g.country], g.pol_pos)
    }

    pub fn level_labels(&self) -> Vec<String> {
        (0..self.n_levels()).map(|l| self.level_label(l)).collect()
    }

    pub fn parse_level(&self, label: &str) -> Result<usize> {
        let (c, p) = label
            .rsplit_once('_')
            .ok_or_else(|| Error::UnknownLevel(label.to_string()))?;
        let country = self.index_of(c).ok_or_else(|| Error::UnknownLevel(label.to_string()))?;
        let pos = PolPos::ALL
            .iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(p))
            .ok_or_else(|| Error::UnknownLevel(label.to_string()))?;
        Ok(self.level(country, *pos))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupLabel {
    pub country: usize,
    pub pol_pos: PolPos,
}

impl GroupLabel {
    pub fn new(country: usize, pol_pos: PolPos) -> Self {
        Self { country, pol_pos }
    }

    pub fn content_level(&self) -> usize {
        self.country * 3 + self.pol_pos.index()
    }

    pub fn from_level(level: usize) -> Self {
        Self {
            country: level / 3,
            pol_pos: PolPos::from_index(level % 3).expect("level % 3 < 3"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_enumeration_is_country_major() {
        let cs = CountrySet::default();
        assert_eq!(cs.n_levels(), 24);
        assert_eq!(GroupLabel::new(0, PolPos::Left).content_level(), 0);
        assert_eq!(GroupLabel::new(1, PolPos::Right).content_level(), 5);
        assert_eq!(GroupLabel::new(7, PolPos::Right).content_level(), 23);
        for l in 0..24 {
            assert_eq!(GroupLabel::from_level(l).content_level(), l);
        }
        assert_eq!(cs.level_label(4), "france_center");
        assert_eq!(cs.parse_level("France_Center").unwrap(), 4);
    }

    #[test]
    fn rejects_duplicates() {
        assert!(CountrySet::new(["a", "A"]).is_err());
        assert!(CountrySet::new(Vec::<String>::new()).is_err());
    }
}
