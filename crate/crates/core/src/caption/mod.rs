//! Caption enumeration for counterfactual sets.
//!
//! A caption is `<prefix> <attribute 1> <attribute 2> <subject>`. All captions
//! that share a prefix and a subject, and span the cross product of two
//! attribute sets, form one [`CounterfactualSet`]. Neutral prompts drop both
//! attribute slots and are used as retrieval queries.

mod census;
mod config;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::content_id;

pub use census::{dataset_census, Census, CensusRow, CENSUS_HEADER};
pub use config::{CategoryPair, Configuration, DuplicatePolicy};

const ID_NAMESPACE: &str = "cfprobe/caption/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeCategory {
    Gender,
    Race,
    Religion,
    Physical,
}

impl AttributeCategory {
    pub const ALL: [AttributeCategory; 4] = [
        AttributeCategory::Gender,
        AttributeCategory::Race,
        AttributeCategory::Religion,
        AttributeCategory::Physical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeCategory::Gender => "gender",
            AttributeCategory::Race => "race",
            AttributeCategory::Religion => "religion",
            AttributeCategory::Physical => "physical",
        }
    }
}

impl fmt::Display for AttributeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributeCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(AttributeCategory::Gender),
            "race" => Ok(AttributeCategory::Race),
            "religion" => Ok(AttributeCategory::Religion),
            "physical" | "physical_characteristics" => Ok(AttributeCategory::Physical),
            other => Err(Error::Config(format!(
                "unknown attribute category `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeValue {
    pub category: AttributeCategory,
    pub label: String,
}

/// The ordered values of one attribute category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSet {
    category: AttributeCategory,
    labels: Vec<String>,
}

impl AttributeSet {
    pub fn new<S: Into<String>>(
        category: AttributeCategory,
        labels: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Config(format!(
                "attribute set `{category}` is empty"
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.trim().is_empty() {
                return Err(Error::Config(format!(
                    "empty label in attribute set `{category}`"
                )));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate label `{label}` in attribute set `{category}`"
                )));
            }
        }
        Ok(AttributeSet { category, labels })
    }

    pub fn category(&self) -> AttributeCategory {
        self.category
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = AttributeValue> + '_ {
        self.labels.iter().map(|label| AttributeValue {
            category: self.category,
            label: label.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Occupation,
    PersonalityTrait,
}

impl SubjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubjectKind::Occupation => "occupation",
            SubjectKind::PersonalityTrait => "personality_trait",
        }
    }
}

impl fmt::Display for SubjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "occupation" => Ok(SubjectKind::Occupation),
            "personality_trait" | "trait" => Ok(SubjectKind::PersonalityTrait),
            other => Err(Error::Config(format!("unknown subject kind `{other}`"))),
        }
    }
}

/// A subject label. `occurrence` distinguishes repeated entries of the same
/// label when the configuration explicitly keeps duplicates; it is 0 otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Subject {
    pub kind: SubjectKind,
    pub label: String,
    pub occurrence: u32,
}

impl Subject {
    pub fn new(kind: SubjectKind, label: impl Into<String>) -> Self {
        Subject {
            kind,
            label: label.into(),
            occurrence: 0,
        }
    }

    /// Label used in reports; repeated occurrences get a `#n` suffix.
    pub fn display_label(&self) -> String {
        if self.occurrence == 0 {
            self.label.clone()
        } else {
            format!("{}#{}", self.label, self.occurrence + 1)
        }
    }
}

/// Caption opening, including any trailing article ("A photo of a").
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prefix(String);

impl Prefix {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::Config("prefix text is empty".into()));
        }
        Ok(Prefix(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub set_id: String,
    pub prefix: Prefix,
    pub subject: Subject,
    pub attr1: AttributeValue,
    pub attr2: AttributeValue,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualSet {
    pub id: String,
    pub prefix: Prefix,
    pub subject: Subject,
    pub category_pair: (AttributeCategory, AttributeCategory),
    pub members: Vec<CaptionRecord>,
}

fn join_words<'a>(words: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for word in words {
        let word = word.trim();
        if word.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

pub fn caption_text(
    prefix: &Prefix,
    attr1: &AttributeValue,
    attr2: &AttributeValue,
    subject: &Subject,
) -> String {
    join_words([
        prefix.as_str(),
        attr1.label.as_str(),
        attr2.label.as_str(),
        subject.label.as_str(),
    ])
}

pub fn caption_id(
    prefix: &Prefix,
    subject: &Subject,
    attr1: &AttributeValue,
    attr2: &AttributeValue,
) -> String {
    let occurrence = subject.occurrence.to_string();
    content_id(
        'c',
        ID_NAMESPACE,
        &[
            prefix.as_str(),
            subject.kind.as_str(),
            &subject.label,
            &occurrence,
            attr1.category.as_str(),
            &attr1.label,
            attr2.category.as_str(),
            &attr2.label,
        ],
    )
}

pub fn set_id(
    prefix: &Prefix,
    subject: &Subject,
    pair: (AttributeCategory, AttributeCategory),
) -> String {
    let occurrence = subject.occurrence.to_string();
    content_id(
        's',
        ID_NAMESPACE,
        &[
            prefix.as_str(),
            subject.kind.as_str(),
            &subject.label,
            &occurrence,
            pair.0.as_str(),
            pair.1.as_str(),
        ],
    )
}

/// The attribute-free query for a prefix and subject.
pub fn neutral_prompt(prefix: &Prefix, subject: &Subject) -> String {
    join_words([prefix.as_str(), subject.label.as_str()])
}

/// Identifier of the neutral prompt text; shared by repeated subject entries.
pub fn neutral_prompt_id(prefix: &Prefix, subject: &Subject) -> String {
    content_id(
        'n',
        ID_NAMESPACE,
        &[prefix.as_str(), subject.kind.as_str(), &subject.label],
    )
}

/// Identifier for a free-standing query text such as an audit probe.
pub fn query_text_id(text: &str) -> String {
    content_id('q', ID_NAMESPACE, &[text])
}

/// True when `text` contains `label` as a whole-token subsequence
/// (case-insensitive). Multi-word labels must match contiguously.
pub fn contains_label_token(text: &str, label: &str) -> bool {
    let tokens: Vec<String> = tokenize(text);
    let needle: Vec<String> = tokenize(label);
    if needle.is_empty() || needle.len() > tokens.len() {
        return false;
    }
    tokens.windows(needle.len()).any(|w| w == needle.as_slice())
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '!' | '?'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ensure_unique<'a, T: std::hash::Hash + Eq + fmt::Debug + 'a>(
    what: &str,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item) {
            return Err(Error::Config(format!("duplicate {what}: {item:?}")));
        }
    }
    Ok(())
}

/// Builds one counterfactual set per (prefix, subject), each spanning
/// `attrs_a × attrs_b`. Ordering is prefix, subject, then `attrs_a`, then
/// `attrs_b`.
pub fn enumerate_captions(
    prefixes: &[Prefix],
    subjects: &[Subject],
    attrs_a: &AttributeSet,
    attrs_b: &AttributeSet,
) -> Result<Vec<CounterfactualSet>> {
    if prefixes.is_empty() {
        return Err(Error::Config("no prefixes".into()));
    }
    if subjects.is_empty() {
        return Err(Error::Config("no subjects".into()));
    }
    if attrs_a.is_empty() || attrs_b.is_empty() {
        return Err(Error::Config("empty attribute set".into()));
    }
    if attrs_a.category() == attrs_b.category() {
        return Err(Error::Config(format!(
            "attribute pair repeats category `{}`",
            attrs_a.category()
        )));
    }
    ensure_unique("prefix", prefixes)?;
    ensure_unique(
        "subject",
        subjects
            .iter()
            .map(|s| (s.kind, &s.label, s.occurrence))
            .collect::<Vec<_>>()
            .iter(),
    )?;

    let pair = (attrs_a.category(), attrs_b.category());
    let mut sets = Vec::with_capacity(prefixes.len() * subjects.len());
    for prefix in prefixes {
        for subject in subjects {
            let id = set_id(prefix, subject, pair);
            let mut members = Vec::with_capacity(attrs_a.len() * attrs_b.len());
            for a1 in attrs_a.values() {
                for a2 in attrs_b.values() {
                    members.push(CaptionRecord {
                        id: caption_id(prefix, subject, &a1, &a2),
                        set_id: id.clone(),
                        prefix: prefix.clone(),
                        subject: subject.clone(),
                        text: caption_text(prefix, &a1, &a2, subject),
                        attr1: a1.clone(),
                        attr2: a2,
                    });
                }
            }
            sets.push(CounterfactualSet {
                id,
                prefix: prefix.clone(),
                subject: subject.clone(),
                category_pair: pair,
                members,
            });
        }
    }
    Ok(sets)
}
