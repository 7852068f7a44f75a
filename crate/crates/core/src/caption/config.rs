//! Inventory configuration: prefixes, subjects, attribute sets and the
//! category pairs to enumerate.
//!
//! The file is UTF-8, one `kind,category,label` record per line. `#` starts a
//! comment line; fields may be quoted. Recognised kinds:
//!
//! ```text
//! prefix,,A photo of a
//! subject,occupation,electrician
//! attribute,race,White
//! pair,occupation,race:gender          # optional; defaults below
//! option,duplicate_subjects,keep       # optional; default `reject`
//! ```
//!
//! Without `pair` records every default pair whose categories are present is
//! used: occupations get (race, gender), (religion, gender), (race, religion),
//! (physical, gender), (physical, race), (physical, religion); personality
//! traits get the first three.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{
    contains_label_token, enumerate_captions, neutral_prompt, AttributeCategory, AttributeSet,
    CounterfactualSet, Prefix, Subject, SubjectKind,
};
use crate::error::{Error, Result};

const DEFAULT_INVENTORY: &str = include_str!("../../data/default_inventory.cfg");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CategoryPair {
    pub kind: SubjectKind,
    pub a: AttributeCategory,
    pub b: AttributeCategory,
}

impl CategoryPair {
    pub fn new(kind: SubjectKind, a: AttributeCategory, b: AttributeCategory) -> Self {
        CategoryPair { kind, a, b }
    }

    /// `occupation/race/gender`
    pub fn group_name(&self) -> String {
        format!("{}/{}/{}", self.kind, self.a, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DuplicatePolicy {
    /// Repeated subject labels within a kind are a configuration error.
    #[default]
    Reject,
    /// Repeated labels become distinct subjects numbered by occurrence.
    KeepOccurrences,
}

fn default_pairs() -> Vec<CategoryPair> {
    use AttributeCategory::*;
    use SubjectKind::*;
    vec![
        CategoryPair::new(Occupation, Race, Gender),
        CategoryPair::new(Occupation, Religion, Gender),
        CategoryPair::new(Occupation, Race, Religion),
        CategoryPair::new(Occupation, Physical, Gender),
        CategoryPair::new(Occupation, Physical, Race),
        CategoryPair::new(Occupation, Physical, Religion),
        CategoryPair::new(PersonalityTrait, Race, Gender),
        CategoryPair::new(PersonalityTrait, Religion, Gender),
        CategoryPair::new(PersonalityTrait, Race, Religion),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    prefixes: Vec<Prefix>,
    subjects: Vec<Subject>,
    attributes: Vec<AttributeSet>,
    pairs: Vec<CategoryPair>,
}

impl Configuration {
    /// Validates and assembles a configuration. An empty `pairs` list selects
    /// the default pairs.
    pub fn new(
        prefixes: Vec<Prefix>,
        subjects: Vec<Subject>,
        attributes: Vec<AttributeSet>,
        pairs: Vec<CategoryPair>,
    ) -> Result<Self> {
        if prefixes.is_empty() {
            return Err(Error::Config("no prefix records".into()));
        }
        if subjects.is_empty() {
            return Err(Error::Config("no subject records".into()));
        }
        if attributes.len() < 2 {
            return Err(Error::Config(
                "at least two attribute categories are required".into(),
            ));
        }
        for (i, p) in prefixes.iter().enumerate() {
            if prefixes[..i].contains(p) {
                return Err(Error::Config(format!("duplicate prefix `{}`", p.as_str())));
            }
        }
        for (i, s) in subjects.iter().enumerate() {
            if s.label.trim().is_empty() {
                return Err(Error::Config("empty subject label".into()));
            }
            if subjects[..i]
                .iter()
                .any(|o| o.kind == s.kind && o.label == s.label && o.occurrence == s.occurrence)
            {
                return Err(Error::Config(format!(
                    "duplicate {} subject `{}`",
                    s.kind, s.label
                )));
            }
        }
        for (i, set) in attributes.iter().enumerate() {
            if attributes[..i]
                .iter()
                .any(|o| o.category() == set.category())
            {
                return Err(Error::Config(format!(
                    "attribute category `{}` defined twice",
                    set.category()
                )));
            }
        }

        let has_category = |c: AttributeCategory| attributes.iter().any(|s| s.category() == c);
        let has_kind = |k: SubjectKind| subjects.iter().any(|s| s.kind == k);
        let pairs = if pairs.is_empty() {
            default_pairs()
                .into_iter()
                .filter(|p| has_kind(p.kind) && has_category(p.a) && has_category(p.b))
                .collect()
        } else {
            for (i, p) in pairs.iter().enumerate() {
                if p.a == p.b {
                    return Err(Error::Config(format!("pair repeats category `{}`", p.a)));
                }
                for c in [p.a, p.b] {
                    if !has_category(c) {
                        return Err(Error::Config(format!(
                            "pair `{}` references undefined category `{c}`",
                            p.group_name()
                        )));
                    }
                }
                if !has_kind(p.kind) {
                    return Err(Error::Config(format!(
                        "pair `{}` references a subject kind with no subjects",
                        p.group_name()
                    )));
                }
                if pairs[..i].contains(p) {
                    return Err(Error::Config(format!(
                        "duplicate pair `{}`",
                        p.group_name()
                    )));
                }
            }
            pairs
        };
        if pairs.is_empty() {
            return Err(Error::Config("no usable category pairs".into()));
        }

        let config = Configuration {
            prefixes,
            subjects,
            attributes,
            pairs,
        };
        config.check_neutrality()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());

        let mut prefixes = Vec::new();
        let mut raw_subjects: Vec<(SubjectKind, String, usize)> = Vec::new();
        let mut attributes: BTreeMap<AttributeCategory, (usize, Vec<String>)> = BTreeMap::new();
        let mut pairs = Vec::new();
        let mut policy = DuplicatePolicy::Reject;

        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |reason: String| Error::ConfigLine { line, reason };
            if record.iter().all(str::is_empty) {
                continue;
            }
            if record.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", record.len())));
            }
            let (kind, category, label) = (&record[0], &record[1], &record[2]);
            match kind {
                "prefix" => prefixes.push(Prefix::new(label).map_err(|e| bad(e.to_string()))?),
                "subject" => {
                    let kind: SubjectKind =
                        category.parse().map_err(|e: Error| bad(e.to_string()))?;
                    if label.is_empty() {
                        return Err(bad("empty subject label".into()));
                    }
                    raw_subjects.push((kind, label.to_string(), line));
                }
                "attribute" => {
                    let category: AttributeCategory =
                        category.parse().map_err(|e: Error| bad(e.to_string()))?;
                    if label.is_empty() {
                        return Err(bad("empty attribute label".into()));
                    }
                    let entry = attributes.entry(category).or_insert((line, Vec::new()));
                    if entry.1.iter().any(|l| l == label) {
                        return Err(bad(format!("duplicate {category} label `{label}`")));
                    }
                    entry.1.push(label.to_string());
                }
                "pair" => {
                    let kind: SubjectKind =
                        category.parse().map_err(|e: Error| bad(e.to_string()))?;
                    let (a, b) = label
                        .split_once(':')
                        .ok_or_else(|| bad(format!("pair `{label}` is not `cat_a:cat_b`")))?;
                    let a: AttributeCategory = a.parse().map_err(|e: Error| bad(e.to_string()))?;
                    let b: AttributeCategory = b.parse().map_err(|e: Error| bad(e.to_string()))?;
                    pairs.push(CategoryPair::new(kind, a, b));
                }
                "option" => match (category, label) {
                    ("duplicate_subjects", "keep") => policy = DuplicatePolicy::KeepOccurrences,
                    ("duplicate_subjects", "reject") => policy = DuplicatePolicy::Reject,
                    _ => return Err(bad(format!("unknown option `{category}={label}`"))),
                },
                other => return Err(bad(format!("unknown record kind `{other}`"))),
            }
        }

        let mut occurrences: HashMap<(SubjectKind, String), u32> = HashMap::new();
        let mut subjects = Vec::with_capacity(raw_subjects.len());
        for (kind, label, line) in raw_subjects {
            let seen = occurrences.entry((kind, label.clone())).or_insert(0);
            if *seen > 0 && policy == DuplicatePolicy::Reject {
                return Err(Error::ConfigLine {
                    line,
                    reason: format!("duplicate {kind} subject `{label}`"),
                });
            }
            subjects.push(Subject {
                kind,
                label,
                occurrence: *seen,
            });
            *seen += 1;
        }

        // Attribute sets keep the order in which categories first appear.
        let mut ordered: Vec<_> = attributes.into_iter().collect();
        ordered.sort_by_key(|(_, (line, _))| *line);
        let attributes = ordered
            .into_iter()
            .map(|(category, (_, labels))| AttributeSet::new(category, labels))
            .collect::<Result<Vec<_>>>()?;

        Configuration::new(prefixes, subjects, attributes, pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput {
                path: path.to_path_buf(),
                reason: "configuration file not found".into(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The bundled inventory: 4 prefixes, 261 occupations (repeats kept),
    /// 63 traits, 6 races, 4 religions, 2 genders and 14 physical labels, five
    /// of which are placeholders.
    pub fn default_inventory() -> Self {
        Self::parse(DEFAULT_INVENTORY).expect("bundled inventory is valid")
    }

    pub fn default_inventory_text() -> &'static str {
        DEFAULT_INVENTORY
    }

    pub fn prefixes(&self) -> &[Prefix] {
        &self.prefixes
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn subjects_of(&self, kind: SubjectKind) -> Vec<Subject> {
        self.subjects
            .iter()
            .filter(|s| s.kind == kind)
            .cloned()
            .collect()
    }

    pub fn attribute_sets(&self) -> &[AttributeSet] {
        &self.attributes
    }

    pub fn attribute_set(&self, category: AttributeCategory) -> Option<&AttributeSet> {
        self.attributes.iter().find(|s| s.category() == category)
    }

    pub fn pairs(&self) -> &[CategoryPair] {
        &self.pairs
    }

    fn pair_sets(&self, pair: &CategoryPair) -> (&AttributeSet, &AttributeSet) {
        // Categories were checked in `new`.
        (
            self.attribute_set(pair.a).expect("validated category"),
            self.attribute_set(pair.b).expect("validated category"),
        )
    }

    /// Counterfactual sets for one category pair.
    pub fn enumerate_pair(&self, pair: &CategoryPair) -> Result<Vec<CounterfactualSet>> {
        let (a, b) = self.pair_sets(pair);
        enumerate_captions(&self.prefixes, &self.subjects_of(pair.kind), a, b)
    }

    /// All counterfactual sets, in pair order.
    pub fn enumerate(&self) -> Result<Vec<CounterfactualSet>> {
        let mut all = Vec::new();
        for pair in &self.pairs {
            all.extend(self.enumerate_pair(pair)?);
        }
        Ok(all)
    }

    /// Fails if any neutral prompt contains an attribute label as a token.
    pub fn check_neutrality(&self) -> Result<()> {
        for prefix in &self.prefixes {
            for subject in &self.subjects {
                let prompt = neutral_prompt(prefix, subject);
                for set in &self.attributes {
                    if let Some(label) = set
                        .labels()
                        .iter()
                        .find(|label| contains_label_token(&prompt, label))
                    {
                        return Err(Error::Config(format!(
                            "neutral prompt `{prompt}` contains attribute label `{label}`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "\
# tiny fixture
prefix,,A photo of a
prefix,,A picture of a
subject,occupation,electrician
attribute,gender,male
attribute,gender,female
attribute,race,White
attribute,race,Black
attribute,race,Asian
pair,occupation,gender:race
";

    #[test]
    fn parses_tiny_fixture() {
        let cfg = Configuration::parse(TINY).unwrap();
        assert_eq!(cfg.prefixes().len(), 2);
        assert_eq!(cfg.subjects().len(), 1);
        assert_eq!(cfg.pairs().len(), 1);
        let sets = cfg.enumerate().unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets.iter().map(|s| s.members.len()).sum::<usize>(), 12);
    }

    #[test]
    fn default_pairs_follow_present_categories() {
        let text = TINY.replace("pair,occupation,gender:race\n", "");
        let cfg = Configuration::parse(&text).unwrap();
        assert_eq!(
            cfg.pairs(),
            &[CategoryPair::new(
                SubjectKind::Occupation,
                AttributeCategory::Race,
                AttributeCategory::Gender
            )]
        );
    }

    #[test]
    fn duplicate_subject_rejected_unless_kept() {
        let dup = format!("{TINY}subject,occupation,electrician\n");
        let err = Configuration::parse(&dup).unwrap_err();
        assert!(matches!(err, Error::ConfigLine { line: 11, .. }), "{err}");
        let kept = format!("{dup}option,duplicate_subjects,keep\n");
        let cfg = Configuration::parse(&kept).unwrap();
        assert_eq!(cfg.subjects()[1].occurrence, 1);
        assert_eq!(cfg.enumerate().unwrap().len(), 4);
    }

    #[test]
    fn errors_name_the_line() {
        let err = Configuration::parse("prefix,,A\nbogus,x,y\n").unwrap_err();
        assert!(matches!(err, Error::ConfigLine { line: 2, .. }));
        let err = Configuration::parse(&format!("{TINY}attribute,race,White\n")).unwrap_err();
        assert!(err.to_string().contains("duplicate race label"));
        assert!(Configuration::parse("").is_err());
    }

    #[test]
    fn neutrality_violation_rejected() {
        let text = TINY.replace("electrician", "male nurse");
        let err = Configuration::parse(&text).unwrap_err();
        assert!(err.to_string().contains("neutral prompt"));
    }

    #[test]
    fn missing_file() {
        let err = Configuration::load(Path::new("/nonexistent/cfg.txt")).unwrap_err();
        assert!(matches!(err, Error::MissingInput { .. }));
    }

    #[test]
    fn default_inventory_cardinalities() {
        let cfg = Configuration::default_inventory();
        assert_eq!(cfg.prefixes().len(), 4);
        assert_eq!(cfg.subjects_of(SubjectKind::Occupation).len(), 261);
        assert_eq!(cfg.subjects_of(SubjectKind::PersonalityTrait).len(), 63);
        let card = |c| cfg.attribute_set(c).unwrap().len();
        assert_eq!(card(AttributeCategory::Race), 6);
        assert_eq!(card(AttributeCategory::Religion), 4);
        assert_eq!(card(AttributeCategory::Gender), 2);
        assert_eq!(card(AttributeCategory::Physical), 14);
        assert_eq!(cfg.pairs().len(), 9);
    }
}
