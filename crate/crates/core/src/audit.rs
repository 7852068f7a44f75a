//! Audits over human annotations of generated images: embedding-based gender
//! prediction, per-class confusion statistics and an error-category census.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, dot};
use crate::error::{Error, Result};

pub const ANNOTATION_HEADER: &str = "assetId,category,annotatedGender";
pub const CONFUSION_HEADER: &str = "class,precision,recall,f1,support";
pub const CENSUS_TABLE_HEADER: &str = "group,category,count,percent";
pub const DEFAULT_MALE_QUERY: &str = "A male person";
pub const DEFAULT_FEMALE_QUERY: &str = "A female person";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    fn other(self) -> Gender {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            other => Err(Error::Argument(format!("unknown gender `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenderPrediction {
    Male,
    Female,
    Undetermined,
}

impl GenderPrediction {
    pub fn as_str(self) -> &'static str {
        match self {
            GenderPrediction::Male => "male",
            GenderPrediction::Female => "female",
            GenderPrediction::Undetermined => "undetermined",
        }
    }

    fn gender(self) -> Option<Gender> {
        match self {
            GenderPrediction::Male => Some(Gender::Male),
            GenderPrediction::Female => Some(Gender::Female),
            GenderPrediction::Undetermined => None,
        }
    }
}

/// Index of the query with the strictly highest cosine to `image`; `None` if
/// the top score is shared.
pub fn predict_label(image: &[f64], queries: &[&[f64]]) -> Result<Option<usize>> {
    let mut best: Option<(usize, f64)> = None;
    let mut tied = false;
    for (i, q) in queries.iter().enumerate() {
        check_dims(image.len(), q.len())?;
        let score = dot(image, q);
        match best {
            Some((_, b)) if score == b => tied = true,
            Some((_, b)) if score < b => {}
            _ => {
                best = Some((i, score));
                tied = false;
            }
        }
    }
    Ok(if tied { None } else { best.map(|(i, _)| i) })
}

pub fn predict_gender(
    image: &[f64],
    male_query: &[f64],
    female_query: &[f64],
) -> Result<GenderPrediction> {
    Ok(match predict_label(image, &[male_query, female_query])? {
        Some(0) => GenderPrediction::Male,
        Some(_) => GenderPrediction::Female,
        None => GenderPrediction::Undetermined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    Good,
    CannotDiscernGender,
    FailFemale,
    FailMale,
    OutOfFrame,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::Good,
        ErrorCategory::CannotDiscernGender,
        ErrorCategory::FailFemale,
        ErrorCategory::FailMale,
        ErrorCategory::OutOfFrame,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Good => "good",
            ErrorCategory::CannotDiscernGender => "cannot_discern_gender",
            ErrorCategory::FailFemale => "fail_female",
            ErrorCategory::FailMale => "fail_male",
            ErrorCategory::OutOfFrame => "out_of_frame",
        }
    }

    /// Whether an annotator can assign a gender to images in this category.
    pub fn gender_discernible(self) -> bool {
        matches!(
            self,
            ErrorCategory::Good | ErrorCategory::FailFemale | ErrorCategory::FailMale
        )
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown error category `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditAnnotation {
    pub asset_id: String,
    pub category: ErrorCategory,
    pub annotated_gender: Option<Gender>,
}

impl AuditAnnotation {
    pub fn new(
        asset_id: impl Into<String>,
        category: ErrorCategory,
        annotated_gender: Option<Gender>,
    ) -> Result<Self> {
        let asset_id = asset_id.into();
        if category.gender_discernible() != annotated_gender.is_some() {
            return Err(Error::Argument(format!(
                "annotation `{asset_id}`: category {category} {} a gender",
                if category.gender_discernible() {
                    "requires"
                } else {
                    "must not carry"
                }
            )));
        }
        Ok(AuditAnnotation {
            asset_id,
            category,
            annotated_gender,
        })
    }
}

pub fn read_annotations<R: Read>(input: R) -> Result<Vec<AuditAnnotation>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let bad = |reason: String| Error::Format {
            what: "annotation file",
            line: i + 2,
            reason,
        };
        if record.len() < 2 || record.len() > 3 {
            return Err(bad(format!("expected 3 fields, found {}", record.len())));
        }
        let category: ErrorCategory = record[1].parse().map_err(|e: Error| bad(e.to_string()))?;
        let gender = match record.get(2).unwrap_or("") {
            "" => None,
            g => Some(g.parse::<Gender>().map_err(|e| bad(e.to_string()))?),
        };
        out.push(
            AuditAnnotation::new(&record[0], category, gender).map_err(|e| bad(e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(annotations: &[AuditAnnotation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ANNOTATION_HEADER.split(','))?;
    for a in annotations {
        w.write_record([
            a.asset_id.as_str(),
            a.category.as_str(),
            a.annotated_gender.map_or("", Gender::as_str),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStats {
    pub male: ClassStats,
    pub female: ClassStats,
    /// Annotations with a gender that had a prediction.
    pub evaluated: usize,
    pub undetermined: usize,
}

impl ConfusionStats {
    pub fn class(&self, g: Gender) -> &ClassStats {
        match g {
            Gender::Male => &self.male,
            Gender::Female => &self.female,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 of predictions against annotated
/// genders. An undetermined prediction is a miss for the annotated class and
/// a hit for neither.
pub fn confusion_stats(
    predictions: &HashMap<String, GenderPrediction>,
    annotations: &[AuditAnnotation],
) -> Result<ConfusionStats> {
    // [truth][predicted] with predicted index 2 = undetermined
    let mut matrix = [[0usize; 3]; 2];
    let idx = |g: Gender| match g {
        Gender::Male => 0,
        Gender::Female => 1,
    };
    let mut evaluated = 0;
    for a in annotations {
        let (Some(truth), Some(pred)) = (a.annotated_gender, predictions.get(&a.asset_id)) else {
            continue;
        };
        evaluated += 1;
        let col = pred.gender().map_or(2, idx);
        matrix[idx(truth)][col] += 1;
    }
    if evaluated == 0 {
        return Err(Error::Argument(
            "no annotated asset with a discernible gender has a prediction".into(),
        ));
    }
    let stats = |g: Gender| {
        let (t, o) = (idx(g), idx(g.other()));
        let tp = matrix[t][t];
        let fp = matrix[o][t];
        let support = matrix[t].iter().sum::<usize>();
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassStats {
            precision,
            recall,
            f1,
            support,
        }
    };
    Ok(ConfusionStats {
        male: stats(Gender::Male),
        female: stats(Gender::Female),
        evaluated,
        undetermined: matrix[0][2] + matrix[1][2],
    })
}

pub fn write_confusion_csv<W: Write>(stats: &ConfusionStats, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONFUSION_HEADER.split(','))?;
    for g in [Gender::Male, Gender::Female] {
        let c = stats.class(g);
        w.write_record([
            g.as_str(),
            &c.precision.to_string(),
            &c.recall.to_string(),
            &c.f1.to_string(),
            &c.support.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub category: ErrorCategory,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCensus {
    pub total: usize,
    pub overall: Vec<CategoryShare>,
    /// Breakdown per attribute group (for example `White|female`).
    pub groups: BTreeMap<String, Vec<CategoryShare>>,
}

fn shares<'a>(categories: impl Iterator<Item = &'a ErrorCategory>) -> (usize, Vec<CategoryShare>) {
    let mut counts = [0usize; 5];
    let mut total = 0;
    for c in categories {
        counts[ErrorCategory::ALL
            .iter()
            .position(|x| x == c)
            .expect("closed set")] += 1;
        total += 1;
    }
    let rows = ErrorCategory::ALL
        .iter()
        .zip(counts)
        .map(|(&category, count)| CategoryShare {
            category,
            count,
            percent: 100.0 * ratio(count, total),
        })
        .collect();
    (total, rows)
}

/// Share of each error category overall and, when `group_of` resolves an
/// asset, within its group. Assets without a group only count overall.
pub fn error_census(
    annotations: &[AuditAnnotation],
    group_of: impl Fn(&str) -> Option<String>,
) -> Result<ErrorCensus> {
    if annotations.is_empty() {
        return Err(Error::Argument("no annotations".into()));
    }
    let (total, overall) = shares(annotations.iter().map(|a| &a.category));
    let mut grouped: BTreeMap<String, Vec<ErrorCategory>> = BTreeMap::new();
    for a in annotations {
        if let Some(g) = group_of(&a.asset_id) {
            grouped.entry(g).or_default().push(a.category);
        }
    }
    let groups = grouped
        .into_iter()
        .map(|(g, cats)| (g, shares(cats.iter()).1))
        .collect();
    Ok(ErrorCensus {
        total,
        overall,
        groups,
    })
}

pub fn write_census_csv<W: Write>(census: &ErrorCensus, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CENSUS_TABLE_HEADER.split(','))?;
    let all = std::iter::once(("all", &census.overall))
        .chain(census.groups.iter().map(|(g, rows)| (g.as_str(), rows)));
    for (group, rows) in all {
        for r in rows {
            w.write_record([
                group,
                r.category.as_str(),
                &r.count.to_string(),
                &r.percent.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
