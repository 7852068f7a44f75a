//! Retrieval skew metrics.
//!
//! For a retrieval of K items and an attribute key `a` with desired share
//! `p_d(a)`, `skew(a) = ln(p_K(a) / p_d(a))` where `p_K(a)` is the share of
//! the K items carrying `a`. `MaxSkew@K` is the largest skew over all keys of
//! the desired distribution. A key that is never retrieved has skew
//! `f64::NEG_INFINITY`; no smoothing is applied.
//!
//! Keys are [`AttributeKey`]s: a joint (value, value) pair for intersectional
//! skew, or a single value for marginal skew within a filtered pool.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::caption::{AttributeCategory, AttributeValue};
use crate::error::{Error, Result};
use crate::retrieval::{top_k, PoolItem, RetrievalResult};

pub const SKEW_HEADER: &str = "subject,catA,catB,pair,skew";
pub const MAXSKEW_HEADER: &str = "subject,k,retrieved,maxskew";
pub const AGGREGATE_HEADER: &str =
    "group,mean,min,q1,median,q3,max,argmin_subject,argmax_subject,neg_inf_count";
pub const DEFAULT_CONDITIONAL_K: usize = 12;

/// Tolerance on the sum of desired proportions.
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeKey(Vec<String>);

impl AttributeKey {
    pub fn pair(a: impl Into<String>, b: impl Into<String>) -> Self {
        AttributeKey(vec![a.into(), b.into()])
    }

    pub fn single(a: impl Into<String>) -> Self {
        AttributeKey(vec![a.into()])
    }

    pub fn parts(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for AttributeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("|"))
    }
}

/// Target share of retrieved items per attribute key.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredDistribution {
    entries: Vec<(AttributeKey, f64)>,
    index: HashMap<AttributeKey, usize>,
}

impl DesiredDistribution {
    /// Entries keep the given order, which is also report order.
    pub fn new(entries: Vec<(AttributeKey, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Argument("desired distribution is empty".into()));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (key, p)) in entries.iter().enumerate() {
            if !(p.is_finite() && *p > 0.0 && *p <= 1.0) {
                return Err(Error::Argument(format!(
                    "desired proportion for `{key}` must lie in (0, 1], got {p}"
                )));
            }
            if index.insert(key.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate desired key `{key}`")));
            }
        }
        let total: f64 = entries.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Argument(format!(
                "desired proportions sum to {total}, not 1"
            )));
        }
        Ok(DesiredDistribution { entries, index })
    }

    pub fn uniform(keys: impl IntoIterator<Item = AttributeKey>) -> Result<Self> {
        let keys: Vec<AttributeKey> = keys.into_iter().collect();
        let p = 1.0 / keys.len() as f64;
        // Summing n copies of 1/n can miss 1 by a few ulps; that is within
        // tolerance for every realistic n.
        Self::new(keys.into_iter().map(|k| (k, p)).collect())
    }

    /// Uniform over the cross product of two label lists, `a`-major.
    pub fn uniform_pairs(a: &[String], b: &[String]) -> Result<Self> {
        Self::uniform(a.iter().flat_map(|x| {
            b.iter()
                .map(move |y| AttributeKey::pair(x.clone(), y.clone()))
        }))
    }

    pub fn get(&self, key: &AttributeKey) -> Option<f64> {
        self.index.get(key).map(|&i| self.entries[i].1)
    }

    pub fn keys(&self) -> impl Iterator<Item = &AttributeKey> + '_ {
        self.entries.iter().map(|(k, _)| k)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn count_of(retrieved: &[AttributeKey], key: &AttributeKey) -> usize {
    retrieved.iter().filter(|k| *k == key).count()
}

fn skew_from_count(count: usize, retrieved: usize, desired: f64) -> f64 {
    if count == 0 {
        return f64::NEG_INFINITY;
    }
    let actual = count as f64 / retrieved as f64;
    (actual / desired).ln()
}

/// Skew of one key over the retrieved items' keys.
pub fn skew_at_k(
    retrieved: &[AttributeKey],
    key: &AttributeKey,
    desired: &DesiredDistribution,
) -> Result<f64> {
    if retrieved.is_empty() {
        return Err(Error::Argument(
            "skew needs at least one retrieved item".into(),
        ));
    }
    let p_d = desired
        .get(key)
        .ok_or_else(|| Error::Argument(format!("`{key}` is not in the desired distribution")))?;
    Ok(skew_from_count(
        count_of(retrieved, key),
        retrieved.len(),
        p_d,
    ))
}

fn check_coverage(retrieved: &[AttributeKey], desired: &DesiredDistribution) -> Result<()> {
    if retrieved.is_empty() {
        return Err(Error::Argument(
            "skew needs at least one retrieved item".into(),
        ));
    }
    if let Some(stray) = retrieved.iter().find(|k| desired.get(k).is_none()) {
        return Err(Error::Argument(format!(
            "retrieved key `{stray}` is not in the desired distribution"
        )));
    }
    Ok(())
}

/// Largest skew over every key of `desired`.
pub fn max_skew_at_k(retrieved: &[AttributeKey], desired: &DesiredDistribution) -> Result<f64> {
    Ok(skew_report("", retrieved.len(), retrieved, desired)?.max_skew)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    pub subject: String,
    /// Requested K.
    pub k: usize,
    /// Items actually retrieved (K, or the pool size if smaller).
    pub retrieved: usize,
    pub per_pair: Vec<(AttributeKey, f64)>,
    pub max_skew: f64,
    pub proportions: Vec<(AttributeKey, f64)>,
}

/// Skew for every desired key plus the joint proportions.
pub fn skew_report(
    subject: &str,
    k: usize,
    retrieved: &[AttributeKey],
    desired: &DesiredDistribution,
) -> Result<SkewReport> {
    check_coverage(retrieved, desired)?;
    let mut counts: HashMap<&AttributeKey, usize> = HashMap::new();
    for key in retrieved {
        *counts.entry(key).or_default() += 1;
    }
    let n = retrieved.len();
    let mut per_pair = Vec::with_capacity(desired.len());
    let mut proportions = Vec::with_capacity(desired.len());
    let mut max_skew = f64::NEG_INFINITY;
    for (key, p_d) in &desired.entries {
        let count = counts.get(key).copied().unwrap_or(0);
        let skew = skew_from_count(count, n, *p_d);
        max_skew = max_skew.max(skew);
        per_pair.push((key.clone(), skew));
        proportions.push((key.clone(), count as f64 / n as f64));
    }
    Ok(SkewReport {
        subject: subject.to_string(),
        k,
        retrieved: n,
        per_pair,
        max_skew,
        proportions,
    })
}

/// Retrieval keys for a result, looked up by asset id.
pub fn keys_for(
    result: &RetrievalResult,
    key_of: impl Fn(&str) -> Option<AttributeKey>,
) -> Result<Vec<AttributeKey>> {
    result
        .ranked
        .iter()
        .map(|r| {
            key_of(&r.asset_id)
                .ok_or_else(|| Error::Argument(format!("no attributes for asset `{}`", r.asset_id)))
        })
        .collect()
}

/// A pool item with the attribute values of the caption it depicts.
#[derive(Debug, Clone, Copy)]
pub struct LabeledPoolItem<'a> {
    pub item: PoolItem<'a>,
    pub labels: &'a [AttributeValue],
}

impl LabeledPoolItem<'_> {
    fn value_of(&self, category: AttributeCategory) -> Option<&str> {
        self.labels
            .iter()
            .find(|v| v.category == category)
            .map(|v| v.label.as_str())
    }
}

/// Marginal skew of `measured` within the sub-pool carrying `fixed`.
///
/// The pool is restricted to items labeled with `fixed`, the top `k` are
/// retrieved for `query`, and skew is computed over the measured category's
/// values. `desired` is keyed by [`AttributeKey::single`].
#[allow(clippy::too_many_arguments)]
pub fn conditional_skew(
    subject: &str,
    query_id: &str,
    query: &[f64],
    pool: &[LabeledPoolItem<'_>],
    fixed: &AttributeValue,
    measured: AttributeCategory,
    k: usize,
    desired: &DesiredDistribution,
) -> Result<(RetrievalResult, SkewReport)> {
    let filtered: Vec<&LabeledPoolItem<'_>> =
        pool.iter().filter(|p| p.labels.contains(fixed)).collect();
    if filtered.is_empty() {
        return Err(Error::EmptyPool(format!(
            "no `{subject}` candidates with {}={}",
            fixed.category, fixed.label
        )));
    }
    let items: Vec<PoolItem<'_>> = filtered.iter().map(|p| p.item).collect();
    let result = top_k(subject, query_id, query, &items, k)?;
    let by_id: HashMap<&str, &LabeledPoolItem<'_>> =
        filtered.iter().map(|p| (p.item.asset_id, *p)).collect();
    let keys = keys_for(&result, |id| {
        by_id
            .get(id)
            .and_then(|p| p.value_of(measured))
            .map(AttributeKey::single)
    })?;
    let report = skew_report(subject, k, &keys, desired)?;
    Ok((result, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionTables {
    pub joint: Vec<(String, String, f64)>,
    pub marginal_a: Vec<(String, f64)>,
    pub marginal_b: Vec<(String, f64)>,
}

/// Joint shares over `values_a × values_b` and their row/column sums.
pub fn proportion_breakdown(
    retrieved: &[AttributeKey],
    values_a: &[String],
    values_b: &[String],
) -> Result<ProportionTables> {
    if retrieved.is_empty() {
        return Err(Error::Argument("no retrieved items".into()));
    }
    let mut counts = vec![vec![0usize; values_b.len()]; values_a.len()];
    for key in retrieved {
        let parts = key.parts();
        let locate = |values: &[String], v: Option<&String>| {
            v.and_then(|v| values.iter().position(|x| x == v))
        };
        match (
            parts.len(),
            locate(values_a, parts.first()),
            locate(values_b, parts.get(1)),
        ) {
            (2, Some(i), Some(j)) => counts[i][j] += 1,
            _ => {
                return Err(Error::Argument(format!(
                    "retrieved key `{key}` is outside the attribute cross product"
                )))
            }
        }
    }
    let n = retrieved.len() as f64;
    let mut joint = Vec::with_capacity(values_a.len() * values_b.len());
    let mut marginal_a = Vec::with_capacity(values_a.len());
    let mut marginal_b: Vec<(String, f64)> = values_b.iter().map(|b| (b.clone(), 0.0)).collect();
    for (i, a) in values_a.iter().enumerate() {
        let mut row = 0.0;
        for (j, b) in values_b.iter().enumerate() {
            let share = counts[i][j] as f64 / n;
            joint.push((a.clone(), b.clone(), share));
            row += share;
            marginal_b[j].1 += share;
        }
        marginal_a.push((a.clone(), row));
    }
    Ok(ProportionTables {
        joint,
        marginal_a,
        marginal_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    /// Reports with a finite MaxSkew.
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub argmin_subject: String,
    pub argmax_subject: String,
    pub neg_inf_count: usize,
}

/// Linear-interpolation quantile of sorted data (the "type 7" rule).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Distribution of MaxSkew across subjects. Sentinel values are counted, not
/// summarized. Ties for min/max go to the earliest report.
pub fn aggregate_across_subjects(reports: &[SkewReport]) -> Result<AggregateSummary> {
    if reports.is_empty() {
        return Err(Error::Argument("no reports to aggregate".into()));
    }
    let finite: Vec<&SkewReport> = reports.iter().filter(|r| r.max_skew.is_finite()).collect();
    let neg_inf_count = reports.len() - finite.len();
    if finite.is_empty() {
        return Ok(AggregateSummary {
            count: 0,
            mean: f64::NAN,
            min: f64::NAN,
            q1: f64::NAN,
            median: f64::NAN,
            q3: f64::NAN,
            max: f64::NAN,
            argmin_subject: String::new(),
            argmax_subject: String::new(),
            neg_inf_count,
        });
    }
    let mut argmin = finite[0];
    let mut argmax = finite[0];
    for r in &finite[1..] {
        if r.max_skew < argmin.max_skew {
            argmin = r;
        }
        if r.max_skew > argmax.max_skew {
            argmax = r;
        }
    }
    let mut values: Vec<f64> = finite.iter().map(|r| r.max_skew).collect();
    values.sort_by(f64::total_cmp);
    Ok(AggregateSummary {
        count: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        min: values[0],
        q1: quantile(&values, 0.25),
        median: quantile(&values, 0.5),
        q3: quantile(&values, 0.75),
        max: values[values.len() - 1],
        argmin_subject: argmin.subject.clone(),
        argmax_subject: argmax.subject.clone(),
        neg_inf_count,
    })
}

pub(crate) fn fmt_value(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        x.to_string()
    }
}

pub fn write_skew_csv<W: Write>(
    reports: &[SkewReport],
    cat_a: &str,
    cat_b: &str,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SKEW_HEADER.split(','))?;
    for r in reports {
        for (key, skew) in &r.per_pair {
            w.write_record([
                r.subject.as_str(),
                cat_a,
                cat_b,
                &key.to_string(),
                &fmt_value(*skew),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_maxskew_csv<W: Write>(reports: &[SkewReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MAXSKEW_HEADER.split(','))?;
    for r in reports {
        w.write_record([
            r.subject.as_str(),
            &r.k.to_string(),
            &r.retrieved.to_string(),
            &fmt_value(r.max_skew),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(rows: &[(String, AggregateSummary)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER.split(','))?;
    for (group, s) in rows {
        w.write_record([
            group.as_str(),
            &fmt_value(s.mean),
            &fmt_value(s.min),
            &fmt_value(s.q1),
            &fmt_value(s.median),
            &fmt_value(s.q3),
            &fmt_value(s.max),
            &s.argmin_subject,
            &s.argmax_subject,
            &s.neg_inf_count.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parses a desired-distribution override file with header
/// `subject,catA,catB,pair,proportion`. `subject` may be `*` for all subjects.
pub fn read_desired_overrides<R: std::io::Read>(
    input: R,
) -> Result<BTreeMap<(String, String, String), DesiredDistribution>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut raw: BTreeMap<(String, String, String), Vec<(AttributeKey, f64)>> = BTreeMap::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let bad = |reason: String| Error::Format {
            what: "desired distribution",
            line: i + 2,
            reason,
        };
        if record.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let key = AttributeKey(record[3].split('|').map(str::to_string).collect());
        let p: f64 = record[4]
            .parse()
            .map_err(|_| bad(format!("bad proportion `{}`", &record[4])))?;
        raw.entry((
            record[0].to_string(),
            record[1].to_string(),
            record[2].to_string(),
        ))
        .or_default()
        .push((key, p));
    }
    raw.into_iter()
        .map(|(k, entries)| Ok((k, DesiredDistribution::new(entries)?)))
        .collect()
}
