//! Scoring and selection of over-generated counterfactual samples.
//!
//! A sample is one generation of every member of a set. It survives only if
//! each member's image matches its own caption with cosine at least
//! `min_cosine`; among survivors of a group, the `keep` samples with the
//! highest directional score are retained.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, dot, norm};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_COSINE: f64 = 0.2;
pub const DEFAULT_KEEP: usize = 10;
pub const RETENTION_HEADER: &str = "setId,sampleIndex,retained,minMemberCosine,directionalScore";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub min_cosine: f64,
    pub keep: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_cosine: DEFAULT_MIN_COSINE,
            keep: DEFAULT_KEEP,
        }
    }
}

/// Dot product of two unit vectors, clamped to [-1, 1].
pub fn caption_image_similarity(caption: &[f64], image: &[f64]) -> Result<f64> {
    check_dims(caption.len(), image.len())?;
    Ok(dot(caption, image).clamp(-1.0, 1.0))
}

/// Cosine between the image edit direction `image_b - image_a` and the text
/// edit direction `text_b - text_a`.
pub fn directional_similarity(
    image_a: &[f64],
    image_b: &[f64],
    text_a: &[f64],
    text_b: &[f64],
) -> Result<f64> {
    let dim = image_a.len();
    for v in [image_b, text_a, text_b] {
        check_dims(dim, v.len())?;
    }
    let image_dir: Vec<f64> = image_b.iter().zip(image_a).map(|(b, a)| b - a).collect();
    let text_dir: Vec<f64> = text_b.iter().zip(text_a).map(|(b, a)| b - a).collect();
    let (ni, nt) = (norm(&image_dir), norm(&text_dir));
    if ni == 0.0 {
        return Err(Error::Degenerate("image edit direction is zero".into()));
    }
    if nt == 0.0 {
        return Err(Error::Degenerate("text edit direction is zero".into()));
    }
    Ok((dot(&image_dir, &text_dir) / (ni * nt)).clamp(-1.0, 1.0))
}

/// Caption and image embedding of one set member within a sample.
#[derive(Debug, Clone, Copy)]
pub struct MemberEmbedding<'a> {
    pub caption: &'a [f64],
    pub image: &'a [f64],
}

/// Mean directional similarity over all unordered member pairs. Pairs with a
/// zero edit direction are skipped; if every pair is degenerate the sample
/// has no score.
pub fn set_directional_score(members: &[MemberEmbedding<'_>]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::Argument(
            "directional score needs at least 2 members".into(),
        ));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            let (a, b) = (&members[i], &members[j]);
            match directional_similarity(a.image, b.image, a.caption, b.caption) {
                Ok(s) => {
                    sum += s;
                    pairs += 1;
                }
                Err(Error::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Degenerate("every member pair is degenerate".into()));
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub set_id: String,
    pub sample_index: u32,
    pub member_cosines: Vec<f64>,
    /// `None` when every member pair was degenerate.
    pub directional_score: Option<f64>,
}

impl ScoredSample {
    pub fn min_member_cosine(&self) -> f64 {
        self.member_cosines
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Scores one sample from its members' embeddings (in set member order).
pub fn score_sample(
    set_id: &str,
    sample_index: u32,
    members: &[MemberEmbedding<'_>],
) -> Result<ScoredSample> {
    let member_cosines = members
        .iter()
        .map(|m| caption_image_similarity(m.caption, m.image))
        .collect::<Result<Vec<_>>>()?;
    let directional_score = match set_directional_score(members) {
        Ok(s) => Some(s),
        Err(Error::Degenerate(reason)) => {
            log::warn!("set {set_id} sample {sample_index}: {reason}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(ScoredSample {
        set_id: set_id.to_string(),
        sample_index,
        member_cosines,
        directional_score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub set_id: String,
    pub sample_index: u32,
    pub retained: bool,
    pub min_member_cosine: f64,
    pub directional_score: Option<f64>,
}

/// Selection with one group per counterfactual set.
pub fn select_and_filter(samples: &[ScoredSample], params: FilterParams) -> Vec<RetentionRow> {
    select_and_filter_grouped(samples, params, |s| s.set_id.clone())
}

/// Selection with a caller-chosen grouping key. Output is sorted by
/// (set id, sample index) regardless of input order.
pub fn select_and_filter_grouped<K: Ord>(
    samples: &[ScoredSample],
    params: FilterParams,
    group_of: impl Fn(&ScoredSample) -> K,
) -> Vec<RetentionRow> {
    let mut groups: BTreeMap<K, Vec<&ScoredSample>> = BTreeMap::new();
    for s in samples {
        groups.entry(group_of(s)).or_default().push(s);
    }

    let mut rows = Vec::with_capacity(samples.len());
    for (_, members) in groups {
        let mut survivors: Vec<&ScoredSample> = members
            .iter()
            .copied()
            .filter(|s| s.directional_score.is_some() && s.min_member_cosine() >= params.min_cosine)
            .collect();
        if survivors.is_empty() {
            log::info!(
                "no sample of group containing set {} passed the filter",
                members[0].set_id
            );
        }
        survivors.sort_by(|a, b| rank_order(a, b));
        survivors.truncate(params.keep);
        for s in members {
            let retained = survivors
                .iter()
                .any(|k| k.set_id == s.set_id && k.sample_index == s.sample_index);
            rows.push(RetentionRow {
                set_id: s.set_id.clone(),
                sample_index: s.sample_index,
                retained,
                min_member_cosine: s.min_member_cosine(),
                directional_score: s.directional_score,
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.set_id.as_str(), a.sample_index)
            .cmp(&(b.set_id.as_str(), b.sample_index))
            .then(b.retained.cmp(&a.retained))
    });
    rows
}

/// Highest score first; ties by sample index, then set id.
fn rank_order(a: &ScoredSample, b: &ScoredSample) -> Ordering {
    let sa = a.directional_score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.directional_score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa)
        .then(a.sample_index.cmp(&b.sample_index))
        .then_with(|| a.set_id.cmp(&b.set_id))
}

pub fn write_retention_report<W: Write>(rows: &[RetentionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RETENTION_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.set_id.as_str(),
            &r.sample_index.to_string(),
            if r.retained { "true" } else { "false" },
            &r.min_member_cosine.to_string(),
            &r.directional_score
                .map(|s| s.to_string())
                .unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_retention_report<R: Read>(input: R) -> Result<Vec<RetentionRow>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let bad = |reason: String| Error::Format {
            what: "retention report",
            line: i + 2,
            reason,
        };
        if record.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let retained = match &record[2] {
            "true" => true,
            "false" => false,
            other => return Err(bad(format!("bad retained flag `{other}`"))),
        };
        rows.push(RetentionRow {
            set_id: record[0].to_string(),
            sample_index: record[1]
                .parse()
                .map_err(|_| bad("bad sampleIndex".into()))?,
            retained,
            min_member_cosine: record[3]
                .parse()
                .map_err(|_| bad("bad minMemberCosine".into()))?,
            directional_score: match &record[4] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("bad directionalScore".into()))?),
            },
        });
    }
    Ok(rows)
}
