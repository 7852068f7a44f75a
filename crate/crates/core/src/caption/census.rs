use std::io::Write;

use serde::Serialize;

use super::{AttributeCategory, Configuration, SubjectKind};
use crate::error::Result;

pub const CENSUS_HEADER: &str = "subject_kind,cat_a,cat_b,sets,images_per_set,total_images";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CensusRow {
    pub subject_kind: SubjectKind,
    pub cat_a: AttributeCategory,
    pub cat_b: AttributeCategory,
    pub sets: u64,
    pub images_per_set: u64,
    pub total_images: u64,
}

impl CensusRow {
    pub fn captions(&self) -> u64 {
        self.sets * self.images_per_set
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Census {
    pub rows: Vec<CensusRow>,
    pub total_sets: u64,
    pub total_captions: u64,
    pub total_images: u64,
}

/// Planned dataset size per (subject kind, category pair), computed from
/// cardinalities alone. `samples_per_set` is the over-generation factor.
pub fn dataset_census(config: &Configuration, samples_per_set: u64) -> Census {
    let prefixes = config.prefixes().len() as u64;
    let rows: Vec<CensusRow> = config
        .pairs()
        .iter()
        .map(|pair| {
            let subjects = config.subjects_of(pair.kind).len() as u64;
            let card = |c| config.attribute_set(c).map_or(0, |s| s.len() as u64);
            let sets = prefixes * subjects;
            let images_per_set = card(pair.a) * card(pair.b);
            CensusRow {
                subject_kind: pair.kind,
                cat_a: pair.a,
                cat_b: pair.b,
                sets,
                images_per_set,
                total_images: sets * images_per_set * samples_per_set,
            }
        })
        .collect();
    Census {
        total_sets: rows.iter().map(|r| r.sets).sum(),
        total_captions: rows.iter().map(CensusRow::captions).sum(),
        total_images: rows.iter().map(|r| r.total_images).sum(),
        rows,
    }
}

impl Census {
    /// CSV with one row per pair and a closing `total` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CENSUS_HEADER.split(','))?;
        for row in &self.rows {
            w.write_record([
                row.subject_kind.as_str(),
                row.cat_a.as_str(),
                row.cat_b.as_str(),
                &row.sets.to_string(),
                &row.images_per_set.to_string(),
                &row.total_images.to_string(),
            ])?;
        }
        w.write_record([
            "total",
            "",
            "",
            &self.total_sets.to_string(),
            "",
            &self.total_images.to_string(),
        ])?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
