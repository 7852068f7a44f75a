use std::collections::HashSet;
use std::io::Write;

use super::{csv_bytes, staged, RunConfig, Stage, StageResult};
use crate::caption::{
    dataset_census, neutral_prompt, neutral_prompt_id, query_text_id, Configuration,
    CounterfactualSet,
};
use crate::error::Result;

pub const CAPTIONS_HEADER: &str =
    "captionId,setId,prefix,subjectKind,subject,catA,attrA,catB,attrB,text";
pub const SETS_HEADER: &str = "setId,prefix,subjectKind,subject,catA,catB,members";
pub const TEXTS_HEADER: &str = "textId,role,text";

pub fn run_captions(run: &RunConfig) -> StageResult {
    staged("captions", || {
        let mut stage = Stage::new("captions", run);
        let config_path = run.config_path()?;
        stage.input("config", config_path)?;
        stage.param("samples_per_set", run.samples_per_set);
        stage.param("male_query", &run.male_query);
        stage.param("female_query", &run.female_query);
        if let Some(report) = stage.current() {
            return Ok(report);
        }

        let config = Configuration::load(config_path)?;
        let sets = config.enumerate()?;
        let census = dataset_census(&config, u64::from(run.samples_per_set));

        stage.output("captions.csv", csv_bytes(|out| write_captions(&sets, out))?);
        stage.output("sets.csv", csv_bytes(|out| write_sets(&sets, out))?);
        stage.output("census.csv", csv_bytes(|out| census.write_csv(out))?);
        stage.output(
            "texts.csv",
            csv_bytes(|out| {
                write_texts(&config, &sets, &[&run.male_query, &run.female_query], out)
            })?,
        );
        stage.note("sets", census.total_sets);
        stage.note("captions", census.total_captions);
        stage.note("planned_images", census.total_images);
        stage.commit()
    })
}

fn write_captions<W: Write>(sets: &[CounterfactualSet], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CAPTIONS_HEADER.split(','))?;
    for set in sets {
        for c in &set.members {
            w.write_record([
                c.id.as_str(),
                &c.set_id,
                c.prefix.as_str(),
                c.subject.kind.as_str(),
                &c.subject.display_label(),
                c.attr1.category.as_str(),
                &c.attr1.label,
                c.attr2.category.as_str(),
                &c.attr2.label,
                &c.text,
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_sets<W: Write>(sets: &[CounterfactualSet], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SETS_HEADER.split(','))?;
    for s in sets {
        w.write_record([
            s.id.as_str(),
            s.prefix.as_str(),
            s.subject.kind.as_str(),
            &s.subject.display_label(),
            s.category_pair.0.as_str(),
            s.category_pair.1.as_str(),
            &s.members.len().to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Every text that needs an embedding: captions, then neutral prompts, then
/// audit queries. Each id appears once.
fn write_texts<W: Write>(
    config: &Configuration,
    sets: &[CounterfactualSet],
    queries: &[&str],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TEXTS_HEADER.split(','))?;
    for set in sets {
        for c in &set.members {
            w.write_record([c.id.as_str(), "caption", &c.text])?;
        }
    }
    let mut seen = HashSet::new();
    for prefix in config.prefixes() {
        for subject in config.subjects() {
            let id = neutral_prompt_id(prefix, subject);
            if seen.insert(id.clone()) {
                w.write_record([id.as_str(), "neutral", &neutral_prompt(prefix, subject)])?;
            }
        }
    }
    for q in queries {
        let id = query_text_id(q);
        if seen.insert(id.clone()) {
            w.write_record([id.as_str(), "query", q])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
