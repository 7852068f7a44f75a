use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::ingest::{assets_input, image_input, load_pair, text_input};
use super::{
    csv_bytes, load_assets, staged, Catalog, RetentionGrouping, RunConfig, Stage, StageResult,
};
use crate::embedding::ImageAsset;
use crate::error::{Error, Result};
use crate::filter::{
    score_sample, select_and_filter_grouped, write_retention_report, MemberEmbedding, ScoredSample,
};

/// Assets of one generated sample, keyed by caption id.
type Sample<'a> = HashMap<&'a str, &'a ImageAsset>;

/// Groups assets into samples; a caption may appear at most once per sample.
fn samples_of(assets: &[ImageAsset]) -> Result<BTreeMap<(&str, u32), Sample<'_>>> {
    let mut samples: BTreeMap<(&str, u32), Sample<'_>> = BTreeMap::new();
    for a in assets {
        let slot = samples
            .entry((a.set_id.as_str(), a.sample_index))
            .or_default();
        if slot.insert(a.caption_id.as_str(), a).is_some() {
            return Err(Error::ingest(
                &a.asset_id,
                format!(
                    "caption `{}` has two images in sample {} of set `{}`",
                    a.caption_id, a.sample_index, a.set_id
                ),
            ));
        }
    }
    Ok(samples)
}

pub fn run_filter(run: &RunConfig) -> StageResult {
    staged("filter", || {
        let mut stage = Stage::new("filter", run);
        stage.input("config", run.config_path()?)?;
        let assets_path = assets_input(run, &mut stage)?;
        let text_path = text_input(run, &mut stage)?;
        let image_path = image_input(run, &mut stage)?;
        stage.param("min_cosine", run.filter.min_cosine);
        stage.param("keep", run.filter.keep);
        stage.param("grouping", format!("{:?}", run.grouping).to_lowercase());
        if let Some(report) = stage.current() {
            return Ok(report);
        }
        if run.filter.keep == 0 {
            return Err(Error::Argument("--keep must be at least 1".into()));
        }

        let config = run.load_configuration()?;
        let catalog = Catalog::new(&config)?;
        let (texts, images) = load_pair(&text_path, &image_path)?;
        let assets = load_assets(&assets_path, &catalog, Some(&images))?;
        let samples: Vec<((&str, u32), Sample<'_>)> = samples_of(&assets)?.into_iter().collect();

        let scored: Vec<Option<ScoredSample>> = run.thread_pool()?.install(|| {
            samples
                .par_iter()
                .map(|((set_id, index), sample)| {
                    let set = catalog.set(set_id).expect("validated by load_assets");
                    if sample.len() != set.members.len() {
                        log::warn!(
                            "set {set_id} sample {index}: {} of {} images present, skipped",
                            sample.len(),
                            set.members.len()
                        );
                        return Ok(None);
                    }
                    let members = set
                        .members
                        .iter()
                        .map(|m| {
                            let asset = sample[m.id.as_str()];
                            Ok(MemberEmbedding {
                                caption: texts.require(&m.id)?,
                                image: images.require(asset.embedding_id())?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    score_sample(set_id, *index, &members).map(Some)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let scored: Vec<ScoredSample> = scored.into_iter().flatten().collect();
        let incomplete = samples.len() - scored.len();

        let rows = match run.grouping {
            RetentionGrouping::Set => {
                select_and_filter_grouped(&scored, run.filter, |s| s.set_id.clone())
            }
            RetentionGrouping::Subject => select_and_filter_grouped(&scored, run.filter, |s| {
                let set = catalog.set(&s.set_id).expect("scored sets are known");
                (set.subject.clone(), set.category_pair)
            }),
        };
        let retained = rows.iter().filter(|r| r.retained).count();
        stage.output(
            "retention.csv",
            csv_bytes(|out| write_retention_report(&rows, out))?,
        );
        stage.note("samples", samples.len());
        stage.note("incomplete_samples", incomplete);
        stage.note("retained", retained);
        stage.commit()
    })
}
