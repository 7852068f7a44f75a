use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{
    csv_bytes, load_assets, load_store, open, or_default, required, staged, Catalog, RunConfig,
    Stage, StageResult,
};
use crate::caption::neutral_prompt_id;
use crate::embedding::{write_assets, EmbeddingKind, EmbeddingStore};
use crate::error::{Error, Result};
use crate::planner::{check_status_coverage, read_job_status, read_manifest};

pub const SUMMARY_HEADER: &str = "metric,value";

/// Default location of the text embeddings: the mock stage output, if any.
pub(super) fn text_embeddings_path(run: &RunConfig) -> Option<std::path::PathBuf> {
    or_default(
        &run.text_embeddings,
        run.stage_dir("mock-embed").join("text_embeddings.cfeb"),
    )
}

/// Registers the text embedding file as a stage input.
pub(super) fn text_input(run: &RunConfig, stage: &mut Stage) -> Result<PathBuf> {
    let path = text_embeddings_path(run);
    let path = required(&path, "--text-embeddings")?;
    stage.input("text_embeddings", path)?;
    Ok(path.to_path_buf())
}

/// Registers the image embedding file as a stage input.
pub(super) fn image_input(run: &RunConfig, stage: &mut Stage) -> Result<PathBuf> {
    let path = required(&run.image_embeddings, "--image-embeddings")?;
    stage.input("image_embeddings", path)?;
    Ok(path.to_path_buf())
}

/// Asset table accepted by the ingest stage, or an explicit one.
pub(super) fn assets_input(run: &RunConfig, stage: &mut Stage) -> Result<PathBuf> {
    let path =
        or_default(&run.assets, run.stage_dir("ingest").join("assets.csv")).ok_or_else(|| {
            Error::MissingInput {
                path: run.stage_dir("ingest").join("assets.csv"),
                reason: "run the ingest stage first or pass --assets".into(),
            }
        })?;
    let path = required(&Some(path), "--assets")?.to_path_buf();
    stage.input("assets", &path)?;
    Ok(path)
}

pub(super) fn load_pair(text: &Path, image: &Path) -> Result<(EmbeddingStore, EmbeddingStore)> {
    let (texts, images) = rayon::join(
        || load_store(text, EmbeddingKind::Text),
        || load_store(image, EmbeddingKind::Image),
    );
    let (texts, images) = (texts?, images?);
    if texts.dim() != images.dim() {
        return Err(Error::DimensionMismatch {
            expected: texts.dim(),
            actual: images.dim(),
        });
    }
    Ok((texts, images))
}

/// Validates embeddings, asset metadata and (optionally) the executor's job
/// status against the caption catalog. Writes the accepted asset table that
/// later stages read.
pub fn run_ingest(run: &RunConfig) -> StageResult {
    staged("ingest", || {
        let mut stage = Stage::new("ingest", run);
        stage.input("config", run.config_path()?)?;
        let assets_path = required(&run.assets, "--assets")?;
        stage.input("assets", assets_path)?;
        let status_path = run.status.as_deref();
        let manifest_path = or_default(&run.manifest, run.stage_dir("plan").join("jobs.csv"));
        if let Some(p) = status_path {
            stage.input("status", p)?;
            let m = required(&manifest_path, "--manifest")?;
            stage.input("manifest", m)?;
        }
        let text_path = text_input(run, &mut stage)?;
        let image_path = image_input(run, &mut stage)?;
        if let Some(report) = stage.current() {
            return Ok(report);
        }

        let (texts, images) = load_pair(&text_path, &image_path)?;
        let config = run.load_configuration()?;
        let catalog = Catalog::new(&config)?;
        let mut assets = load_assets(assets_path, &catalog, Some(&images))?;

        let mut failed_jobs = 0;
        if let Some(p) = status_path {
            let manifest = read_manifest(open(manifest_path.as_deref().expect("checked above"))?)?;
            let status = read_job_status(open(p)?)?;
            let failed = check_status_coverage(&manifest, &status)?;
            failed_jobs = failed.len();
            let before = assets.len();
            assets.retain(|a| !failed.contains(&(a.set_id.clone(), a.sample_index)));
            if assets.len() < before {
                log::warn!("dropped {} assets of failed jobs", before - assets.len());
            }
        }

        let mut missing_captions = Vec::new();
        let mut subjects_seen = HashSet::new();
        let set_ids: std::collections::BTreeSet<&str> =
            assets.iter().map(|a| a.set_id.as_str()).collect();
        for set_id in set_ids {
            let set = catalog.set(set_id).expect("validated by load_assets");
            for m in &set.members {
                if !texts.contains(&m.id) {
                    missing_captions.push(m.id.clone());
                }
            }
            subjects_seen.insert((set.prefix.clone(), set.subject.clone()));
        }
        if let Some(first) = missing_captions.first() {
            return Err(Error::ingest(
                first,
                format!("{} caption text embeddings missing", missing_captions.len()),
            ));
        }
        for (prefix, subject) in &subjects_seen {
            let id = neutral_prompt_id(prefix, subject);
            if !texts.contains(&id) {
                return Err(Error::ingest(
                    &id,
                    format!(
                        "no text embedding for the neutral prompt of `{}`",
                        subject.label
                    ),
                ));
            }
        }
        let referenced: HashSet<&str> = assets.iter().map(|a| a.asset_id.as_str()).collect();
        let unreferenced = images
            .iter()
            .filter(|(id, _)| !referenced.contains(id))
            .count();

        let rows = [
            ("dim", texts.dim().to_string()),
            ("text_embeddings", texts.len().to_string()),
            ("image_embeddings", images.len().to_string()),
            ("assets_accepted", assets.len().to_string()),
            ("failed_jobs", failed_jobs.to_string()),
            ("unreferenced_image_embeddings", unreferenced.to_string()),
        ];
        stage.output("assets.csv", csv_bytes(|out| write_assets(&assets, out))?);
        stage.output(
            "ingest_summary.csv",
            csv_bytes(|out| write_summary(&rows, out))?,
        );
        for (k, v) in rows {
            stage.note(k, v);
        }
        stage.commit()
    })
}

fn write_summary<W: Write>(rows: &[(&str, String)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
