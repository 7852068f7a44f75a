use std::collections::HashMap;
use std::io::Write;

use super::ingest::{image_input, load_pair, text_input};
use super::{
    csv_bytes, open, or_default, required, staged, Catalog, RunConfig, Stage, StageResult,
};
use crate::audit::{
    confusion_stats, error_census, predict_gender, read_annotations, write_census_csv,
    write_confusion_csv, AuditAnnotation, GenderPrediction,
};
use crate::caption::query_text_id;
use crate::embedding::read_assets;
use crate::error::Result;

pub const PREDICTIONS_HEADER: &str = "assetId,prediction,annotatedGender,category";

pub fn run_audit(run: &RunConfig) -> StageResult {
    staged("audit", || {
        let mut stage = Stage::new("audit", run);
        stage.input("config", run.config_path()?)?;
        let annotations_path = required(&run.annotations, "--annotations")?.to_path_buf();
        stage.input("annotations", &annotations_path)?;
        let assets_path = or_default(&run.assets, run.stage_dir("ingest").join("assets.csv"));
        if let Some(p) = &assets_path {
            stage.input("assets", required(&Some(p.clone()), "--assets")?)?;
        }
        let text_path = text_input(run, &mut stage)?;
        let image_path = image_input(run, &mut stage)?;
        stage.param("male_query", &run.male_query);
        stage.param("female_query", &run.female_query);
        if let Some(report) = stage.current() {
            return Ok(report);
        }

        let annotations = read_annotations(open(&annotations_path)?)?;
        let (texts, images) = load_pair(&text_path, &image_path)?;
        let male = texts.require(&query_text_id(&run.male_query))?;
        let female = texts.require(&query_text_id(&run.female_query))?;

        let mut predictions: HashMap<String, GenderPrediction> = HashMap::new();
        for a in &annotations {
            let image = images.require(&a.asset_id)?;
            predictions.insert(a.asset_id.clone(), predict_gender(image, male, female)?);
        }
        let stats = confusion_stats(&predictions, &annotations)?;

        // Attribute group of each asset's caption, for example `White|female`.
        let mut groups: HashMap<String, String> = HashMap::new();
        if let Some(p) = &assets_path {
            let catalog = Catalog::new(&run.load_configuration()?)?;
            for asset in read_assets(open(p)?)? {
                if let Some(c) = catalog.caption(&asset.caption_id) {
                    groups.insert(
                        asset.asset_id,
                        format!("{}|{}", c.attr1.label, c.attr2.label),
                    );
                }
            }
        }
        let census = error_census(&annotations, |id| groups.get(id).cloned())?;

        stage.output(
            "predictions.csv",
            csv_bytes(|o| write_predictions(&annotations, &predictions, o))?,
        );
        stage.output(
            "confusion.csv",
            csv_bytes(|o| write_confusion_csv(&stats, o))?,
        );
        stage.output("census.csv", csv_bytes(|o| write_census_csv(&census, o))?);
        stage.note("annotations", annotations.len());
        stage.note("evaluated", stats.evaluated);
        stage.note("undetermined", stats.undetermined);
        stage.commit()
    })
}

fn write_predictions<W: Write>(
    annotations: &[AuditAnnotation],
    predictions: &HashMap<String, GenderPrediction>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTIONS_HEADER.split(','))?;
    for a in annotations {
        w.write_record([
            a.asset_id.as_str(),
            predictions[&a.asset_id].as_str(),
            a.annotated_gender.map_or("", |g| g.as_str()),
            a.category.as_str(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
