use std::fs;

use super::captions::TEXTS_HEADER;
use super::{or_default, staged, RunConfig, Stage, StageResult};
use crate::embedding::{mock_vector, write_embeddings};
use crate::error::{Error, Result};

pub const DEFAULT_MOCK_DIM: usize = 64;

/// Reads `textId,role,text` rows.
fn read_texts(path: &std::path::Path) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != TEXTS_HEADER {
        return Err(Error::Format {
            what: "text list",
            line: 1,
            reason: format!("expected header `{TEXTS_HEADER}`"),
        });
    }
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Format {
                what: "text list",
                line: i + 2,
                reason: format!("expected 3 fields, found {}", record.len()),
            });
        }
        out.push((record[0].to_string(), record[2].to_string()));
    }
    Ok(out)
}

/// Embeds every text of the caption stage with the deterministic mock
/// encoder. Each text is embedded from its words, not its id, so the same
/// text always maps to the same vector.
pub fn run_mock_embed(run: &RunConfig) -> StageResult {
    staged("mock-embed", || {
        let mut stage = Stage::new("mock-embed", run);
        let texts_path = or_default(&run.texts, run.stage_dir("captions").join("texts.csv"))
            .ok_or_else(|| Error::MissingInput {
                path: run.stage_dir("captions").join("texts.csv"),
                reason: "run the captions stage first or pass --texts".into(),
            })?;
        stage.input("texts", &texts_path)?;
        stage.param("dim", run.mock_dim);
        if let Some(report) = stage.current() {
            return Ok(report);
        }
        if run.mock_dim < 2 {
            return Err(Error::Argument("mock dimension must be at least 2".into()));
        }

        let texts = read_texts(&texts_path)?;
        let vectors: Vec<Vec<f64>> = run.thread_pool()?.install(|| {
            use rayon::prelude::*;
            texts
                .par_iter()
                .map(|(_, t)| mock_vector(t, run.mock_dim))
                .collect()
        });
        let mut buf = Vec::new();
        write_embeddings(
            &mut buf,
            run.mock_dim,
            texts
                .iter()
                .zip(&vectors)
                .map(|((id, _), v)| (id.as_str(), v.as_slice())),
        )?;
        stage.output("text_embeddings.cfeb", buf);
        stage.note("texts", texts.len());
        stage.note("dim", run.mock_dim);
        stage.commit()
    })
}
