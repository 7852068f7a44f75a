use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ASSET_HEADER: &str = "assetId,captionId,setId,sampleIndex";

/// One generated image. Its embedding is stored under the asset id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageAsset {
    pub asset_id: String,
    pub caption_id: String,
    pub set_id: String,
    pub sample_index: u32,
}

impl ImageAsset {
    pub fn embedding_id(&self) -> &str {
        &self.asset_id
    }
}

pub fn read_assets<R: Read>(input: R) -> Result<Vec<ImageAsset>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut seen = HashSet::new();
    let mut assets = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let bad = |reason: String| Error::Format {
            what: "asset metadata",
            line,
            reason,
        };
        if record.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", record.len())));
        }
        if record.iter().any(str::is_empty) {
            return Err(bad("empty field".into()));
        }
        let asset = ImageAsset {
            asset_id: record[0].to_string(),
            caption_id: record[1].to_string(),
            set_id: record[2].to_string(),
            sample_index: record[3]
                .parse()
                .map_err(|_| bad(format!("bad sampleIndex `{}`", &record[3])))?,
        };
        if !seen.insert(asset.asset_id.clone()) {
            return Err(bad(format!("duplicate assetId `{}`", asset.asset_id)));
        }
        assets.push(asset);
    }
    Ok(assets)
}

pub fn write_assets<W: Write>(assets: &[ImageAsset], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ASSET_HEADER.split(','))?;
    for a in assets {
        w.write_record([
            a.asset_id.as_str(),
            &a.caption_id,
            &a.set_id,
            &a.sample_index.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
