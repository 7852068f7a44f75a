//! Pipeline stages behind the command-line interface.
//!
//! Every stage reads its inputs, computes all outputs in memory, and only then
//! writes them under `<out>/<stage>/`, each file via a temporary name and a
//! rename. A `manifest.json` next to the outputs records the SHA-256 of every
//! input and output together with the stage parameters. Re-running a stage
//! whose manifest matches the current inputs and parameters, and whose
//! outputs are intact, is a no-op.

mod audit;
mod captions;
mod evaluate;
mod filter;
mod ingest;
mod mock;
mod plan;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::caption::{CaptionRecord, Configuration, CounterfactualSet};
use crate::embedding::{ingest_file, read_assets, EmbeddingKind, EmbeddingStore, ImageAsset};
use crate::error::{Error, Result};
use crate::filter::{FilterParams, DEFAULT_KEEP, DEFAULT_MIN_COSINE};
use crate::ids::sha256_hex;
use crate::metrics::DEFAULT_CONDITIONAL_K;
use crate::planner::DEFAULT_SAMPLES_PER_SET;

pub use audit::run_audit;
pub use captions::run_captions;
pub use evaluate::{group_dir_name, run_evaluate};
pub use filter::run_filter;
pub use ingest::run_ingest;
pub use mock::{run_mock_embed, DEFAULT_MOCK_DIM};
pub use plan::run_plan;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionGrouping {
    /// Keep up to `keep` samples per counterfactual set.
    #[default]
    Set,
    /// Keep up to `keep` samples per (subject, category pair) across prefixes.
    Subject,
}

impl std::str::FromStr for RetentionGrouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "set" => Ok(RetentionGrouping::Set),
            "subject" => Ok(RetentionGrouping::Subject),
            other => Err(Error::Argument(format!("unknown grouping `{other}`"))),
        }
    }
}

/// Everything a stage may need. Paths that are `None` fall back to the
/// conventional location inside the run directory where one exists.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads for per-subject and per-set work; 0 picks the default.
    pub workers: usize,
    pub samples_per_set: u32,
    pub text_embeddings: Option<PathBuf>,
    pub image_embeddings: Option<PathBuf>,
    pub assets: Option<PathBuf>,
    pub retention: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub desired: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub status: Option<PathBuf>,
    pub k: Option<usize>,
    pub conditional_k: usize,
    pub filter: FilterParams,
    pub grouping: RetentionGrouping,
    pub male_query: String,
    pub female_query: String,
    pub mock_dim: usize,
}

impl RunConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunConfig {
            config: None,
            out: out.into(),
            seed: DEFAULT_SEED,
            workers: 0,
            samples_per_set: DEFAULT_SAMPLES_PER_SET,
            text_embeddings: None,
            image_embeddings: None,
            assets: None,
            retention: None,
            annotations: None,
            desired: None,
            texts: None,
            manifest: None,
            status: None,
            k: None,
            conditional_k: DEFAULT_CONDITIONAL_K,
            filter: FilterParams {
                min_cosine: DEFAULT_MIN_COSINE,
                keep: DEFAULT_KEEP,
            },
            grouping: RetentionGrouping::Set,
            male_query: crate::audit::DEFAULT_MALE_QUERY.to_string(),
            female_query: crate::audit::DEFAULT_FEMALE_QUERY.to_string(),
            mock_dim: DEFAULT_MOCK_DIM,
        }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn config_path(&self) -> Result<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| Error::Argument("--config is required".into()))
    }

    fn load_configuration(&self) -> Result<Configuration> {
        Configuration::load(self.config_path()?)
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))
    }
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let path = path
        .as_deref()
        .ok_or_else(|| Error::Argument(format!("{flag} is required")))?;
    if !path.exists() {
        return Err(Error::MissingInput {
            path: path.to_path_buf(),
            reason: format!("{flag} does not exist"),
        });
    }
    Ok(path)
}

/// An explicit path, or the conventional one if that exists.
fn or_default(path: &Option<PathBuf>, fallback: PathBuf) -> Option<PathBuf> {
    path.clone()
        .or_else(|| fallback.exists().then_some(fallback))
}

#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub type StageResult = std::result::Result<StageReport, StageError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub stage: &'static str,
    pub dir: PathBuf,
    /// `true` when the manifest showed the outputs were already current.
    pub skipped: bool,
    pub outputs: BTreeMap<String, String>,
    pub summary: Vec<(String, String)>,
}

impl fmt::Display for StageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} ({})",
            self.stage,
            self.dir.display(),
            if self.skipped {
                "up to date"
            } else {
                "written"
            }
        )?;
        for (k, v) in &self.summary {
            writeln!(f, "  {k}: {v}")?;
        }
        for name in self.outputs.keys() {
            writeln!(f, "  -> {name}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RunManifest {
    stage: String,
    tool_version: String,
    inputs: BTreeMap<String, String>,
    parameters: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    summary: Vec<(String, String)>,
}

/// Collects a stage's fingerprint and outputs, then commits them atomically.
struct Stage {
    name: &'static str,
    dir: PathBuf,
    inputs: BTreeMap<String, String>,
    parameters: BTreeMap<String, String>,
    outputs: BTreeMap<String, Vec<u8>>,
    summary: Vec<(String, String)>,
}

impl Stage {
    fn new(name: &'static str, run: &RunConfig) -> Self {
        Stage {
            name,
            dir: run.stage_dir(name),
            inputs: BTreeMap::new(),
            parameters: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: Vec::new(),
        }
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::MissingInput {
                path: path.to_path_buf(),
                reason: format!("{role} file not found"),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(role.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.to_string(), value.to_string());
    }

    fn output(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.outputs.insert(name.into(), bytes);
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    /// A report for the existing outputs if they are current.
    fn current(&self) -> Option<StageReport> {
        let text = fs::read_to_string(self.dir.join(MANIFEST_FILE)).ok()?;
        let manifest: RunManifest = serde_json::from_str(&text).ok()?;
        if manifest.tool_version != env!("CARGO_PKG_VERSION")
            || manifest.inputs != self.inputs
            || manifest.parameters != self.parameters
        {
            return None;
        }
        for (name, hash) in &manifest.outputs {
            let bytes = fs::read(self.dir.join(name)).ok()?;
            if &sha256_hex(&bytes) != hash {
                return None;
            }
        }
        Some(StageReport {
            stage: self.name,
            dir: self.dir.clone(),
            skipped: true,
            outputs: manifest.outputs,
            summary: manifest.summary,
        })
    }

    fn commit(self) -> Result<StageReport> {
        // Outputs of an earlier run that this run no longer produces.
        if let Ok(text) = fs::read_to_string(self.dir.join(MANIFEST_FILE)) {
            if let Ok(old) = serde_json::from_str::<RunManifest>(&text) {
                for name in old
                    .outputs
                    .keys()
                    .filter(|n| !self.outputs.contains_key(*n))
                {
                    let path = self.dir.join(name);
                    if path.exists() {
                        fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                    }
                }
            }
        }
        let mut hashes = BTreeMap::new();
        for (name, bytes) in &self.outputs {
            hashes.insert(name.clone(), sha256_hex(bytes));
        }
        for (name, bytes) in &self.outputs {
            write_atomic(&self.dir.join(name), bytes)?;
        }
        let manifest = RunManifest {
            stage: self.name.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            parameters: self.parameters,
            outputs: hashes.clone(),
            summary: self.summary.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write_atomic(&self.dir.join(MANIFEST_FILE), &json)?;
        Ok(StageReport {
            stage: self.name,
            dir: self.dir,
            skipped: false,
            outputs: hashes,
            summary: self.summary,
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs `body` and tags any failure with the stage name.
fn staged(name: &'static str, body: impl FnOnce() -> Result<StageReport>) -> StageResult {
    body().map_err(|source| StageError {
        stage: name,
        source,
    })
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

/// Enumerated captions with lookups by id.
struct Catalog {
    sets: Vec<CounterfactualSet>,
    set_index: HashMap<String, usize>,
    caption_index: HashMap<String, (usize, usize)>,
}

impl Catalog {
    fn new(config: &Configuration) -> Result<Self> {
        let sets = config.enumerate()?;
        let mut set_index = HashMap::with_capacity(sets.len());
        let mut caption_index = HashMap::new();
        for (i, set) in sets.iter().enumerate() {
            set_index.insert(set.id.clone(), i);
            for (j, m) in set.members.iter().enumerate() {
                caption_index.insert(m.id.clone(), (i, j));
            }
        }
        Ok(Catalog {
            sets,
            set_index,
            caption_index,
        })
    }

    fn set(&self, id: &str) -> Option<&CounterfactualSet> {
        self.set_index.get(id).map(|&i| &self.sets[i])
    }

    fn caption(&self, id: &str) -> Option<&CaptionRecord> {
        self.caption_index
            .get(id)
            .map(|&(i, j)| &self.sets[i].members[j])
    }
}

fn load_store(path: &Path, kind: EmbeddingKind) -> Result<EmbeddingStore> {
    ingest_file(path, kind)
}

/// Reads asset metadata and checks it against the catalog and image store.
fn load_assets(
    path: &Path,
    catalog: &Catalog,
    images: Option<&EmbeddingStore>,
) -> Result<Vec<ImageAsset>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let assets = read_assets(std::io::BufReader::new(file))?;
    for a in &assets {
        let caption = catalog.caption(&a.caption_id).ok_or_else(|| {
            Error::ingest(&a.asset_id, format!("unknown captionId `{}`", a.caption_id))
        })?;
        if caption.set_id != a.set_id {
            return Err(Error::ingest(
                &a.asset_id,
                format!(
                    "setId `{}` does not own caption `{}`",
                    a.set_id, a.caption_id
                ),
            ));
        }
        if let Some(store) = images {
            if !store.contains(a.embedding_id()) {
                return Err(Error::ingest(&a.asset_id, "no image embedding for asset"));
            }
        }
    }
    Ok(assets)
}

fn open(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::io(path, e))
}
