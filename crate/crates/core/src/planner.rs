//! Generation job manifests for over-generating counterfactual sets.
//!
//! Each (set, sample) pair gets one attention-share fraction `p` drawn
//! uniformly from [0.1, 0.9] and one sampler seed. Both come from a stream
//! keyed by `(master_seed, set_id, sample_index)`, so any job can be
//! regenerated without replaying the others. The stream is SHA-256 of the key
//! under [`GENERATOR_NAME`], used as a ChaCha8 seed.

use std::collections::HashSet;
use std::io::{BufRead, Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::caption::CounterfactualSet;
use crate::error::{Error, Result};

pub const GENERATOR_NAME: &str = "cfprobe/jobs/sha256-chacha8/v1";
pub const P_MIN: f64 = 0.1;
pub const P_MAX: f64 = 0.9;
pub const DEFAULT_SAMPLES_PER_SET: u32 = 100;
pub const MANIFEST_HEADER: &str = "setId,sampleIndex,p,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub set_id: String,
    pub sample_index: u32,
    pub p: f64,
    pub seed: u64,
}

fn job_stream(master_seed: u64, set_id: &str, sample_index: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(GENERATOR_NAME.as_bytes());
    hasher.update(master_seed.to_le_bytes());
    hasher.update((set_id.len() as u64).to_le_bytes());
    hasher.update(set_id.as_bytes());
    hasher.update(sample_index.to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// Maps 53 random bits onto [0, 1).
fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// The job for one (set, sample); pure function of its key.
pub fn job_for(master_seed: u64, set_id: &str, sample_index: u32) -> GenerationJob {
    let mut rng = job_stream(master_seed, set_id, sample_index);
    let p = P_MIN + (P_MAX - P_MIN) * unit_interval(rng.next_u64());
    let seed = rng.next_u64();
    GenerationJob {
        set_id: set_id.to_string(),
        sample_index,
        p,
        seed,
    }
}

/// Plans `samples_per_set` jobs for every set id, in input order.
pub fn plan_jobs_by_id<'a>(
    set_ids: impl IntoIterator<Item = &'a str>,
    samples_per_set: u32,
    master_seed: u64,
) -> Result<Vec<GenerationJob>> {
    if samples_per_set == 0 {
        return Err(Error::Argument("samples per set must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    let mut jobs = Vec::new();
    for set_id in set_ids {
        if !seen.insert(set_id) {
            return Err(Error::Argument(format!("duplicate set id `{set_id}`")));
        }
        jobs.extend((0..samples_per_set).map(|i| job_for(master_seed, set_id, i)));
    }
    Ok(jobs)
}

pub fn plan_jobs(
    sets: &[CounterfactualSet],
    samples_per_set: u32,
    master_seed: u64,
) -> Result<Vec<GenerationJob>> {
    plan_jobs_by_id(
        sets.iter().map(|s| s.id.as_str()),
        samples_per_set,
        master_seed,
    )
}

pub fn write_manifest<W: Write>(jobs: &[GenerationJob], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_HEADER.split(','))?;
    for job in jobs {
        w.write_record([
            job.set_id.as_str(),
            &job.sample_index.to_string(),
            &format!("{:.6}", job.p),
            &job.seed.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<GenerationJob>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut jobs = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let bad = |reason: String| Error::Format {
            what: "job manifest",
            line,
            reason,
        };
        if record.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", record.len())));
        }
        let p: f64 = record[2].parse().map_err(|_| bad("bad p".into()))?;
        if !(P_MIN..=P_MAX).contains(&p) {
            return Err(bad(format!("p = {p} outside [{P_MIN}, {P_MAX}]")));
        }
        jobs.push(GenerationJob {
            set_id: record[0].to_string(),
            sample_index: record[1]
                .parse()
                .map_err(|_| bad("bad sampleIndex".into()))?,
            p,
            seed: record[3].parse().map_err(|_| bad("bad seed".into()))?,
        });
    }
    Ok(jobs)
}

pub const STATUS_HEADER: &str = "setId,sampleIndex,status,message";

/// Outcome of one job as reported by the executor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Ok,
    Failed,
}

impl JobState {
    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Ok => "ok",
            JobState::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub set_id: String,
    pub sample_index: u32,
    pub state: JobState,
    pub message: String,
}

pub fn read_job_status<R: Read>(input: R) -> Result<Vec<JobStatus>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let bad = |reason: String| Error::Format {
            what: "job status",
            line: i + 2,
            reason,
        };
        if record.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", record.len())));
        }
        let state = match &record[2] {
            "ok" => JobState::Ok,
            "failed" => JobState::Failed,
            other => return Err(bad(format!("unknown status `{other}`"))),
        };
        rows.push(JobStatus {
            set_id: record[0].to_string(),
            sample_index: record[1]
                .parse()
                .map_err(|_| bad("bad sampleIndex".into()))?,
            state,
            message: record[3].to_string(),
        });
    }
    Ok(rows)
}

pub fn write_job_status<W: Write>(rows: &[JobStatus], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STATUS_HEADER.split(','))?;
    for s in rows {
        w.write_record([
            s.set_id.as_str(),
            &s.sample_index.to_string(),
            s.state.as_str(),
            &s.message,
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Checks that `status` covers every job exactly once and nothing else.
/// Returns the keys of failed jobs.
pub fn check_status_coverage(
    jobs: &[GenerationJob],
    status: &[JobStatus],
) -> Result<HashSet<(String, u32)>> {
    let planned: HashSet<(&str, u32)> = jobs
        .iter()
        .map(|j| (j.set_id.as_str(), j.sample_index))
        .collect();
    let mut seen = HashSet::new();
    let mut failed = HashSet::new();
    for s in status {
        let key = (s.set_id.as_str(), s.sample_index);
        if !planned.contains(&key) {
            return Err(Error::Argument(format!(
                "status for unplanned job ({}, {})",
                s.set_id, s.sample_index
            )));
        }
        if !seen.insert(key) {
            return Err(Error::Argument(format!(
                "job ({}, {}) reported more than once",
                s.set_id, s.sample_index
            )));
        }
        if s.state == JobState::Failed {
            failed.insert((s.set_id.clone(), s.sample_index));
        }
    }
    if seen.len() != planned.len() {
        return Err(Error::Argument(format!(
            "status covers {} of {} jobs",
            seen.len(),
            planned.len()
        )));
    }
    Ok(failed)
}
