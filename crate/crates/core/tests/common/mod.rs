//! Shared fixtures and independent reference implementations for the
//! integration tests.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use cfprobe::caption::{neutral_prompt_id, Configuration};
use cfprobe::embedding::{ingest_file, write_assets, write_embeddings, EmbeddingKind, ImageAsset};
use cfprobe::metrics::{AttributeKey, DesiredDistribution};
use cfprobe::pipeline::{
    run_captions, run_evaluate, run_filter, run_ingest, run_mock_embed, run_plan, RunConfig,
    StageReport,
};
use cfprobe::retrieval::average_text_embedding;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub const RACES: [&str; 6] = [
    "White",
    "Black",
    "Indian",
    "Asian",
    "Middle Eastern",
    "Latino",
];
pub const GENDERS: [&str; 2] = ["male", "female"];
pub const PREFIXES: [&str; 2] = ["A photo of a", "An image of a"];
pub const SUBJECTS: [&str; 5] = ["doctor", "nurse", "pilot", "chef", "lawyer"];
/// The subject whose top 12 holds three images of the first race-gender pair.
pub const BIASED: &str = "nurse";
pub const SAMPLES_PER_SET: u32 = 3;
/// Sample index whose images score highest for retrieval but fail the
/// caption-similarity filter.
pub const DECOY_SAMPLE: u32 = 2;
pub const MOCK_DIM: usize = 64;

pub fn planted_config() -> String {
    let mut s = String::from("# planted-bias fixture\n");
    for p in PREFIXES {
        s.push_str(&format!("prefix,,{p}\n"));
    }
    for subj in SUBJECTS {
        s.push_str(&format!("subject,occupation,{subj}\n"));
    }
    for r in RACES {
        s.push_str(&format!("attribute,race,{r}\n"));
    }
    for g in GENDERS {
        s.push_str(&format!("attribute,gender,{g}\n"));
    }
    s.push_str("pair,occupation,race:gender\n");
    s
}

/// Tiny configuration: 1 prefix, 1 subject, 3 x 2 attributes.
pub fn tiny_config() -> &'static str {
    "prefix,,A photo of a\nsubject,occupation,doctor\nattribute,race,White\nattribute,race,Black\nattribute,race,Asian\nattribute,gender,male\nattribute,gender,female\n"
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn minus_projection(v: &[f64], onto: &[f64]) -> Vec<f64> {
    let d = dot(v, onto);
    v.iter().zip(onto).map(|(x, o)| x - d * o).collect()
}

fn gaussianish(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            // Sum of uniforms: cheap, symmetric, good enough for a direction.
            (0..4)
                .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
                .sum::<f64>()
                - 2.0
        })
        .collect()
}

/// `s·q + t·ĉ⊥ + r·n̂` where ĉ⊥ is the caption's component orthogonal to `q`
/// and n̂ is noise orthogonal to both. The cosine to `q` is exactly `s`.
fn planted_image(q: &[f64], caption: &[f64], s: f64, t: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cp = unit(&minus_projection(caption, q));
    let noise = gaussianish(rng, q.len());
    let n = unit(&minus_projection(&minus_projection(&noise, q), &cp));
    let r = (1.0 - s * s - t * t).max(0.0).sqrt();
    (0..q.len())
        .map(|i| s * q[i] + t * cp[i] + r * n[i])
        .collect()
}

pub struct PlantedFixture {
    pub root: PathBuf,
    pub run: RunConfig,
    /// Minimum caption cosine over all non-decoy images, as written.
    pub min_clean_cosine: f64,
}

/// Writes the configuration, runs captions, plan and mock-embed, then plants
/// image embeddings and asset metadata under `root`.
pub fn plant(root: &Path) -> PlantedFixture {
    fs::create_dir_all(root).unwrap();
    let config = root.join("planted.cfg");
    fs::write(&config, planted_config()).unwrap();
    let mut run = RunConfig::new(root.join("run"));
    run.config = Some(config.clone());
    run.samples_per_set = SAMPLES_PER_SET;
    run.mock_dim = MOCK_DIM;
    run.seed = 7;
    run_captions(&run).unwrap();
    run_plan(&run).unwrap();
    run_mock_embed(&run).unwrap();

    let texts = ingest_file(
        &run.stage_dir("mock-embed").join("text_embeddings.cfeb"),
        EmbeddingKind::Text,
    )
    .unwrap();
    let cfg = Configuration::load(&config).unwrap();
    let sets = cfg.enumerate().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut assets = Vec::new();
    let mut vectors: Vec<(String, Vec<f64>)> = Vec::new();
    let mut min_clean = f64::INFINITY;

    for subject in cfg.subjects() {
        let per_prefix: Vec<&[f64]> = cfg
            .prefixes()
            .iter()
            .map(|p| texts.get(&neutral_prompt_id(p, subject)).unwrap())
            .collect();
        let q = average_text_embedding(&per_prefix).unwrap();
        let biased = subject.label == BIASED;
        let mut high_rank = 0usize;
        let mut low_rank = 0usize;
        for (pi, set) in sets.iter().filter(|s| &s.subject == subject).enumerate() {
            for sample in 0..SAMPLES_PER_SET {
                for (j, member) in set.members.iter().enumerate() {
                    let c = texts.get(&member.id).unwrap();
                    let v = if sample == DECOY_SAMPLE {
                        if j == 0 {
                            planted_image(&q, c, 0.9, -0.43, &mut rng)
                        } else {
                            planted_image(&q, c, 0.9, 0.3, &mut rng)
                        }
                    } else {
                        let slot = (pi, sample);
                        let high = if biased {
                            (j == 0 && slot != (1, 1)) || (j < 10 && slot == (0, 0))
                        } else {
                            slot == (0, 0)
                        };
                        let s = if high {
                            high_rank += 1;
                            0.6 - 0.001 * high_rank as f64
                        } else {
                            low_rank += 1;
                            0.25 - 0.001 * low_rank as f64
                        };
                        let v = planted_image(&q, c, s, 0.7, &mut rng);
                        min_clean = min_clean.min(dot(&v, c));
                        v
                    };
                    if sample == DECOY_SAMPLE && j == 0 {
                        assert!(dot(&v, c) < 0.2, "decoy member must fail the filter");
                    }
                    let asset_id = format!("img{:05}", assets.len());
                    assets.push(ImageAsset {
                        asset_id: asset_id.clone(),
                        caption_id: member.id.clone(),
                        set_id: set.id.clone(),
                        sample_index: sample,
                    });
                    vectors.push((asset_id, v));
                }
            }
        }
        assert_eq!(high_rank, 12, "exactly K images are planted above the rest");
    }
    assert!(
        min_clean >= 0.25,
        "clean images too far from captions: {min_clean}"
    );

    let images = root.join("images.cfeb");
    let mut buf = Vec::new();
    write_embeddings(
        &mut buf,
        MOCK_DIM,
        vectors.iter().map(|(id, v)| (id.as_str(), v.as_slice())),
    )
    .unwrap();
    fs::write(&images, buf).unwrap();
    let assets_path = root.join("assets.csv");
    let mut buf = Vec::new();
    write_assets(&assets, &mut buf).unwrap();
    fs::write(&assets_path, buf).unwrap();

    run.image_embeddings = Some(images);
    run.assets = Some(assets_path);
    PlantedFixture {
        root: root.to_path_buf(),
        run,
        min_clean_cosine: min_clean,
    }
}

/// Ingest, filter and evaluate on a planted fixture. The asset table for the
/// later stages comes from the ingest stage.
pub fn run_downstream(run: &RunConfig) -> Vec<StageReport> {
    let ingest = run_ingest(run).unwrap();
    let mut later = run.clone();
    later.assets = None;
    vec![
        ingest,
        run_filter(&later).unwrap(),
        run_evaluate(&later).unwrap(),
    ]
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> HashMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut HashMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path
                    .strip_prefix(base)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = HashMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn read_csv(path: &Path) -> Vec<HashMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers
                .iter()
                .cloned()
                .zip(rec.iter().map(str::to_string))
                .collect()
        })
        .collect()
}

/// Skew of one key computed straight from the definition.
pub fn oracle_skew(retrieved: &[String], key: &str, desired: &HashMap<String, f64>) -> f64 {
    let k = retrieved.len() as f64;
    let hits = retrieved.iter().filter(|r| r.as_str() == key).count() as f64;
    if hits == 0.0 {
        f64::NEG_INFINITY
    } else {
        ((hits / k) / desired[key]).ln()
    }
}

pub fn oracle_max_skew(retrieved: &[String], desired: &HashMap<String, f64>) -> f64 {
    desired
        .keys()
        .map(|k| oracle_skew(retrieved, k, desired))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Full sort of the whole pool: score descending, id ascending.
pub fn oracle_top_k(query: &[f64], pool: &[(String, Vec<f64>)], k: usize) -> Vec<String> {
    let mut scored: Vec<(f64, &String)> = pool.iter().map(|(id, v)| (dot(query, v), id)).collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    scored
        .into_iter()
        .take(k)
        .map(|(_, id)| id.clone())
        .collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    unit(&gaussianish(rng, dim))
}

pub fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

pub struct MetricFixture {
    pub keys: Vec<String>,
    pub retrieved: Vec<String>,
    pub desired: HashMap<String, f64>,
}

pub fn metric_fixture(rng: &mut ChaCha8Rng, uniform: bool) -> MetricFixture {
    let (na, nb) = (1 + below(rng, 14), 1 + below(rng, 6));
    let keys: Vec<String> = (0..na)
        .flat_map(|a| (0..nb).map(move |b| format!("a{a}|b{b}")))
        .collect();
    let pool = 1 + below(rng, 200);
    let k = 1 + below(rng, 84);
    // Skewed draws so that some keys repeat and others never appear.
    let hot = below(rng, keys.len());
    let retrieved = (0..k.min(pool))
        .map(|_| {
            if rng.next_u64().is_multiple_of(3) {
                keys[hot].clone()
            } else {
                keys[below(rng, keys.len())].clone()
            }
        })
        .collect();
    let weights: Vec<f64> = keys
        .iter()
        .map(|_| {
            if uniform {
                1.0
            } else {
                0.05 + (rng.next_u64() % 1000) as f64 / 1000.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let desired = keys
        .iter()
        .cloned()
        .zip(weights.iter().map(|w| w / total))
        .collect();
    MetricFixture {
        keys,
        retrieved,
        desired,
    }
}

pub fn to_key(s: &str) -> AttributeKey {
    let (a, b) = s.split_once('|').unwrap();
    AttributeKey::pair(a, b)
}

pub fn library_desired(fx: &MetricFixture) -> DesiredDistribution {
    DesiredDistribution::new(fx.keys.iter().map(|k| (to_key(k), fx.desired[k])).collect()).unwrap()
}

pub fn same(a: f64, b: f64) -> bool {
    (a == f64::NEG_INFINITY && b == f64::NEG_INFINITY) || (a - b).abs() <= 1e-12
}

pub fn random_pool(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    coarse: bool,
) -> Vec<(String, Vec<f64>)> {
    (0..n)
        .map(|i| {
            let v = if coarse {
                // Few distinct directions, so equal scores are common.
                let axis = below(rng, 3);
                (0..dim)
                    .map(|d| if d == axis { 1.0 } else { 0.0 })
                    .collect()
            } else {
                random_unit(rng, dim)
            };
            (format!("asset{:04}", (i * 7919) % 10_000), v)
        })
        .collect()
}
