//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cfprobe::audit::{
    confusion_stats, error_census, AuditAnnotation, ErrorCategory, Gender, GenderPrediction,
};
use cfprobe::caption::Configuration;
use cfprobe::embedding::{ingest, write_embeddings, EmbeddingKind};
use cfprobe::filter::{select_and_filter, write_retention_report, FilterParams, ScoredSample};
use cfprobe::metrics::{max_skew_at_k, skew_at_k, AttributeKey};
use cfprobe::pipeline::{run_audit, run_captions, RunConfig};
use cfprobe::planner::{plan_jobs_by_id, P_MAX, P_MIN};
use cfprobe::retrieval::{top_k, PoolItem};
use common::*;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || {
        format!("took {elapsed:.2?}, limit {limit:?}")
    })
}

/// Counterfactual sets, images per set and total images for every
/// (subject, attribute pair) row of the expected dataset table.
const DATASET_TABLE: [(&str, &str, &str, u64, u64, u64); 9] = [
    ("occupation", "race", "gender", 1044, 12, 1_252_800),
    ("occupation", "religion", "gender", 1044, 8, 835_200),
    ("occupation", "race", "religion", 1044, 24, 2_505_600),
    ("occupation", "physical", "gender", 1044, 28, 2_923_200),
    ("occupation", "physical", "race", 1044, 84, 8_769_600),
    ("occupation", "physical", "religion", 1044, 56, 5_846_400),
    ("personality_trait", "race", "gender", 252, 12, 302_400),
    ("personality_trait", "religion", "gender", 252, 8, 201_600),
    ("personality_trait", "race", "religion", 252, 24, 604_800),
];

fn census_reproduction() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("inventory.cfg");
    fs::write(&cfg, Configuration::default_inventory_text()).unwrap();
    let mut run = RunConfig::new(tmp.path().join("run"));
    run.config = Some(cfg);
    run.samples_per_set = 100;
    let start = Instant::now();
    run_captions(&run).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let dir = run.stage_dir("captions");
    let rows = read_csv(&dir.join("census.csv"));
    let (table, total): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r["subject_kind"] != "total");
    check(table.len() == DATASET_TABLE.len(), || {
        format!("{} census rows", table.len())
    })?;
    for (kind, a, b, sets, per_set, images) in DATASET_TABLE {
        let row = table
            .iter()
            .find(|r| r["subject_kind"] == kind && r["cat_a"] == a && r["cat_b"] == b)
            .ok_or_else(|| format!("no row for {kind} ({a}, {b})"))?;
        let got: Vec<u64> = ["sets", "images_per_set", "total_images"]
            .iter()
            .map(|c| row[*c].parse().unwrap())
            .collect();
        check(got == [sets, per_set, images], || {
            format!("{kind} ({a}, {b}): {got:?}")
        })?;
    }
    let lines = |name: &str| fs::read_to_string(dir.join(name)).unwrap().lines().count() - 1;
    let captions = lines("captions.csv");
    let sets = lines("sets.csv");
    check(captions == 232_416, || format!("{captions} captions"))?;
    check(sets == 7_020, || format!("{sets} sets"))?;
    check(total[0]["sets"] == "7020", || {
        format!("total sets {}", total[0]["sets"])
    })?;
    check(total[0]["total_images"] == "23241600", || {
        format!("total images {}", total[0]["total_images"])
    })?;
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!(
        "7020 sets, 232416 captions, 23241600 images in {elapsed:.2?}"
    ))
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1000;
    for i in 0..n {
        let uniform = i % 2 == 0;
        let fx = metric_fixture(&mut rng, uniform);
        let desired = library_desired(&fx);
        let retrieved: Vec<AttributeKey> = fx.retrieved.iter().map(|k| to_key(k)).collect();
        for key in &fx.keys {
            let got = skew_at_k(&retrieved, &to_key(key), &desired).map_err(|e| e.to_string())?;
            let want = oracle_skew(&fx.retrieved, key, &fx.desired);
            check(same(got, want), || {
                format!("fixture {i} key {key}: {got} vs {want}")
            })?;
        }
        let got = max_skew_at_k(&retrieved, &desired).map_err(|e| e.to_string())?;
        check(
            same(got, oracle_max_skew(&fx.retrieved, &fx.desired)),
            || format!("fixture {i}: MaxSkew {got}"),
        )?;
        if uniform {
            let bound = (fx.keys.len() as f64).ln();
            check(got >= 0.0 && got <= bound + 1e-12, || {
                format!("fixture {i}: MaxSkew {got} outside [0, {bound}]")
            })?;
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{n} fixtures in {:.2?}", start.elapsed()))
}

fn planted_bias() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let fx = plant(tmp.path());
    run_downstream(&fx.run);
    let eval = fx.run.stage_dir("evaluate");
    let rows = read_csv(&eval.join("occupation_race_gender/maxskew.csv"));
    check(rows.len() == SUBJECTS.len(), || {
        format!("{} subjects reported", rows.len())
    })?;
    let mut biased = f64::NAN;
    for row in &rows {
        let v: f64 = row["maxskew"].parse().unwrap();
        if row["subject"] == BIASED {
            biased = v;
        } else {
            check(v == 0.0, || format!("{} reports {v}", row["subject"]))?;
        }
    }
    check((biased - 3f64.ln()).abs() < 1e-9, || {
        format!("planted subject reports {biased}")
    })?;
    let agg = read_csv(&eval.join("aggregate.csv"));
    let max: f64 = agg[0]["max"].parse().unwrap();
    check(agg[0]["argmax_subject"] == BIASED && max == biased, || {
        format!("aggregate max {} at {}", max, agg[0]["argmax_subject"])
    })?;
    let svg = fs::read_to_string(eval.join("occupation_race_gender/boxplot.svg")).unwrap();
    check(
        svg.contains(&format!(r#"data-max-subject="{BIASED}""#)),
        || "boxplot does not mark the planted subject as max".into(),
    )?;
    Ok(format!("{BIASED} MaxSkew {biased:.10}, others 0"))
}

fn filter_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let unit_f = |rng: &mut ChaCha8Rng| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let mut samples = Vec::new();
    for set in 0..20 {
        for index in 0..100u32 {
            let member_cosines = (0..6).map(|_| 0.15 + 0.3 * unit_f(&mut rng)).collect();
            // Coarse scores so that ties between samples are common.
            let score = (unit_f(&mut rng) * 8.0).floor() / 8.0;
            samples.push(ScoredSample {
                set_id: format!("set{set:02}"),
                sample_index: index,
                member_cosines,
                directional_score: Some(score),
            });
        }
    }
    let params = FilterParams::default();
    let report = |s: &[ScoredSample]| {
        let mut buf = Vec::new();
        write_retention_report(&select_and_filter(s, params), &mut buf).unwrap();
        buf
    };
    let reference = report(&samples);
    let rows = select_and_filter(&samples, params);
    let mut per_set: BTreeMap<&str, usize> = BTreeMap::new();
    for (row, sample) in rows.iter().zip(&samples) {
        if row.retained {
            check(sample.min_member_cosine() >= 0.2, || {
                format!(
                    "{} #{} retained below threshold",
                    row.set_id, row.sample_index
                )
            })?;
            *per_set.entry(&row.set_id).or_default() += 1;
        }
    }
    check(per_set.values().all(|&n| n <= 10), || {
        format!("retained per set {per_set:?}")
    })?;
    check(!per_set.is_empty(), || "nothing retained".into())?;
    for round in 0..10 {
        let mut shuffled = samples.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, below(&mut rng, i + 1));
        }
        check(report(&shuffled) == reference, || {
            format!("shuffle {round} changed the report")
        })?;
    }
    Ok(format!("{} samples, 10 shuffles identical", samples.len()))
}

fn retrieval_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let queries = 10_000;
    for i in 0..queries {
        let dim = 2 + below(&mut rng, 14);
        let n = 1 + below(&mut rng, 200);
        let pool = random_pool(&mut rng, n, dim, i % 4 == 0);
        let q = random_unit(&mut rng, dim);
        let k = 1 + below(&mut rng, 84);
        let items: Vec<PoolItem<'_>> = pool.iter().map(|(id, v)| PoolItem::new(id, v)).collect();
        let got: Vec<String> = top_k("s", "q", &q, &items, k)
            .map_err(|e| e.to_string())?
            .ranked
            .into_iter()
            .map(|r| r.asset_id)
            .collect();
        check(got == oracle_top_k(&q, &pool, k), || {
            format!("query {i} disagrees")
        })?;
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{queries} queries in {:.2?}", start.elapsed()))
}

fn audit_arithmetic() -> Outcome {
    let mut annotations = Vec::new();
    let mut predictions = HashMap::new();
    for i in 0..10 {
        let id = format!("m{i}");
        annotations
            .push(AuditAnnotation::new(&id, ErrorCategory::Good, Some(Gender::Male)).unwrap());
        let p = if i == 0 {
            GenderPrediction::Female
        } else {
            GenderPrediction::Male
        };
        predictions.insert(id, p);
        let id = format!("f{i}");
        annotations
            .push(AuditAnnotation::new(&id, ErrorCategory::Good, Some(Gender::Female)).unwrap());
        predictions.insert(id, GenderPrediction::Female);
    }
    let s = confusion_stats(&predictions, &annotations).map_err(|e| e.to_string())?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    check(
        close(s.male.precision, 1.0)
            && close(s.male.recall, 0.9)
            && close(s.female.precision, 10.0 / 11.0)
            && close(s.female.recall, 1.0),
        || format!("{s:?}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..500 {
        let n = 1 + below(&mut rng, 300);
        let groups = 1 + below(&mut rng, 12);
        let annotations: Vec<AuditAnnotation> = (0..n)
            .map(|i| {
                let category = ErrorCategory::ALL[below(&mut rng, 5)];
                let gender = category.gender_discernible().then_some(Gender::Male);
                AuditAnnotation::new(format!("a{i}"), category, gender).unwrap()
            })
            .collect();
        let census = error_census(&annotations, |id| {
            let i: usize = id[1..].parse().unwrap();
            Some(format!("g{}", i % groups))
        })
        .map_err(|e| e.to_string())?;
        for rows in std::iter::once(&census.overall).chain(census.groups.values()) {
            let total: f64 = rows.iter().map(|r| r.percent).sum();
            check((total - 100.0).abs() <= 0.1, || {
                format!("percentages sum to {total}")
            })?;
        }
    }

    // The stage wires the same arithmetic through the planted images.
    let tmp = tempfile::tempdir().unwrap();
    let fx = plant(tmp.path());
    cfprobe::pipeline::run_ingest(&fx.run).map_err(|e| e.to_string())?;
    let path = tmp.path().join("annotations.csv");
    let assets = read_csv(&fx.run.stage_dir("ingest").join("assets.csv"));
    let annotations: Vec<AuditAnnotation> = assets
        .iter()
        .take(20)
        .map(|a| {
            AuditAnnotation::new(
                a["assetId"].clone(),
                ErrorCategory::Good,
                Some(Gender::Male),
            )
            .unwrap()
        })
        .collect();
    cfprobe::audit::write_annotations(&annotations, fs::File::create(&path).unwrap()).unwrap();
    let mut run = fx.run.clone();
    run.assets = None;
    run.annotations = Some(path);
    run_audit(&run).map_err(|e| e.to_string())?;
    Ok("confusion exact, 500 census fixtures sum to 100".into())
}

fn determinism_and_formats() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = plant(a.path());
    let fb = plant(b.path());
    run_downstream(&fa.run);
    let mut parallel = fb.run.clone();
    parallel.workers = 4;
    run_downstream(&parallel);
    let sa = snapshot(&fa.run.out);
    let sb = snapshot(&fb.run.out);
    check(sa.len() == sb.len(), || {
        format!("{} vs {} files", sa.len(), sb.len())
    })?;
    for (name, bytes) in &sa {
        check(sb.get(name) == Some(bytes), || format!("{name} differs"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let dim = 1 + below(&mut rng, 64);
        let vs: Vec<Vec<f64>> = (0..1 + below(&mut rng, 30))
            .map(|_| {
                (0..dim)
                    .map(|_| (rng.next_u64() % 2000) as f64 / 100.0 - 10.0 + 1e-3)
                    .collect()
            })
            .collect();
        let ids: Vec<String> = (0..vs.len()).map(|i| format!("v{i}")).collect();
        let mut buf = Vec::new();
        write_embeddings(
            &mut buf,
            dim,
            ids.iter()
                .map(String::as_str)
                .zip(vs.iter().map(Vec::as_slice)),
        )
        .map_err(|e| e.to_string())?;
        let store = ingest(buf.as_slice(), EmbeddingKind::Text).map_err(|e| e.to_string())?;
        for (id, v) in ids.iter().zip(&vs) {
            let n = dot(v, v).sqrt();
            for (g, x) in store.get(id).unwrap().iter().zip(v) {
                worst = worst.max((g - x / n).abs());
            }
        }
    }
    check(worst <= 1e-6, || format!("round-trip error {worst}"))?;
    Ok(format!(
        "{} files identical; round-trip error {worst:.1e}",
        sa.len()
    ))
}

/// Critical value of the two-sided one-sample KS test at alpha 0.01.
const KS_CRITICAL_01: f64 = 1.628;

fn planner_ks() -> Outcome {
    let ids: Vec<String> = (0..1000).map(|i| format!("set{i:04}")).collect();
    let jobs =
        plan_jobs_by_id(ids.iter().map(String::as_str), 100, 2024).map_err(|e| e.to_string())?;
    let mut ps: Vec<f64> = jobs.iter().map(|j| j.p).collect();
    ps.sort_by(f64::total_cmp);
    let n = ps.len() as f64;
    let d = ps
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - P_MIN) / (P_MAX - P_MIN)).clamp(0.0, 1.0);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let critical = KS_CRITICAL_01 / n.sqrt();
    check(ps.len() == 100_000, || format!("{} jobs", ps.len()))?;
    check(d < critical, || format!("D = {d}, critical {critical}"))?;
    Ok(format!("D = {d:.5} < {critical:.5} on {} jobs", ps.len()))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("census reproduction", census_reproduction),
        ("metric oracle equivalence", metric_oracle),
        ("planted-bias end to end", planted_bias),
        ("filter contract", filter_contract),
        ("retrieval oracle", retrieval_oracle),
        ("audit arithmetic", audit_arithmetic),
        ("determinism and formats", determinism_and_formats),
        ("planner p distribution", planner_ks),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let outcome =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
