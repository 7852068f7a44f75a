use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;

use super::ingest::{assets_input, image_input, load_pair, text_input};
use super::{
    csv_bytes, load_assets, open, or_default, required, staged, Catalog, RunConfig, Stage,
    StageResult,
};
use crate::caption::{neutral_prompt_id, AttributeValue, CategoryPair, Configuration, Subject};
use crate::embedding::{EmbeddingStore, ImageAsset};
use crate::error::{Error, Result};
use crate::filter::read_retention_report;
use crate::metrics::{
    aggregate_across_subjects, conditional_skew, fmt_value, keys_for, proportion_breakdown,
    read_desired_overrides, skew_report, write_aggregate_csv, write_maxskew_csv, write_skew_csv,
    AggregateSummary, AttributeKey, DesiredDistribution, LabeledPoolItem, ProportionTables,
    SkewReport,
};
use crate::plot::{boxplot_svg, BoxplotGroup};
use crate::retrieval::{
    average_text_embedding, default_k, top_k, write_retrieval_dump, PoolItem, RetrievalResult,
};

pub const PROPORTIONS_HEADER: &str = "subject,table,valueA,valueB,proportion";
pub const CONDITIONAL_HEADER: &str =
    "subject,fixedCategory,fixedValue,measuredCategory,k,retrieved,maxskew";
pub const CONDITIONAL_SKEW_HEADER: &str = "subject,fixedValue,measuredValue,skew";

/// Directory name of a group's reports: `occupation_race_gender`.
pub fn group_dir_name(pair: &CategoryPair) -> String {
    format!("{}_{}_{}", pair.kind, pair.a, pair.b)
}

type Overrides = BTreeMap<(String, String, String), DesiredDistribution>;

struct SubjectOutcome {
    retrieval: RetrievalResult,
    report: SkewReport,
    keys: Vec<AttributeKey>,
    /// Per fixed value of the first category, in attribute order.
    conditional: Vec<(String, SkewReport)>,
}

struct GroupOutcome {
    pair: CategoryPair,
    values_a: Vec<String>,
    values_b: Vec<String>,
    subjects: Vec<SubjectOutcome>,
}

pub fn run_evaluate(run: &RunConfig) -> StageResult {
    staged("evaluate", || {
        let mut stage = Stage::new("evaluate", run);
        stage.input("config", run.config_path()?)?;
        let assets_path = assets_input(run, &mut stage)?;
        let retention_path = or_default(
            &run.retention,
            run.stage_dir("filter").join("retention.csv"),
        )
        .ok_or_else(|| Error::MissingInput {
            path: run.stage_dir("filter").join("retention.csv"),
            reason: "run the filter stage first or pass --retention".into(),
        })?;
        let retention_path = required(&Some(retention_path), "--retention")?.to_path_buf();
        stage.input("retention", &retention_path)?;
        let text_path = text_input(run, &mut stage)?;
        let image_path = image_input(run, &mut stage)?;
        if let Some(d) = &run.desired {
            stage.input("desired", required(&Some(d.clone()), "--desired")?)?;
        }
        stage.param("k", run.k.map_or("default".to_string(), |k| k.to_string()));
        stage.param("conditional_k", run.conditional_k);
        if let Some(report) = stage.current() {
            return Ok(report);
        }
        if run.k == Some(0) || run.conditional_k == 0 {
            return Err(Error::Argument("K must be at least 1".into()));
        }

        let config = run.load_configuration()?;
        let catalog = Catalog::new(&config)?;
        let (texts, images) = load_pair(&text_path, &image_path)?;
        let assets = load_assets(&assets_path, &catalog, Some(&images))?;
        let rows = read_retention_report(open(&retention_path)?)?;
        let retained: HashSet<(&str, u32)> = rows
            .iter()
            .filter(|r| r.retained)
            .map(|r| (r.set_id.as_str(), r.sample_index))
            .collect();
        let overrides: Overrides = match &run.desired {
            Some(p) => read_desired_overrides(open(p)?)?,
            None => Overrides::new(),
        };

        // Retained pool per (subject, category pair).
        let mut pools: HashMap<(&Subject, CategoryPair), Vec<&ImageAsset>> = HashMap::new();
        for a in &assets {
            if !retained.contains(&(a.set_id.as_str(), a.sample_index)) {
                continue;
            }
            let set = catalog.set(&a.set_id).expect("validated by load_assets");
            let pair =
                CategoryPair::new(set.subject.kind, set.category_pair.0, set.category_pair.1);
            pools.entry((&set.subject, pair)).or_default().push(a);
        }

        let env = Env {
            run,
            config: &config,
            catalog: &catalog,
            texts: &texts,
            images: &images,
            overrides: &overrides,
        };
        let pool = run.thread_pool()?;
        let mut groups = Vec::new();
        for pair in config.pairs() {
            let values = |c| {
                config
                    .attribute_set(c)
                    .map(|s| s.labels().to_vec())
                    .ok_or_else(|| Error::Config(format!("no attribute set for `{c}`")))
            };
            let (values_a, values_b) = (values(pair.a)?, values(pair.b)?);
            let subjects = config.subjects_of(pair.kind);
            let outcomes: Vec<Option<SubjectOutcome>> = pool.install(|| {
                subjects
                    .par_iter()
                    .map(|s| {
                        let Some(items) = pools.get(&(s, *pair)) else {
                            log::warn!(
                                "{}: no retained images for `{}`",
                                pair.group_name(),
                                s.display_label()
                            );
                            return Ok(None);
                        };
                        env.subject(s, pair, items, &values_a, &values_b).map(Some)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let outcomes: Vec<SubjectOutcome> = outcomes.into_iter().flatten().collect();
            if outcomes.is_empty() {
                log::warn!(
                    "{}: no subject has retained images, group skipped",
                    pair.group_name()
                );
                continue;
            }
            groups.push(GroupOutcome {
                pair: *pair,
                values_a,
                values_b,
                subjects: outcomes,
            });
        }
        if groups.is_empty() {
            return Err(Error::EmptyPool("no subject has retained images".into()));
        }

        write_outputs(&mut stage, &groups)?;
        stage.note("groups", groups.len());
        stage.note(
            "subjects",
            groups.iter().map(|g| g.subjects.len()).sum::<usize>(),
        );
        stage.commit()
    })
}

struct Env<'a> {
    run: &'a RunConfig,
    config: &'a Configuration,
    catalog: &'a Catalog,
    texts: &'a EmbeddingStore,
    images: &'a EmbeddingStore,
    overrides: &'a Overrides,
}

impl Env<'_> {
    fn desired(
        &self,
        subject: &str,
        pair: &CategoryPair,
        a: &[String],
        b: &[String],
    ) -> Result<DesiredDistribution> {
        let (ca, cb) = (pair.a.to_string(), pair.b.to_string());
        let found = self
            .overrides
            .get(&(subject.to_string(), ca.clone(), cb.clone()))
            .or_else(|| self.overrides.get(&("*".to_string(), ca, cb)));
        match found {
            Some(d) => {
                for x in a {
                    for y in b {
                        if d.get(&AttributeKey::pair(x.clone(), y.clone())).is_none() {
                            return Err(Error::Argument(format!(
                                "desired distribution for `{subject}` lacks `{x}|{y}`"
                            )));
                        }
                    }
                }
                Ok(d.clone())
            }
            None => DesiredDistribution::uniform_pairs(a, b),
        }
    }

    fn subject(
        &self,
        subject: &Subject,
        pair: &CategoryPair,
        items: &[&ImageAsset],
        values_a: &[String],
        values_b: &[String],
    ) -> Result<SubjectOutcome> {
        let label = subject.display_label();
        let per_prefix = self
            .config
            .prefixes()
            .iter()
            .map(|p| self.texts.require(&neutral_prompt_id(p, subject)))
            .collect::<Result<Vec<_>>>()?;
        let query = average_text_embedding(&per_prefix)?;
        let query_id = format!("mean:{}:{}", subject.kind, label);

        let captions: HashMap<&str, &crate::caption::CaptionRecord> = items
            .iter()
            .map(|a| {
                (
                    a.asset_id.as_str(),
                    self.catalog.caption(&a.caption_id).expect("validated"),
                )
            })
            .collect();
        let pool: Vec<PoolItem<'_>> = items
            .iter()
            .map(|a| {
                PoolItem::new(
                    &a.asset_id,
                    self.images.require(a.embedding_id()).expect("validated"),
                )
            })
            .collect();

        let k = self
            .run
            .k
            .unwrap_or_else(|| default_k(values_a.len(), values_b.len()));
        let retrieval = top_k(&label, &query_id, &query, &pool, k)?;
        let keys = keys_for(&retrieval, |id| {
            captions
                .get(id)
                .map(|c| AttributeKey::pair(c.attr1.label.clone(), c.attr2.label.clone()))
        })?;
        let desired = self.desired(&label, pair, values_a, values_b)?;
        let report = skew_report(&label, k, &keys, &desired)?;

        let labels: Vec<[AttributeValue; 2]> = items
            .iter()
            .map(|a| {
                let c = captions[a.asset_id.as_str()];
                [c.attr1.clone(), c.attr2.clone()]
            })
            .collect();
        let labeled: Vec<LabeledPoolItem<'_>> = pool
            .iter()
            .zip(&labels)
            .map(|(item, l)| LabeledPoolItem {
                item: *item,
                labels: l,
            })
            .collect();
        let marginal = DesiredDistribution::uniform(values_b.iter().map(AttributeKey::single))?;
        let mut conditional = Vec::with_capacity(values_a.len());
        for v in values_a {
            let fixed = AttributeValue {
                category: pair.a,
                label: v.clone(),
            };
            match conditional_skew(
                &label,
                &query_id,
                &query,
                &labeled,
                &fixed,
                pair.b,
                self.run.conditional_k,
                &marginal,
            ) {
                Ok((_, r)) => conditional.push((v.clone(), r)),
                Err(Error::EmptyPool(reason)) => log::info!("{reason}; conditional skew skipped"),
                Err(e) => return Err(e),
            }
        }
        Ok(SubjectOutcome {
            retrieval,
            report,
            keys,
            conditional,
        })
    }
}

fn write_outputs(stage: &mut Stage, groups: &[GroupOutcome]) -> Result<()> {
    let mut aggregate_rows = Vec::new();
    let mut conditional_rows = Vec::new();
    let mut by_kind: BTreeMap<String, Vec<(String, AggregateSummary, Vec<f64>)>> = BTreeMap::new();

    for g in groups {
        let dir = group_dir_name(&g.pair);
        let name = g.pair.group_name();
        let (ca, cb) = (g.pair.a.as_str(), g.pair.b.as_str());
        let results: Vec<RetrievalResult> =
            g.subjects.iter().map(|s| s.retrieval.clone()).collect();
        let reports: Vec<SkewReport> = g.subjects.iter().map(|s| s.report.clone()).collect();

        let summary = aggregate_across_subjects(&reports)?;
        let points: Vec<f64> = reports.iter().map(|r| r.max_skew).collect();
        let k = reports[0].k;
        let svg = boxplot_svg(
            &format!("MaxSkew@{k}: {name}"),
            &format!("MaxSkew@{k}"),
            &[BoxplotGroup {
                label: &name,
                summary: &summary,
                points: &points,
            }],
        );

        stage.output(
            format!("{dir}/retrieval.csv"),
            csv_bytes(|o| write_retrieval_dump(&results, o))?,
        );
        stage.output(
            format!("{dir}/skew.csv"),
            csv_bytes(|o| write_skew_csv(&reports, ca, cb, o))?,
        );
        stage.output(
            format!("{dir}/maxskew.csv"),
            csv_bytes(|o| write_maxskew_csv(&reports, o))?,
        );
        stage.output(
            format!("{dir}/proportions.csv"),
            csv_bytes(|o| write_proportions(g, o))?,
        );
        stage.output(
            format!("{dir}/conditional.csv"),
            csv_bytes(|o| write_conditional(g, o))?,
        );
        stage.output(
            format!("{dir}/conditional_skew.csv"),
            csv_bytes(|o| write_conditional_skew(g, o))?,
        );
        stage.output(format!("{dir}/boxplot.svg"), svg.into_bytes());

        // One box per fixed value of the first category.
        let mut cond_boxes = Vec::new();
        for v in &g.values_a {
            let reports: Vec<SkewReport> = g
                .subjects
                .iter()
                .flat_map(|s| {
                    s.conditional
                        .iter()
                        .filter(|(x, _)| x == v)
                        .map(|(_, r)| r.clone())
                })
                .collect();
            if reports.is_empty() {
                continue;
            }
            let s = aggregate_across_subjects(&reports)?;
            let pts: Vec<f64> = reports.iter().map(|r| r.max_skew).collect();
            conditional_rows.push((format!("{name}|{ca}={v}"), s.clone()));
            cond_boxes.push((v.clone(), s, pts));
        }
        if !cond_boxes.is_empty() {
            let ck = g
                .subjects
                .iter()
                .find_map(|s| s.conditional.first())
                .map_or(0, |(_, r)| r.k);
            let boxes: Vec<BoxplotGroup<'_>> = cond_boxes
                .iter()
                .map(|(v, s, p)| BoxplotGroup {
                    label: v,
                    summary: s,
                    points: p,
                })
                .collect();
            let svg = boxplot_svg(
                &format!("Marginal {cb} MaxSkew@{ck} by {ca}: {}", g.pair.kind),
                &format!("MaxSkew@{ck}"),
                &boxes,
            );
            stage.output(format!("{dir}/conditional_boxplot.svg"), svg.into_bytes());
        }

        by_kind.entry(g.pair.kind.to_string()).or_default().push((
            format!("{ca}/{cb}"),
            summary.clone(),
            points,
        ));
        aggregate_rows.push((name, summary));
    }

    for (kind, boxes) in &by_kind {
        let plot: Vec<BoxplotGroup<'_>> = boxes
            .iter()
            .map(|(l, s, p)| BoxplotGroup {
                label: l,
                summary: s,
                points: p,
            })
            .collect();
        let svg = boxplot_svg(&format!("MaxSkew distribution: {kind}"), "MaxSkew@K", &plot);
        stage.output(format!("boxplot_{kind}.svg"), svg.into_bytes());
    }
    stage.output(
        "aggregate.csv",
        csv_bytes(|o| write_aggregate_csv(&aggregate_rows, o))?,
    );
    stage.output(
        "conditional_aggregate.csv",
        csv_bytes(|o| write_aggregate_csv(&conditional_rows, o))?,
    );
    Ok(())
}

fn proportion_rows<W: Write>(
    w: &mut csv::Writer<W>,
    subject: &str,
    t: &ProportionTables,
    ca: &str,
    cb: &str,
) -> Result<()> {
    for (a, b, p) in &t.joint {
        w.write_record([subject, "joint", a, b, &p.to_string()])?;
    }
    let ta = format!("marginal_{ca}");
    for (a, p) in &t.marginal_a {
        w.write_record([subject, &ta, a, "", &p.to_string()])?;
    }
    let tb = format!("marginal_{cb}");
    for (b, p) in &t.marginal_b {
        w.write_record([subject, &tb, "", b, &p.to_string()])?;
    }
    Ok(())
}

/// Per-subject tables, then `*`: the tables over all subjects' retrievals pooled.
fn write_proportions<W: Write>(g: &GroupOutcome, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROPORTIONS_HEADER.split(','))?;
    let (ca, cb) = (g.pair.a.as_str(), g.pair.b.as_str());
    let mut pooled = Vec::new();
    for s in &g.subjects {
        let t = proportion_breakdown(&s.keys, &g.values_a, &g.values_b)?;
        proportion_rows(&mut w, &s.report.subject, &t, ca, cb)?;
        pooled.extend(s.keys.iter().cloned());
    }
    let t = proportion_breakdown(&pooled, &g.values_a, &g.values_b)?;
    proportion_rows(&mut w, "*", &t, ca, cb)?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_conditional<W: Write>(g: &GroupOutcome, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONDITIONAL_HEADER.split(','))?;
    for s in &g.subjects {
        for (v, r) in &s.conditional {
            w.write_record([
                r.subject.as_str(),
                g.pair.a.as_str(),
                v,
                g.pair.b.as_str(),
                &r.k.to_string(),
                &r.retrieved.to_string(),
                &fmt_value(r.max_skew),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_conditional_skew<W: Write>(g: &GroupOutcome, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONDITIONAL_SKEW_HEADER.split(','))?;
    for s in &g.subjects {
        for (v, r) in &s.conditional {
            for (key, skew) in &r.per_pair {
                w.write_record([r.subject.as_str(), v, &key.to_string(), &fmt_value(*skew)])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
