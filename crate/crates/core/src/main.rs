use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfprobe::filter::{DEFAULT_KEEP, DEFAULT_MIN_COSINE};
use cfprobe::metrics::DEFAULT_CONDITIONAL_K;
use cfprobe::pipeline::{
    run_audit, run_captions, run_evaluate, run_filter, run_ingest, run_mock_embed, run_plan,
    RetentionGrouping, RunConfig, StageResult, DEFAULT_MOCK_DIM,
};
use cfprobe::planner::DEFAULT_SAMPLES_PER_SET;

/// Counterfactual caption sets, generation plans and retrieval skew reports.
///
/// Every flag can also be set through an environment variable named
/// `CFPROBE_<FLAG>` (for example `CFPROBE_OUT`, `CFPROBE_TEXT_EMBEDDINGS`).
#[derive(Parser, Debug)]
#[command(name = "cfprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enumerate captions and counterfactual sets; write the census.
    Captions {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        queries: QueryArgs,
    },
    /// Write the generation job manifest.
    Plan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Validate embedding files, asset metadata and job status.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        embeddings: EmbeddingArgs,
        /// Asset metadata CSV written by the generator.
        #[arg(long, env = "CFPROBE_ASSETS")]
        assets: Option<PathBuf>,
        /// Job status CSV; failed jobs' assets are dropped.
        #[arg(long, env = "CFPROBE_STATUS")]
        status: Option<PathBuf>,
        /// Job manifest the status refers to [default: <out>/plan/jobs.csv].
        #[arg(long, env = "CFPROBE_MANIFEST")]
        manifest: Option<PathBuf>,
    },
    /// Score over-generated samples and keep the best per group.
    Filter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        embeddings: EmbeddingArgs,
        /// Asset table [default: <out>/ingest/assets.csv].
        #[arg(long, env = "CFPROBE_ASSETS")]
        assets: Option<PathBuf>,
        /// Minimum caption-image cosine for every member of a sample.
        #[arg(long, env = "CFPROBE_MIN_COSINE", default_value_t = DEFAULT_MIN_COSINE)]
        min_cosine: f64,
        /// Samples kept per group.
        #[arg(long, env = "CFPROBE_KEEP", default_value_t = DEFAULT_KEEP)]
        keep: usize,
        /// Selection group: `set` or `subject` (all prefixes of a subject).
        #[arg(long, env = "CFPROBE_GROUP_BY", default_value = "set")]
        group_by: RetentionGrouping,
    },
    /// Retrieve with neutral prompts and report skew.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        embeddings: EmbeddingArgs,
        /// Asset table [default: <out>/ingest/assets.csv].
        #[arg(long, env = "CFPROBE_ASSETS")]
        assets: Option<PathBuf>,
        /// Retention report [default: <out>/filter/retention.csv].
        #[arg(long, env = "CFPROBE_RETENTION")]
        retention: Option<PathBuf>,
        /// Desired-distribution overrides (`subject,catA,catB,pair,proportion`).
        #[arg(long, env = "CFPROBE_DESIRED")]
        desired: Option<PathBuf>,
        /// K for every group [default: product of the two attribute set sizes].
        #[arg(long, env = "CFPROBE_K")]
        k: Option<usize>,
        /// K for the conditional (marginal) skew.
        #[arg(long, env = "CFPROBE_CONDITIONAL_K", default_value_t = DEFAULT_CONDITIONAL_K)]
        conditional_k: usize,
    },
    /// Score a gender probe against human annotations.
    Audit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        embeddings: EmbeddingArgs,
        /// Annotation CSV (`assetId,category,annotatedGender`).
        #[arg(long, env = "CFPROBE_ANNOTATIONS")]
        annotations: Option<PathBuf>,
        /// Asset table for the per-group census [default: <out>/ingest/assets.csv if present].
        #[arg(long, env = "CFPROBE_ASSETS")]
        assets: Option<PathBuf>,
        #[command(flatten)]
        queries: QueryArgs,
    },
    /// Embed the caption stage's texts with the deterministic mock encoder.
    MockEmbed {
        #[command(flatten)]
        common: Common,
        /// Text list [default: <out>/captions/texts.csv].
        #[arg(long, env = "CFPROBE_TEXTS")]
        texts: Option<PathBuf>,
        /// Embedding dimension.
        #[arg(long, env = "CFPROBE_DIM", default_value_t = DEFAULT_MOCK_DIM)]
        dim: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (`kind,category,label` records).
    #[arg(long, env = "CFPROBE_CONFIG")]
    config: Option<PathBuf>,
    /// Run directory; each stage writes to `<out>/<stage>/`.
    #[arg(long, env = "CFPROBE_OUT", default_value = "run")]
    out: PathBuf,
    /// Master seed for job planning.
    #[arg(long, env = "CFPROBE_SEED", default_value_t = cfprobe::pipeline::DEFAULT_SEED)]
    seed: u64,
    /// Worker threads; 0 uses one per core.
    #[arg(long, env = "CFPROBE_WORKERS", default_value_t = 0)]
    workers: usize,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Generated samples per counterfactual set.
    #[arg(long, env = "CFPROBE_SAMPLES_PER_SET", default_value_t = DEFAULT_SAMPLES_PER_SET)]
    samples_per_set: u32,
}

#[derive(Args, Debug)]
struct EmbeddingArgs {
    /// Text embedding file [default: <out>/mock-embed/text_embeddings.cfeb if present].
    #[arg(long, env = "CFPROBE_TEXT_EMBEDDINGS")]
    text_embeddings: Option<PathBuf>,
    /// Image embedding file.
    #[arg(long, env = "CFPROBE_IMAGE_EMBEDDINGS")]
    image_embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long, env = "CFPROBE_MALE_QUERY", default_value = cfprobe::audit::DEFAULT_MALE_QUERY)]
    male_query: String,
    #[arg(long, env = "CFPROBE_FEMALE_QUERY", default_value = cfprobe::audit::DEFAULT_FEMALE_QUERY)]
    female_query: String,
}

impl Common {
    fn into_run(self) -> RunConfig {
        let mut run = RunConfig::new(self.out);
        run.config = self.config;
        run.seed = self.seed;
        run.workers = self.workers;
        run
    }
}

impl EmbeddingArgs {
    fn apply(self, run: &mut RunConfig) {
        run.text_embeddings = self.text_embeddings;
        run.image_embeddings = self.image_embeddings;
    }
}

impl QueryArgs {
    fn apply(self, run: &mut RunConfig) {
        run.male_query = self.male_query;
        run.female_query = self.female_query;
    }
}

fn dispatch(command: Command) -> StageResult {
    match command {
        Command::Captions {
            common,
            plan,
            queries,
        } => {
            let mut run = common.into_run();
            run.samples_per_set = plan.samples_per_set;
            queries.apply(&mut run);
            run_captions(&run)
        }
        Command::Plan { common, plan } => {
            let mut run = common.into_run();
            run.samples_per_set = plan.samples_per_set;
            run_plan(&run)
        }
        Command::Ingest {
            common,
            embeddings,
            assets,
            status,
            manifest,
        } => {
            let mut run = common.into_run();
            embeddings.apply(&mut run);
            run.assets = assets;
            run.status = status;
            run.manifest = manifest;
            run_ingest(&run)
        }
        Command::Filter {
            common,
            embeddings,
            assets,
            min_cosine,
            keep,
            group_by,
        } => {
            let mut run = common.into_run();
            embeddings.apply(&mut run);
            run.assets = assets;
            run.filter.min_cosine = min_cosine;
            run.filter.keep = keep;
            run.grouping = group_by;
            run_filter(&run)
        }
        Command::Evaluate {
            common,
            embeddings,
            assets,
            retention,
            desired,
            k,
            conditional_k,
        } => {
            let mut run = common.into_run();
            embeddings.apply(&mut run);
            run.assets = assets;
            run.retention = retention;
            run.desired = desired;
            run.k = k;
            run.conditional_k = conditional_k;
            run_evaluate(&run)
        }
        Command::Audit {
            common,
            embeddings,
            annotations,
            assets,
            queries,
        } => {
            let mut run = common.into_run();
            embeddings.apply(&mut run);
            run.annotations = annotations;
            run.assets = assets;
            queries.apply(&mut run);
            run_audit(&run)
        }
        Command::MockEmbed { common, texts, dim } => {
            let mut run = common.into_run();
            run.texts = texts;
            run.mock_dim = dim;
            run_mock_embed(&run)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cfprobe: {e}");
            ExitCode::FAILURE
        }
    }
}
