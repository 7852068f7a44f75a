use super::{csv_bytes, staged, RunConfig, Stage, StageResult};
use crate::planner::{plan_jobs, write_manifest, GENERATOR_NAME};

pub fn run_plan(run: &RunConfig) -> StageResult {
    staged("plan", || {
        let mut stage = Stage::new("plan", run);
        stage.input("config", run.config_path()?)?;
        stage.param("seed", run.seed);
        stage.param("samples_per_set", run.samples_per_set);
        stage.param("generator", GENERATOR_NAME);
        if let Some(report) = stage.current() {
            return Ok(report);
        }

        let sets = run.load_configuration()?.enumerate()?;
        let jobs = plan_jobs(&sets, run.samples_per_set, run.seed)?;
        stage.output("jobs.csv", csv_bytes(|out| write_manifest(&jobs, out))?);
        stage.note("sets", sets.len());
        stage.note("jobs", jobs.len());
        stage.commit()
    })
}
