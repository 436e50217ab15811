//! Builds the default pipeline under `$SDL_PIPELINE_DIR` (or
//! `target/sdl-pipeline`). `stage data` stops after the dataset, `stage all`
//! trains, evaluates and prints the verification table.
use sdl_core::pipeline::{default_root, Pipeline, PipelineConfig};

fn main() {
    let p = Pipeline::new(default_root(), PipelineConfig::default());
    let stage = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let data = p.dataset().unwrap();
    eprintln!("dataset ready: {} trajectories", data.trajectories.len());
    if stage == "all" {
        let r = p.run_all().unwrap();
        println!("{}", r.report.to_table());
    }
}
