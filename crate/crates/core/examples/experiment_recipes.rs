//! Runs the tradeoff recipe and writes its outputs with a manifest.
//!
//! `cargo run --release --example experiment_recipes -- /tmp/tradeoff`

use std::path::PathBuf;

use ctrl_mv::experiments::{execute, Command, ExperimentConfig};

fn main() -> ctrl_mv::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ctrl-mv-tradeoff"));
    let cfg = ExperimentConfig { episodes: Some(2000), out: out.clone(), ..ExperimentConfig::default() };
    let manifest = execute(Command::Tradeoff, &cfg, None)?;
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    for f in manifest.outputs {
        println!("{}  {}", f.sha256, out.join(f.path).display());
    }
    Ok(())
}
