//! Drive the experiment harness from code: build a configuration, run it
//! over seeds, write the metrics CSV and print the per-run summary.
//!
//! Run with `cargo run --release --example harness_run -- out.csv`.

use evograd::harness::config::{ExperimentConfig, RawConfig};
use evograd::harness::run::run_experiment;
use evograd::harness::summary::Summary;
use evograd::metrics::CsvWriter;
use evograd::Result;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "reweight.csv".into());
    let raw = RawConfig::parse("experiment = reweight\nseeds = 0,1,2\nepochs = 20\nrho = 0.4\n")?;
    let cfg = ExperimentConfig::from_raw(&raw)?;
    let rows = run_experiment(&cfg)?;
    let mut w = CsvWriter::new(std::fs::File::create(&out)?);
    w.write_all(&rows)?;
    w.into_inner()?;
    println!("wrote {} rows to {out}", rows.len());
    println!("{}", Summary::from_rows(&rows)?.to_json()?);
    Ok(())
}
