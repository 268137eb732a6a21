// Sweep one continuous attribute over the 7-point slider grid.

use malleable::backend::demo::demo_model;
use malleable::decoder::DecodeOptions;
use malleable::modularizer::Extractor;
use malleable::prompt::SteeringConfig;
use malleable::sweep::{lambda_grid, sweep, SweepReport};

const PROMPT: &str = "Write a formal blog post comparing the design of iPhone 15 and Pixel 8";

pub fn run() -> malleable::Result<SweepReport> {
    let backend = demo_model();
    let prompt = Extractor::rules().modularize(PROMPT)?.value;
    let mut base = SteeringConfig::defaults(&prompt);
    base.max_tokens = 16;
    let grid = lambda_grid(0.0, 3.0, 0.5)?;
    let report = sweep(&prompt, &base, "formal", &grid, &backend, DecodeOptions::default())?;
    println!("{:>4} {:>7} {:>9} {:>8}  text", "λ", "overlap", "mean φ", "mean λF");
    for r in &report.rows {
        println!(
            "{:>4.1} {:>7.2} {:>9.3} {:>8.3}  {}",
            r.lambda,
            r.overlap,
            r.mean_phi.unwrap_or(f64::NAN),
            r.mean_contribution,
            r.text
        );
    }
    Ok(report)
}

#[allow(dead_code)]
fn main() -> malleable::Result<()> {
    run().map(drop)
}
