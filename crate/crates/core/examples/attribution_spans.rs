// Which output tokens each attribute encouraged or suppressed.

use malleable::attribution::{self, Polarity, DEFAULT_EPSILON};
use malleable::backend::demo::demo_model;
use malleable::decoder::{generate, DecodeOptions};
use malleable::modularizer::Extractor;
use malleable::prompt::{set_lambda, SteeringConfig};

const PROMPT: &str = "Write a funny and formal blog post comparing the price of iPhone 15 and Pixel 8";

pub fn run() -> malleable::Result<Vec<attribution::AttributeReport>> {
    let backend = demo_model();
    let extractor = Extractor::rules();
    let prompt = extractor.modularize(PROMPT)?.value;
    let mut config = SteeringConfig::defaults(&prompt);
    config = set_lambda(&prompt, &config, "funny", 2.0)?;
    config.max_tokens = 20;
    let record = generate(&prompt, &config, &backend, DecodeOptions::default())?;
    println!("{}\n", record.text);

    let report = attribution::report(&record, &prompt, &config, &extractor, DEFAULT_EPSILON)?;
    for attr in &report {
        for s in &attr.spans {
            let mark = match s.polarity {
                Polarity::Encouraged => '+',
                Polarity::Suppressed => '-',
                Polarity::Neutral => ' ',
            };
            println!(
                "{:<8} {mark} {:?} φ̄={:.3}",
                attr.attribute_id,
                &record.text[s.chars.start..s.chars.end],
                s.mean_phi
            );
        }
        for s in &attr.substitutions {
            println!("{:<8} = {:?}", attr.attribute_id, s.text);
        }
    }
    Ok(report)
}

#[allow(dead_code)]
fn main() -> malleable::Result<()> {
    run().map(drop)
}
