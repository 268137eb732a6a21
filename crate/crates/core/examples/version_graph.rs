// Record a short editing session in a version graph: value tweaks stay on
// one row, adding a widget opens a new row.

use malleable::backend::demo::demo_model;
use malleable::decoder::{generate, DecodeOptions};
use malleable::graph::{EncodingAssignment, NewVersion, VersionGraph};
use malleable::modularizer::Extractor;
use malleable::prompt::{set_choice, set_lambda, Choice, MalleablePrompt, SteeringConfig};

const FIRST: &str = "Write a funny blog post comparing the price of iPhone 15 and Pixel 8";
const SECOND: &str = "Write a funny and sarcastic blog post comparing the price of iPhone 15 and Pixel 8";

pub fn run(dir: &std::path::Path) -> malleable::Result<VersionGraph> {
    let backend = demo_model();
    let extractor = Extractor::rules();
    let mut graph = VersionGraph::new();
    let commit = |graph: &mut VersionGraph, p: &MalleablePrompt, c: &SteeringConfig| {
        let record = generate(p, c, &backend, DecodeOptions::default())?;
        let parent = graph.latest().map(|n| n.id);
        let node = graph.add_version(parent, NewVersion::new(p.clone(), c.clone(), record.text))?;
        println!(
            "v{} row {} col {}  {}",
            node.id, node.branch_row, node.column, node.output
        );
        Ok::<_, malleable::Error>(())
    };

    let prompt = extractor.modularize(FIRST)?.value;
    let mut config = SteeringConfig::defaults(&prompt);
    config.max_tokens = 12;
    commit(&mut graph, &prompt, &config)?;
    config = set_lambda(&prompt, &config, "funny", 2.5)?;
    commit(&mut graph, &prompt, &config)?;
    let other = prompt.attribute("price")?.options[1].text.clone();
    config = set_choice(&prompt, &config, "price", Choice::Text(other))?;
    commit(&mut graph, &prompt, &config)?;

    let edited = extractor.modularize(SECOND)?.value;
    let mut next = SteeringConfig::defaults(&edited);
    next.max_tokens = 12;
    next.lambda_map.insert("funny".into(), 2.5);
    next.choice_map = config.choice_map.clone();
    commit(&mut graph, &edited, &next)?;

    graph.set_encoding(EncodingAssignment {
        color_by: Some("price".into()),
        fill_by: None,
        size_by: Some("funny".into()),
    })?;
    for e in graph.encode(&graph.encoding)? {
        println!("v{} color {:?} radius {:?}", e.id, e.color, e.size);
    }
    let path = dir.join("graph.json");
    graph.save(&path)?;
    let loaded = VersionGraph::load(&path)?;
    assert_eq!(loaded, graph);
    println!("saved to {}", path.display());
    Ok(graph)
}

#[allow(dead_code)]
fn main() -> malleable::Result<()> {
    let dir = tempfile::tempdir()?;
    run(dir.path()).map(drop)
}
