// Modularize a raw prompt with the rule engine and print its attributes.
//
// `cargo run --example parse_prompt -- "Write a funny post about cats"`

use malleable::modularizer::Extractor;
use malleable::prompt::{render_attribute_context, MalleablePrompt};

const EMAIL: &str = "Write a concise and formal email to my boss asking for a one-week \
extension in two paragraphs, but keep the closing friendly. No bullet point.";

pub fn run(raw: &str) -> malleable::Result<MalleablePrompt> {
    let parsed = Extractor::rules().modularize(raw)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    let prompt = parsed.value;
    println!("raw:  {}", prompt.raw());
    println!("base: {}", prompt.base());
    for a in prompt.attributes() {
        let detail = match (&a.directive, &a.numeric) {
            (Some(d), _) => format!("directive {d:?}"),
            (_, Some(n)) => format!("value {}", n.value),
            _ => format!(
                "options {:?}",
                a.options.iter().map(|o| o.text.as_str()).collect::<Vec<_>>()
            ),
        };
        println!("  {:<12} {:<12?} {:?} {detail}", a.id, a.kind, a.anchor_text);
    }
    if let Some(a) = prompt.mod_set().next() {
        println!("context for {}:\n{}", a.id, render_attribute_context(&prompt, &a.id)?);
    }
    Ok(prompt)
}

#[allow(dead_code)]
fn main() -> malleable::Result<()> {
    let raw = std::env::args().nth(1).unwrap_or_else(|| EMAIL.to_string());
    run(&raw).map(drop)
}
