//! Generate a seeded synthetic corpus, either from the bundled identifier
//! inventory or from a spec file, and write it as JSON lines.
//!
//!     cargo run --example synthetic_corpus [spec.json] > corpus.jsonl

use mathml_enrich::corpus::{generate_synthetic_corpus, SyntheticSpec};

fn main() {
    let spec = match std::env::args().nth(1) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).expect("readable spec file");
            SyntheticSpec::from_json(&text).expect("valid spec")
        }
        None => SyntheticSpec::bundled(),
    };
    let corpus = generate_synthetic_corpus(&spec, 42).expect("valid spec");
    eprintln!(
        "{} identifiers, {} examples",
        spec.identifiers.len(),
        corpus.len()
    );
    for ex in corpus.examples().iter().step_by(corpus.len() / 5).take(5) {
        eprintln!(
            "{}: {}\n  {}\n  {:?} / {:?}",
            ex.id, ex.presentation, ex.content, ex.category, ex.description
        );
    }
    print!("{}", corpus.to_jsonl());
}
