//! Ten-fold comparison of the most-frequent baseline and the classifier
//! with and without text features.
//!
//!     cargo run --release --example cross_validation [seed]

use mathml_enrich::corpus::{generate_synthetic_corpus, SyntheticSpec};
use mathml_enrich::disambig::{cross_validate, CrossValConfig};

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let corpus = generate_synthetic_corpus(&SyntheticSpec::bundled(), seed).expect("bundled spec");
    let report =
        cross_validate(&corpus, 10, seed, &CrossValConfig::default()).expect("k <= corpus size");
    println!(
        "{} examples, ambiguous: {:?}",
        corpus.len(),
        report.ambiguous_identifiers
    );
    print!("{}", report.table());
    for s in &report.systems {
        let per_fold: Vec<String> = s.per_fold.iter().map(|a| format!("{:.2}", a)).collect();
        println!("{:<14} {}", s.system, per_fold.join(" "));
    }
}
