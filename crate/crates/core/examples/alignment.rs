//! Train IBM Model 1 on linearized trees and print the learned table and
//! the best link for every content token.
//!
//!     cargo run --example alignment

use mathml_enrich::alignment::{align_best, linearize, train_ibm1_traced};
use mathml_enrich::corpus::{generate_synthetic_corpus, SyntheticSpec};

fn main() {
    let mut spec = SyntheticSpec::bundled();
    spec.examples_per_identifier = 100;
    let corpus = generate_synthetic_corpus(&spec, 7).expect("bundled spec is valid");
    let pairs: Vec<_> = corpus
        .examples()
        .iter()
        .map(|e| (linearize(&e.presentation), linearize(&e.content)))
        .collect();

    let (table, trace) = train_ibm1_traced(&pairs, 10).expect("non-empty corpus");
    println!("log-likelihood per iteration:");
    for (i, ll) in trace.log_likelihoods.iter().enumerate() {
        println!("  {i:>2} {ll:.3}");
    }
    println!("largest row-sum error: {:.2e}", table.max_row_error());

    for name in ["mi:σ", "mi:H"] {
        let mut row: Vec<(&String, &f64)> = table
            .rows()
            .find(|(p, _)| *p == name)
            .unwrap()
            .1
            .iter()
            .collect();
        row.sort_by(|a, b| b.1.total_cmp(a.1));
        println!("t(· | {name}):");
        for (c, p) in row.iter().take(5) {
            println!("  {p:.4} {c}");
        }
    }

    let longest = (0..pairs.len()).max_by_key(|&i| pairs[i].1.len()).unwrap();
    let (p, c) = &pairs[longest];
    println!("links for {}:", corpus.examples()[longest].id);
    for link in align_best((p, c), &table).links {
        let source = link
            .presentation
            .map_or("<NULL>", |i| p.tokens()[i].as_str());
        println!("  {:<28} <- {source}", c.tokens()[link.content]);
    }
}
