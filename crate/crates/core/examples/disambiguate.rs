//! Train the identifier disambiguator and rank readings for new contexts.
//!
//!     cargo run --release --example disambiguate

use mathml_enrich::alignment::align_corpus;
use mathml_enrich::corpus::{generate_synthetic_corpus, SyntheticSpec};
use mathml_enrich::disambig::{
    build_instances_from, count_readings, labeled_occurrences, train, AmbiguityTable, MiOccurrence,
    SvmConfig, Vocabulary,
};
use mathml_enrich::mathml::{parse, Markup, NodeId};

fn main() {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::bundled(), 1).expect("bundled spec");
    let (_, alignments) = align_corpus(&corpus, 10).expect("non-empty corpus");
    let labeled = labeled_occurrences(&corpus, &alignments);
    let table = AmbiguityTable::from_counts(&count_readings(&labeled));
    for (name, readings) in table.entries() {
        println!("{name}: {readings:?}");
    }

    let mut vocab = Vocabulary::new();
    let instances =
        build_instances_from(&labeled, &table, &mut vocab).expect("gold readings known");
    println!(
        "{} instances ({} positive), {} features",
        instances.len(),
        instances.iter().filter(|i| i.label > 0).count(),
        vocab.len()
    );
    let model = train(&instances, vocab, table, &SvmConfig::default(), true).expect("two classes");

    let applied = parse(
        "<mrow><mi>σ</mi><mo>&#x2061;</mo><mrow><mo>(</mo><mi>z</mi><mo>)</mo></mrow></mrow>",
        Markup::Presentation,
    )
    .unwrap();
    for description in [
        "the weierstrass elliptic sigma of z",
        "here the divisor function",
        "we denote the standard deviation",
        "",
    ] {
        let occ = MiOccurrence::at("demo", &applied, NodeId(1), "", description).unwrap();
        let ranked = model.predict(&occ).expect("σ is ambiguous");
        println!("{description:?}");
        for (reading, score) in ranked {
            println!("  {score:>8.3} {reading}");
        }
    }
}
