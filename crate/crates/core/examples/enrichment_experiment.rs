//! Hold out 10% of a synthetic corpus, train on the rest and compare the
//! corpus TEDR of rules-only translation with disambiguated translation.
//!
//!     cargo run --release --example enrichment_experiment [seed]

use mathml_enrich::alignment::align_corpus;
use mathml_enrich::corpus::{generate_synthetic_corpus, split_folds, SyntheticSpec};
use mathml_enrich::decoder::translate_corpus;
use mathml_enrich::disambig::{
    build_instances_from, count_readings, labeled_occurrences, train, AmbiguityTable, SvmConfig,
    Vocabulary,
};
use mathml_enrich::eval::evaluate_corpus;
use mathml_enrich::rules::extract_rules;

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let corpus = generate_synthetic_corpus(&SyntheticSpec::bundled(), seed).expect("bundled spec");
    let split = split_folds(&corpus, 10, seed).expect("enough examples");
    let (train_ix, test_ix) = split.train_test(&corpus, 0);
    let (training, test) = (corpus.select(&train_ix), corpus.select(&test_ix));

    let (_, alignments) = align_corpus(&training, 10).expect("non-empty");
    let rules = extract_rules(&training, &alignments).expect("aligned");
    let labeled = labeled_occurrences(&training, &alignments);
    let table = AmbiguityTable::from_counts(&count_readings(&labeled));
    let mut vocab = Vocabulary::new();
    let instances =
        build_instances_from(&labeled, &table, &mut vocab).expect("gold readings known");

    println!("train {} / test {}", training.len(), test.len());
    println!("{:<22}{:>10}{:>10}", "system", "TEDR", "failures");
    let rules_only = evaluate_corpus(&translate_corpus(&test, &rules, None), &test).unwrap();
    println!(
        "{:<22}{:>10.4}{:>10}",
        "rules only", rules_only.mean_tedr, rules_only.failures
    );
    for (name, text) in [
        ("without text features", false),
        ("with text features", true),
    ] {
        let model = train(
            &instances,
            vocab.clone(),
            table.clone(),
            &SvmConfig::default(),
            text,
        )
        .expect("two classes");
        let report =
            evaluate_corpus(&translate_corpus(&test, &rules, Some(&model)), &test).unwrap();
        println!(
            "{name:<22}{:>10.4}{:>10}",
            report.mean_tedr, report.failures
        );
    }
}
