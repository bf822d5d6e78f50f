use mathml_enrich::alignment::align_corpus;
use mathml_enrich::corpus::{generate_synthetic_corpus, Corpus, SyntheticSpec};
use mathml_enrich::decoder::{translate_corpus, translations_from_jsonl, translations_to_jsonl};
use mathml_enrich::disambig::{
    build_instances_from, count_readings, labeled_occurrences, objective, train_linear_svm,
    AmbiguityTable, SparseVector, SvmConfig, Vocabulary,
};
use mathml_enrich::eval::evaluate_corpus;
use mathml_enrich::rules::{extract_rules, RuleSet};

fn corpus(per_identifier: usize, seed: u64) -> Corpus {
    let mut spec = SyntheticSpec::bundled();
    spec.examples_per_identifier = per_identifier;
    generate_synthetic_corpus(&spec, seed).unwrap()
}

fn svm_data(text: bool) -> (Vec<(SparseVector, i8)>, usize) {
    let corpus = corpus(200, 0);
    let (_, al) = align_corpus(&corpus, 10).unwrap();
    let labeled = labeled_occurrences(&corpus, &al);
    let table = AmbiguityTable::from_counts(&count_readings(&labeled));
    let mut vocab = Vocabulary::new();
    let instances = build_instances_from(&labeled, &table, &mut vocab).unwrap();
    let data = instances
        .iter()
        .map(|i| (vocab.mask(&i.features, text), i.label))
        .collect();
    (data, vocab.len())
}

#[test]
fn svm_objective_decreases_over_epochs() {
    for text in [false, true] {
        let (data, dim) = svm_data(text);
        for c in [0.1, 1.0, 10.0] {
            let config = SvmConfig {
                c,
                epochs: 15,
                seed: 0,
            };
            let svm = train_linear_svm(&data, dim, &config).unwrap();
            let trace = &svm.trace;
            assert_eq!(trace.averaged.len(), 15);
            for w in trace.averaged.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-9,
                    "c={c} text={text}: {:?}",
                    trace.averaged
                );
            }
            for w in trace.kept.windows(2) {
                assert!(w[1] <= w[0]);
            }
            let lambda = 1.0 / (c * data.len() as f64);
            let final_objective = objective(&data, &svm.weights, svm.bias, lambda);
            assert!((final_objective - trace.kept.last().unwrap()).abs() <= 1e-9);
        }
    }
}

#[test]
fn translations_round_trip_and_score_in_range() {
    let training = corpus(40, 1);
    let held_out = corpus(10, 2);
    let (_, al) = align_corpus(&training, 10).unwrap();
    let rules = extract_rules(&training, &al).unwrap();
    let rules = RuleSet::from_jsonl(&rules.to_jsonl()).unwrap();
    let out = translate_corpus(&held_out, &rules, None);
    assert_eq!(
        translations_from_jsonl(&translations_to_jsonl(&out)).unwrap(),
        out
    );
    let report = evaluate_corpus(&out, &held_out).unwrap();
    assert_eq!(report.n, held_out.len());
    assert_eq!(report.failures, 0);
    assert!(report.per_example.iter().all(|e| e.tedr >= 0.0));
    assert!(report.mean_tedr < 0.5, "{}", report.mean_tedr);
}
