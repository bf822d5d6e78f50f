//! Train rules and a disambiguation model, then translate new
//! presentation trees with and without disambiguation.
//!
//!     cargo run --release --example translate

use mathml_enrich::alignment::align_corpus;
use mathml_enrich::corpus::{generate_synthetic_corpus, SyntheticSpec};
use mathml_enrich::decoder::{translate, Context};
use mathml_enrich::disambig::{
    build_instances_from, count_readings, labeled_occurrences, train, AmbiguityTable, SvmConfig,
    Vocabulary,
};
use mathml_enrich::mathml::{parse, Markup};
use mathml_enrich::rules::extract_rules;

fn main() {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::bundled(), 2).expect("bundled spec");
    let (_, alignments) = align_corpus(&corpus, 10).expect("non-empty corpus");
    let rules = extract_rules(&corpus, &alignments).expect("aligned");
    let labeled = labeled_occurrences(&corpus, &alignments);
    let table = AmbiguityTable::from_counts(&count_readings(&labeled));
    let mut vocab = Vocabulary::new();
    let instances =
        build_instances_from(&labeled, &table, &mut vocab).expect("gold readings known");
    let model = train(&instances, vocab, table, &SvmConfig::default(), true).expect("two classes");

    let inputs = [
        (
            "<mrow><mi>H</mi><mo>&#x2061;</mo><mrow><mo>(</mo><mi>x</mi><mo>)</mo></mrow></mrow>",
            "the hankel function of the first kind",
        ),
        (
            "<mrow><mi>δ</mi><mo>&#x2061;</mo><mrow><mo>(</mo><mrow><mi>x</mi><mo>&#x2212;</mo><mn>2</mn></mrow><mo>)</mo></mrow></mrow>",
            "the dirac distribution",
        ),
        ("<mrow><mi>μ</mi><mo>+</mo><mn>3</mn></mrow>", "the mean"),
        ("<mrow><mi>k</mi><mo>+</mo><mi>w</mi></mrow>", "unseen identifiers"),
    ];
    for (xml, description) in inputs {
        let tree = parse(xml, Markup::Presentation).expect("valid markup");
        let context = Context {
            category: String::new(),
            description: description.to_string(),
        };
        let (plain, d0) = translate(&tree, &rules, None, &context).unwrap();
        let (guided, d1) = translate(&tree, &rules, Some(&model), &context).unwrap();
        println!("{tree}\n  text: {description}");
        println!("  rules only   ({:.3}): {plain}", d0.score());
        println!("  disambiguated ({:.3}): {guided}", d1.score());
        for (node, reading) in &d1.mi_overrides {
            println!("    node {} -> {reading}", node.0);
        }
    }
}
