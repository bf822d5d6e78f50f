//! Extract translation and segmentation rules from an aligned corpus.
//!
//!     cargo run --example extract_rules

use mathml_enrich::alignment::align_corpus;
use mathml_enrich::corpus::Corpus;
use mathml_enrich::rules::extract_rules;

const CORPUS: &str = r#"{"id":"s1","presentation":"<mi>σ</mi>","content":"<ci>Weierstrass Sigma</ci>"}
{"id":"s2","presentation":"<mi>σ</mi>","content":"<ci>Weierstrass Sigma</ci>"}
{"id":"s3","presentation":"<mi>σ</mi>","content":"<ci>Divisor Sigma</ci>"}
{"id":"s4","presentation":"<mi>σ</mi>","content":"<ci>Divisor Sigma</ci>"}
{"id":"a1","presentation":"<msub><mi>S</mi><msub><mi>j</mi><mi>i</mi></msub></msub>","content":"<apply><selector/><ci>S</ci><apply><selector/><ci>j</ci><ci>i</ci></apply></apply>"}
{"id":"p1","presentation":"<mrow><mi>P</mi><mo>&#x2061;</mo><mi>v</mi></mrow>","content":"<apply><ci>P</ci><ci>v</ci></apply>"}
"#;

fn main() {
    let corpus = Corpus::from_jsonl(CORPUS).expect("valid corpus");
    let (_, alignments) = align_corpus(&corpus, 10).expect("non-empty corpus");
    let rules = extract_rules(&corpus, &alignments).expect("alignments cover the corpus");

    println!("translation rules:");
    for r in rules.translation_rules() {
        println!("  {:.3} (n={}) {r}", r.probability, r.count);
    }
    println!("segmentation rules:");
    for r in rules.segmentation_rules() {
        println!("  {:.3} (n={}) {r}", r.probability, r.count);
    }
    println!(
        "max normalization error: {:.1e}",
        rules.max_normalization_error()
    );
    print!(
        "as JSON lines:\n{}",
        rules
            .to_jsonl()
            .lines()
            .take(2)
            .map(|l| format!("  {l}\n"))
            .collect::<String>()
    );
}
