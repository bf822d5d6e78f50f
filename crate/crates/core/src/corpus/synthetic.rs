//! Seeded generator for ambiguous parallel corpora.
//!
//! Every identifier reading gets a cue phrase that is planted in the
//! description of each example using it, so text features carry signal by
//! construction. Readings equal to the identifier name (the plain-symbol
//! reading) prefer variable-like layouts, the others prefer function
//! application, which gives the presentation features some signal too.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, ParallelExample};
use crate::mathml::{Markup, MathTree, Term, FUNCTION_APPLICATION};

/// Inventory of ambiguous identifiers modelled on well-known special
/// function notation (σ, μ, H, y, δ).
pub const BUNDLED_SPEC_JSON: &str = include_str!("../../data/identifiers_spec.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub identifiers: Vec<IdentifierSpec>,
    pub examples_per_identifier: usize,
    /// Chance that a description carries the cue phrase of its reading.
    #[serde(default = "always")]
    pub cue_probability: f64,
}

fn always() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifierSpec {
    pub name: String,
    pub candidates: Vec<CandidateSpec>,
    #[serde(default)]
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub content: String,
    pub cue_phrase: String,
    pub weight: f64,
}

impl SyntheticSpec {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_SPEC_JSON).expect("bundled spec parses")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        serde_json::from_str(text).map_err(|e| CorpusError::InvalidSpec(e.to_string()))
    }
}

const FILLER: &[&str] = &[
    "the",
    "of",
    "where",
    "is",
    "given",
    "by",
    "term",
    "here",
    "we",
    "denote",
    "for",
    "in",
    "expression",
    "value",
    "with",
    "respect",
    "to",
    "this",
];

const VARIABLES: &[&str] = &["x", "z", "t", "q", "u"];

/// Probability that an example uses the layout family its reading prefers.
const LAYOUT_AFFINITY: f64 = 0.8;

#[derive(Debug, Clone, Copy)]
enum Layout {
    Bare,
    Arithmetic,
    Applied,
    AppliedSum,
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<Corpus, CorpusError> {
    if spec.identifiers.is_empty() {
        return Err(CorpusError::EmptySpec);
    }
    if !(0.0..=1.0).contains(&spec.cue_probability) {
        return Err(CorpusError::InvalidSpec(format!(
            "cue_probability {} outside [0, 1]",
            spec.cue_probability
        )));
    }
    let mut samplers = Vec::with_capacity(spec.identifiers.len());
    for ident in &spec.identifiers {
        if ident.candidates.is_empty() {
            return Err(CorpusError::InvalidSpec(format!(
                "identifier {:?} has no candidates",
                ident.name
            )));
        }
        let weights = ident.candidates.iter().map(|c| c.weight);
        let dist = WeightedIndex::new(weights)
            .map_err(|e| CorpusError::InvalidSpec(format!("identifier {:?}: {e}", ident.name)))?;
        samplers.push(dist);
    }
    let variables: Vec<&str> = VARIABLES
        .iter()
        .copied()
        .filter(|v| spec.identifiers.iter().all(|i| i.name != *v))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(spec.identifiers.len() * spec.examples_per_identifier);
    for (ident_idx, (ident, dist)) in spec.identifiers.iter().zip(&samplers).enumerate() {
        for i in 0..spec.examples_per_identifier {
            let cand = &ident.candidates[dist.sample(&mut rng)];
            let symbolic = cand.content == ident.name;
            let preferred = rng.gen_bool(LAYOUT_AFFINITY);
            let variable_like = symbolic == preferred;
            let layout = match (variable_like, rng.gen_bool(0.5)) {
                (true, true) => Layout::Bare,
                (true, false) => Layout::Arithmetic,
                (false, true) => Layout::Applied,
                (false, false) => Layout::AppliedSum,
            };
            let (p, c) = build_pair(&mut rng, layout, &ident.name, &cand.content, &variables);
            let category = ident
                .categories
                .choose(&mut rng)
                .cloned()
                .unwrap_or_default();
            let cue = rng
                .gen_bool(spec.cue_probability)
                .then_some(cand.cue_phrase.as_str());
            let description = describe(&mut rng, cue);
            examples.push(ParallelExample {
                id: format!("syn{ident_idx:02}-{i:05}"),
                presentation: MathTree::from_term(Markup::Presentation, &p),
                content: MathTree::from_term(Markup::Content, &c),
                category,
                description,
            });
        }
    }
    Corpus::new(examples)
}

fn argument(rng: &mut ChaCha8Rng, variables: &[&str]) -> (Term, Term) {
    if variables.is_empty() || rng.gen_bool(0.3) {
        let d = rng.gen_range(1..10).to_string();
        (Term::leaf("mn", &d), Term::leaf("cn", &d))
    } else {
        let v = variables[rng.gen_range(0..variables.len())];
        (Term::leaf("mi", v), Term::leaf("ci", v))
    }
}

fn operator(rng: &mut ChaCha8Rng) -> (Term, Term) {
    if rng.gen_bool(0.5) {
        (Term::leaf("mo", "+"), Term::empty("plus"))
    } else {
        (Term::leaf("mo", "\u{2212}"), Term::empty("minus"))
    }
}

fn parenthesized(inner: Term) -> Term {
    Term::node(
        "mrow",
        vec![Term::leaf("mo", "("), inner, Term::leaf("mo", ")")],
    )
}

fn build_pair(
    rng: &mut ChaCha8Rng,
    layout: Layout,
    name: &str,
    reading: &str,
    variables: &[&str],
) -> (Term, Term) {
    let mi = Term::leaf("mi", name);
    let ci = Term::leaf("ci", reading);
    let fa = Term::leaf("mo", FUNCTION_APPLICATION);
    match layout {
        Layout::Bare => (Term::node("mrow", vec![mi]), ci),
        Layout::Arithmetic => {
            let (op_p, op_c) = operator(rng);
            let (arg_p, arg_c) = argument(rng, variables);
            (
                Term::node("mrow", vec![mi, op_p, arg_p]),
                Term::node("apply", vec![op_c, ci, arg_c]),
            )
        }
        Layout::Applied => {
            let (arg_p, arg_c) = argument(rng, variables);
            (
                Term::node("mrow", vec![mi, fa, parenthesized(arg_p)]),
                Term::node("apply", vec![ci, arg_c]),
            )
        }
        Layout::AppliedSum => {
            let (a_p, a_c) = argument(rng, variables);
            let (op_p, op_c) = operator(rng);
            let (b_p, b_c) = argument(rng, variables);
            let inner_p = Term::node("mrow", vec![a_p, op_p, b_p]);
            let inner_c = Term::node("apply", vec![op_c, a_c, b_c]);
            (
                Term::node("mrow", vec![mi, fa, parenthesized(inner_p)]),
                Term::node("apply", vec![ci, inner_c]),
            )
        }
    }
}

fn describe(rng: &mut ChaCha8Rng, cue: Option<&str>) -> String {
    let n = rng.gen_range(2..=4);
    let mut words: Vec<&str> = (0..n)
        .map(|_| FILLER[rng.gen_range(0..FILLER.len())])
        .collect();
    if let Some(cue) = cue {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, cue);
    }
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn sigma_spec() -> SyntheticSpec {
        SyntheticSpec {
            identifiers: vec![IdentifierSpec {
                name: "σ".into(),
                candidates: vec![
                    CandidateSpec {
                        content: "Weierstrass Sigma".into(),
                        cue_phrase: "weierstrass".into(),
                        weight: 1.0,
                    },
                    CandidateSpec {
                        content: "Divisor Sigma".into(),
                        cue_phrase: "divisor".into(),
                        weight: 1.0,
                    },
                    CandidateSpec {
                        content: "σ".into(),
                        cue_phrase: "deviation".into(),
                        weight: 2.0,
                    },
                ],
                categories: vec![],
            }],
            examples_per_identifier: 60,
            cue_probability: 1.0,
        }
    }

    fn readings(corpus: &Corpus) -> BTreeSet<String> {
        corpus
            .examples()
            .iter()
            .flat_map(|e| {
                e.content
                    .nodes()
                    .filter(|(_, n)| n.element() == "ci")
                    .map(|(_, n)| n.label().to_string())
                    .collect::<Vec<_>>()
            })
            .filter(|s| s.contains("Sigma") || s == "σ")
            .collect()
    }

    #[test]
    fn sigma_readings_vary() {
        let c = generate_synthetic_corpus(&sigma_spec(), 1).unwrap();
        assert_eq!(c.len(), 60);
        assert_eq!(readings(&c).len(), 3);
    }

    #[test]
    fn single_candidate_has_no_ambiguity() {
        let mut spec = sigma_spec();
        spec.identifiers[0].candidates.truncate(1);
        let c = generate_synthetic_corpus(&spec, 1).unwrap();
        assert_eq!(readings(&c).len(), 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic_corpus(&sigma_spec(), 9)
            .unwrap()
            .to_jsonl();
        let b = generate_synthetic_corpus(&sigma_spec(), 9)
            .unwrap()
            .to_jsonl();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&sigma_spec(), 10)
            .unwrap()
            .to_jsonl();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_spec_rejected() {
        let spec = SyntheticSpec {
            identifiers: vec![],
            examples_per_identifier: 5,
            cue_probability: 1.0,
        };
        assert!(matches!(
            generate_synthetic_corpus(&spec, 0),
            Err(CorpusError::EmptySpec)
        ));
    }

    #[test]
    fn cue_phrase_planted() {
        let spec = sigma_spec();
        let c = generate_synthetic_corpus(&spec, 3).unwrap();
        for ex in c.examples() {
            let reading = ex
                .content
                .nodes()
                .map(|(_, n)| n.label().to_string())
                .find(|l| l.contains("Sigma") || l == "σ")
                .unwrap();
            let cue = &spec.identifiers[0]
                .candidates
                .iter()
                .find(|c| c.content == reading)
                .unwrap()
                .cue_phrase;
            assert!(ex.description.contains(cue.as_str()), "{}", ex.description);
        }
    }

    #[test]
    fn bundled_spec_loads() {
        let spec = SyntheticSpec::bundled();
        assert_eq!(spec.identifiers.len(), 5);
        assert!(spec.examples_per_identifier >= 200);
        let h = spec.identifiers.iter().find(|i| i.name == "H").unwrap();
        assert_eq!(h.candidates.len(), 6);
    }

    #[test]
    fn output_round_trips_through_loader() {
        let c = generate_synthetic_corpus(&SyntheticSpec::bundled(), 5).unwrap();
        let back = Corpus::from_jsonl(&c.to_jsonl()).unwrap();
        assert_eq!(back, c);
    }
}
