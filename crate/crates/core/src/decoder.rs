//! Bottom-up translation of presentation trees into content trees.
//!
//! Every node gets its best derivation by exact dynamic programming over
//! the options available there: translation rules whose lhs matches at the
//! node, and segmentation rules for its element and child elements. Scores are
//! summed log probabilities. A node with no usable option falls back to an
//! identity mapping (leaves) or a generic `apply` (internal nodes) at a
//! fixed penalty.
//!
//! With a disambiguation model, each ambiguous `mi` gets one chosen reading
//! up front. Options that would translate or drop that `mi` without
//! producing the chosen reading are pruned.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::disambig::{DisambigModel, MiOccurrence};
use crate::mathml::{Markup, MathTree, NodeId, Term};
use crate::rules::{Pattern, RuleSet};

/// Probability charged for a fallback step.
pub const FALLBACK_PROBABILITY: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("cannot translate an empty tree")]
    EmptyTree,
    #[error("expected a presentation tree, got {0}")]
    WrongMarkup(Markup),
}

/// Text accompanying an expression, used by the disambiguation features.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Context {
    pub category: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rule", rename_all = "snake_case")]
pub enum Choice {
    Translation(usize),
    Segmentation(usize),
    Fallback,
}

/// The option chosen at one node of the derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub node: NodeId,
    pub choice: Choice,
    /// Log probability of this step alone.
    pub log_probability: f64,
    /// Nodes this step accounts for; sub-derivations cover the rest.
    pub covers: Vec<NodeId>,
    /// Roots of the sub-derivations this step combines.
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derivation {
    /// Steps in preorder of their nodes.
    pub steps: Vec<Step>,
    pub log_score: f64,
    pub mi_overrides: BTreeMap<NodeId, String>,
}

impl Derivation {
    pub fn score(&self) -> f64 {
        self.log_score.exp()
    }

    /// How many steps cover each node of a tree with `node_count` nodes.
    pub fn coverage(&self, node_count: usize) -> Vec<usize> {
        let mut seen = vec![0; node_count];
        for s in &self.steps {
            for n in &s.covers {
                seen[n.0] += 1;
            }
        }
        seen
    }
}

#[derive(Debug, Clone)]
struct Best {
    log_score: f64,
    choice: Choice,
    step_log: f64,
    covers: Vec<NodeId>,
    children: Vec<NodeId>,
    output: Term,
}

/// Reading chosen for every ambiguous `mi` of `tree`.
pub fn disambiguate(
    tree: &MathTree,
    rules: &RuleSet,
    model: &DisambigModel,
    context: &Context,
) -> BTreeMap<NodeId, String> {
    let mut out = BTreeMap::new();
    for (id, _) in tree.nodes() {
        let Some(occ) = MiOccurrence::at("", tree, id, &context.category, &context.description)
        else {
            continue;
        };
        let Ok(ranked) = model.predict(&occ) else {
            continue;
        };
        let accepted: Vec<&(String, f64)> = ranked.iter().filter(|(_, s)| *s > 0.0).collect();
        let chosen = match accepted.as_slice() {
            [] => ranked.first().map(|(c, _)| c.clone()),
            [only] => Some(only.0.clone()),
            many => {
                // Highest lexical rule probability; `ranked` order breaks ties.
                let mut best: Option<(&str, f64)> = None;
                for (cand, _) in many {
                    let p = lexical_probability(rules, &occ.name, cand);
                    if best.is_none_or(|(_, bp)| p > bp) {
                        best = Some((cand, p));
                    }
                }
                best.map(|(c, _)| c.to_string())
            }
        };
        if let Some(c) = chosen {
            out.insert(id, c);
        }
    }
    out
}

/// Probability of the rule `mi[name] -> leaf labelled reading`, 0 if absent.
pub fn lexical_probability(rules: &RuleSet, name: &str, reading: &str) -> f64 {
    let lhs = Pattern::node("mi", Some(name), vec![]);
    rules
        .translation_rules()
        .iter()
        .filter(|r| r.lhs == lhs)
        .filter(|r| matches!(&r.rhs, Pattern::Node { children, .. } if children.is_empty()))
        .filter(|r| r.rhs.leaf_labels() == [reading])
        .map(|r| r.probability)
        .fold(0.0, f64::max)
}

fn fallback_leaf(tree: &MathTree, id: NodeId, overrides: &BTreeMap<NodeId, String>) -> Term {
    let n = tree.node(id);
    if let Some(reading) = overrides.get(&id) {
        return Term::leaf("ci", reading);
    }
    match (n.element(), n.text()) {
        ("mn", Some(t)) => Term::leaf("cn", t),
        (_, Some(t)) => Term::leaf("ci", t),
        (el, None) => Term::leaf("ci", el),
    }
}

fn subtree_nodes(tree: &MathTree, id: NodeId) -> Vec<NodeId> {
    (id.0..id.0 + tree.subtree_size(id)).map(NodeId).collect()
}

/// Overridden nodes in `nodes` whose reading is not among `labels`.
fn violates(nodes: &[NodeId], labels: &[&str], overrides: &BTreeMap<NodeId, String>) -> bool {
    nodes
        .iter()
        .filter_map(|n| overrides.get(n))
        .any(|reading| !labels.contains(&reading.as_str()))
}

/// Options available at `id`, given the best derivations of all nodes
/// after it in preorder.
fn options(
    tree: &MathTree,
    id: NodeId,
    rules: &RuleSet,
    overrides: &BTreeMap<NodeId, String>,
) -> Vec<(Choice, f64, Vec<NodeId>, Vec<NodeId>)> {
    let mut out = Vec::new();
    for (i, m) in rules.matching_at(tree, id) {
        let r = &rules.translation_rules()[i];
        if violates(&m.consumed, &r.rhs.leaf_labels(), overrides) {
            continue;
        }
        out.push((
            Choice::Translation(i),
            r.probability.ln(),
            m.consumed,
            m.bindings,
        ));
    }
    let children = tree.node(id).children();
    for i in rules.segmentations_at(tree, id) {
        let r = &rules.segmentation_rules()[i];
        let mut covers = vec![id];
        for (pos, &c) in children.iter().enumerate() {
            if !r.heads.contains(&pos) {
                covers.extend(subtree_nodes(tree, c));
            }
        }
        if violates(&covers, &r.recombination.leaf_labels(), overrides) {
            continue;
        }
        let heads = r.heads.iter().map(|&h| children[h]).collect();
        out.push((Choice::Segmentation(i), r.probability.ln(), covers, heads));
    }
    if out.is_empty() {
        out.push((
            Choice::Fallback,
            FALLBACK_PROBABILITY.ln(),
            vec![id],
            children.to_vec(),
        ));
    }
    out
}

fn output_of(
    tree: &MathTree,
    id: NodeId,
    rules: &RuleSet,
    choice: Choice,
    parts: &[Term],
    overrides: &BTreeMap<NodeId, String>,
) -> Term {
    match choice {
        Choice::Translation(i) => rules.translation_rules()[i].rhs.instantiate(parts),
        Choice::Segmentation(i) => rules.segmentation_rules()[i]
            .recombination
            .instantiate(parts),
        Choice::Fallback if parts.is_empty() => fallback_leaf(tree, id, overrides),
        Choice::Fallback => {
            let mut children = vec![Term::leaf("ci", tree.node(id).element())];
            children.extend(parts.iter().cloned());
            Term::node("apply", children)
        }
    }
}

/// Translates with a fixed set of `mi` readings; no model needed.
pub fn translate_with_overrides(
    tree: &MathTree,
    rules: &RuleSet,
    overrides: BTreeMap<NodeId, String>,
) -> Result<(MathTree, Derivation), DecodeError> {
    if tree.is_empty() {
        return Err(DecodeError::EmptyTree);
    }
    if tree.kind() != Markup::Presentation {
        return Err(DecodeError::WrongMarkup(tree.kind()));
    }
    let n = tree.node_count();
    let mut best: Vec<Option<Best>> = vec![None; n];
    // Reverse preorder visits every node after all of its descendants.
    for i in (0..n).rev() {
        let id = NodeId(i);
        let mut chosen: Option<Best> = None;
        for (choice, step_log, covers, subs) in options(tree, id, rules, &overrides) {
            let total = step_log
                + subs
                    .iter()
                    .map(|s| best[s.0].as_ref().expect("descendant solved").log_score)
                    .sum::<f64>();
            if chosen.as_ref().is_some_and(|c| c.log_score >= total) {
                continue;
            }
            let parts: Vec<Term> = subs
                .iter()
                .map(|s| {
                    best[s.0]
                        .as_ref()
                        .expect("descendant solved")
                        .output
                        .clone()
                })
                .collect();
            chosen = Some(Best {
                log_score: total,
                choice,
                step_log,
                covers,
                output: output_of(tree, id, rules, choice, &parts, &overrides),
                children: subs,
            });
        }
        best[i] = chosen;
    }

    let mut steps = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(id) = stack.pop() {
        let b = best[id.0].as_ref().expect("solved");
        steps.push(Step {
            node: id,
            choice: b.choice,
            log_probability: b.step_log,
            covers: b.covers.clone(),
            children: b.children.clone(),
        });
        stack.extend(b.children.iter().rev().copied());
    }
    steps.sort_by_key(|s| s.node);
    let root = best[0].take().expect("root solved");
    Ok((
        MathTree::from_term(Markup::Content, &root.output),
        Derivation {
            steps,
            log_score: root.log_score,
            mi_overrides: overrides,
        },
    ))
}

pub fn translate(
    tree: &MathTree,
    rules: &RuleSet,
    model: Option<&DisambigModel>,
    context: &Context,
) -> Result<(MathTree, Derivation), DecodeError> {
    if tree.is_empty() {
        return Err(DecodeError::EmptyTree);
    }
    let overrides = match model {
        Some(m) => disambiguate(tree, rules, m, context),
        None => BTreeMap::new(),
    };
    translate_with_overrides(tree, rules, overrides)
}

/// One line of decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub id: String,
    pub content: Option<MathTree>,
    pub score: f64,
    pub failed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TranslationLine {
    id: String,
    content: String,
    score: f64,
    failed: bool,
}

#[derive(Debug, Error)]
pub enum OutputFormatError {
    #[error("line {line}: {cause}")]
    Line { line: usize, cause: String },
}

/// Translates every example, in corpus order. Failures are recorded, not
/// raised.
pub fn translate_corpus(
    corpus: &Corpus,
    rules: &RuleSet,
    model: Option<&DisambigModel>,
) -> Vec<Translation> {
    corpus
        .examples()
        .par_iter()
        .map(|ex| {
            let context = Context {
                category: ex.category.clone(),
                description: ex.description.clone(),
            };
            match translate(&ex.presentation, rules, model, &context) {
                Ok((content, d)) => Translation {
                    id: ex.id.clone(),
                    content: Some(content),
                    score: d.score(),
                    failed: false,
                },
                Err(_) => Translation {
                    id: ex.id.clone(),
                    content: None,
                    score: 0.0,
                    failed: true,
                },
            }
        })
        .collect()
}

pub fn translations_to_jsonl(translations: &[Translation]) -> String {
    let mut out = String::new();
    for t in translations {
        let line = TranslationLine {
            id: t.id.clone(),
            content: t
                .content
                .as_ref()
                .map(MathTree::serialize)
                .unwrap_or_default(),
            score: t.score,
            failed: t.failed,
        };
        out.push_str(&serde_json::to_string(&line).expect("line serializes"));
        out.push('\n');
    }
    out
}

pub fn translations_from_jsonl(text: &str) -> Result<Vec<Translation>, OutputFormatError> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let err = |cause: String| OutputFormatError::Line { line: i + 1, cause };
        let line: TranslationLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if !ids.insert(line.id.clone()) {
            return Err(err(format!("duplicate id {:?}", line.id)));
        }
        let content = if line.failed || line.content.trim().is_empty() {
            None
        } else {
            Some(
                crate::mathml::parse(&line.content, Markup::Content)
                    .map_err(|e| err(e.to_string()))?,
            )
        };
        out.push(Translation {
            id: line.id,
            failed: line.failed || content.is_none(),
            content,
            score: line.score,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathml::parse;
    use crate::rules::RuleSetBuilder;
    use proptest::prelude::*;

    fn p(xml: &str) -> MathTree {
        parse(xml, Markup::Presentation).unwrap()
    }

    fn pat(s: &str) -> Pattern {
        Pattern::parse(s).unwrap()
    }

    #[test]
    fn lexical_rule_applies() {
        let mut b = RuleSetBuilder::new();
        b.add_translation(pat("mi[w]"), pat("ci[w]"), 1).unwrap();
        let (out, d) = translate(&p("<mi>w</mi>"), &b.build(), None, &Context::default()).unwrap();
        assert_eq!(out.serialize(), "<ci>w</ci>");
        assert_eq!(d.score(), 1.0);
    }

    #[test]
    fn generalized_argument_rule() {
        let mut b = RuleSetBuilder::new();
        b.add_translation(pat("msub($1 $2)"), pat("apply(selector $1 $2)"), 2)
            .unwrap();
        for v in ["S", "j", "i"] {
            b.add_translation(pat(&format!("mi[{v}]")), pat(&format!("ci[{v}]")), 1)
                .unwrap();
        }
        let tree = p("<msub><mi>S</mi><msub><mi>j</mi><mi>i</mi></msub></msub>");
        let (out, d) = translate(&tree, &b.build(), None, &Context::default()).unwrap();
        assert_eq!(
            out.serialize(),
            "<apply><selector/><ci>S</ci><apply><selector/><ci>j</ci><ci>i</ci></apply></apply>"
        );
        assert_eq!(d.coverage(tree.node_count()), vec![1; 5]);
    }

    #[test]
    fn identity_fallback() {
        let (out, d) = translate(
            &p("<mi>q</mi>"),
            &RuleSet::default(),
            None,
            &Context::default(),
        )
        .unwrap();
        assert_eq!(out.serialize(), "<ci>q</ci>");
        assert_eq!(d.steps[0].choice, Choice::Fallback);
        let (out, _) = translate(
            &p("<mrow><mn>2</mn><mo>+</mo></mrow>"),
            &RuleSet::default(),
            None,
            &Context::default(),
        )
        .unwrap();
        assert_eq!(
            out.serialize(),
            "<apply><ci>mrow</ci><cn>2</cn><ci>+</ci></apply>"
        );
    }

    #[test]
    fn segmentation_drops_unheaded_children() {
        let mut b = RuleSetBuilder::new();
        b.add_segmentation(
            "mrow",
            &["mi", "mo", "mi"],
            vec![vec![0, 1], vec![2]],
            vec![0, 2],
            pat("apply($1 $2)"),
            1,
        )
        .unwrap();
        b.add_translation(pat("mi[P]"), pat("ci[P]"), 1).unwrap();
        b.add_translation(pat("mi[v]"), pat("ci[v]"), 1).unwrap();
        let tree = p("<mrow><mi>P</mi><mo>\u{2061}</mo><mi>v</mi></mrow>");
        let (out, d) = translate(&tree, &b.build(), None, &Context::default()).unwrap();
        assert_eq!(out.serialize(), "<apply><ci>P</ci><ci>v</ci></apply>");
        assert_eq!(d.coverage(tree.node_count()), vec![1; 4]);
        assert_eq!(d.score(), 1.0);
    }

    #[test]
    fn overrides_prune_rules() {
        let mut b = RuleSetBuilder::new();
        b.add_translation(pat("mi[σ]"), pat("ci[σ]"), 3).unwrap();
        b.add_translation(pat("mi[σ]"), pat("ci[Divisor Sigma]"), 1)
            .unwrap();
        let rules = b.build();
        let tree = p("<mi>σ</mi>");
        let (plain, _) = translate_with_overrides(&tree, &rules, BTreeMap::new()).unwrap();
        assert_eq!(plain.serialize(), "<ci>σ</ci>");
        let forced = BTreeMap::from([(NodeId(0), "Divisor Sigma".to_string())]);
        let (out, d) = translate_with_overrides(&tree, &rules, forced.clone()).unwrap();
        assert_eq!(out.serialize(), "<ci>Divisor Sigma</ci>");
        assert!((d.score() - 0.25).abs() < 1e-12);
        // A reading no rule produces falls back to a ci carrying it.
        let unseen = BTreeMap::from([(NodeId(0), "Weierstrass Sigma".to_string())]);
        let (out, _) = translate_with_overrides(&tree, &rules, unseen).unwrap();
        assert_eq!(out.serialize(), "<ci>Weierstrass Sigma</ci>");
    }

    #[test]
    fn empty_tree_rejected() {
        let err = translate(
            &MathTree::empty(Markup::Presentation),
            &RuleSet::default(),
            None,
            &Context::default(),
        )
        .unwrap_err();
        assert_eq!(err, DecodeError::EmptyTree);
    }

    #[test]
    fn output_lines_round_trip() {
        let ts = vec![
            Translation {
                id: "a".into(),
                content: Some(MathTree::leaf(Markup::Content, "ci", "x")),
                score: 0.5,
                failed: false,
            },
            Translation {
                id: "b".into(),
                content: None,
                score: 0.0,
                failed: true,
            },
        ];
        let text = translations_to_jsonl(&ts);
        assert_eq!(translations_from_jsonl(&text).unwrap(), ts);
    }

    // Exhaustive oracle: enumerates every derivation reachable from the
    // same per-node options and returns the best total log score.
    fn enumerate(
        tree: &MathTree,
        id: NodeId,
        rules: &RuleSet,
        overrides: &BTreeMap<NodeId, String>,
    ) -> Vec<f64> {
        let mut all = Vec::new();
        for (_, step, _, subs) in options(tree, id, rules, overrides) {
            let mut partial = vec![step];
            for s in subs {
                let sub = enumerate(tree, s, rules, overrides);
                partial = partial
                    .iter()
                    .flat_map(|a| sub.iter().map(move |b| a + b))
                    .collect();
            }
            all.extend(partial);
        }
        all
    }

    fn arb_term(depth: u32) -> BoxedStrategy<Term> {
        let leaf = prop_oneof![
            prop::sample::select(vec!["a", "b"]).prop_map(|t| Term::leaf("mi", t)),
            prop::sample::select(vec!["+", "("]).prop_map(|t| Term::leaf("mo", t)),
        ];
        if depth == 0 {
            return leaf.boxed();
        }
        prop_oneof![
            2 => leaf,
            1 => (prop::sample::select(vec!["mrow", "msub"]), prop::collection::vec(arb_term(depth - 1), 1..3))
                .prop_map(|(el, ch)| Term::node(el, ch)),
        ]
        .boxed()
    }

    fn random_rules(tree: &MathTree, picks: &[(usize, u8, u64)]) -> RuleSet {
        // Rules are cut from the tree itself so that they actually match:
        // each pick takes a node, abstracts a subset of its children and
        // pairs it with a random content pattern over the same variables.
        let mut b = RuleSetBuilder::new();
        for &(node, mask, count) in picks {
            let id = NodeId(node % tree.node_count());
            let n = tree.node(id);
            let mut vars = 0;
            let children: Vec<Pattern> = n
                .children()
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    if mask & (1 << k) != 0 {
                        vars += 1;
                        Pattern::Var(vars)
                    } else {
                        Pattern::from_subtree(tree, c)
                    }
                })
                .collect();
            let lhs = Pattern::node(n.element(), n.text(), children);
            let mut rhs_children = vec![Pattern::node("ci", Some(&format!("r{count}")), vec![])];
            rhs_children.extend((1..=vars).map(Pattern::Var));
            let rhs = if vars == 0 && count % 2 == 0 {
                Pattern::node("ci", Some(&format!("r{count}")), vec![])
            } else {
                Pattern::node("apply", None, rhs_children)
            };
            b.add_translation(lhs, rhs, count).unwrap();
            let arity = n.children().len();
            if arity >= 2 && mask & 4 != 0 {
                let split = (count as usize % (arity - 1)) + 1;
                let groups = vec![(0..split).collect(), (split..arity).collect()];
                let heads = vec![0, split];
                let elements: Vec<&str> = n
                    .children()
                    .iter()
                    .map(|&c| tree.node(c).element())
                    .collect();
                b.add_segmentation(
                    n.element(),
                    &elements,
                    groups,
                    heads,
                    Pattern::node("apply", None, vec![Pattern::Var(2), Pattern::Var(1)]),
                    count,
                )
                .unwrap();
            }
        }
        b.build()
    }

    proptest! {
        #[test]
        fn dp_matches_exhaustive_enumeration(
            term in arb_term(3),
            picks in prop::collection::vec((0usize..8, 0u8..8, 1u64..4), 0..8),
            override_pick in prop::option::of(0usize..8),
        ) {
            let tree = MathTree::from_term(Markup::Presentation, &term);
            prop_assume!(tree.node_count() <= 8);
            let rules = random_rules(&tree, &picks);
            let mut overrides = BTreeMap::new();
            if let Some(k) = override_pick {
                let id = NodeId(k % tree.node_count());
                if tree.node(id).element() == "mi" {
                    overrides.insert(id, "r2".to_string());
                }
            }
            let (_, d) = translate_with_overrides(&tree, &rules, overrides.clone()).unwrap();
            let oracle = enumerate(&tree, tree.root(), &rules, &overrides)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((d.log_score - oracle).abs() <= 1e-9);
            prop_assert_eq!(d.coverage(tree.node_count()), vec![1; tree.node_count()]);
            prop_assert!(d.score() > 0.0 && d.score() <= 1.0);
            let again = translate_with_overrides(&tree, &rules, overrides).unwrap();
            prop_assert_eq!(again.1, d);
        }
    }
}
