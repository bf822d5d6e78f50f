//! Ordered tree edit distance and the tree edit distance rate (TEDR).

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::decoder::Translation;
use crate::mathml::{MathTree, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("tree edit distance rate needs non-empty trees")]
    EmptyTree,
    #[error("reference for {0:?} is empty")]
    EmptyReference(String),
    #[error("output and reference ids differ: {0}")]
    IdMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditCostModel {
    pub insert_cost: f64,
    pub delete_cost: f64,
    pub relabel_cost: f64,
}

impl Default for EditCostModel {
    fn default() -> Self {
        EditCostModel {
            insert_cost: 1.0,
            delete_cost: 1.0,
            relabel_cost: 1.0,
        }
    }
}

impl EditCostModel {
    pub fn relabel(&self, a: &str, b: &str) -> f64 {
        if a == b {
            0.0
        } else {
            self.relabel_cost
        }
    }
}

/// Node label compared by the edit distance: element plus leaf text.
pub fn node_label(tree: &MathTree, id: NodeId) -> String {
    let n = tree.node(id);
    match n.text() {
        Some(t) => format!("{}[{}]", n.element(), t),
        None => n.element().to_string(),
    }
}

/// Postorder view used by the Zhang-Shasha recurrence. Index `i` is the
/// (i+1)-th node in postorder.
struct Postorder {
    labels: Vec<String>,
    /// Leftmost leaf descendant of each node, as a postorder index.
    lml: Vec<usize>,
    keyroots: Vec<usize>,
}

impl Postorder {
    fn new(tree: &MathTree) -> Self {
        let n = tree.node_count();
        let mut labels = Vec::with_capacity(n);
        let mut lml = Vec::with_capacity(n);
        if n > 0 {
            fn walk(
                tree: &MathTree,
                id: NodeId,
                labels: &mut Vec<String>,
                lml: &mut Vec<usize>,
            ) -> usize {
                let mut first_leaf = None;
                for &c in tree.node(id).children() {
                    let l = walk(tree, c, labels, lml);
                    first_leaf.get_or_insert(l);
                }
                let me = labels.len();
                labels.push(node_label(tree, id));
                let l = first_leaf.unwrap_or(me);
                lml.push(l);
                l
            }
            walk(tree, tree.root(), &mut labels, &mut lml);
        }
        let mut highest: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, &l) in lml.iter().enumerate() {
            highest.insert(l, i);
        }
        let mut keyroots: Vec<usize> = highest.into_values().collect();
        keyroots.sort_unstable();
        Postorder {
            labels,
            lml,
            keyroots,
        }
    }
}

/// Exact ordered tree edit distance.
pub fn tree_edit_distance(a: &MathTree, b: &MathTree, costs: &EditCostModel) -> f64 {
    let ta = Postorder::new(a);
    let tb = Postorder::new(b);
    let (n, m) = (ta.labels.len(), tb.labels.len());
    if n == 0 || m == 0 {
        return n as f64 * costs.delete_cost + m as f64 * costs.insert_cost;
    }
    let mut td = vec![vec![0.0f64; m]; n];
    // Forest distances, 1-based with row/column 0 for the empty forest.
    let mut fd = vec![vec![0.0f64; m + 1]; n + 1];
    for &i in &ta.keyroots {
        for &j in &tb.keyroots {
            let (li, lj) = (ta.lml[i], tb.lml[j]);
            let rows = i - li + 2;
            let cols = j - lj + 2;
            fd[0][0] = 0.0;
            for x in 1..rows {
                fd[x][0] = fd[x - 1][0] + costs.delete_cost;
            }
            for y in 1..cols {
                fd[0][y] = fd[0][y - 1] + costs.insert_cost;
            }
            for x in 1..rows {
                let ai = li + x - 1;
                for y in 1..cols {
                    let bj = lj + y - 1;
                    let del = fd[x - 1][y] + costs.delete_cost;
                    let ins = fd[x][y - 1] + costs.insert_cost;
                    if ta.lml[ai] == li && tb.lml[bj] == lj {
                        let rel = fd[x - 1][y - 1] + costs.relabel(&ta.labels[ai], &tb.labels[bj]);
                        fd[x][y] = del.min(ins).min(rel);
                        td[ai][bj] = fd[x][y];
                    } else {
                        let px = ta.lml[ai] - li;
                        let py = tb.lml[bj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ai][bj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// Edit distance under unit costs divided by the larger node count.
pub fn tedr(generated: &MathTree, reference: &MathTree) -> Result<f64, EvalError> {
    if generated.is_empty() || reference.is_empty() {
        return Err(EvalError::EmptyTree);
    }
    let d = tree_edit_distance(generated, reference, &EditCostModel::default());
    Ok(d / generated.node_count().max(reference.node_count()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub tedr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_example: Vec<ExampleScore>,
    pub mean_tedr: f64,
    pub n: usize,
    pub failures: usize,
}

/// Scores outputs against the references with the same ids. A failed
/// output scores 1.0: inserting every reference node, normalized by the
/// reference size.
pub fn evaluate_corpus(
    outputs: &[Translation],
    references: &Corpus,
) -> Result<EvalReport, EvalError> {
    let out_ids: BTreeSet<&str> = outputs.iter().map(|t| t.id.as_str()).collect();
    if out_ids.len() != outputs.len() {
        return Err(EvalError::IdMismatch("duplicate output id".into()));
    }
    let ref_ids: BTreeSet<&str> = references
        .examples()
        .iter()
        .map(|e| e.id.as_str())
        .collect();
    if out_ids != ref_ids {
        let missing: Vec<&str> = ref_ids.difference(&out_ids).take(3).copied().collect();
        let extra: Vec<&str> = out_ids.difference(&ref_ids).take(3).copied().collect();
        return Err(EvalError::IdMismatch(format!(
            "missing outputs {missing:?}, unknown outputs {extra:?}"
        )));
    }
    let per_example = outputs
        .par_iter()
        .map(|t| {
            let reference = &references.get(&t.id).expect("ids checked").content;
            if reference.is_empty() {
                return Err(EvalError::EmptyReference(t.id.clone()));
            }
            let score = match (&t.content, t.failed) {
                (Some(generated), false) if !generated.is_empty() => tedr(generated, reference)?,
                _ => 1.0,
            };
            Ok(ExampleScore {
                id: t.id.clone(),
                tedr: score,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = per_example.len();
    let mean_tedr = if n == 0 {
        0.0
    } else {
        per_example.iter().map(|s| s.tedr).sum::<f64>() / n as f64
    };
    Ok(EvalReport {
        failures: outputs
            .iter()
            .filter(|t| t.failed || t.content.as_ref().is_none_or(MathTree::is_empty))
            .count(),
        per_example,
        mean_tedr,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParallelExample;
    use crate::mathml::{Markup, Term};
    use proptest::prelude::*;

    fn c(term: &Term) -> MathTree {
        MathTree::from_term(Markup::Content, term)
    }

    fn leaf(t: &str) -> Term {
        Term::leaf("ci", t)
    }

    #[test]
    fn small_cases() {
        let costs = EditCostModel::default();
        let w = c(&leaf("w"));
        assert_eq!(tree_edit_distance(&w, &w, &costs), 0.0);
        assert_eq!(tree_edit_distance(&w, &c(&leaf("v")), &costs), 1.0);
        let ab = c(&Term::node("mrow", vec![leaf("a"), leaf("b")]));
        let a = c(&Term::node("mrow", vec![leaf("a")]));
        assert_eq!(tree_edit_distance(&ab, &a, &costs), 1.0);
        assert_eq!(tedr(&w, &c(&leaf("v"))).unwrap(), 1.0);
        let ac = c(&Term::node("mrow", vec![leaf("a"), leaf("c")]));
        assert_eq!(tedr(&ab, &ac).unwrap(), 1.0 / 3.0);
        assert_eq!(
            tedr(&MathTree::empty(Markup::Content), &w),
            Err(EvalError::EmptyTree)
        );
    }

    #[test]
    fn text_is_part_of_the_label() {
        let costs = EditCostModel::default();
        assert_eq!(
            tree_edit_distance(&c(&leaf("x")), &c(&Term::leaf("cn", "x")), &costs),
            1.0
        );
        assert_eq!(
            tree_edit_distance(&c(&leaf("x")), &c(&Term::empty("ci")), &costs),
            1.0
        );
    }

    fn corpus(refs: &[(&str, Term)]) -> Corpus {
        Corpus::new(
            refs.iter()
                .map(|(id, t)| ParallelExample {
                    id: id.to_string(),
                    presentation: MathTree::leaf(Markup::Presentation, "mi", "x"),
                    content: c(t),
                    category: String::new(),
                    description: String::new(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn out(id: &str, t: Option<Term>) -> Translation {
        Translation {
            id: id.into(),
            failed: t.is_none(),
            content: t.map(|t| c(&t)),
            score: 1.0,
        }
    }

    #[test]
    fn corpus_report() {
        let refs = corpus(&[("a", leaf("x")), ("b", leaf("y"))]);
        let perfect = evaluate_corpus(
            &[out("a", Some(leaf("x"))), out("b", Some(leaf("y")))],
            &refs,
        )
        .unwrap();
        assert_eq!(perfect.mean_tedr, 0.0);
        let half = evaluate_corpus(
            &[out("b", Some(leaf("z"))), out("a", Some(leaf("x")))],
            &refs,
        )
        .unwrap();
        assert_eq!(half.mean_tedr, 0.5);
        assert_eq!(half.per_example[0].id, "b");
        let failed = evaluate_corpus(&[out("a", None), out("b", Some(leaf("y")))], &refs).unwrap();
        assert_eq!(failed.per_example[0].tedr, 1.0);
        assert_eq!(failed.failures, 1);
        assert!(matches!(
            evaluate_corpus(
                &[out("q", Some(leaf("x"))), out("b", Some(leaf("y")))],
                &refs
            ),
            Err(EvalError::IdMismatch(_))
        ));
    }

    // Brute-force oracle: minimum cost over all mappings that are
    // one-to-one and preserve ancestry and left-to-right order (exactly the
    // mappings that edit scripts induce).
    fn brute_force(a: &MathTree, b: &MathTree) -> f64 {
        let la: Vec<String> = (0..a.node_count())
            .map(|i| node_label(a, NodeId(i)))
            .collect();
        let lb: Vec<String> = (0..b.node_count())
            .map(|i| node_label(b, NodeId(i)))
            .collect();
        let before =
            |t: &MathTree, x: usize, y: usize| x < y && !t.is_ancestor(NodeId(x), NodeId(y));
        let mut best = f64::INFINITY;
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut used = vec![false; b.node_count()];
        #[allow(clippy::too_many_arguments)]
        fn rec(
            i: usize,
            a: &MathTree,
            b: &MathTree,
            la: &[String],
            lb: &[String],
            pairs: &mut Vec<(usize, usize)>,
            used: &mut Vec<bool>,
            best: &mut f64,
            before: &dyn Fn(&MathTree, usize, usize) -> bool,
        ) {
            if i == a.node_count() {
                let relabel: f64 = pairs.iter().map(|&(x, y)| f64::from(la[x] != lb[y])).sum();
                let cost = relabel
                    + (a.node_count() - pairs.len()) as f64
                    + (b.node_count() - pairs.len()) as f64;
                *best = best.min(cost);
                return;
            }
            rec(i + 1, a, b, la, lb, pairs, used, best, before);
            for j in 0..b.node_count() {
                if used[j] {
                    continue;
                }
                let ok = pairs.iter().all(|&(x, y)| {
                    a.is_ancestor(NodeId(x), NodeId(i)) == b.is_ancestor(NodeId(y), NodeId(j))
                        && before(a, x, i) == before(b, y, j)
                });
                if ok {
                    used[j] = true;
                    pairs.push((i, j));
                    rec(i + 1, a, b, la, lb, pairs, used, best, before);
                    pairs.pop();
                    used[j] = false;
                }
            }
        }
        rec(0, a, b, &la, &lb, &mut pairs, &mut used, &mut best, &before);
        best
    }

    fn arb_term(max_depth: u32) -> BoxedStrategy<Term> {
        let leaf = prop::sample::select(vec!["ci[a]", "ci[b]", "cn[1]", "plus"]).prop_map(|s| {
            match s.split_once('[') {
                Some((el, rest)) => Term::leaf(el, rest.trim_end_matches(']')),
                None => Term::empty(s),
            }
        });
        if max_depth == 0 {
            return leaf.boxed();
        }
        prop_oneof![
            1 => leaf,
            1 => (prop::sample::select(vec!["apply", "selector"]),
                  prop::collection::vec(arb_term(max_depth - 1), 1..4))
                .prop_map(|(el, ch)| Term::node(el, ch)),
        ]
        .boxed()
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in arb_term(2), b in arb_term(2)) {
            let (a, b) = (c(&a), c(&b));
            prop_assume!(a.node_count() + b.node_count() <= 6);
            let d = tree_edit_distance(&a, &b, &EditCostModel::default());
            prop_assert_eq!(d, brute_force(&a, &b));
        }

        #[test]
        fn metric_properties(a in arb_term(3), b in arb_term(3), x in arb_term(3)) {
            let (a, b, x) = (c(&a), c(&b), c(&x));
            prop_assume!(a.node_count() <= 10 && b.node_count() <= 10 && x.node_count() <= 10);
            let costs = EditCostModel::default();
            let d = |p: &MathTree, q: &MathTree| tree_edit_distance(p, q, &costs);
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &b) <= d(&a, &x) + d(&x, &b));
            prop_assert!(tedr(&a, &b).unwrap() >= 0.0);
        }
    }
}
