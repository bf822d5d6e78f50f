//! Probabilistic tree-to-tree rules extracted from aligned parallel trees.
//!
//! Two kinds of rules come out of extraction:
//!
//! * **Translation rules** map a presentation subtree pattern to a content
//!   subtree pattern. Patterns may carry variables (`$1`, `$2`, ...) at the
//!   children of the left-hand root; a right-hand variable is replaced by the
//!   translation of the child bound on the left.
//! * **Segmentation rules** only look at a presentation element and the
//!   element names of its children. They split the children into contiguous units, each with one head
//!   child that gets translated (the other members are dropped), and
//!   recombine the unit translations under a content template.
//!
//! A presentation subtree and a content subtree form an admissible pair when
//! the leaf-to-leaf alignment links touching either side stay inside the
//! pair. Every admissible pair yields a lexical rule. Admissible children of
//! an admissible node can be abstracted into variables, one level deep.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::Alignment;
use crate::corpus::{Corpus, ParallelExample};
use crate::mathml::{MathTree, NodeId, Term};

/// Above this many admissible children only the full abstraction is emitted.
const MAX_ABSTRACTION_SUBSETS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("no alignment for example {0:?}")]
    MissingAlignment(String),
    #[error("rule file line {line}: {cause}")]
    FormatError { line: usize, cause: String },
    #[error("ill-formed rule: {0}")]
    IllFormed(String),
}

/// A tree pattern. `Var(k)` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pattern {
    Var(usize),
    Node {
        element: String,
        text: Option<String>,
        children: Vec<Pattern>,
    },
}

/// Result of matching a left-hand pattern at a tree node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternMatch {
    /// `bindings[k - 1]` is the node bound to `$k`.
    pub bindings: Vec<NodeId>,
    /// Nodes matched by lexical parts of the pattern.
    pub consumed: Vec<NodeId>,
}

impl Pattern {
    pub fn node(element: &str, text: Option<&str>, children: Vec<Pattern>) -> Self {
        Pattern::Node {
            element: element.to_string(),
            text: text.map(str::to_string),
            children,
        }
    }

    pub fn from_term(term: &Term) -> Self {
        Pattern::Node {
            element: term.element.clone(),
            text: term.text.clone(),
            children: term.children.iter().map(Pattern::from_term).collect(),
        }
    }

    /// Fully lexical pattern of the subtree rooted at `id`.
    pub fn from_subtree(tree: &MathTree, id: NodeId) -> Self {
        Pattern::from_term(&tree.to_term_at(id))
    }

    /// Variables in order of first occurrence (preorder).
    pub fn vars(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<usize>) {
        match self {
            Pattern::Var(k) => out.push(*k),
            Pattern::Node { children, .. } => children.iter().for_each(|c| c.collect_vars(out)),
        }
    }

    pub fn is_lexical(&self) -> bool {
        self.vars().is_empty()
    }

    /// Labels of lexical leaves: text when present, element name otherwise.
    pub fn leaf_labels(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaf_labels(&mut out);
        out
    }

    fn collect_leaf_labels<'a>(&'a self, out: &mut Vec<&'a str>) {
        if let Pattern::Node {
            element,
            text,
            children,
        } = self
        {
            if children.is_empty() {
                out.push(text.as_deref().unwrap_or(element));
            }
            children.iter().for_each(|c| c.collect_leaf_labels(out));
        }
    }

    /// Matches the pattern rooted at `node`.
    pub fn match_at(&self, tree: &MathTree, node: NodeId) -> Option<PatternMatch> {
        let mut bound: BTreeMap<usize, NodeId> = BTreeMap::new();
        let mut consumed = Vec::new();
        if !self.match_rec(tree, node, &mut bound, &mut consumed) {
            return None;
        }
        let bindings: Vec<NodeId> = bound.values().copied().collect();
        if bound.keys().copied().ne(1..=bindings.len()) {
            return None;
        }
        Some(PatternMatch { bindings, consumed })
    }

    fn match_rec(
        &self,
        tree: &MathTree,
        node: NodeId,
        bound: &mut BTreeMap<usize, NodeId>,
        consumed: &mut Vec<NodeId>,
    ) -> bool {
        match self {
            Pattern::Var(k) => bound.insert(*k, node).is_none(),
            Pattern::Node {
                element,
                text,
                children,
            } => {
                let n = tree.node(node);
                if n.element() != element
                    || n.text() != text.as_deref()
                    || n.children().len() != children.len()
                {
                    return false;
                }
                consumed.push(node);
                children
                    .iter()
                    .zip(n.children())
                    .all(|(p, &c)| p.match_rec(tree, c, bound, consumed))
            }
        }
    }

    /// Substitutes `$k` with `values[k - 1]`.
    pub fn instantiate(&self, values: &[Term]) -> Term {
        match self {
            Pattern::Var(k) => values[*k - 1].clone(),
            Pattern::Node {
                element,
                text,
                children,
            } => Term {
                element: element.clone(),
                text: text.clone(),
                children: children.iter().map(|c| c.instantiate(values)).collect(),
            },
        }
    }

    /// Parses the bracketed notation produced by `Display`, e.g.
    /// `apply(selector ci[S] $2)`.
    pub fn parse(src: &str) -> Result<Self, String> {
        let chars: Vec<char> = src.chars().collect();
        let mut pos = 0;
        let p = parse_pattern(&chars, &mut pos)?;
        skip_ws(&chars, &mut pos);
        if pos != chars.len() {
            return Err(format!("trailing input at {pos}"));
        }
        Ok(p)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Var(k) => write!(f, "${k}"),
            Pattern::Node {
                element,
                text,
                children,
            } => {
                f.write_str(element)?;
                if let Some(t) = text {
                    f.write_str("[")?;
                    for ch in t.chars() {
                        if matches!(ch, '[' | ']' | '\\') {
                            f.write_str("\\")?;
                        }
                        write!(f, "{ch}")?;
                    }
                    f.write_str("]")?;
                }
                if !children.is_empty() {
                    f.write_str("(")?;
                    for (i, c) in children.iter().enumerate() {
                        if i > 0 {
                            f.write_str(" ")?;
                        }
                        write!(f, "{c}")?;
                    }
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

fn skip_ws(chars: &[char], pos: &mut usize) {
    while *pos < chars.len() && chars[*pos] == ' ' {
        *pos += 1;
    }
}

fn parse_pattern(chars: &[char], pos: &mut usize) -> Result<Pattern, String> {
    skip_ws(chars, pos);
    if chars.get(*pos) == Some(&'$') {
        *pos += 1;
        let start = *pos;
        while *pos < chars.len() && chars[*pos].is_ascii_digit() {
            *pos += 1;
        }
        let k: usize = chars[start..*pos]
            .iter()
            .collect::<String>()
            .parse()
            .map_err(|_| format!("bad variable at {start}"))?;
        if k == 0 {
            return Err("variables are numbered from 1".into());
        }
        return Ok(Pattern::Var(k));
    }
    let start = *pos;
    while *pos < chars.len()
        && (chars[*pos].is_alphanumeric() || matches!(chars[*pos], '-' | '_' | ':' | '.'))
    {
        *pos += 1;
    }
    if start == *pos {
        return Err(format!("expected element name at {start}"));
    }
    let element: String = chars[start..*pos].iter().collect();
    let mut text = None;
    if chars.get(*pos) == Some(&'[') {
        *pos += 1;
        let mut t = String::new();
        loop {
            match chars.get(*pos) {
                None => return Err("unterminated leaf text".into()),
                Some(']') => {
                    *pos += 1;
                    break;
                }
                Some('\\') => {
                    let esc = chars.get(*pos + 1).ok_or("dangling escape")?;
                    t.push(*esc);
                    *pos += 2;
                }
                Some(c) => {
                    t.push(*c);
                    *pos += 1;
                }
            }
        }
        text = Some(t);
    }
    let mut children = Vec::new();
    if chars.get(*pos) == Some(&'(') {
        if text.is_some() {
            return Err(format!("<{element}> has both text and children"));
        }
        *pos += 1;
        loop {
            skip_ws(chars, pos);
            match chars.get(*pos) {
                None => return Err("unterminated child list".into()),
                Some(')') => {
                    *pos += 1;
                    break;
                }
                Some(_) => children.push(parse_pattern(chars, pos)?),
            }
        }
        if children.is_empty() {
            return Err(format!("<{element}> has an empty child list"));
        }
    }
    Ok(Pattern::Node {
        element,
        text,
        children,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationRule {
    pub lhs: Pattern,
    pub rhs: Pattern,
    pub count: u64,
    pub probability: f64,
}

impl fmt::Display for TranslationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.lhs, self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationRule {
    pub element: String,
    /// Element names of the children, in order.
    pub children: Vec<String>,
    /// Contiguous groups of child positions, one per unit.
    pub groups: Vec<Vec<usize>>,
    /// The translated child of each unit.
    pub heads: Vec<usize>,
    /// Content template over unit variables `$1..$m`.
    pub recombination: Pattern,
    pub count: u64,
    pub probability: f64,
}

impl SegmentationRule {
    pub fn arity(&self) -> usize {
        self.children.len()
    }

    /// The parent pattern, e.g. `mrow(mo mi mo)`.
    pub fn lhs(&self) -> String {
        format!("{}({})", self.element, self.children.join(" "))
    }

    fn check(&self) -> Result<(), RuleError> {
        let ill = |m: String| Err(RuleError::IllFormed(m));
        if self.groups.len() != self.heads.len() || self.groups.is_empty() {
            return ill(format!("{}: groups and heads disagree", self.lhs()));
        }
        let flat: Vec<usize> = self.groups.iter().flatten().copied().collect();
        if self.children.is_empty() || flat != (0..self.arity()).collect::<Vec<_>>() {
            return ill(format!("{}: split does not cover children", self.lhs()));
        }
        for (g, h) in self.groups.iter().zip(&self.heads) {
            if !g.contains(h) {
                return ill(format!("{}: head outside its group", self.lhs()));
            }
        }
        let mut vars = self.recombination.vars();
        vars.sort_unstable();
        if vars != (1..=self.groups.len()).collect::<Vec<_>>() {
            return ill(format!(
                "{}: recombination must use every unit once",
                self.lhs()
            ));
        }
        Ok(())
    }
}

impl fmt::Display for SegmentationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:?} heads {:?} -> {}",
            self.lhs(),
            self.groups,
            self.heads,
            self.recombination
        )
    }
}

fn check_translation(lhs: &Pattern, rhs: &Pattern) -> Result<(), RuleError> {
    let Pattern::Node { children, .. } = lhs else {
        return Err(RuleError::IllFormed(format!("bare variable lhs {lhs}")));
    };
    // variables sit at the children of the lhs root, numbered in order
    let lhs_vars = lhs.vars();
    let direct: Vec<usize> = children
        .iter()
        .filter_map(|c| match c {
            Pattern::Var(k) => Some(*k),
            _ => None,
        })
        .collect();
    if lhs_vars != direct || lhs_vars != (1..=lhs_vars.len()).collect::<Vec<_>>() {
        return Err(RuleError::IllFormed(format!("bad lhs variables in {lhs}")));
    }
    if let Some(k) = rhs.vars().into_iter().find(|k| !lhs_vars.contains(k)) {
        return Err(RuleError::IllFormed(format!(
            "unbound ${k} in {lhs} -> {rhs}"
        )));
    }
    Ok(())
}

type LhsKey = (String, usize, Option<String>);

fn key_of_pattern(p: &Pattern) -> LhsKey {
    match p {
        Pattern::Node {
            element,
            text,
            children,
        } => (element.clone(), children.len(), text.clone()),
        Pattern::Var(_) => (String::new(), 0, None),
    }
}

/// Extracted rules with per-left-hand-side probabilities.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    translation: Vec<TranslationRule>,
    segmentation: Vec<SegmentationRule>,
    translation_index: BTreeMap<LhsKey, Vec<usize>>,
    segmentation_index: BTreeMap<(String, Vec<String>), Vec<usize>>,
}

impl PartialEq for RuleSet {
    fn eq(&self, other: &Self) -> bool {
        self.translation == other.translation && self.segmentation == other.segmentation
    }
}

impl RuleSet {
    fn from_parts(
        mut translation: Vec<TranslationRule>,
        mut segmentation: Vec<SegmentationRule>,
    ) -> Self {
        translation.sort_by(|a, b| (&a.lhs, &a.rhs).cmp(&(&b.lhs, &b.rhs)));
        segmentation.sort_by(|a, b| {
            (
                &a.element,
                &a.children,
                &a.groups,
                &a.heads,
                &a.recombination,
            )
                .cmp(&(
                    &b.element,
                    &b.children,
                    &b.groups,
                    &b.heads,
                    &b.recombination,
                ))
        });
        let mut translation_index: BTreeMap<LhsKey, Vec<usize>> = BTreeMap::new();
        for (i, r) in translation.iter().enumerate() {
            translation_index
                .entry(key_of_pattern(&r.lhs))
                .or_default()
                .push(i);
        }
        let mut segmentation_index: BTreeMap<(String, Vec<String>), Vec<usize>> = BTreeMap::new();
        for (i, r) in segmentation.iter().enumerate() {
            segmentation_index
                .entry((r.element.clone(), r.children.clone()))
                .or_default()
                .push(i);
        }
        RuleSet {
            translation,
            segmentation,
            translation_index,
            segmentation_index,
        }
    }

    pub fn translation_rules(&self) -> &[TranslationRule] {
        &self.translation
    }

    pub fn segmentation_rules(&self) -> &[SegmentationRule] {
        &self.segmentation
    }

    pub fn is_empty(&self) -> bool {
        self.translation.is_empty() && self.segmentation.is_empty()
    }

    /// Translation rules whose lhs matches at `node`, most probable first,
    /// ties in rule order.
    pub fn matching_at(&self, tree: &MathTree, node: NodeId) -> Vec<(usize, PatternMatch)> {
        let n = tree.node(node);
        let key = (
            n.element().to_string(),
            n.children().len(),
            n.text().map(str::to_string),
        );
        let mut out: Vec<(usize, PatternMatch)> = self
            .translation_index
            .get(&key)
            .into_iter()
            .flatten()
            .filter_map(|&i| self.translation[i].lhs.match_at(tree, node).map(|m| (i, m)))
            .collect();
        out.sort_by(|a, b| {
            self.translation[b.0]
                .probability
                .total_cmp(&self.translation[a.0].probability)
                .then(a.0.cmp(&b.0))
        });
        out
    }

    /// Segmentation rules for the element and child elements at `node`, most
    /// probable first.
    pub fn segmentations_at(&self, tree: &MathTree, node: NodeId) -> Vec<usize> {
        let n = tree.node(node);
        if n.children().is_empty() {
            return Vec::new();
        }
        let mut out: Vec<usize> = self
            .segmentation_index
            .get(&(n.element().to_string(), child_elements(tree, node)))
            .cloned()
            .unwrap_or_default();
        out.sort_by(|&a, &b| {
            self.segmentation[b]
                .probability
                .total_cmp(&self.segmentation[a].probability)
                .then(a.cmp(&b))
        });
        out
    }

    /// Largest deviation from 1 of the probability mass of any lhs.
    pub fn max_normalization_error(&self) -> f64 {
        let mut mass: BTreeMap<String, f64> = BTreeMap::new();
        for r in &self.translation {
            *mass.entry(format!("t {}", r.lhs)).or_default() += r.probability;
        }
        for r in &self.segmentation {
            *mass.entry(format!("s {}", r.lhs())).or_default() += r.probability;
        }
        mass.values().map(|m| (m - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.translation {
            let rec = RuleRecord::Translation {
                lhs: r.lhs.to_string(),
                rhs: r.rhs.to_string(),
                count: r.count,
                probability: r.probability,
            };
            out.push_str(&serde_json::to_string(&rec).expect("rule serializes"));
            out.push('\n');
        }
        for r in &self.segmentation {
            let rec = RuleRecord::Segmentation {
                lhs: r.lhs(),
                split: r.groups.clone(),
                heads: r.heads.clone(),
                recombination: r.recombination.to_string(),
                count: r.count,
                probability: r.probability,
            };
            out.push_str(&serde_json::to_string(&rec).expect("rule serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, RuleError> {
        let mut translation = Vec::new();
        let mut segmentation = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let fmt_err = |cause: String| RuleError::FormatError {
                line: line_no,
                cause,
            };
            let rec: RuleRecord = serde_json::from_str(line).map_err(|e| fmt_err(e.to_string()))?;
            match rec {
                RuleRecord::Translation {
                    lhs,
                    rhs,
                    count,
                    probability,
                } => {
                    let lhs = Pattern::parse(&lhs).map_err(&fmt_err)?;
                    let rhs = Pattern::parse(&rhs).map_err(&fmt_err)?;
                    check_translation(&lhs, &rhs).map_err(|e| fmt_err(e.to_string()))?;
                    check_probability(probability).map_err(&fmt_err)?;
                    translation.push(TranslationRule {
                        lhs,
                        rhs,
                        count,
                        probability,
                    });
                }
                RuleRecord::Segmentation {
                    lhs,
                    split,
                    heads,
                    recombination,
                    count,
                    probability,
                } => {
                    let (element, children) = parse_parent_pattern(&lhs)
                        .ok_or_else(|| fmt_err(format!("bad segmentation lhs {lhs:?}")))?;
                    let rule = SegmentationRule {
                        element,
                        children,
                        groups: split,
                        heads,
                        recombination: Pattern::parse(&recombination).map_err(&fmt_err)?,
                        count,
                        probability,
                    };
                    rule.check().map_err(|e| fmt_err(e.to_string()))?;
                    check_probability(probability).map_err(&fmt_err)?;
                    segmentation.push(rule);
                }
            }
        }
        Ok(RuleSet::from_parts(translation, segmentation))
    }
}

fn child_elements(tree: &MathTree, node: NodeId) -> Vec<String> {
    tree.node(node)
        .children()
        .iter()
        .map(|&c| tree.node(c).element().to_string())
        .collect()
}

fn parse_parent_pattern(lhs: &str) -> Option<(String, Vec<String>)> {
    let (element, rest) = lhs.split_once('(')?;
    let inner = rest.strip_suffix(')')?;
    let ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric());
    let children: Vec<String> = inner.split_whitespace().map(str::to_string).collect();
    if !ok(element) || !children.iter().all(|c| ok(c)) {
        return None;
    }
    Some((element.to_string(), children))
}

fn check_probability(p: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(format!("probability {p} out of range"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RuleRecord {
    Translation {
        lhs: String,
        rhs: String,
        count: u64,
        probability: f64,
    },
    Segmentation {
        lhs: String,
        split: Vec<Vec<usize>>,
        heads: Vec<usize>,
        recombination: String,
        count: u64,
        probability: f64,
    },
}

/// Parent element, child elements, groups, heads, recombination.
type SegmentationKey = (String, Vec<String>, Vec<Vec<usize>>, Vec<usize>, Pattern);

/// Accumulates rule occurrences and turns them into relative frequencies.
#[derive(Debug, Clone, Default)]
pub struct RuleSetBuilder {
    translation: BTreeMap<(Pattern, Pattern), u64>,
    segmentation: BTreeMap<SegmentationKey, u64>,
}

impl RuleSetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_translation(
        &mut self,
        lhs: Pattern,
        rhs: Pattern,
        count: u64,
    ) -> Result<&mut Self, RuleError> {
        check_translation(&lhs, &rhs)?;
        *self.translation.entry((lhs, rhs)).or_default() += count;
        Ok(self)
    }

    pub fn add_segmentation(
        &mut self,
        element: &str,
        children: &[&str],
        groups: Vec<Vec<usize>>,
        heads: Vec<usize>,
        recombination: Pattern,
        count: u64,
    ) -> Result<&mut Self, RuleError> {
        let probe = SegmentationRule {
            element: element.to_string(),
            children: children.iter().map(|c| c.to_string()).collect(),
            groups,
            heads,
            recombination,
            count,
            probability: 0.0,
        };
        probe.check()?;
        *self
            .segmentation
            .entry((
                probe.element,
                probe.children,
                probe.groups,
                probe.heads,
                probe.recombination,
            ))
            .or_default() += count;
        Ok(self)
    }

    pub fn build(self) -> RuleSet {
        let mut lhs_totals: BTreeMap<&Pattern, u64> = BTreeMap::new();
        for ((lhs, _), &n) in &self.translation {
            *lhs_totals.entry(lhs).or_default() += n;
        }
        let translation = self
            .translation
            .iter()
            .map(|((lhs, rhs), &count)| TranslationRule {
                lhs: lhs.clone(),
                rhs: rhs.clone(),
                count,
                probability: count as f64 / lhs_totals[lhs] as f64,
            })
            .collect();
        let mut seg_totals: BTreeMap<(&str, &[String]), u64> = BTreeMap::new();
        for ((el, children, ..), &n) in &self.segmentation {
            *seg_totals
                .entry((el.as_str(), children.as_slice()))
                .or_default() += n;
        }
        let segmentation = self
            .segmentation
            .iter()
            .map(
                |((el, children, groups, heads, recomb), &count)| SegmentationRule {
                    element: el.clone(),
                    children: children.clone(),
                    groups: groups.clone(),
                    heads: heads.clone(),
                    recombination: recomb.clone(),
                    count,
                    probability: count as f64
                        / seg_totals[&(el.as_str(), children.as_slice())] as f64,
                },
            )
            .collect();
        RuleSet::from_parts(translation, segmentation)
    }
}

/// Translation rules whose lhs matches the root of `subtree`, most probable
/// first with ties in rule order.
pub fn rule_lookup<'a>(
    ruleset: &'a RuleSet,
    subtree: &MathTree,
) -> Vec<(&'a TranslationRule, f64)> {
    if subtree.is_empty() {
        return Vec::new();
    }
    ruleset
        .matching_at(subtree, subtree.root())
        .into_iter()
        .map(|(i, _)| {
            let r = &ruleset.translation[i];
            (r, r.probability)
        })
        .collect()
}

pub fn extract_rules(corpus: &Corpus, alignments: &[Alignment]) -> Result<RuleSet, RuleError> {
    if let Some(ex) = corpus.examples().get(alignments.len()) {
        return Err(RuleError::MissingAlignment(ex.id.clone()));
    }
    let mut builder = RuleSetBuilder::new();
    for (ex, al) in corpus.examples().iter().zip(alignments) {
        if ex.presentation.is_empty() || ex.content.is_empty() {
            continue;
        }
        extract_example(ex, al, &mut builder)?;
    }
    Ok(builder.build())
}

/// Admissible presentation nodes of one aligned example, mapped to the
/// smallest content node they pair with.
pub fn admissible_pairs(example: &ParallelExample, alignment: &Alignment) -> Vec<Option<NodeId>> {
    AlignedPair::new(example, alignment).admissible
}

struct AlignedPair<'a> {
    p: &'a MathTree,
    c: &'a MathTree,
    p_size: Vec<usize>,
    span_c: Vec<BTreeSet<usize>>,
    admissible: Vec<Option<NodeId>>,
}

fn subtree_sizes(tree: &MathTree) -> Vec<usize> {
    let mut size = vec![1; tree.node_count()];
    for i in (0..tree.node_count()).rev() {
        if let Some(parent) = tree.node(NodeId(i)).parent() {
            size[parent.0] += size[i];
        }
    }
    size
}

fn spans(tree: &MathTree, links: impl Iterator<Item = (usize, usize)>) -> Vec<BTreeSet<usize>> {
    let mut span = vec![BTreeSet::new(); tree.node_count()];
    for (own, other) in links {
        let mut cur = Some(NodeId(own));
        while let Some(n) = cur {
            span[n.0].insert(other);
            cur = tree.node(n).parent();
        }
    }
    span
}

fn lca(tree: &MathTree, nodes: &BTreeSet<usize>) -> Option<NodeId> {
    let mut iter = nodes.iter();
    let first = NodeId(*iter.next()?);
    let mut acc = first;
    for &n in iter {
        let n = NodeId(n);
        while acc != n && !tree.is_ancestor(acc, n) {
            acc = tree.node(acc).parent()?;
        }
    }
    Some(acc)
}

impl<'a> AlignedPair<'a> {
    fn new(example: &'a ParallelExample, alignment: &Alignment) -> Self {
        let p = &example.presentation;
        let c = &example.content;
        // Only leaf-to-leaf links take part in the consistency check.
        let links: Vec<(usize, usize)> = alignment
            .links
            .iter()
            .filter_map(|l| Some((l.presentation?, l.content)))
            .filter(|&(pi, ci)| {
                pi < p.node_count()
                    && ci < c.node_count()
                    && p.node(NodeId(pi)).is_leaf()
                    && c.node(NodeId(ci)).is_leaf()
            })
            .collect();
        let p_size = subtree_sizes(p);
        let span_c = spans(p, links.iter().copied());
        let span_p = spans(c, links.iter().map(|&(a, b)| (b, a)));
        let admissible = (0..p.node_count())
            .map(|i| {
                let target = lca(c, &span_c[i])?;
                let inside = span_p[target.0]
                    .iter()
                    .all(|&q| q >= i && q < i + p_size[i]);
                inside.then_some(target)
            })
            .collect();
        AlignedPair {
            p,
            c,
            p_size,
            span_c,
            admissible,
        }
    }
}

fn content_pattern(tree: &MathTree, node: NodeId, vars: &BTreeMap<NodeId, usize>) -> Pattern {
    if let Some(&k) = vars.get(&node) {
        return Pattern::Var(k);
    }
    let n = tree.node(node);
    Pattern::Node {
        element: n.element().to_string(),
        text: n.text().map(str::to_string),
        children: n
            .children()
            .iter()
            .map(|&ch| content_pattern(tree, ch, vars))
            .collect(),
    }
}

fn extract_example(
    example: &ParallelExample,
    alignment: &Alignment,
    builder: &mut RuleSetBuilder,
) -> Result<(), RuleError> {
    let pair = AlignedPair::new(example, alignment);
    let (p, c) = (pair.p, pair.c);
    debug_assert!(pair.p_size.len() == p.node_count());
    for (i, target) in pair.admissible.iter().enumerate() {
        let Some(target) = *target else { continue };
        let node = NodeId(i);
        builder.add_translation(
            Pattern::from_subtree(p, node),
            Pattern::from_subtree(c, target),
            1,
        )?;

        let children = p.node(node).children();
        if children.is_empty() {
            continue;
        }
        // (position, content node) of admissible children
        let abstractable: Vec<(usize, NodeId)> = children
            .iter()
            .enumerate()
            .filter_map(|(pos, &ch)| pair.admissible[ch.0].map(|t| (pos, t)))
            .collect();
        if abstractable.is_empty() {
            continue;
        }
        let full = (1usize << abstractable.len()) - 1;
        let masks: Vec<usize> = if abstractable.len() <= MAX_ABSTRACTION_SUBSETS {
            (1..=full).collect()
        } else {
            vec![full]
        };
        for mask in masks {
            let mut lhs_children = Vec::with_capacity(children.len());
            let mut vars = BTreeMap::new();
            let mut k = 0;
            for (pos, &ch) in children.iter().enumerate() {
                let slot = abstractable
                    .iter()
                    .position(|&(ap, _)| ap == pos)
                    .filter(|&j| mask & (1 << j) != 0);
                match slot {
                    Some(j) => {
                        k += 1;
                        vars.insert(abstractable[j].1, k);
                        lhs_children.push(Pattern::Var(k));
                    }
                    None => lhs_children.push(Pattern::from_subtree(p, ch)),
                }
            }
            let n = p.node(node);
            let lhs = Pattern::node(n.element(), None, lhs_children);
            let rhs = content_pattern(c, target, &vars);
            builder.add_translation(lhs, rhs.clone(), 1)?;

            if mask == full {
                add_segmentation(&pair, node, &abstractable, rhs, builder)?;
            }
        }
    }
    Ok(())
}

/// Records the parent-level residue of the full abstraction at `node`, when
/// every non-admissible child is unaligned.
fn add_segmentation(
    pair: &AlignedPair<'_>,
    node: NodeId,
    heads: &[(usize, NodeId)],
    recombination: Pattern,
    builder: &mut RuleSetBuilder,
) -> Result<(), RuleError> {
    let n = pair.p.node(node);
    let children = n.children();
    let head_positions: Vec<usize> = heads.iter().map(|&(pos, _)| pos).collect();
    for (pos, &ch) in children.iter().enumerate() {
        if !head_positions.contains(&pos) && !pair.span_c[ch.0].is_empty() {
            return Ok(());
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); head_positions.len()];
    let mut unit = 0;
    for pos in 0..children.len() {
        if let Some(u) = head_positions.iter().position(|&h| h == pos) {
            unit = u;
        }
        groups[unit].push(pos);
    }
    let elements = child_elements(pair.p, node);
    let elements: Vec<&str> = elements.iter().map(String::as_str).collect();
    builder.add_segmentation(
        n.element(),
        &elements,
        groups,
        head_positions,
        recombination,
        1,
    )?;
    Ok(())
}
