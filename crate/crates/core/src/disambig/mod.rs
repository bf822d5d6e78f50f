//! Sense disambiguation for ambiguous presentation identifiers (`mi`).
//!
//! Every (occurrence, candidate reading) pair becomes one binary instance:
//! positive for the aligned reading, negative for the others. Features are
//! the local presentation context of the `mi`, the category of the
//! expression and n-grams of its description, all conjoined with the
//! candidate. At inference the candidates are ranked by the decision value
//! of one shared linear model.

mod crossval;
mod svm;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{Alignment, AlignmentError};
use crate::corpus::{ngrams, tokenize_text, Corpus, CorpusError, ParallelExample};
use crate::mathml::{MathTree, NodeId, FUNCTION_APPLICATION};

pub use crossval::{cross_validate, CrossValConfig, CrossValReport, FoldSummary, SystemReport};
pub use svm::{objective, train_linear_svm, LinearSvm, SvmConfig, TrainTrace};

#[derive(Debug, Error)]
pub enum DisambigError {
    #[error("ambiguity table is empty")]
    NoAmbiguities,
    #[error("example {example_id:?}: gold reading {gold:?} of {name:?} is not a known candidate")]
    GoldCandidateMissing {
        example_id: String,
        name: String,
        gold: String,
    },
    #[error("degenerate training set: need both positive and negative instances")]
    DegenerateTrainingSet,
    #[error("identifier {0:?} is not ambiguous in this model")]
    UnknownIdentifier(String),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
}

/// One `mi` node with the context the features are computed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiOccurrence {
    pub example_id: String,
    pub node: NodeId,
    pub name: String,
    pub parent_element: String,
    pub preceded_by_mo: bool,
    pub followed_by_mo: bool,
    pub followed_by_function_application: bool,
    pub only_child: bool,
    pub category: String,
    pub description_tokens: Vec<String>,
}

impl MiOccurrence {
    /// `None` unless `node` is an `mi` with text.
    pub fn at(
        example_id: &str,
        tree: &MathTree,
        node: NodeId,
        category: &str,
        description: &str,
    ) -> Option<Self> {
        let n = tree.node(node);
        if n.element() != "mi" {
            return None;
        }
        let name = n.text()?.to_string();
        let (prev, next) = tree.neighbours(node);
        let is_mo = |id: Option<NodeId>| id.is_some_and(|id| tree.node(id).element() == "mo");
        let parent = n.parent().map(|p| tree.node(p));
        Some(MiOccurrence {
            example_id: example_id.to_string(),
            node,
            name,
            parent_element: parent.map_or("none", |p| p.element()).to_string(),
            preceded_by_mo: is_mo(prev),
            followed_by_mo: is_mo(next),
            followed_by_function_application: next.is_some_and(|id| {
                let nn = tree.node(id);
                nn.element() == "mo" && nn.text() == Some(FUNCTION_APPLICATION)
            }),
            only_child: parent.is_some_and(|p| p.children().len() == 1),
            category: category.to_string(),
            description_tokens: tokenize_text(description),
        })
    }

    pub fn all_in(example: &ParallelExample) -> Vec<MiOccurrence> {
        occurrences_in(
            &example.id,
            &example.presentation,
            &example.category,
            &example.description,
        )
    }
}

pub fn occurrences_in(
    example_id: &str,
    tree: &MathTree,
    category: &str,
    description: &str,
) -> Vec<MiOccurrence> {
    tree.nodes()
        .filter_map(|(id, _)| MiOccurrence::at(example_id, tree, id, category, description))
        .collect()
}

/// An occurrence with the reading its alignment assigns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledOccurrence {
    pub occurrence: MiOccurrence,
    pub gold: String,
}

/// Reading of presentation node `node`: label of the first content leaf
/// aligned to it.
pub fn gold_reading(
    example: &ParallelExample,
    alignment: &Alignment,
    node: NodeId,
) -> Option<String> {
    alignment
        .targets_of(node.0)
        .into_iter()
        .map(NodeId)
        .filter(|&c| c.0 < example.content.node_count())
        .map(|c| example.content.node(c))
        .find(|n| n.is_leaf())
        .map(|n| n.label().to_string())
}

pub fn labeled_occurrences(corpus: &Corpus, alignments: &[Alignment]) -> Vec<LabeledOccurrence> {
    corpus
        .examples()
        .iter()
        .zip(alignments)
        .flat_map(|(ex, al)| {
            MiOccurrence::all_in(ex).into_iter().filter_map(move |occ| {
                let gold = gold_reading(ex, al, occ.node)?;
                Some(LabeledOccurrence {
                    occurrence: occ,
                    gold,
                })
            })
        })
        .collect()
}

/// Reading counts per identifier name, ambiguous or not.
pub type ReadingCounts = BTreeMap<String, BTreeMap<String, u64>>;

pub fn count_readings(labeled: &[LabeledOccurrence]) -> ReadingCounts {
    let mut counts = ReadingCounts::new();
    for l in labeled {
        *counts
            .entry(l.occurrence.name.clone())
            .or_default()
            .entry(l.gold.clone())
            .or_default() += 1;
    }
    counts
}

/// Identifiers with at least two readings, with per-reading counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AmbiguityTable {
    entries: BTreeMap<String, BTreeMap<String, u64>>,
}

impl AmbiguityTable {
    pub fn from_counts(counts: &ReadingCounts) -> Self {
        AmbiguityTable {
            entries: counts
                .iter()
                .filter(|(_, readings)| readings.len() >= 2)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Candidates in lexicographic order.
    pub fn candidates(&self, name: &str) -> Option<Vec<&str>> {
        self.entries
            .get(name)
            .map(|r| r.keys().map(String::as_str).collect())
    }

    pub fn count(&self, name: &str, candidate: &str) -> u64 {
        self.entries
            .get(name)
            .and_then(|r| r.get(candidate))
            .copied()
            .unwrap_or(0)
    }

    pub fn entries(&self) -> &BTreeMap<String, BTreeMap<String, u64>> {
        &self.entries
    }
}

pub fn collect_ambiguities(corpus: &Corpus, alignments: &[Alignment]) -> AmbiguityTable {
    AmbiguityTable::from_counts(&count_readings(&labeled_occurrences(corpus, alignments)))
}

/// Highest count wins, ties go to the lexicographically smaller reading.
pub fn most_frequent_of(readings: &BTreeMap<String, u64>) -> Option<String> {
    readings
        .iter()
        .fold(None::<(&String, u64)>, |best, (cand, &n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((cand, n)),
        })
        .map(|(c, _)| c.clone())
}

pub fn most_frequent_baseline(table: &AmbiguityTable) -> BTreeMap<String, String> {
    table
        .entries
        .iter()
        .filter_map(|(name, readings)| Some((name.clone(), most_frequent_of(readings)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryRelation {
    Same,
    Contains,
    NotContains,
}

impl CategoryRelation {
    fn as_str(self) -> &'static str {
        match self {
            CategoryRelation::Same => "same",
            CategoryRelation::Contains => "contains",
            CategoryRelation::NotContains => "not_contains",
        }
    }
}

/// Tokens of a category name, also split at lower-to-upper case changes
/// (`Bessel-TypeFunctions` -> bessel, type, functions).
fn category_tokens(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    let mut prev_lower = false;
    for ch in text.chars() {
        if ch.is_uppercase() && prev_lower {
            spaced.push(' ');
        }
        prev_lower = ch.is_lowercase() || ch.is_ascii_digit();
        spaced.push(ch);
    }
    tokenize_text(&spaced)
}

/// Relation between a category name and a candidate reading, by token
/// overlap, case-insensitive.
pub fn category_relation(category: &str, candidate: &str) -> CategoryRelation {
    let cat = category_tokens(category);
    let cand = category_tokens(candidate);
    if cat.is_empty() || cand.is_empty() {
        return CategoryRelation::NotContains;
    }
    let mut a = cat.clone();
    let mut b = cand.clone();
    a.sort();
    a.dedup();
    b.sort();
    b.dedup();
    if a == b {
        CategoryRelation::Same
    } else if cand.iter().any(|t| cat.contains(t)) {
        CategoryRelation::Contains
    } else {
        CategoryRelation::NotContains
    }
}

const PRESENTATION_PREFIX: &str = "p:";
const TEXT_PREFIX: &str = "t:";

/// Raw feature names for one (occurrence, candidate) pair, each conjoined
/// with the candidate.
pub fn feature_names(occ: &MiOccurrence, candidate: &str) -> Vec<String> {
    let mut raw: Vec<String> = vec![format!("{PRESENTATION_PREFIX}cand")];
    let mut flag = |on: bool, name: &str| {
        if on {
            raw.push(format!("{PRESENTATION_PREFIX}{name}"));
        }
    };
    flag(occ.only_child, "only_child");
    flag(occ.preceded_by_mo, "prev_mo");
    flag(occ.followed_by_mo, "next_mo");
    flag(occ.followed_by_function_application, "next_apply");
    raw.push(format!(
        "{PRESENTATION_PREFIX}parent={}",
        occ.parent_element
    ));
    raw.push(format!("{PRESENTATION_PREFIX}name={}", occ.name));
    if !occ.category.is_empty() {
        raw.push(format!(
            "{TEXT_PREFIX}category={}",
            category_relation(&occ.category, candidate).as_str()
        ));
    }
    for n in 1..=3 {
        for g in ngrams(&occ.description_tokens, n) {
            raw.push(format!("{TEXT_PREFIX}{n}g={g}"));
        }
    }
    raw.into_iter()
        .map(|f| format!("{f}|{candidate}"))
        .collect()
}

/// Sorted, de-duplicated sparse vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector(Vec<(u32, f64)>);

impl SparseVector {
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        pairs.dedup_by_key(|&mut (i, _)| i);
        SparseVector(pairs)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.0
            .iter()
            .map(|&(i, v)| dense.get(i as usize).copied().unwrap_or(0.0) * v)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|(_, v)| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Unseen feature names are added to the vocabulary.
    Train,
    /// Unseen feature names are dropped.
    Infer,
}

/// Feature name to dense index. Indices are handed out in first-seen order;
/// whether an index is a text feature is recorded so that text features can
/// be masked out without renumbering anything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, u32>,
    names: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(names: Vec<String>) -> Result<Self, DisambigError> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i as u32).is_some() {
                return Err(DisambigError::ModelFormat(format!(
                    "duplicate feature {n:?}"
                )));
            }
        }
        Ok(Vocabulary { index, names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn is_text(&self, index: u32) -> bool {
        self.names
            .get(index as usize)
            .is_some_and(|n| n.starts_with(TEXT_PREFIX))
    }

    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn encode(&self, names: &[String]) -> SparseVector {
        SparseVector::from_pairs(
            names
                .iter()
                .filter_map(|n| self.get(n).map(|i| (i, 1.0)))
                .collect(),
        )
    }

    /// Drops text features when `text_features` is false.
    pub fn mask(&self, v: &SparseVector, text_features: bool) -> SparseVector {
        if text_features {
            return v.clone();
        }
        SparseVector(
            v.0.iter()
                .copied()
                .filter(|&(i, _)| !self.is_text(i))
                .collect(),
        )
    }
}

pub fn extract_features(
    occ: &MiOccurrence,
    candidate: &str,
    vocab: &mut Vocabulary,
    mode: FeatureMode,
) -> SparseVector {
    let names = feature_names(occ, candidate);
    match mode {
        FeatureMode::Train => {
            SparseVector::from_pairs(names.iter().map(|n| (vocab.intern(n), 1.0)).collect())
        }
        FeatureMode::Infer => vocab.encode(&names),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: SparseVector,
    pub label: i8,
    pub group: (String, NodeId),
    pub candidate: String,
}

/// One positive and n-1 negative instances per ambiguous occurrence.
pub fn build_instances_from(
    labeled: &[LabeledOccurrence],
    table: &AmbiguityTable,
    vocab: &mut Vocabulary,
) -> Result<Vec<Instance>, DisambigError> {
    if table.is_empty() {
        return Err(DisambigError::NoAmbiguities);
    }
    let mut out = Vec::new();
    for l in labeled {
        let occ = &l.occurrence;
        let Some(candidates) = table.candidates(&occ.name) else {
            continue;
        };
        if !candidates.contains(&l.gold.as_str()) {
            return Err(DisambigError::GoldCandidateMissing {
                example_id: occ.example_id.clone(),
                name: occ.name.clone(),
                gold: l.gold.clone(),
            });
        }
        let start = out.len();
        for cand in candidates {
            out.push(Instance {
                features: extract_features(occ, cand, vocab, FeatureMode::Train),
                label: if cand == l.gold { 1 } else { -1 },
                group: (occ.example_id.clone(), occ.node),
                candidate: cand.to_string(),
            });
        }
        let positives = out[start..].iter().filter(|i| i.label > 0).count();
        assert_eq!(positives, 1, "exactly one positive per occurrence");
    }
    Ok(out)
}

pub fn build_instances(
    corpus: &Corpus,
    alignments: &[Alignment],
    table: &AmbiguityTable,
    vocab: &mut Vocabulary,
) -> Result<Vec<Instance>, DisambigError> {
    build_instances_from(&labeled_occurrences(corpus, alignments), table, vocab)
}

/// Trained disambiguator plus everything needed to featurize new input.
#[derive(Debug, Clone, PartialEq)]
pub struct DisambigModel {
    pub vocabulary: Vocabulary,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub ambiguity_table: AmbiguityTable,
    pub most_frequent: BTreeMap<String, String>,
    pub config: SvmConfig,
    pub text_features: bool,
}

pub fn train(
    instances: &[Instance],
    vocabulary: Vocabulary,
    table: AmbiguityTable,
    config: &SvmConfig,
    text_features: bool,
) -> Result<DisambigModel, DisambigError> {
    let masked: Vec<(SparseVector, i8)> = instances
        .iter()
        .map(|i| (vocabulary.mask(&i.features, text_features), i.label))
        .collect();
    let svm = train_linear_svm(&masked, vocabulary.len(), config)?;
    Ok(DisambigModel {
        most_frequent: most_frequent_baseline(&table),
        vocabulary,
        weights: svm.weights,
        bias: svm.bias,
        ambiguity_table: table,
        config: config.clone(),
        text_features,
    })
}

impl DisambigModel {
    /// A model for a training set without ambiguous identifiers; it never
    /// overrides anything.
    pub fn empty(config: &SvmConfig, text_features: bool) -> Self {
        DisambigModel {
            vocabulary: Vocabulary::new(),
            weights: Vec::new(),
            bias: 0.0,
            ambiguity_table: AmbiguityTable::default(),
            most_frequent: BTreeMap::new(),
            config: config.clone(),
            text_features,
        }
    }

    pub fn score(&self, occ: &MiOccurrence, candidate: &str) -> f64 {
        let x = self.vocabulary.mask(
            &self.vocabulary.encode(&feature_names(occ, candidate)),
            self.text_features,
        );
        x.dot(&self.weights) + self.bias
    }

    /// Candidates by decreasing decision value; ties by training count,
    /// then lexicographically.
    pub fn predict(&self, occ: &MiOccurrence) -> Result<Vec<(String, f64)>, DisambigError> {
        let candidates = self
            .ambiguity_table
            .candidates(&occ.name)
            .ok_or_else(|| DisambigError::UnknownIdentifier(occ.name.clone()))?;
        let mut scored: Vec<(String, f64)> = candidates
            .into_iter()
            .map(|c| (c.to_string(), self.score(occ, c)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| {
                    self.ambiguity_table
                        .count(&occ.name, &b.0)
                        .cmp(&self.ambiguity_table.count(&occ.name, &a.0))
                })
                .then_with(|| a.0.cmp(&b.0))
        });
        Ok(scored)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            vocabulary: self.vocabulary.names.clone(),
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
            bias: self.bias,
            ambiguity_table: self.ambiguity_table.clone(),
            most_frequent: self.most_frequent.clone(),
            config: self.config.clone(),
            seed: self.config.seed,
            text_features: self.text_features,
        };
        serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, DisambigError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| DisambigError::ModelFormat(e.to_string()))?;
        let vocabulary = Vocabulary::from_names(file.vocabulary)?;
        let mut weights = vec![0.0; vocabulary.len()];
        for (i, w) in file.weights {
            let slot = weights.get_mut(i as usize).ok_or_else(|| {
                DisambigError::ModelFormat(format!("weight index {i} out of range"))
            })?;
            *slot = w;
        }
        Ok(DisambigModel {
            vocabulary,
            weights,
            bias: file.bias,
            ambiguity_table: file.ambiguity_table,
            most_frequent: file.most_frequent,
            config: file.config,
            text_features: file.text_features,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    vocabulary: Vec<String>,
    weights: Vec<(u32, f64)>,
    bias: f64,
    ambiguity_table: AmbiguityTable,
    most_frequent: BTreeMap<String, String>,
    config: SvmConfig,
    seed: u64,
    text_features: bool,
}

/// Anything that picks one reading for an occurrence.
pub trait Predictor {
    fn predict_top(&self, occ: &MiOccurrence) -> Option<String>;
}

impl Predictor for DisambigModel {
    fn predict_top(&self, occ: &MiOccurrence) -> Option<String> {
        match self.predict(occ) {
            Ok(ranked) => ranked.into_iter().next().map(|(c, _)| c),
            Err(_) => self.most_frequent.get(&occ.name).cloned(),
        }
    }
}

/// The most-frequent-reading system.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MostFrequent(pub BTreeMap<String, String>);

impl Predictor for MostFrequent {
    fn predict_top(&self, occ: &MiOccurrence) -> Option<String> {
        self.0.get(&occ.name).cloned()
    }
}

impl<F> Predictor for F
where
    F: Fn(&MiOccurrence) -> Option<String>,
{
    fn predict_top(&self, occ: &MiOccurrence) -> Option<String> {
        self(occ)
    }
}

/// Fraction of occurrences whose top prediction equals the gold reading.
pub fn accuracy<P: Predictor + ?Sized>(
    predictor: &P,
    held_out: &[LabeledOccurrence],
) -> Result<f64, DisambigError> {
    if held_out.is_empty() {
        return Err(DisambigError::EmptyEvalSet);
    }
    let correct = held_out
        .iter()
        .filter(|l| predictor.predict_top(&l.occurrence).as_deref() == Some(l.gold.as_str()))
        .count();
    Ok(correct as f64 / held_out.len() as f64)
}
