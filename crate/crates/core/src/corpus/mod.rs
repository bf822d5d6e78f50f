//! Parallel Presentation/Content corpora: loading, fold splitting and the
//! text tokenization used by the n-gram features.

mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mathml::{self, Markup, MathTree};

pub use synthetic::{
    generate_synthetic_corpus, CandidateSpec, IdentifierSpec, SyntheticSpec, BUNDLED_SPEC_JSON,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("record parse error on line {line}: {cause}")]
    RecordParseError { line: usize, cause: String },
    #[error("duplicate example id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("too few examples: {got} examples cannot fill {k} folds")]
    TooFewExamples { got: usize, k: usize },
    #[error("synthetic spec has no identifiers")]
    EmptySpec,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelExample {
    pub id: String,
    pub presentation: MathTree,
    pub content: MathTree,
    pub category: String,
    pub description: String,
}

/// On-disk record: one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub presentation: String,
    pub content: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub description: String,
}

impl ParallelExample {
    /// Blank markup loads as an empty tree so that one bad record does not
    /// sink a whole corpus; downstream steps flag or skip it.
    pub fn from_record(record: Record) -> Result<Self, mathml::ParseError> {
        let tree = |xml: &str, kind| {
            if xml.trim().is_empty() {
                Ok(MathTree::empty(kind))
            } else {
                mathml::parse(xml, kind)
            }
        };
        Ok(ParallelExample {
            presentation: tree(&record.presentation, Markup::Presentation)?,
            content: tree(&record.content, Markup::Content)?,
            id: record.id,
            category: record.category,
            description: record.description,
        })
    }

    pub fn to_record(&self) -> Record {
        Record {
            id: self.id.clone(),
            presentation: self.presentation.serialize(),
            content: self.content.serialize(),
            category: self.category.clone(),
            description: self.description.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    examples: Vec<ParallelExample>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn new(examples: Vec<ParallelExample>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, ex) in examples.iter().enumerate() {
            if !seen.insert(ex.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: ex.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Corpus { examples })
    }

    pub fn examples(&self) -> &[ParallelExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ParallelExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Subset by example index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Corpus {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Line-delimited JSON, one record per line, trailing newline.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(&ex.to_record()).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let mut examples = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(line).map_err(|e| CorpusError::RecordParseError {
                    line: line_no,
                    cause: e.to_string(),
                })?;
            if !seen.insert(record.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    id: record.id,
                    line: line_no,
                });
            }
            let ex = ParallelExample::from_record(record).map_err(|e| {
                CorpusError::RecordParseError {
                    line: line_no,
                    cause: e.to_string(),
                }
            })?;
            examples.push(ex);
        }
        Ok(Corpus { examples })
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::NotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Corpus::from_jsonl(&text)
}

/// Assignment of every example to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    /// Example indices of `corpus` per fold, each list in corpus order.
    pub fn fold_indices(&self, corpus: &Corpus) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (i, ex) in corpus.examples().iter().enumerate() {
            if let Some(f) = self.fold_of(&ex.id) {
                folds[f].push(i);
            }
        }
        folds
    }

    /// (train, test) index lists for holding out `fold`.
    pub fn train_test(&self, corpus: &Corpus, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, ex) in corpus.examples().iter().enumerate() {
            if self.fold_of(&ex.id) == Some(fold) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Seeded shuffle, then round-robin: fold sizes differ by at most one.
pub fn split_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldSplit, CorpusError> {
    if k < 2 || corpus.len() < k {
        return Err(CorpusError::TooFewExamples {
            got: corpus.len(),
            k,
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| (corpus.examples[i].id.clone(), pos % k))
        .collect();
    Ok(FoldSplit {
        k,
        seed,
        assignments,
    })
}

/// Lowercased alphanumeric runs.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Contiguous n-grams joined by a single space.
pub fn ngrams(tokens: &[String], n: usize) -> Vec<String> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.join(" ")).collect()
}
