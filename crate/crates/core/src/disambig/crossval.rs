//! k-fold comparison of the disambiguation systems.
//!
//! The corpus is aligned once up front; folds split examples. Every fold
//! rebuilds the ambiguity table, vocabulary and models from its training
//! examples only. Occurrences are scored when their identifier is
//! ambiguous over the whole corpus. A name a fold's training part never saw
//! as ambiguous is predicted from that part's reading counts.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_instances_from, count_readings, labeled_occurrences, most_frequent_of, train,
    AmbiguityTable, DisambigError, DisambigModel, LabeledOccurrence, Predictor, ReadingCounts,
    SvmConfig, Vocabulary,
};
use crate::alignment::align_corpus;
use crate::corpus::{split_folds, Corpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValConfig {
    pub em_iterations: usize,
    pub svm: SvmConfig,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        CrossValConfig {
            em_iterations: 10,
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    pub test_occurrences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: String,
    pub per_fold: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    pub seed: u64,
    pub config: CrossValConfig,
    pub ambiguous_identifiers: Vec<String>,
    pub folds: Vec<FoldSummary>,
    pub systems: Vec<SystemReport>,
}

impl CrossValReport {
    pub fn system(&self, name: &str) -> Option<&SystemReport> {
        self.systems.iter().find(|s| s.system == name)
    }

    /// Plain-text table, one row per system.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16}{:>10}\n", "system", "accuracy");
        for s in &self.systems {
            out.push_str(&format!("{:<16}{:>9.2}%\n", s.system, 100.0 * s.mean));
        }
        out
    }
}

pub const SYSTEMS: [&str; 3] = ["most_frequent", "without_text", "with_text"];

struct FoldPredictor<'a> {
    model: Option<&'a DisambigModel>,
    fold_table: &'a AmbiguityTable,
    counts: &'a ReadingCounts,
}

impl Predictor for FoldPredictor<'_> {
    fn predict_top(&self, occ: &super::MiOccurrence) -> Option<String> {
        if self.fold_table.contains(&occ.name) {
            if let Some(model) = self.model {
                return model.predict_top(occ);
            }
        }
        self.counts.get(&occ.name).and_then(most_frequent_of)
    }
}

fn fold_accuracy<P: Predictor>(p: &P, test: &[LabeledOccurrence]) -> f64 {
    // A fold with nothing to score counts as perfect.
    super::accuracy(p, test).unwrap_or(1.0)
}

pub fn cross_validate(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    config: &CrossValConfig,
) -> Result<CrossValReport, DisambigError> {
    let split = split_folds(corpus, k, seed)?;
    let (_, alignments) = align_corpus(corpus, config.em_iterations)?;
    let labeled = labeled_occurrences(corpus, &alignments);
    let global = AmbiguityTable::from_counts(&count_readings(&labeled));

    let fold_results: Vec<(FoldSummary, [f64; 3])> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train_ix, test_ix) = split.train_test(corpus, fold);
            let test_ids: BTreeSet<&str> = test_ix
                .iter()
                .map(|&i| corpus.examples()[i].id.as_str())
                .collect();
            let (test, train_l): (Vec<LabeledOccurrence>, Vec<LabeledOccurrence>) = labeled
                .iter()
                .cloned()
                .partition(|l| test_ids.contains(l.occurrence.example_id.as_str()));
            let test: Vec<LabeledOccurrence> = test
                .into_iter()
                .filter(|l| global.contains(&l.occurrence.name))
                .collect();
            let counts = count_readings(&train_l);
            let fold_table = AmbiguityTable::from_counts(&counts);

            let models = if fold_table.is_empty() {
                None
            } else {
                let mut vocab = Vocabulary::new();
                let instances = build_instances_from(&train_l, &fold_table, &mut vocab)?;
                let fit = |text: bool| -> Result<Option<DisambigModel>, DisambigError> {
                    match train(
                        &instances,
                        vocab.clone(),
                        fold_table.clone(),
                        &config.svm,
                        text,
                    ) {
                        Ok(m) => Ok(Some(m)),
                        Err(DisambigError::DegenerateTrainingSet) => Ok(None),
                        Err(e) => Err(e),
                    }
                };
                Some((fit(false)?, fit(true)?))
            };
            let (without, with) = match &models {
                Some((a, b)) => (a.as_ref(), b.as_ref()),
                None => (None, None),
            };
            let mf = FoldPredictor {
                model: None,
                fold_table: &fold_table,
                counts: &counts,
            };
            let acc = [
                fold_accuracy(&mf, &test),
                fold_accuracy(
                    &FoldPredictor {
                        model: without,
                        ..mf
                    },
                    &test,
                ),
                fold_accuracy(&FoldPredictor { model: with, ..mf }, &test),
            ];
            Ok((
                FoldSummary {
                    fold,
                    train_examples: train_ix.len(),
                    test_examples: test_ix.len(),
                    test_occurrences: test.len(),
                },
                acc,
            ))
        })
        .collect::<Result<_, DisambigError>>()?;

    let systems = SYSTEMS
        .iter()
        .enumerate()
        .map(|(s, name)| {
            let per_fold: Vec<f64> = fold_results.iter().map(|(_, a)| a[s]).collect();
            SystemReport {
                system: name.to_string(),
                mean: per_fold.iter().sum::<f64>() / per_fold.len() as f64,
                per_fold,
            }
        })
        .collect();
    Ok(CrossValReport {
        k,
        seed,
        config: config.clone(),
        ambiguous_identifiers: global.names().map(str::to_string).collect(),
        folds: fold_results.into_iter().map(|(f, _)| f).collect(),
        systems,
    })
}
