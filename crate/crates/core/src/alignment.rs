//! Lexical token alignment between Presentation and Content trees.
//!
//! Trees are linearized in preorder and aligned with IBM Model 1, trained by
//! EM from a uniform start. Typed content leaves are restricted to matching
//! presentation leaves: `ci:` tokens come from `mi:` tokens, `cn:` tokens from
//! `mn:` tokens, either may come from NULL. Without this, a reading that only
//! ever occurs in function position is as likely to be explained by the
//! invisible function application operator as by the identifier. Because a tree's nodes are stored in preorder, the
//! token index of a linearized tree is also its [`NodeId`](crate::mathml::NodeId).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mathml::MathTree;

/// The empty presentation word that content tokens may align to.
pub const NULL_TOKEN: &str = "<NULL>";

const PROB_FLOOR: f64 = 1e-12;
const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignmentError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("translation table line {line}: {cause}")]
    FormatError { line: usize, cause: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSeq(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Preorder tokens: `element:text` for leaves with text, `element` otherwise.
pub fn linearize(tree: &MathTree) -> TokenSeq {
    TokenSeq(
        tree.nodes()
            .map(|(_, n)| match n.text() {
                Some(t) => format!("{}:{}", n.element(), t),
                None => n.element().to_string(),
            })
            .collect(),
    )
}

/// Whether presentation token `p` may generate content token `c`.
pub fn compatible(p: &str, c: &str) -> bool {
    if p == NULL_TOKEN {
        return true;
    }
    if c.starts_with("ci:") {
        p.starts_with("mi:")
    } else if c.starts_with("cn:") {
        p.starts_with("mn:")
    } else {
        true
    }
}

fn token_text(token: &str) -> Option<&str> {
    token.split_once(':').map(|(_, t)| t)
}

/// Lexical translation probabilities t(content | presentation).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranslationTable {
    rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TranslationTable {
    pub fn prob(&self, presentation: &str, content: &str) -> f64 {
        self.rows
            .get(presentation)
            .and_then(|r| r.get(content))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, f64>)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.rows
            .values()
            .map(|r| (r.values().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `p \t c \t prob` lines sorted by presentation token, then by
    /// descending probability.
    pub fn save(&self) -> String {
        let mut out = String::new();
        for (p, row) in &self.rows {
            let mut entries: Vec<_> = row.iter().collect();
            entries.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
            for (c, prob) in entries {
                out.push_str(&escape(p));
                out.push('\t');
                out.push_str(&escape(c));
                out.push('\t');
                out.push_str(&prob.to_string());
                out.push('\n');
            }
        }
        out
    }

    pub fn load(text: &str) -> Result<Self, AlignmentError> {
        let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fmt_err = |cause: &str| AlignmentError::FormatError {
                line: i + 1,
                cause: cause.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [p, c, prob] = fields.as_slice() else {
                return Err(fmt_err("expected three tab-separated fields"));
            };
            let prob: f64 = prob.parse().map_err(|_| fmt_err("bad probability"))?;
            if !(0.0..=1.0).contains(&prob) {
                return Err(fmt_err("probability out of range"));
            }
            rows.entry(unescape(p))
                .or_default()
                .insert(unescape(c), prob);
        }
        Ok(TranslationTable { rows })
    }
}

fn escape(token: &str) -> String {
    token
        .replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

fn unescape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    let mut chars = token.chars();
    while let Some(ch) = chars.next() {
        if ch == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(ch);
        }
    }
    out
}

/// Per-iteration diagnostics. `log_likelihoods[0]` is the uniform start,
/// entry `k` is the table after `k` EM updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    pub log_likelihoods: Vec<f64>,
    pub row_errors: Vec<f64>,
}

pub fn train_ibm1(
    pairs: &[(TokenSeq, TokenSeq)],
    iterations: usize,
) -> Result<TranslationTable, AlignmentError> {
    train_ibm1_traced(pairs, iterations).map(|(t, _)| t)
}

pub fn train_ibm1_traced(
    pairs: &[(TokenSeq, TokenSeq)],
    iterations: usize,
) -> Result<(TranslationTable, EmTrace), AlignmentError> {
    if pairs.is_empty() {
        return Err(AlignmentError::EmptyTrainingSet);
    }
    if iterations == 0 {
        return Err(AlignmentError::NoIterations);
    }

    let mut p_vocab: Vec<String> = vec![NULL_TOKEN.to_string()];
    let mut p_index: HashMap<String, u32> = HashMap::from([(NULL_TOKEN.to_string(), 0)]);
    let mut c_vocab: Vec<String> = Vec::new();
    let mut c_index: HashMap<String, u32> = HashMap::new();
    let intern = |vocab: &mut Vec<String>, index: &mut HashMap<String, u32>, tok: &str| {
        *index.entry(tok.to_string()).or_insert_with(|| {
            vocab.push(tok.to_string());
            (vocab.len() - 1) as u32
        })
    };

    let mut encoded: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(pairs.len());
    for (p, c) in pairs {
        let mut ps = vec![0u32];
        ps.extend(
            p.tokens()
                .iter()
                .map(|t| intern(&mut p_vocab, &mut p_index, t)),
        );
        let cs = c
            .tokens()
            .iter()
            .map(|t| intern(&mut c_vocab, &mut c_index, t))
            .collect();
        encoded.push((ps, cs));
    }

    // Co-occurring (p, c) cells, grouped by p in ascending c order so that
    // row sums are accumulated in a fixed order.
    let mut cells: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (ps, cs) in &encoded {
        for &p in ps {
            for &c in cs {
                if compatible(&p_vocab[p as usize], &c_vocab[c as usize]) {
                    cells.insert((p, c), 0);
                }
            }
        }
    }
    let mut row_ranges: Vec<(usize, usize)> = vec![(0, 0); p_vocab.len()];
    let mut cell_keys = Vec::with_capacity(cells.len());
    for (slot, (key, idx)) in cells.iter_mut().enumerate() {
        *idx = slot;
        cell_keys.push(*key);
    }
    for (slot, &(p, _)) in cell_keys.iter().enumerate() {
        let r = &mut row_ranges[p as usize];
        if r.1 == 0 {
            *r = (slot, slot + 1);
        } else {
            r.1 = slot + 1;
        }
    }
    let lookup: HashMap<(u32, u32), usize> = cells.into_iter().collect();

    let uniform = 1.0 / c_vocab.len().max(1) as f64;
    let mut t = vec![uniform; cell_keys.len()];
    let mut trace = EmTrace::default();

    for _ in 0..iterations {
        let mut counts = vec![0.0; t.len()];
        let ll = e_step(&encoded, &lookup, &t, Some(&mut counts));
        trace.log_likelihoods.push(ll);
        for &(start, end) in &row_ranges {
            if end == start {
                continue;
            }
            let total: f64 = counts[start..end].iter().map(|&x| x.max(PROB_FLOOR)).sum();
            for slot in start..end {
                t[slot] = counts[slot].max(PROB_FLOOR) / total;
            }
        }
        let mut row_err: f64 = 0.0;
        for &(start, end) in &row_ranges {
            if end > start {
                row_err = row_err.max((t[start..end].iter().sum::<f64>() - 1.0).abs());
            }
        }
        trace.row_errors.push(row_err);
    }
    trace
        .log_likelihoods
        .push(e_step(&encoded, &lookup, &t, None));

    let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (slot, &(p, c)) in cell_keys.iter().enumerate() {
        rows.entry(p_vocab[p as usize].clone())
            .or_default()
            .insert(c_vocab[c as usize].clone(), t[slot]);
    }
    Ok((TranslationTable { rows }, trace))
}

/// Accumulates expected counts (when given a buffer) and returns the corpus
/// log-likelihood under the current table.
fn e_step(
    encoded: &[(Vec<u32>, Vec<u32>)],
    lookup: &HashMap<(u32, u32), usize>,
    t: &[f64],
    mut counts: Option<&mut Vec<f64>>,
) -> f64 {
    let mut ll = 0.0;
    let mut slots = Vec::new();
    for (ps, cs) in encoded {
        let norm = ps.len() as f64;
        for &c in cs {
            slots.clear();
            slots.extend(ps.iter().filter_map(|&p| lookup.get(&(p, c)).copied()));
            let denom: f64 = slots.iter().map(|&s| t[s]).sum();
            ll += (denom / norm).ln();
            if let Some(counts) = counts.as_deref_mut() {
                for &s in &slots {
                    counts[s] += t[s] / denom;
                }
            }
        }
    }
    ll
}

/// One link per content token; `presentation == None` means NULL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Link {
    pub presentation: Option<usize>,
    pub content: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub links: Vec<Link>,
}

impl Alignment {
    /// Presentation index linked to content index `c`, if not NULL.
    pub fn source_of(&self, content: usize) -> Option<usize> {
        self.links
            .iter()
            .find(|l| l.content == content)
            .and_then(|l| l.presentation)
    }

    /// Content indices linked to presentation index `p`, ascending.
    pub fn targets_of(&self, presentation: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .links
            .iter()
            .filter(|l| l.presentation == Some(presentation))
            .map(|l| l.content)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Links each content token to its most probable presentation token.
///
/// Near-ties (relative 1e-12) prefer a presentation token carrying the same
/// leaf text, then the lowest index; NULL wins only when strictly better.
/// Content tokens with zero probability everywhere link to NULL.
pub fn align_best(pair: (&TokenSeq, &TokenSeq), table: &TranslationTable) -> Alignment {
    let (ps, cs) = pair;
    let mut links = Vec::with_capacity(cs.len());
    for (j, c) in cs.tokens().iter().enumerate() {
        let c_text = token_text(c);
        let mut best: Option<(usize, f64, bool)> = None;
        for (i, p) in ps.tokens().iter().enumerate() {
            let prob = table.prob(p, c);
            if prob <= 0.0 {
                continue;
            }
            let same_text = c_text.is_some() && token_text(p) == c_text;
            best = match best {
                None => Some((i, prob, same_text)),
                Some((bi, bp, bs)) => {
                    let tied = (prob - bp).abs() <= TIE_EPSILON * prob.max(bp);
                    if (!tied && prob > bp) || (tied && same_text && !bs) {
                        Some((i, prob, same_text))
                    } else {
                        Some((bi, bp, bs))
                    }
                }
            };
        }
        let null_prob = table.prob(NULL_TOKEN, c);
        let presentation = match best {
            Some((i, prob, _)) if prob >= null_prob * (1.0 - TIE_EPSILON) => Some(i),
            _ => None,
        };
        links.push(Link {
            presentation,
            content: j,
        });
    }
    Alignment { links }
}

/// Trains on every example of a corpus and aligns each of them.
pub fn align_corpus(
    corpus: &crate::corpus::Corpus,
    iterations: usize,
) -> Result<(TranslationTable, Vec<Alignment>), AlignmentError> {
    let pairs: Vec<(TokenSeq, TokenSeq)> = corpus
        .examples()
        .iter()
        .map(|e| (linearize(&e.presentation), linearize(&e.content)))
        .collect();
    let table = train_ibm1(&pairs, iterations)?;
    let alignments = pairs
        .iter()
        .map(|(p, c)| align_best((p, c), &table))
        .collect();
    Ok((table, alignments))
}
