use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.9;

/// Sparse non-negative vector keyed by term id, entries sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
    norm: f64,
}

impl SparseVector {
    pub fn new(entries: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut entries: Vec<(u32, f64)> = entries.into_iter().filter(|(_, w)| *w != 0.0).collect();
        entries.sort_by_key(|(id, _)| *id);
        entries.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        SparseVector { entries, norm }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, id: u32) -> f64 {
        self.entries
            .binary_search_by_key(&id, |(i, _)| *i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// A vector with no entries (all-empty document).
    pub fn is_degenerate(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn normalized(&self) -> SparseVector {
        if self.is_degenerate() {
            return self.clone();
        }
        SparseVector::new(self.entries.iter().map(|&(id, w)| (id, w / self.norm)))
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Cosine similarity; zero when either side is degenerate.
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        if self.is_degenerate() || other.is_degenerate() {
            return 0.0;
        }
        self.dot(other) / (self.norm * other.norm)
    }
}

/// Term ids are assigned in first-seen order over documents, then tokens.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
    df: Vec<usize>,
    n_docs: usize,
}

impl Vocabulary {
    pub fn build(docs: &[Vec<String>]) -> Self {
        let mut vocab = Vocabulary {
            n_docs: docs.len(),
            ..Default::default()
        };
        let mut last_seen: Vec<usize> = Vec::new();
        for (doc_idx, tokens) in docs.iter().enumerate() {
            for token in tokens {
                let id = match vocab.index.get(token) {
                    Some(&id) => id as usize,
                    None => {
                        let id = vocab.terms.len();
                        vocab.index.insert(token.clone(), id as u32);
                        vocab.terms.push(token.clone());
                        vocab.df.push(0);
                        last_seen.push(usize::MAX);
                        id
                    }
                };
                if last_seen[id] != doc_idx {
                    last_seen[id] = doc_idx;
                    vocab.df[id] += 1;
                }
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub fn df(&self, id: u32) -> usize {
        self.df[id as usize]
    }

    /// Smoothed idf: `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, id: u32) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.df(id) as f64)).ln() + 1.0
    }

    /// CSV with columns `term,term_id,df`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["term", "term_id", "df"])?;
        for (id, term) in self.terms.iter().enumerate() {
            w.write_record([term.as_str(), &id.to_string(), &self.df[id].to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Raw-count tf times smoothed idf, L2-normalized per document. Documents
/// without tokens come back as degenerate (empty) vectors.
pub fn tfidf_vectorize(docs: &[Vec<String>]) -> Result<(Vocabulary, Vec<SparseVector>)> {
    if docs.is_empty() {
        return Err(Error::Precondition(
            "tf-idf needs at least one document".into(),
        ));
    }
    let vocab = Vocabulary::build(docs);
    let vectors = docs
        .par_iter()
        .map(|tokens| {
            let mut counts: HashMap<u32, usize> = HashMap::new();
            for t in tokens {
                *counts.entry(vocab.index[t]).or_default() += 1;
            }
            SparseVector::new(
                counts
                    .into_iter()
                    .map(|(id, tf)| (id, tf as f64 * vocab.idf(id))),
            )
            .normalized()
        })
        .collect();
    Ok((vocab, vectors))
}

/// Result of near-duplicate removal, as indices into the input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DedupOutcome {
    /// Retained indices in input order.
    pub retained: Vec<usize>,
    /// `(dropped, kept, similarity)` with `kept` the most similar retained
    /// document.
    pub dropped: Vec<(usize, usize, f64)>,
}

/// Greedy earliest-first near-duplicate removal over `(published_at, id)`
/// order. A document is dropped when its cosine similarity to any already
/// retained document exceeds `threshold`.
pub fn dedup_indices(
    docs: &[Document],
    vectors: &[SparseVector],
    threshold: f64,
) -> Result<DedupOutcome> {
    if docs.len() != vectors.len() {
        return Err(Error::InvalidInput(format!(
            "dedup got {} documents but {} vectors",
            docs.len(),
            vectors.len()
        )));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "dedup threshold {threshold} outside (0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| {
        (docs[a].published_at, &docs[a].id).cmp(&(docs[b].published_at, &docs[b].id))
    });

    // Postings over retained documents: term id -> (retained doc, weight).
    let mut postings: HashMap<u32, Vec<(usize, f64)>> = HashMap::new();
    let mut keep = vec![false; docs.len()];
    let mut outcome = DedupOutcome::default();
    let mut acc: HashMap<usize, f64> = HashMap::new();
    for &i in &order {
        let v = &vectors[i];
        acc.clear();
        if !v.is_degenerate() {
            for &(term, w) in v.entries() {
                if let Some(list) = postings.get(&term) {
                    for &(j, wj) in list {
                        *acc.entry(j).or_default() += w * wj;
                    }
                }
            }
        }
        let best = acc
            .iter()
            .map(|(&j, &dot)| (j, dot / (v.norm() * vectors[j].norm())))
            .filter(|(_, sim)| *sim > threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((j, sim)) => outcome.dropped.push((i, j, sim)),
            None => {
                keep[i] = true;
                for &(term, w) in v.entries() {
                    postings.entry(term).or_default().push((i, w));
                }
            }
        }
    }
    outcome.retained = (0..docs.len()).filter(|&i| keep[i]).collect();
    Ok(outcome)
}

pub fn dedup(docs: &[Document], vectors: &[SparseVector], threshold: f64) -> Result<Vec<Document>> {
    let outcome = dedup_indices(docs, vectors, threshold)?;
    Ok(outcome.retained.into_iter().map(|i| docs[i].clone()).collect())
}
