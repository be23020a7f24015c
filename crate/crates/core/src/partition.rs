//! Event/baseline split: a keyword rule followed by one round of k-nearest
//! neighbor majority voting over document embeddings.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Label};
use crate::embedding::dot;
use crate::error::{Error, Result};

pub const DEFAULT_KEYWORD_THRESHOLD: usize = 2;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_QUORUM: usize = 6;

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Whether `phrase` occurs in `haystack` with a non-alphanumeric character
/// (or the text edge) on both sides.
fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    if phrase.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(phrase) {
        let start = from + pos;
        let end = start + phrase.len();
        let before = haystack[..start].chars().next_back();
        let after = haystack[end..].chars().next();
        if !is_word_char(before) && !is_word_char(after) {
            return true;
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Number of distinct keyword phrases found in `text`, case-insensitive and
/// anchored at word boundaries.
pub fn keyword_match_count(text: &str, keywords: &[String]) -> usize {
    let lowered = text.to_lowercase();
    let mut seen = BTreeSet::new();
    keywords
        .iter()
        .map(|k| k.trim().to_lowercase())
        .filter(|k| seen.insert(k.clone()))
        .filter(|k| contains_phrase(&lowered, k))
        .count()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartitionResult {
    pub event_ids: BTreeSet<String>,
    pub baseline_ids: BTreeSet<String>,
    /// Baseline documents promoted by neighbor voting.
    pub moved_ids: BTreeSet<String>,
    pub keyword_counts: BTreeMap<String, usize>,
}

impl PartitionResult {
    pub fn label(&self, id: &str) -> Label {
        if self.event_ids.contains(id) {
            Label::Event
        } else if self.baseline_ids.contains(id) {
            Label::Baseline
        } else {
            Label::Unassigned
        }
    }

    pub fn len(&self) -> usize {
        self.event_ids.len() + self.baseline_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// CSV with columns `id,label,keyword_count,moved`, ordered by id.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (id, &count) in &self.keyword_counts {
            w.serialize(PartitionRow {
                id: id.clone(),
                label: self.label(id),
                keyword_count: count,
                moved: self.moved_ids.contains(id),
            })?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut out = PartitionResult::default();
        for row in r.deserialize::<PartitionRow>() {
            let row = row?;
            match row.label {
                Label::Event => out.event_ids.insert(row.id.clone()),
                Label::Baseline => out.baseline_ids.insert(row.id.clone()),
                Label::Unassigned => {
                    return Err(Error::InvalidInput(format!(
                        "partition row `{}` is unassigned",
                        row.id
                    )))
                }
            };
            if row.moved {
                out.moved_ids.insert(row.id.clone());
            }
            out.keyword_counts.insert(row.id, row.keyword_count);
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionRow {
    id: String,
    label: Label,
    keyword_count: usize,
    moved: bool,
}

/// Documents matching at least `threshold` keywords go to the event subset,
/// the rest to the baseline.
pub fn initial_assign(docs: &[Document], keywords: &[String], threshold: usize) -> PartitionResult {
    let mut out = PartitionResult::default();
    for doc in docs {
        let count = keyword_match_count(&doc.raw_text, keywords);
        out.keyword_counts.insert(doc.id.clone(), count);
        if count >= threshold {
            out.event_ids.insert(doc.id.clone());
        } else {
            out.baseline_ids.insert(doc.id.clone());
        }
    }
    out
}

/// Indices of the `k` most cosine-similar documents to `query`, excluding
/// itself. Ties at equal similarity go to the smaller id.
pub fn nearest_neighbors(query: usize, ids: &[&str], embeddings: &[Vec<f64>], k: usize) -> Vec<usize> {
    let q = &embeddings[query];
    let mut scored: Vec<(f64, usize)> = (0..embeddings.len())
        .filter(|&j| j != query)
        .map(|j| (dot(q, &embeddings[j]), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(ids[b.1]))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// One simultaneous refinement pass. Every baseline document whose `k`
/// nearest neighbors (over the whole corpus, labels as given) include at
/// least `quorum` event documents is promoted to the event subset.
pub fn knn_refine(
    docs: &[Document],
    partition: &PartitionResult,
    embeddings: &[Vec<f64>],
    k: usize,
    quorum: usize,
) -> Result<PartitionResult> {
    if embeddings.len() != docs.len() {
        return Err(Error::InvalidInput(format!(
            "{} documents but {} embeddings",
            docs.len(),
            embeddings.len()
        )));
    }
    if docs.len() <= k {
        return Err(Error::Precondition(format!(
            "corpus has {} documents, needs more than k = {k}; use a smaller k",
            docs.len()
        )));
    }
    if let Some(d) = docs.iter().find(|d| partition.label(&d.id) == Label::Unassigned) {
        return Err(Error::InvalidInput(format!("document `{}` has no label", d.id)));
    }
    let ids: Vec<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    let is_event: Vec<bool> = ids.iter().map(|id| partition.event_ids.contains(*id)).collect();
    let promoted: Vec<usize> = (0..docs.len())
        .into_par_iter()
        .filter(|&i| !is_event[i])
        .filter(|&i| {
            nearest_neighbors(i, &ids, embeddings, k)
                .into_iter()
                .filter(|&j| is_event[j])
                .count()
                >= quorum
        })
        .collect();
    let mut out = partition.clone();
    for i in promoted {
        let id = ids[i].to_string();
        out.baseline_ids.remove(&id);
        out.event_ids.insert(id.clone());
        out.moved_ids.insert(id);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn kws(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn doc(id: &str, text: &str) -> Document {
        let ts = Utc.with_ymd_and_hms(2022, 5, 24, 0, 0, 0).unwrap();
        Document::new(format!("u/{id}"), "d", text, "", ts).with_id(id)
    }

    #[test]
    fn keyword_counting() {
        let k = kws(&["uvalde", "robb elementary", "school shooting"]);
        assert_eq!(
            keyword_match_count("Students at Robb Elementary in Uvalde, Texas", &k),
            2
        );
        assert_eq!(keyword_match_count("uvalde uvalde UVALDE", &k), 1);
        assert_eq!(keyword_match_count("", &k), 0);
        // Word boundaries on both ends.
        assert_eq!(keyword_match_count("uvaldean robb elementaryschool", &k), 0);
        assert_eq!(keyword_match_count("(uvalde)", &k), 1);
    }

    #[test]
    fn threshold_boundary() {
        let k = kws(&["flood", "levee"]);
        let docs = vec![doc("a", "flood breaks levee"), doc("b", "flood watch")];
        let p = initial_assign(&docs, &k, 2);
        assert!(p.event_ids.contains("a"));
        assert!(p.baseline_ids.contains("b"));
        assert!(p.moved_ids.is_empty());
        assert!(initial_assign(&[], &k, 2).is_empty());
    }

    fn e(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        v[i] = 1.0;
        v
    }

    #[test]
    fn identical_neighbors_promote() {
        // 10 event docs and the query all at e0; 5 baseline docs at e1.
        let mut docs = Vec::new();
        let mut emb = Vec::new();
        for i in 0..10 {
            docs.push(doc(&format!("ev{i:02}"), "flood levee"));
            emb.push(e(0));
        }
        docs.push(doc("query", "unrelated"));
        emb.push(e(0));
        for i in 0..5 {
            docs.push(doc(&format!("zb{i}"), "other"));
            emb.push(e(1));
        }
        let p = initial_assign(&docs, &kws(&["flood", "levee"]), 2);
        let r = knn_refine(&docs, &p, &emb, 10, 6).unwrap();
        assert!(r.moved_ids.contains("query"));
        assert!(r.event_ids.contains("query"));
        assert_eq!(r.len(), p.len());
    }

    #[test]
    fn five_event_neighbors_do_not_promote() {
        let mut docs = Vec::new();
        let mut emb = Vec::new();
        for i in 0..5 {
            docs.push(doc(&format!("ev{i}"), "flood levee"));
            emb.push(e(0));
        }
        for i in 0..5 {
            docs.push(doc(&format!("bl{i}"), "quiet"));
            emb.push(e(0));
        }
        docs.push(doc("query", "unrelated"));
        emb.push(e(0));
        for i in 0..4 {
            docs.push(doc(&format!("far{i}"), "far"));
            emb.push(e(2));
        }
        let p = initial_assign(&docs, &kws(&["flood", "levee"]), 2);
        let r = knn_refine(&docs, &p, &emb, 10, 6).unwrap();
        assert!(!r.moved_ids.contains("query"));
        assert!(r.moved_ids.is_empty());
    }

    #[test]
    fn small_corpus_is_rejected() {
        let docs: Vec<_> = (0..8).map(|i| doc(&i.to_string(), "x")).collect();
        let emb = vec![e(0); 8];
        let p = initial_assign(&docs, &kws(&["x"]), 2);
        let err = knn_refine(&docs, &p, &emb, 10, 6).unwrap_err();
        assert!(err.to_string().contains("smaller k"));
    }

    #[test]
    fn neighbor_ties_break_by_id() {
        let ids = ["q", "d", "b", "c", "a"];
        let emb = vec![e(0); 5];
        assert_eq!(nearest_neighbors(0, &ids, &emb, 2), vec![4, 2]);
    }

    #[test]
    fn csv_round_trip() {
        let docs = vec![doc("a", "flood levee"), doc("b", "flood")];
        let p = initial_assign(&docs, &kws(&["flood", "levee"]), 2);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "id,label,keyword_count,moved\na,event,2,false\nb,baseline,1,false\n"
        );
        assert_eq!(PartitionResult::read_csv(buf.as_slice()).unwrap(), p);
    }
}
