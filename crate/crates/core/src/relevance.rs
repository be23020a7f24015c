//! Daily term relevance over the event subset and phase reports at the
//! news-cycle change points.
//!
//! Daily scores use `tf_day(w) * idf(w)` where `tf_day` is the term's share
//! of the day's tokens and `idf(w) = ln(N / (1 + df(w))) + 1` over all event
//! documents in the window. Only the day's most frequent terms are scored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::detect_peak;
use crate::corpus::{Category, FIRST_DAY, LAST_DAY, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;
use crate::signals::DailySeries;

pub const DEFAULT_TOP_TERMS: usize = 300;
pub const DEFAULT_TOP_K: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyTermScores {
    pub day: i64,
    pub scores: BTreeMap<String, f64>,
}

/// Tokenized event documents bucketed by day, with document frequencies.
#[derive(Debug, Clone)]
pub struct TermRelevance {
    by_day: Vec<Vec<Vec<String>>>,
    df: HashMap<String, usize>,
    n_docs: usize,
    max_terms: usize,
}

impl TermRelevance {
    /// `docs` pairs each event document's day offset with its normalized
    /// tokens.
    pub fn new(docs: &[(i64, Vec<String>)], max_terms: usize) -> Result<Self> {
        let mut by_day = vec![Vec::new(); WINDOW_LEN];
        let mut df: HashMap<String, usize> = HashMap::new();
        for (day, tokens) in docs {
            if !(FIRST_DAY..=LAST_DAY).contains(day) {
                return Err(Error::InvalidInput(format!("day offset {day} outside window")));
            }
            let distinct: HashSet<&String> = tokens.iter().collect();
            for t in distinct {
                *df.entry(t.clone()).or_default() += 1;
            }
            by_day[(day - FIRST_DAY) as usize].push(tokens.clone());
        }
        Ok(TermRelevance {
            by_day,
            df,
            n_docs: docs.len(),
            max_terms,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    fn day_docs(&self, day: i64) -> &[Vec<String>] {
        if (FIRST_DAY..=LAST_DAY).contains(&day) {
            &self.by_day[(day - FIRST_DAY) as usize]
        } else {
            &[]
        }
    }

    fn idf_from_df(&self, df: usize) -> f64 {
        (self.n_docs as f64 / (1.0 + df as f64)).ln() + 1.0
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf_from_df(self.df.get(term).copied().unwrap_or(0))
    }

    /// Scores for the day's `max_terms` most frequent terms (ties broken
    /// lexicographically). Empty days give an empty map.
    pub fn daily(&self, day: i64) -> DailyTermScores {
        let docs = self.day_docs(day);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut total = 0usize;
        for tokens in docs {
            for t in tokens {
                *counts.entry(t.as_str()).or_default() += 1;
                total += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(self.max_terms);
        let scores = ranked
            .into_iter()
            .map(|(term, count)| {
                let tf = count as f64 / total as f64;
                (term.to_string(), tf * self.idf(term))
            })
            .collect();
        DailyTermScores { day, scores }
    }

    /// Score of a (possibly multi-token) phrase on one day, counting
    /// adjacent-token occurrences. Not limited to the top terms.
    pub fn phrase_score(&self, day: i64, phrase: &[String]) -> f64 {
        if phrase.is_empty() {
            return 0.0;
        }
        let docs = self.day_docs(day);
        let total: usize = docs.iter().map(Vec::len).sum();
        let occurrences: usize = docs.iter().map(|d| count_phrase(d, phrase)).sum();
        if occurrences == 0 {
            return 0.0;
        }
        let df = self
            .by_day
            .iter()
            .flatten()
            .filter(|d| count_phrase(d, phrase) > 0)
            .count();
        occurrences as f64 / total as f64 * self.idf_from_df(df)
    }
}

fn count_phrase(tokens: &[String], phrase: &[String]) -> usize {
    if phrase.len() > tokens.len() {
        return 0;
    }
    tokens.windows(phrase.len()).filter(|w| *w == phrase).count()
}

pub fn daily_term_scores(event_docs: &[(i64, Vec<String>)], day: i64) -> Result<DailyTermScores> {
    Ok(TermRelevance::new(event_docs, DEFAULT_TOP_TERMS)?.daily(day))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordGroup {
    pub name: String,
    pub members: Vec<String>,
}

/// Parses a group set: `[name]` section headers, members one per line,
/// `#` comments.
pub fn parse_group_set(text: &str) -> Result<Vec<WordGroup>> {
    let mut groups: Vec<WordGroup> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(Error::InvalidInput(format!("line {}: empty group name", n + 1)));
            }
            if groups.iter().any(|g| g.name == name) {
                return Err(Error::InvalidInput(format!("line {}: duplicate group `{name}`", n + 1)));
            }
            groups.push(WordGroup {
                name,
                members: Vec::new(),
            });
        } else {
            let group = groups.last_mut().ok_or_else(|| {
                Error::InvalidInput(format!("line {}: member before any [group] header", n + 1))
            })?;
            group.members.push(line.to_lowercase());
        }
    }
    if let Some(g) = groups.iter().find(|g| g.members.is_empty()) {
        return Err(Error::InvalidInput(format!("group `{}` has no members", g.name)));
    }
    Ok(groups)
}

pub fn load_group_set(path: impl AsRef<Path>) -> Result<Vec<WordGroup>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_group_set(&text)
}

pub fn default_groups(category: Category) -> Vec<WordGroup> {
    let text = match category {
        Category::Disaster => include_str!("../data/groups_disaster.txt"),
        Category::Violence => include_str!("../data/groups_violence.txt"),
    };
    parse_group_set(text).expect("shipped group sets parse")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseWindow {
    pub name: String,
    pub start: i64,
    pub end: i64,
}

/// Baseline (-7), onset (0), volume peak, peak + 5 and day 30, each a
/// +/-1-day window clipped to the analysis window. A window that would
/// overlap its predecessor starts after it; windows left empty are dropped.
pub fn default_phases(peak_day: i64) -> Vec<PhaseWindow> {
    let centers = [
        ("baseline", FIRST_DAY),
        ("onset", 0),
        ("peak", peak_day),
        ("post", peak_day + 5),
        ("late", LAST_DAY),
    ];
    let mut out: Vec<PhaseWindow> = Vec::new();
    for (name, c) in centers {
        let mut start = (c - 1).max(FIRST_DAY);
        let end = (c + 1).min(LAST_DAY);
        if let Some(prev) = out.last() {
            start = start.max(prev.end + 1);
        }
        if start <= end {
            out.push(PhaseWindow {
                name: name.to_string(),
                start,
                end,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub start: i64,
    pub end: i64,
    pub top_terms: Vec<(String, f64)>,
    pub group_scores: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub event_id: String,
    pub peak_day: i64,
    pub phases: Vec<Phase>,
}

fn sort_desc(scores: impl IntoIterator<Item = (String, f64)>) -> Vec<(String, f64)> {
    let mut v: Vec<_> = scores.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Builds the phase report. Phase term scores average the daily scores over
/// the window's days (a term absent on a day counts 0); a group's score is
/// the mean of its members' phase scores.
pub fn phase_report(
    event_id: &str,
    relevance: &TermRelevance,
    event_volume: &DailySeries,
    groups: &[WordGroup],
    preprocessor: &Preprocessor,
    top_k: usize,
) -> Result<PhaseReport> {
    if relevance.n_docs() == 0 {
        return Err(Error::Precondition(format!(
            "event `{event_id}` has no event documents"
        )));
    }
    let (peak_day, _) = detect_peak(event_volume, 0, LAST_DAY)?;
    let normalized: Vec<(&str, Vec<Vec<String>>)> = groups
        .iter()
        .map(|g| {
            (
                g.name.as_str(),
                g.members.iter().map(|m| preprocessor.process(m)).collect(),
            )
        })
        .collect();
    let phases = default_phases(peak_day)
        .into_iter()
        .map(|w| {
            let n_days = (w.end - w.start + 1) as f64;
            let mut sums: BTreeMap<String, f64> = BTreeMap::new();
            for day in w.start..=w.end {
                for (term, s) in relevance.daily(day).scores {
                    *sums.entry(term).or_default() += s;
                }
            }
            let mut top_terms = sort_desc(sums.into_iter().map(|(t, s)| (t, s / n_days)));
            top_terms.truncate(top_k);
            let group_scores = normalized
                .iter()
                .map(|(name, members)| {
                    let member_sum: f64 = members
                        .iter()
                        .map(|m| {
                            (w.start..=w.end)
                                .map(|d| relevance.phrase_score(d, m))
                                .sum::<f64>()
                                / n_days
                        })
                        .sum();
                    (name.to_string(), member_sum / members.len() as f64)
                })
                .collect();
            Phase {
                name: w.name,
                start: w.start,
                end: w.end,
                top_terms,
                group_scores,
            }
        })
        .collect();
    Ok(PhaseReport {
        event_id: event_id.to_string(),
        peak_day,
        phases,
    })
}

impl PhaseReport {
    /// CSV with columns `phase,kind,name,score`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase", "kind", "name", "score"])?;
        for p in &self.phases {
            for (kind, list) in [("term", &p.top_terms), ("group", &p.group_scores)] {
                for (name, score) in list {
                    w.write_record([p.name.as_str(), kind, name, &score.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// CSV with columns `day,term,score`, days ascending, terms by score.
pub fn write_daily_scores_csv(out: impl Write, days: &[DailyTermScores]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["day", "term", "score"])?;
    for d in days {
        for (term, score) in sort_desc(d.scores.clone()) {
            w.write_record([d.day.to_string(), term, score.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn proportional_scores_single_doc() {
        let scores = daily_term_scores(&[(0, toks("storm storm aid"))], 0).unwrap();
        let storm = scores.scores["storm"];
        let aid = scores.scores["aid"];
        assert!((storm - 2.0 * aid).abs() < 1e-15);
    }

    #[test]
    fn cap_excludes_least_frequent_last_term() {
        // 300 terms appear twice, "zzz" once: it falls outside the cap.
        let mut tokens: Vec<String> = (0..300).flat_map(|i| [format!("t{i:03}"), format!("t{i:03}")]).collect();
        tokens.push("zzz".into());
        let rel = TermRelevance::new(&[(3, tokens)], 300).unwrap();
        let day = rel.daily(3);
        assert_eq!(day.scores.len(), 300);
        assert!(!day.scores.contains_key("zzz"));
        assert!(rel.daily(4).scores.is_empty());
    }

    #[test]
    fn tie_rule_is_lexicographic() {
        let rel = TermRelevance::new(&[(0, toks("b a c"))], 2).unwrap();
        let keys: Vec<_> = rel.daily(0).scores.into_keys().collect();
        assert_eq!(keys, vec!["a", "b"]);
    }

    #[test]
    fn doubling_a_day_keeps_tf() {
        let base = vec![(1, toks("flood levee flood")), (2, toks("aid"))];
        let mut doubled = base.clone();
        doubled.push((1, toks("flood levee flood")));
        let a = TermRelevance::new(&base, 300).unwrap();
        let b = TermRelevance::new(&doubled, 300).unwrap();
        let (da, db) = (a.daily(1).scores, b.daily(1).scores);
        let ra = da["flood"] / da["levee"];
        let rb = db["flood"] / db["levee"];
        assert!((ra - rb).abs() < 1e-12);
    }

    #[test]
    fn phrase_scores() {
        let rel = TermRelevance::new(&[(0, toks("feder aid arriv feder aid")), (1, toks("aid"))], 300).unwrap();
        let phrase = toks("feder aid");
        // 2 occurrences over 5 tokens, df = 1 of N = 2.
        let expected = 2.0 / 5.0 * ((2.0f64 / 2.0).ln() + 1.0);
        assert!((rel.phrase_score(0, &phrase) - expected).abs() < 1e-15);
        assert_eq!(rel.phrase_score(1, &phrase), 0.0);
        // A single-token phrase scores like the daily term.
        let single = rel.phrase_score(0, &toks("arriv"));
        assert!((single - rel.daily(0).scores["arriv"]).abs() < 1e-15);
    }

    #[test]
    fn group_set_parsing() {
        let g = parse_group_set("# c\n[aid]\nfederal aid\nFEMA\n\n[help]\nhelp\n").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].members, vec!["federal aid", "fema"]);
        assert!(parse_group_set("orphan\n[a]\nx").is_err());
        assert!(parse_group_set("[a]\n[b]\nx").is_err());
        assert!(parse_group_set("[a]\nx\n[a]\ny").is_err());
    }

    #[test]
    fn default_group_sets() {
        let names = |c| default_groups(c).into_iter().map(|g| g.name).collect::<Vec<_>>();
        let disaster = names(Category::Disaster);
        for n in ["evacuation", "fatalities", "federal aid", "help", "state", "natural disaster"] {
            assert!(disaster.contains(&n.to_string()), "{n}");
        }
        let violence = names(Category::Violence);
        for n in ["hate crime", "legislation", "firearm", "racism", "extremism"] {
            assert!(violence.contains(&n.to_string()), "{n}");
        }
    }

    #[test]
    fn phase_windows() {
        let p = default_phases(5);
        let spans: Vec<_> = p.iter().map(|w| (w.name.as_str(), w.start, w.end)).collect();
        assert_eq!(
            spans,
            vec![("baseline", -7, -6), ("onset", -1, 1), ("peak", 4, 6), ("post", 9, 11), ("late", 29, 30)]
        );
        // Peak on the onset day collapses into the onset phase.
        let p = default_phases(0);
        assert!(p.iter().all(|w| w.name != "peak"));
        for peak in 0..=30 {
            let p = default_phases(peak);
            for w in &p {
                assert!(w.start >= -7 && w.end <= 30 && w.start <= w.end);
            }
            for pair in p.windows(2) {
                assert!(pair[0].end < pair[1].start);
            }
        }
    }

    #[test]
    fn singleton_group_equals_member_score() {
        let docs = vec![(0, toks("evacu order evacu")), (5, toks("victim"))];
        let rel = TermRelevance::new(&docs, 300).unwrap();
        let vol = crate::signals::volume_series(&[0, 5, 5]).unwrap();
        let groups = vec![WordGroup {
            name: "evacuation".into(),
            members: vec!["evacuations".into()],
        }];
        let pre = Preprocessor::default();
        let r = phase_report("ev", &rel, &vol, &groups, &pre, 15).unwrap();
        let onset = r.phases.iter().find(|p| p.name == "onset").unwrap();
        let term = onset.top_terms.iter().find(|(t, _)| t == "evacu").unwrap().1;
        assert!((onset.group_scores[0].1 - term).abs() < 1e-15);
        assert_eq!(r.peak_day, 5);

        let empty = TermRelevance::new(&[], 300).unwrap();
        assert!(phase_report("ev", &empty, &vol, &groups, &pre, 15).is_err());
    }
}
