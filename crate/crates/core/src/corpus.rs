//! Article records, event descriptions and JSONL ingestion.
//!
//! Records arrive already extracted (title + first paragraph). Each line of
//! an input file is one JSON object with the fields `url`, `domain`, `title`,
//! `first_paragraph` and `published_at`; exports add `id`, `tokens`, `label`
//! and `embedding`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signals::day_offset;

/// First day offset of the analysis window (days relative to onset).
pub const FIRST_DAY: i64 = -7;
/// Last day offset of the analysis window, inclusive.
pub const LAST_DAY: i64 = 30;
/// Number of daily slots in the window.
pub const WINDOW_LEN: usize = (LAST_DAY - FIRST_DAY + 1) as usize;

/// Tolerance on the Euclidean norm of stored embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[default]
    Unassigned,
    Event,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Disaster,
    Violence,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Disaster, Category::Violence];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Disaster => "disaster",
            Category::Violence => "violence",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "disaster" => Ok(Category::Disaster),
            "violence" => Ok(Category::Violence),
            other => Err(Error::InvalidInput(format!("unknown category `{other}`"))),
        }
    }
}

/// One article.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub url: String,
    pub domain: String,
    pub title: String,
    pub first_paragraph: String,
    pub published_at: DateTime<Utc>,
    /// `title + " " + first_paragraph`.
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub embedding: Option<Vec<f64>>,
    pub label: Label,
}

impl Document {
    pub fn new(
        url: impl Into<String>,
        domain: impl Into<String>,
        title: impl Into<String>,
        first_paragraph: impl Into<String>,
        published_at: DateTime<Utc>,
    ) -> Self {
        let url = url.into();
        let published_at = published_at.trunc_subsecs(0);
        let id = derive_id(&url, &published_at);
        let title = title.into();
        let first_paragraph = first_paragraph.into();
        Document {
            id,
            url,
            domain: domain.into(),
            raw_text: raw_text(&title, &first_paragraph),
            title,
            first_paragraph,
            published_at,
            tokens: Vec::new(),
            embedding: None,
            label: Label::Unassigned,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

pub fn raw_text(title: &str, first_paragraph: &str) -> String {
    format!("{title} {first_paragraph}")
}

/// Content hash of url and publication time, used when a record carries no id.
pub fn derive_id(url: &str, published_at: &DateTime<Utc>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(url.as_bytes());
    hasher.update(b"\n");
    hasher.update(format_timestamp(published_at).as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Parses an ISO-8601 timestamp. Offsets are converted to UTC; naive
/// timestamps and bare dates are taken as UTC. Sub-second precision is dropped.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(s) {
        return Some(ts.with_timezone(&Utc).trunc_subsecs(0));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y%m%dT%H%M%SZ"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(naive.and_utc().trunc_subsecs(0));
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|n| n.and_utc())
}

/// Host part of a URL with any leading `www.` removed.
pub fn domain_of(url: &str) -> String {
    let rest = url.split_once("://").map(|(_, r)| r).unwrap_or(url);
    let host = rest
        .split(['/', '?', '#'])
        .next()
        .unwrap_or("")
        .rsplit('@')
        .next()
        .unwrap_or("");
    let host = host.split(':').next().unwrap_or("").to_ascii_lowercase();
    host.strip_prefix("www.").unwrap_or(&host).to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub event_id: String,
    pub name: String,
    pub onset_date: NaiveDate,
    pub category: Category,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_query: Option<String>,
}

impl EventSpec {
    pub const KEYWORD_COUNT: usize = 10;

    pub fn validate(&self) -> Result<()> {
        if self.event_id.trim().is_empty() {
            return Err(Error::InvalidInput("event_id is empty".into()));
        }
        if self.keywords.len() != Self::KEYWORD_COUNT {
            return Err(Error::InvalidInput(format!(
                "event `{}` has {} keywords, expected exactly {}",
                self.event_id,
                self.keywords.len(),
                Self::KEYWORD_COUNT
            )));
        }
        for kw in &self.keywords {
            if kw.trim().is_empty() {
                return Err(Error::InvalidInput(format!(
                    "event `{}` has an empty keyword",
                    self.event_id
                )));
            }
            if kw.to_lowercase() != *kw {
                return Err(Error::InvalidInput(format!(
                    "event `{}` keyword `{kw}` is not lowercase",
                    self.event_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub event: EventSpec,
    pub documents: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus, dropping documents outside the analysis window.
    pub fn new(event: EventSpec, documents: Vec<Document>) -> Self {
        let documents = window_filter(documents, event.onset_date);
        Corpus { event, documents }
    }
}

/// A line that ingestion refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub documents: Vec<Document>,
    pub skipped: Vec<SkippedLine>,
}

#[derive(Debug, Default, Deserialize)]
struct RecordIn {
    id: Option<String>,
    url: Option<String>,
    domain: Option<String>,
    title: Option<String>,
    first_paragraph: Option<String>,
    published_at: Option<String>,
    tokens: Option<Vec<String>>,
    label: Option<Label>,
    embedding: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    url: &'a str,
    domain: &'a str,
    title: &'a str,
    first_paragraph: &'a str,
    published_at: String,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    tokens: &'a [String],
    #[serde(skip_serializing_if = "is_unassigned")]
    label: Label,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding: Option<&'a [f64]>,
}

fn is_unassigned(label: &Label) -> bool {
    *label == Label::Unassigned
}

fn nonempty(s: Option<String>) -> Option<String> {
    s.filter(|s| !s.trim().is_empty())
}

fn parse_record(line: &str) -> std::result::Result<Document, String> {
    let record: RecordIn = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let published_at = record
        .published_at
        .ok_or_else(|| "missing published_at".to_string())?;
    let published_at =
        parse_timestamp(&published_at).ok_or_else(|| format!("bad published_at `{published_at}`"))?;
    let title = nonempty(record.title);
    let first_paragraph = nonempty(record.first_paragraph);
    if title.is_none() && first_paragraph.is_none() {
        return Err("missing both title and first_paragraph".into());
    }
    let url = record.url.unwrap_or_default();
    if url.is_empty() && record.id.is_none() {
        return Err("missing url".into());
    }
    let domain = nonempty(record.domain).unwrap_or_else(|| domain_of(&url));
    let mut doc = Document::new(
        url,
        domain,
        title.unwrap_or_default(),
        first_paragraph.unwrap_or_default(),
        published_at,
    );
    if let Some(id) = nonempty(record.id) {
        doc.id = id;
    }
    doc.tokens = record.tokens.unwrap_or_default();
    doc.label = record.label.unwrap_or_default();
    if let Some(embedding) = record.embedding {
        let norm = embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(format!("embedding norm {norm} is not unit"));
        }
        doc.embedding = Some(embedding);
    }
    Ok(doc)
}

/// Reads JSONL records. Blank lines are ignored; invalid records are skipped
/// and reported with their line number.
pub fn ingest_reader(reader: impl BufRead) -> std::io::Result<Ingested> {
    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(doc) if !seen.insert(doc.id.clone()) => out.skipped.push(SkippedLine {
                line: idx + 1,
                reason: format!("duplicate id `{}`", doc.id),
            }),
            Ok(doc) => out.documents.push(doc),
            Err(reason) => out.skipped.push(SkippedLine {
                line: idx + 1,
                reason,
            }),
        }
    }
    Ok(out)
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ingested = ingest_reader(BufReader::new(file)).map_err(|e| Error::io(path, e))?;
    if !ingested.skipped.is_empty() {
        log::warn!(
            "{}: skipped {} malformed records",
            path.display(),
            ingested.skipped.len()
        );
    }
    Ok(ingested)
}

pub fn write_jsonl(docs: &[Document], mut out: impl Write) -> std::io::Result<()> {
    for doc in docs {
        let record = RecordOut {
            id: &doc.id,
            url: &doc.url,
            domain: &doc.domain,
            title: &doc.title,
            first_paragraph: &doc.first_paragraph,
            published_at: format_timestamp(&doc.published_at),
            tokens: &doc.tokens,
            label: doc.label,
            embedding: doc.embedding.as_deref(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn export_jsonl(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    write_jsonl(docs, &mut writer)
        .and_then(|_| writer.flush())
        .map_err(|e| Error::io(path, e))
}

/// Keeps documents whose day offset from `onset` lies in `[-7, +30]`.
pub fn window_filter(docs: Vec<Document>, onset: NaiveDate) -> Vec<Document> {
    docs.into_iter()
        .filter(|d| in_window(day_offset(&d.published_at, onset)))
        .collect()
}

pub fn in_window(offset: i64) -> bool {
    (FIRST_DAY..=LAST_DAY).contains(&offset)
}
