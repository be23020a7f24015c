//! End-to-end orchestration with content-addressed stage caching.
//!
//! Every stage writes its artifacts under the output directory and records
//! an input key plus output checksums in `manifest.json`. A stage is skipped
//! when the previous manifest holds the same input key and its outputs are
//! still on disk with matching checksums. Downstream stages always read
//! their inputs back from disk.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{aggregate_category, detect_peak, detect_return, write_aggregate_csv, AggregateSeries};
use crate::config::RunConfig;
use crate::corpus::{export_jsonl, ingest_jsonl, window_filter, Category, Document, EventSpec, SkippedLine};
use crate::embedding::{embed_texts, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::partition::{initial_assign, knn_refine, PartitionResult};
use crate::preprocess::{dedup_indices, tfidf_vectorize, Preprocessor, Stoplist};
use crate::relevance::{default_groups, load_group_set, phase_report, write_daily_scores_csv, TermRelevance, WordGroup};
use crate::report::{render_chart, ChartStyle};
use crate::signals::{day_offset, read_series_csv, write_series_csv, DailySeries, Signal, SignalBundle};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "run_summary.txt";
/// Record key for the cross-event aggregate stage.
pub const ALL_EVENTS: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Preprocess,
    Embed,
    Partition,
    Signals,
    Relevance,
    Aggregate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Embed,
        Stage::Partition,
        Stage::Signals,
        Stage::Relevance,
        Stage::Aggregate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Embed => "embed",
            Stage::Partition => "partition",
            Stage::Signals => "signals",
            Stage::Relevance => "relevance",
            Stage::Aggregate => "aggregate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub event_id: String,
    pub input_key: String,
    /// Output path (relative to the output directory) to sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: Stage,
    pub records: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub stages: Vec<StageEntry>,
}

impl RunManifest {
    pub fn record(&self, stage: Stage, event_id: &str) -> Option<&StageRecord> {
        self.stages
            .iter()
            .find(|s| s.stage == stage)?
            .records
            .iter()
            .find(|r| r.event_id == event_id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRun {
    pub stage: Stage,
    pub event_id: String,
    pub status: StageStatus,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub manifest: RunManifest,
    pub runs: Vec<StageRun>,
    pub elapsed: Duration,
}

impl PipelineReport {
    pub fn all_skipped(&self) -> bool {
        self.runs.iter().all(|r| r.status == StageStatus::Skipped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub retained: usize,
    pub outside_window: usize,
    pub skipped: Vec<SkippedRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub line: usize,
    pub reason: String,
}

impl From<SkippedLine> for SkippedRecord {
    fn from(s: SkippedLine) -> Self {
        SkippedRecord {
            line: s.line,
            reason: s.reason,
        }
    }
}

/// Peak and return-to-baseline for one event or one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointRecord {
    pub scope: String,
    pub id: String,
    pub category: Category,
    pub peak_day: i64,
    pub peak_value: f64,
    pub baseline_level: Option<f64>,
    pub return_day: Option<i64>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn key_of(parts: &impl Serialize) -> String {
    sha256_hex(&serde_json::to_vec(parts).expect("key parts serialize"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn read_docs(path: &Path) -> Result<Vec<Document>> {
    let ingested = ingest_jsonl(path)?;
    if let Some(s) = ingested.skipped.first() {
        return Err(Error::InvalidInput(format!(
            "{}: artifact line {} is invalid: {}",
            path.display(),
            s.line,
            s.reason
        )));
    }
    Ok(ingested.documents)
}

fn embeddings_of(docs: &[Document]) -> Result<Vec<Vec<f64>>> {
    docs.iter()
        .map(|d| {
            d.embedding
                .clone()
                .ok_or_else(|| Error::InvalidInput(format!("document `{}` has no embedding", d.id)))
        })
        .collect()
}

/// Resolved inputs shared by every event.
struct Shared {
    preprocessor: Preprocessor,
    stoplist_key: String,
    groups: BTreeMap<Category, Vec<WordGroup>>,
}

pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    shared: Shared,
    previous: Option<RunManifest>,
    only: Option<String>,
}

struct EventOutcome {
    records: Vec<(Stage, StageRecord)>,
    runs: Vec<StageRun>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let stoplist = match &config.paths.stoplist {
            Some(p) => Stoplist::load(p)?,
            None => Stoplist::english(),
        };
        let stoplist_key = key_of(&stoplist.sorted());
        let mut groups = BTreeMap::new();
        for (cat, path) in [
            (Category::Disaster, &config.paths.groups_disaster),
            (Category::Violence, &config.paths.groups_violence),
        ] {
            let set = match path {
                Some(p) => load_group_set(p)?,
                None => default_groups(cat),
            };
            groups.insert(cat, set);
        }
        let out = config.paths.output_dir.clone();
        let previous = RunManifest::load(out.join(MANIFEST_FILE)).ok();
        Ok(Pipeline {
            shared: Shared {
                preprocessor: Preprocessor::with_stoplist(stoplist),
                stoplist_key,
                groups,
            },
            out,
            config,
            previous,
            only: None,
        })
    }

    /// Restricts per-event stages to one event. Records of the other events
    /// are kept from the previous manifest.
    pub fn only_event(mut self, event_id: &str) -> Result<Self> {
        self.config.event(event_id)?;
        self.only = Some(event_id.to_string());
        Ok(self)
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Runs every stage.
    pub fn run(&self) -> Result<PipelineReport> {
        self.run_until(Stage::Aggregate)
    }

    /// Runs stages up to and including `last`. Manifest records of stages
    /// beyond `last` are carried over from the previous manifest.
    pub fn run_until(&self, last: Stage) -> Result<PipelineReport> {
        let started = Instant::now();
        ensure_dir(&self.out)?;
        let mut events: Vec<&EventSpec> = self.config.events.iter().collect();
        events.sort_by(|a, b| a.event_id.cmp(&b.event_id));
        if events.is_empty() {
            return Err(Error::Config("no events configured".into()));
        }
        if let Some(only) = &self.only {
            if last == Stage::Aggregate {
                return Err(Error::Config("aggregation needs every event; drop the event filter".into()));
            }
            events.retain(|e| &e.event_id == only);
        }
        let per_event_last = last.min(Stage::Relevance);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.params.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        let outcomes: Vec<Result<EventOutcome>> =
            pool.install(|| events.par_iter().map(|ev| self.run_event(ev, per_event_last)).collect());

        let mut records: BTreeMap<Stage, Vec<StageRecord>> = BTreeMap::new();
        let mut runs = Vec::new();
        for outcome in outcomes {
            let outcome = outcome?;
            for (stage, record) in outcome.records {
                records.entry(stage).or_default().push(record);
            }
            runs.extend(outcome.runs);
        }
        if let (Some(only), Some(prev)) = (&self.only, &self.previous) {
            for (stage, recs) in records.iter_mut() {
                if let Some(entry) = prev.stages.iter().find(|s| s.stage == *stage) {
                    recs.extend(entry.records.iter().filter(|r| &r.event_id != only).cloned());
                }
                recs.sort_by(|a, b| a.event_id.cmp(&b.event_id));
            }
        }
        if last == Stage::Aggregate {
            let signal_records = records.get(&Stage::Signals).cloned().unwrap_or_default();
            let (record, run) = self.aggregate_stage(&events, &signal_records)?;
            records.entry(Stage::Aggregate).or_default().push(record);
            runs.push(run);
        }

        let stages = Stage::ALL
            .into_iter()
            .filter_map(|stage| {
                let recs = match records.remove(&stage) {
                    Some(r) => r,
                    None => self
                        .previous
                        .as_ref()?
                        .stages
                        .iter()
                        .find(|s| s.stage == stage)?
                        .records
                        .clone(),
                };
                Some(StageEntry { stage, records: recs })
            })
            .collect();
        let manifest = RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: self.config.hash(),
            stages,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_file(&self.out.join(MANIFEST_FILE), &bytes)?;
        let report = PipelineReport {
            manifest,
            runs,
            elapsed: started.elapsed(),
        };
        write_file(&self.out.join(SUMMARY_FILE), self.summary(&report).as_bytes())?;
        Ok(report)
    }

    fn summary(&self, report: &PipelineReport) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "newscycle {TOOL_VERSION}");
        let _ = writeln!(s, "config hash: {}", report.manifest.config_hash);
        let _ = writeln!(s, "events: {}", self.config.events.len());
        let _ = writeln!(s, "total time: {:.3}s", report.elapsed.as_secs_f64());
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:<24} {:<8} {:>10}", "stage", "event", "status", "seconds");
        for r in &report.runs {
            let status = match r.status {
                StageStatus::Ran => "ran",
                StageStatus::Skipped => "skipped",
            };
            let _ = writeln!(
                s,
                "{:<12} {:<24} {:<8} {:>10.3}",
                r.stage.as_str(),
                r.event_id,
                status,
                r.elapsed.as_secs_f64()
            );
        }
        s
    }

    fn event_dir_rel(event_id: &str) -> String {
        format!("events/{event_id}")
    }

    /// Reuses the previous record when the key matches and outputs are
    /// intact, otherwise runs `compute`, which returns the relative paths it
    /// wrote.
    fn cached(
        &self,
        stage: Stage,
        event_id: &str,
        input_key: String,
        compute: impl FnOnce() -> Result<Vec<String>>,
    ) -> Result<(StageRecord, StageRun)> {
        let started = Instant::now();
        if let Some(prev) = self.previous.as_ref().and_then(|m| m.record(stage, event_id)) {
            let intact = prev.input_key == input_key
                && prev
                    .outputs
                    .iter()
                    .all(|(rel, sha)| file_sha(&self.out.join(rel)).is_ok_and(|s| s == *sha));
            if intact {
                log::info!("{stage} {event_id}: up to date");
                return Ok((
                    prev.clone(),
                    StageRun {
                        stage,
                        event_id: event_id.to_string(),
                        status: StageStatus::Skipped,
                        elapsed: started.elapsed(),
                    },
                ));
            }
        }
        log::info!("{stage} {event_id}: running");
        let written = compute().map_err(|e| Error::stage(stage.as_str(), event_id, e))?;
        let outputs = written
            .into_iter()
            .map(|rel| {
                let sha = file_sha(&self.out.join(&rel))?;
                Ok((rel, sha))
            })
            .collect::<Result<BTreeMap<_, _>>>()
            .map_err(|e| Error::stage(stage.as_str(), event_id, e))?;
        Ok((
            StageRecord {
                event_id: event_id.to_string(),
                input_key,
                outputs,
            },
            StageRun {
                stage,
                event_id: event_id.to_string(),
                status: StageStatus::Ran,
                elapsed: started.elapsed(),
            },
        ))
    }

    fn run_event(&self, ev: &EventSpec, last: Stage) -> Result<EventOutcome> {
        let id = ev.event_id.as_str();
        let rel = Self::event_dir_rel(id);
        let p = &self.config.params;
        let mut outcome = EventOutcome {
            records: Vec::new(),
            runs: Vec::new(),
        };
        let mut push = |stage: Stage, (record, run): (StageRecord, StageRun)| -> StageRecord {
            outcome.records.push((stage, record.clone()));
            outcome.runs.push(run);
            record
        };
        let path = |name: &str| self.out.join(&rel).join(name);
        let relp = |name: &str| format!("{rel}/{name}");

        // ingest
        let corpus_path = self.config.paths.corpus_dir.join(format!("{id}.jsonl"));
        let corpus_sha = file_sha(&corpus_path).map_err(|e| Error::stage("ingest", id, e))?;
        let key = key_of(&("ingest", TOOL_VERSION, &corpus_sha, ev));
        let ingest = push(
            Stage::Ingest,
            self.cached(Stage::Ingest, id, key, || {
                let ingested = ingest_jsonl(&corpus_path)?;
                let total = ingested.documents.len();
                let docs = window_filter(ingested.documents, ev.onset_date);
                ensure_dir(&self.out.join(&rel))?;
                export_jsonl(&docs, path("documents.jsonl"))?;
                let report = IngestReport {
                    retained: docs.len(),
                    outside_window: total - docs.len(),
                    skipped: ingested.skipped.into_iter().map(Into::into).collect(),
                };
                write_file(&path("ingest_report.json"), &serde_json::to_vec_pretty(&report)?)?;
                Ok(vec![relp("documents.jsonl"), relp("ingest_report.json")])
            })?,
        );
        if last == Stage::Ingest {
            return Ok(outcome);
        }

        // preprocess and dedup
        let key = key_of(&(
            "preprocess",
            TOOL_VERSION,
            &ingest.outputs,
            &self.shared.stoplist_key,
            p.dedup_threshold,
        ));
        let pre = push(
            Stage::Preprocess,
            self.cached(Stage::Preprocess, id, key, || {
                let mut docs = read_docs(&path("documents.jsonl"))?;
                for d in &mut docs {
                    d.tokens = self.shared.preprocessor.process(&d.raw_text);
                }
                let tokens: Vec<Vec<String>> = docs.iter().map(|d| d.tokens.clone()).collect();
                let (vocab, vectors) = tfidf_vectorize(&tokens)?;
                let outcome = dedup_indices(&docs, &vectors, p.dedup_threshold)?;
                let dropped = csv_bytes(|buf| {
                    let mut w = csv::Writer::from_writer(buf);
                    w.write_record(["dropped_id", "kept_id", "similarity"])?;
                    for &(i, j, sim) in &outcome.dropped {
                        w.write_record([docs[i].id.as_str(), docs[j].id.as_str(), &sim.to_string()])?;
                    }
                    w.flush().map_err(|e| Error::Csv(e.into()))?;
                    Ok(())
                })?;
                let retained: Vec<Document> = outcome.retained.iter().map(|&i| docs[i].clone()).collect();
                export_jsonl(&retained, path("preprocessed.jsonl"))?;
                write_file(&path("dedup.csv"), &dropped)?;
                write_file(&path("vocabulary.csv"), &csv_bytes(|b| vocab.write_csv(b))?)?;
                Ok(vec![relp("preprocessed.jsonl"), relp("dedup.csv"), relp("vocabulary.csv")])
            })?,
        );
        if last == Stage::Preprocess {
            return Ok(outcome);
        }

        // embed
        let emb_cfg = &self.config.embedding;
        let key = key_of(&("embed", TOOL_VERSION, &pre.outputs, emb_cfg.fingerprint()));
        let embed = push(
            Stage::Embed,
            self.cached(Stage::Embed, id, key, || {
                let mut docs = read_docs(&path("preprocessed.jsonl"))?;
                let missing: Vec<usize> = (0..docs.len()).filter(|&i| docs[i].embedding.is_none()).collect();
                if !missing.is_empty() {
                    let provider = emb_cfg.provider()?;
                    let texts: Vec<String> = missing.iter().map(|&i| docs[i].raw_text.clone()).collect();
                    let m = embed_texts(provider.as_ref(), &texts, emb_cfg.batch_size)?;
                    for (&i, row) in missing.iter().zip(m.into_rows()) {
                        docs[i].embedding = Some(row);
                    }
                }
                let rows = embeddings_of(&docs)?;
                let dim = rows.first().map_or(emb_cfg.dimension, Vec::len);
                if rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidInput("embeddings have mixed dimensions".into()));
                }
                export_jsonl(&docs, path("embedded.jsonl"))?;
                EmbeddingMatrix::from_unit_rows(dim, rows)?.save(path("embeddings.bin"))?;
                Ok(vec![relp("embedded.jsonl"), relp("embeddings.bin")])
            })?,
        );
        if last == Stage::Embed {
            return Ok(outcome);
        }

        // partition
        let key = key_of(&(
            "partition",
            TOOL_VERSION,
            &embed.outputs,
            &ev.keywords,
            p.keyword_threshold,
            p.k,
            p.quorum,
        ));
        let part = push(
            Stage::Partition,
            self.cached(Stage::Partition, id, key, || {
                let docs = read_docs(&path("embedded.jsonl"))?;
                let emb = embeddings_of(&docs)?;
                let initial = initial_assign(&docs, &ev.keywords, p.keyword_threshold);
                let refined = knn_refine(&docs, &initial, &emb, p.k, p.quorum)?;
                write_file(&path("partition.csv"), &csv_bytes(|b| refined.write_csv(b))?)?;
                Ok(vec![relp("partition.csv")])
            })?,
        );
        if last == Stage::Partition {
            return Ok(outcome);
        }

        // signals
        let key = key_of(&("signals", TOOL_VERSION, &embed.outputs, &part.outputs, p.alpha));
        let sig = push(
            Stage::Signals,
            self.cached(Stage::Signals, id, key, || {
                let (event_docs, baseline_docs) = self.load_partitioned(&path("embedded.jsonl"), &path("partition.csv"))?;
                let offsets = |docs: &[Document]| -> Vec<i64> {
                    docs.iter().map(|d| day_offset(&d.published_at, ev.onset_date)).collect()
                };
                if event_docs.is_empty() {
                    return Err(Error::Degenerate("event subset is empty".into()));
                }
                let bundle = SignalBundle::compute(&offsets(&event_docs), &embeddings_of(&event_docs)?, p.alpha)?;
                let baseline = if baseline_docs.is_empty() {
                    DailySeries::new(vec![None; crate::corpus::WINDOW_LEN], vec![0; crate::corpus::WINDOW_LEN])?
                } else {
                    SignalBundle::compute(&offsets(&baseline_docs), &embeddings_of(&baseline_docs)?, p.alpha)?.volume
                };
                let bytes = csv_bytes(|b| {
                    write_series_csv(
                        b,
                        [
                            (id, Signal::Volume, &bundle.volume),
                            (id, Signal::Drift, &bundle.drift),
                            (id, Signal::DriftPercent, &bundle.drift_percent),
                            (id, Signal::Dispersion, &bundle.dispersion),
                            (id, Signal::BaselineVolume, &baseline),
                        ],
                    )
                })?;
                write_file(&path("signals.csv"), &bytes)?;
                Ok(vec![relp("signals.csv")])
            })?,
        );
        if last == Stage::Signals {
            return Ok(outcome);
        }

        // relevance
        let groups = &self.shared.groups[&ev.category];
        let key = key_of(&(
            "relevance",
            TOOL_VERSION,
            &embed.outputs,
            &part.outputs,
            &sig.outputs,
            &self.shared.stoplist_key,
            groups,
            p.top_terms,
            p.top_k,
        ));
        push(
            Stage::Relevance,
            self.cached(Stage::Relevance, id, key, || {
                let (event_docs, _) = self.load_partitioned(&path("embedded.jsonl"), &path("partition.csv"))?;
                let dated: Vec<(i64, Vec<String>)> = event_docs
                    .iter()
                    .map(|d| (day_offset(&d.published_at, ev.onset_date), d.tokens.clone()))
                    .collect();
                let rel_scores = TermRelevance::new(&dated, p.top_terms)?;
                let volume = self.read_signal(&path("signals.csv"), Signal::Volume)?;
                let report = phase_report(id, &rel_scores, &volume, groups, &self.shared.preprocessor, p.top_k)?;
                let daily: Vec<_> = crate::signals::days().map(|d| rel_scores.daily(d)).collect();
                write_file(&path("term_scores.csv"), &csv_bytes(|b| write_daily_scores_csv(b, &daily))?)?;
                write_file(&path("phase_report.csv"), &csv_bytes(|b| report.write_csv(b))?)?;
                Ok(vec![relp("term_scores.csv"), relp("phase_report.csv")])
            })?,
        );
        Ok(outcome)
    }

    fn load_partitioned(&self, docs_path: &Path, partition_path: &Path) -> Result<(Vec<Document>, Vec<Document>)> {
        let docs = read_docs(docs_path)?;
        let bytes = fs::read(partition_path).map_err(|e| Error::io(partition_path, e))?;
        let partition = PartitionResult::read_csv(bytes.as_slice())?;
        Ok(docs.into_iter().partition(|d| partition.event_ids.contains(&d.id)))
    }

    fn read_signal(&self, path: &Path, signal: Signal) -> Result<DailySeries> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        read_series_csv(bytes.as_slice())?
            .into_iter()
            .find(|(_, s, _)| *s == signal)
            .map(|(_, _, series)| series)
            .ok_or_else(|| Error::InvalidInput(format!("{} has no {signal} series", path.display())))
    }

    fn aggregate_stage(&self, events: &[&EventSpec], signal_records: &[StageRecord]) -> Result<(StageRecord, StageRun)> {
        let checksums: Vec<(&str, Category, &BTreeMap<String, String>)> = events
            .iter()
            .zip(signal_records)
            .map(|(ev, r)| (ev.event_id.as_str(), ev.category, &r.outputs))
            .collect();
        let key = key_of(&("aggregate", TOOL_VERSION, &checksums, self.config.params.epsilon));
        self.cached(Stage::Aggregate, ALL_EVENTS, key, || {
            let eps = self.config.params.epsilon;
            let mut per_event: Vec<(&EventSpec, Vec<(Signal, DailySeries)>)> = Vec::new();
            for ev in events {
                let path = self.out.join(Self::event_dir_rel(&ev.event_id)).join("signals.csv");
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let series = read_series_csv(bytes.as_slice())?
                    .into_iter()
                    .map(|(_, s, d)| (s, d))
                    .collect();
                per_event.push((ev, series));
            }
            let get = |series: &[(Signal, DailySeries)], signal: Signal| -> Result<DailySeries> {
                series
                    .iter()
                    .find(|(s, _)| *s == signal)
                    .map(|(_, d)| d.clone())
                    .ok_or_else(|| Error::InvalidInput(format!("missing {signal} series")))
            };

            let mut aggregates: Vec<AggregateSeries> = Vec::new();
            let mut change_points = Vec::new();
            for (ev, series) in &per_event {
                let volume = get(series, Signal::Volume)?;
                let baseline_level = get(series, Signal::BaselineVolume)?.mean();
                let (peak_day, peak_value) = detect_peak(&volume, 0, crate::corpus::LAST_DAY)?;
                change_points.push(ChangePointRecord {
                    scope: "event".into(),
                    id: ev.event_id.clone(),
                    category: ev.category,
                    peak_day,
                    peak_value,
                    baseline_level,
                    return_day: baseline_level.and_then(|b| detect_return(&volume, b, peak_day, eps)),
                });
            }
            for category in Category::ALL {
                let members: Vec<&Vec<(Signal, DailySeries)>> = per_event
                    .iter()
                    .filter(|(ev, _)| ev.category == category)
                    .map(|(_, s)| s)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                for signal in [
                    Signal::Volume,
                    Signal::Drift,
                    Signal::DriftPercent,
                    Signal::Dispersion,
                    Signal::BaselineVolume,
                ] {
                    let series: Vec<DailySeries> = members.iter().map(|s| get(s, signal)).collect::<Result<_>>()?;
                    aggregates.push(aggregate_category(category, signal, &series)?);
                }
                let mean_of = |signal: Signal| {
                    aggregates
                        .iter()
                        .find(|a| a.category == category && a.signal == signal)
                        .expect("aggregated above")
                        .mean_series()
                };
                let volume = mean_of(Signal::Volume);
                let baseline_level = mean_of(Signal::BaselineVolume).mean();
                let (peak_day, peak_value) = detect_peak(&volume, 0, crate::corpus::LAST_DAY)?;
                change_points.push(ChangePointRecord {
                    scope: "category".into(),
                    id: category.to_string(),
                    category,
                    peak_day,
                    peak_value,
                    baseline_level,
                    return_day: baseline_level.and_then(|b| detect_return(&volume, b, peak_day, eps)),
                });
            }

            let mut written = vec!["aggregate/aggregate.csv".to_string(), "aggregate/change_points.json".to_string()];
            write_file(
                &self.out.join(&written[0]),
                &csv_bytes(|b| write_aggregate_csv(b, &aggregates))?,
            )?;
            let mut cp = serde_json::to_vec_pretty(&change_points)?;
            cp.push(b'\n');
            write_file(&self.out.join(&written[1]), &cp)?;
            for agg in &aggregates {
                let rel = format!("charts/{}_{}.svg", agg.category, agg.signal);
                write_file(&self.out.join(&rel), &render_chart(agg, &ChartStyle::default()))?;
                written.push(rel);
            }
            Ok(written)
        })
    }
}

/// Loads the change-point records written by the aggregate stage.
pub fn read_change_points(path: impl AsRef<Path>) -> Result<Vec<ChangePointRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
