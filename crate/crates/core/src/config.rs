//! Run configuration: a TOML file, environment variables with the
//! `NEWSCYCLE_` prefix for endpoints and secrets, and per-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::DEFAULT_EPSILON;
use crate::corpus::EventSpec;
use crate::embedding::{HashEmbedder, HttpEmbedder, EmbeddingProvider, DEFAULT_BATCH_SIZE, DEFAULT_DIMENSION};
use crate::error::{Error, Result};
use crate::partition::{DEFAULT_K, DEFAULT_KEYWORD_THRESHOLD, DEFAULT_QUORUM};
use crate::preprocess::DEFAULT_DEDUP_THRESHOLD;
use crate::relevance::{DEFAULT_TOP_K, DEFAULT_TOP_TERMS};
use crate::signals::DEFAULT_ALPHA;

pub const ENV_PREFIX: &str = "NEWSCYCLE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Holds one `<event_id>.jsonl` per event.
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,
    pub stoplist: Option<PathBuf>,
    pub groups_disaster: Option<PathBuf>,
    pub groups_violence: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus_dir: "corpus".into(),
            output_dir: "out".into(),
            stoplist: None,
            groups_disaster: None,
            groups_violence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub dedup_threshold: f64,
    pub keyword_threshold: usize,
    pub k: usize,
    pub quorum: usize,
    pub alpha: f64,
    pub top_terms: usize,
    pub top_k: usize,
    pub epsilon: f64,
    /// Events processed concurrently; 0 uses every core.
    pub workers: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            keyword_threshold: DEFAULT_KEYWORD_THRESHOLD,
            k: DEFAULT_K,
            quorum: DEFAULT_QUORUM,
            alpha: DEFAULT_ALPHA,
            top_terms: DEFAULT_TOP_TERMS,
            top_k: DEFAULT_TOP_K,
            epsilon: DEFAULT_EPSILON,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub provider: ProviderKind,
    pub dimension: usize,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub batch_size: usize,
    pub max_in_flight: usize,
    /// Bearer token; only read from the environment.
    #[serde(skip)]
    pub token: Option<String>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: ProviderKind::Hash,
            dimension: DEFAULT_DIMENSION,
            seed: 0,
            endpoint: None,
            batch_size: DEFAULT_BATCH_SIZE,
            max_in_flight: 4,
            token: None,
        }
    }
}

impl EmbeddingConfig {
    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self.provider {
            ProviderKind::Hash => Ok(Box::new(HashEmbedder::new(self.dimension, self.seed)?)),
            ProviderKind::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("http provider needs an endpoint".into()))?;
                Ok(Box::new(
                    HttpEmbedder::new(endpoint, self.dimension)
                        .with_max_in_flight(self.max_in_flight)
                        .with_token(self.token.clone()),
                ))
            }
        }
    }

    /// Identifies the vectors a provider produces; batching settings are
    /// excluded since they do not change output.
    pub fn fingerprint(&self) -> String {
        match self.provider {
            ProviderKind::Hash => format!("hash:{}:{}", self.dimension, self.seed),
            ProviderKind::Http => format!("http:{}:{}", self.dimension, self.endpoint.as_deref().unwrap_or("")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdeltConfig {
    pub endpoint: String,
    pub max_records: usize,
    /// Seconds between requests.
    pub spacing_secs: f64,
}

impl Default for GdeltConfig {
    fn default() -> Self {
        GdeltConfig {
            endpoint: crate::gdelt::DEFAULT_ENDPOINT.to_string(),
            max_records: crate::gdelt::DEFAULT_MAX_RECORDS,
            spacing_secs: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub gdelt: GdeltConfig,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

/// Per-key overrides, applied after the file and environment. `None` keeps
/// the configured value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
    pub groups_disaster: Option<PathBuf>,
    pub groups_violence: Option<PathBuf>,
    pub dedup_threshold: Option<f64>,
    pub keyword_threshold: Option<usize>,
    pub k: Option<usize>,
    pub quorum: Option<usize>,
    pub alpha: Option<f64>,
    pub top_terms: Option<usize>,
    pub top_k: Option<usize>,
    pub epsilon: Option<f64>,
    pub workers: Option<usize>,
    pub provider: Option<ProviderKind>,
    pub dimension: Option<usize>,
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub batch_size: Option<usize>,
    pub max_in_flight: Option<usize>,
}

macro_rules! apply {
    ($src:expr, $dst:expr, $($field:ident),+) => {
        $( if let Some(v) = $src.$field.clone() { $dst.$field = v; } )+
    };
}

impl RunConfig {
    /// Parses TOML without resolving paths or reading the environment.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file, resolving relative paths against its directory
    /// and applying `NEWSCYCLE_*` environment variables.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.corpus_dir);
        fix(&mut self.paths.output_dir);
        for p in [
            &mut self.paths.stoplist,
            &mut self.paths.groups_disaster,
            &mut self.paths.groups_violence,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Reads `NEWSCYCLE_EMBED_ENDPOINT`, `NEWSCYCLE_EMBED_TOKEN` and
    /// `NEWSCYCLE_GDELT_ENDPOINT` through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let var = |name: &str| lookup(&format!("{ENV_PREFIX}{name}")).filter(|v| !v.is_empty());
        if let Some(v) = var("EMBED_ENDPOINT") {
            self.embedding.endpoint = Some(v);
        }
        if let Some(v) = var("EMBED_TOKEN") {
            self.embedding.token = Some(v);
        }
        if let Some(v) = var("GDELT_ENDPOINT") {
            self.gdelt.endpoint = v;
        }
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        apply!(o, self.paths, corpus_dir, output_dir);
        if o.stoplist.is_some() {
            self.paths.stoplist = o.stoplist.clone();
        }
        if o.groups_disaster.is_some() {
            self.paths.groups_disaster = o.groups_disaster.clone();
        }
        if o.groups_violence.is_some() {
            self.paths.groups_violence = o.groups_violence.clone();
        }
        apply!(o, self.params, dedup_threshold, keyword_threshold, k, quorum, alpha, top_terms, top_k, epsilon, workers);
        apply!(o, self.embedding, provider, dimension, seed, batch_size, max_in_flight);
        if o.endpoint.is_some() {
            self.embedding.endpoint = o.endpoint.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |m: String| Err(Error::Config(m));
        if !(p.dedup_threshold > 0.0 && p.dedup_threshold <= 1.0) {
            return bad(format!("dedup_threshold {} outside (0, 1]", p.dedup_threshold));
        }
        if p.k == 0 || p.quorum == 0 || p.quorum > p.k {
            return bad(format!("need 0 < quorum <= k, got k = {}, quorum = {}", p.k, p.quorum));
        }
        if p.keyword_threshold == 0 {
            return bad("keyword_threshold must be positive".into());
        }
        if !(p.alpha > 0.0 && p.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", p.alpha));
        }
        if p.top_terms == 0 || p.top_k == 0 {
            return bad("top_terms and top_k must be positive".into());
        }
        if !(p.epsilon >= 0.0 && p.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be non-negative", p.epsilon));
        }
        if self.embedding.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.embedding.provider == ProviderKind::Http && self.embedding.endpoint.is_none() {
            return bad(format!("http provider needs embedding.endpoint or {ENV_PREFIX}EMBED_ENDPOINT"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for ev in &self.events {
            ev.validate().map_err(|e| Error::Config(format!("event `{}`: {e}", ev.event_id)))?;
            if !ids.insert(&ev.event_id) {
                return bad(format!("duplicate event id `{}`", ev.event_id));
            }
        }
        Ok(())
    }

    pub fn event(&self, id: &str) -> Result<&EventSpec> {
        self.events
            .iter()
            .find(|e| e.event_id == id)
            .ok_or_else(|| Error::Config(format!("no event `{id}` in config")))
    }

    /// Hash of everything that determines results: parameters, embedding
    /// provider and events. Paths, worker count and secrets are excluded.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            params: Params,
            embedding: String,
            events: &'a [EventSpec],
        }
        let canonical = Canonical {
            params: Params {
                workers: 0,
                ..self.params.clone()
            },
            embedding: self.embedding.fingerprint(),
            events: &self.events,
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[paths]
corpus_dir = "data"

[params]
k = 12
quorum = 7

[embedding]
provider = "http"
endpoint = "http://localhost:8000"

[[events]]
event_id = "maui"
name = "Maui wildfires"
onset_date = "2023-08-08"
category = "disaster"
keywords = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]
"#;

    #[test]
    fn defaults_match_reference_values() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg.params.dedup_threshold, 0.9);
        assert_eq!(cfg.params.keyword_threshold, 2);
        assert_eq!((cfg.params.k, cfg.params.quorum), (10, 6));
        assert_eq!(cfg.params.alpha, 0.3);
        assert_eq!(cfg.params.top_terms, 300);
        assert_eq!(cfg.params.epsilon, 0.005);
        assert_eq!(cfg.embedding.dimension, 384);
        cfg.validate().unwrap();
    }

    #[test]
    fn parses_sample_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.params.k, 12);
        assert_eq!(cfg.events.len(), 1);
        cfg.validate().unwrap();
        assert!(RunConfig::from_toml("[params]\nkk = 3\n").is_err());
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn env_and_overrides() {
        let mut cfg = RunConfig::from_toml(SAMPLE).unwrap();
        cfg.apply_env(|k| match k {
            "NEWSCYCLE_EMBED_ENDPOINT" => Some("http://sidecar:9000".into()),
            "NEWSCYCLE_EMBED_TOKEN" => Some("secret".into()),
            _ => None,
        });
        assert_eq!(cfg.embedding.endpoint.as_deref(), Some("http://sidecar:9000"));
        assert_eq!(cfg.embedding.token.as_deref(), Some("secret"));
        assert!(!cfg.to_toml().unwrap().contains("secret"));
        cfg.apply_overrides(&Overrides {
            alpha: Some(1.0),
            k: Some(5),
            quorum: Some(3),
            ..Overrides::default()
        });
        assert_eq!((cfg.params.alpha, cfg.params.k, cfg.params.quorum), (1.0, 5, 3));
    }

    #[test]
    fn hash_ignores_paths_and_workers() {
        let a = RunConfig::from_toml(SAMPLE).unwrap();
        let mut b = a.clone();
        b.paths.output_dir = "/elsewhere".into();
        b.params.workers = 8;
        b.embedding.batch_size = 2;
        assert_eq!(a.hash(), b.hash());
        b.params.alpha = 0.5;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::from_toml(SAMPLE).unwrap();
        cfg.params.quorum = 20;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::from_toml(SAMPLE).unwrap();
        cfg.events[0].keywords.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::from_toml(SAMPLE).unwrap();
        cfg.events.push(cfg.events[0].clone());
        assert!(cfg.validate().is_err());
    }
}
