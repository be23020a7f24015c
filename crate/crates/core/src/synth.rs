//! Synthetic event corpora with planted volume, centroid paths, dispersion
//! and vocabulary, plus the signals those plants imply.
//!
//! Per-day fields accept either one entry per window day (38) or a single
//! entry applied to every day.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{export_jsonl, Corpus, Document, EventSpec, FIRST_DAY, WINDOW_LEN};
use crate::embedding::{dot, norm, normalize, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::signals::{days, volume_series, DailySeries};

pub const DEFAULT_TOKENS_PER_DOC: usize = 20;

fn default_tokens_per_doc() -> usize {
    DEFAULT_TOKENS_PER_DOC
}

/// One stream of documents (event or baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamPlan {
    pub counts: Vec<usize>,
    /// Latent unit direction per day.
    pub directions: Vec<Vec<f64>>,
    /// Gaussian noise scale per day.
    pub sigma: Vec<f64>,
    /// Term probabilities per day.
    pub vocabulary: Vec<BTreeMap<String, f64>>,
}

/// Event documents on `day` placed in symmetric pairs at exactly the given
/// cosine distances from the day's direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConstruction {
    pub day: i64,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthPlan {
    pub seed: u64,
    pub dimension: usize,
    #[serde(default = "default_tokens_per_doc")]
    pub tokens_per_doc: usize,
    /// Probability of inserting each of the event's first two keywords.
    pub keyword_probability: f64,
    pub event: StreamPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<StreamPlan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constructions: Vec<DistanceConstruction>,
}

fn per_day<T>(v: &[T], day_slot: usize) -> &T {
    if v.len() == 1 {
        &v[0]
    } else {
        &v[day_slot]
    }
}

/// A vocabulary of `n` synthetic terms with equal probability.
pub fn uniform_vocabulary(prefix: &str, n: usize) -> BTreeMap<String, f64> {
    (0..n).map(|i| (format!("{prefix}{i:04}"), 1.0 / n as f64)).collect()
}

pub fn basis(dimension: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dimension];
    v[i] = 1.0;
    v
}

impl StreamPlan {
    pub fn constant(counts: Vec<usize>, direction: Vec<f64>, sigma: f64, vocabulary: BTreeMap<String, f64>) -> Self {
        StreamPlan {
            counts,
            directions: vec![direction],
            sigma: vec![sigma],
            vocabulary: vec![vocabulary],
        }
    }

    pub fn direction(&self, slot: usize) -> &[f64] {
        per_day(&self.directions, slot)
    }

    pub fn sigma(&self, slot: usize) -> f64 {
        *per_day(&self.sigma, slot)
    }

    fn validate(&self, dimension: usize, what: &str) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("{what} stream: {m}")));
        if self.counts.len() != WINDOW_LEN {
            return bad(format!("counts needs {WINDOW_LEN} entries, got {}", self.counts.len()));
        }
        for (name, len) in [
            ("directions", self.directions.len()),
            ("sigma", self.sigma.len()),
            ("vocabulary", self.vocabulary.len()),
        ] {
            if len != 1 && len != WINDOW_LEN {
                return bad(format!("{name} needs 1 or {WINDOW_LEN} entries, got {len}"));
            }
        }
        for (i, d) in self.directions.iter().enumerate() {
            if d.len() != dimension {
                return bad(format!("direction {i} has dimension {}", d.len()));
            }
            if (norm(d) - 1.0).abs() > 1e-9 {
                return bad(format!("direction {i} is not unit norm"));
            }
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return bad(format!("sigma {s} must be finite and non-negative"));
        }
        for (i, vocab) in self.vocabulary.iter().enumerate() {
            if vocab.is_empty() {
                return bad(format!("vocabulary {i} is empty"));
            }
            if vocab.values().any(|p| p.is_nan() || *p < 0.0) {
                return bad(format!("vocabulary {i} has a negative probability"));
            }
            let total: f64 = vocab.values().sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("vocabulary {i} sums to {total}, not 1"));
            }
        }
        Ok(())
    }
}

impl SynthPlan {
    /// One event document per day on a fixed direction, no noise, uniform
    /// 200-term vocabulary, keywords always planted.
    pub fn flat(dimension: usize, seed: u64) -> Self {
        SynthPlan {
            seed,
            dimension,
            tokens_per_doc: DEFAULT_TOKENS_PER_DOC,
            keyword_probability: 1.0,
            event: StreamPlan::constant(vec![1; WINDOW_LEN], basis(dimension, 0), 0.0, uniform_vocabulary("tok", 200)),
            baseline: None,
            constructions: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: SynthPlan = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.keyword_probability) {
            return Err(Error::InvalidInput(format!(
                "keyword probability {} outside [0, 1]",
                self.keyword_probability
            )));
        }
        if self.tokens_per_doc == 0 {
            return Err(Error::InvalidInput("tokens_per_doc must be positive".into()));
        }
        self.event.validate(self.dimension, "event")?;
        if let Some(b) = &self.baseline {
            b.validate(self.dimension, "baseline")?;
        }
        for c in &self.constructions {
            let slot = slot_of(c.day)?;
            if c.distances.is_empty() || self.event.counts[slot] != 2 * c.distances.len() {
                return Err(Error::InvalidInput(format!(
                    "construction on day {} needs exactly {} event documents",
                    c.day,
                    2 * c.distances.len()
                )));
            }
            if c.distances.iter().any(|d| !(0.0..1.0).contains(d)) {
                return Err(Error::InvalidInput("construction distances must lie in [0, 1)".into()));
            }
            if c.distances.len() + 1 > self.dimension {
                return Err(Error::InvalidInput(format!(
                    "construction on day {} needs dimension > {}",
                    c.day,
                    c.distances.len()
                )));
            }
        }
        Ok(())
    }

    fn construction(&self, slot: usize) -> Option<&DistanceConstruction> {
        self.constructions.iter().find(|c| slot_of(c.day).ok() == Some(slot))
    }
}

fn slot_of(day: i64) -> Result<usize> {
    if (FIRST_DAY..FIRST_DAY + WINDOW_LEN as i64).contains(&day) {
        Ok((day - FIRST_DAY) as usize)
    } else {
        Err(Error::InvalidInput(format!("day {day} outside window")))
    }
}

fn sub_seed(seed: u64, stream: u64, slot: usize) -> u64 {
    let mut x = seed ^ (stream << 56) ^ ((slot as u64) << 32);
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Unit vectors orthogonal to `axis` and to each other.
fn orthonormal_complement(axis: &[f64], count: usize) -> Vec<Vec<f64>> {
    let mut basis_out: Vec<Vec<f64>> = vec![axis.to_vec()];
    for i in 0..axis.len() {
        if basis_out.len() > count {
            break;
        }
        let mut v = basis(axis.len(), i);
        for b in &basis_out {
            let p = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        if let Some(u) = normalize(&v).filter(|_| norm(&v) > 1e-6) {
            basis_out.push(u);
        }
    }
    basis_out.into_iter().skip(1).collect()
}

struct DayOutput {
    docs: Vec<Document>,
    rows: Vec<Vec<f64>>,
}

fn generate_day(plan: &SynthPlan, event: &EventSpec, stream: &StreamPlan, is_event: bool, slot: usize) -> Result<DayOutput> {
    let day = FIRST_DAY + slot as i64;
    let n = stream.counts[slot];
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(plan.seed, u64::from(!is_event), slot));
    let vocab = per_day(&stream.vocabulary, slot);
    let terms: Vec<&String> = vocab.keys().collect();
    let weights = WeightedIndex::new(vocab.values().copied()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let theta = stream.direction(slot);
    let sigma = stream.sigma(slot);
    let construction = if is_event { plan.construction(slot) } else { None };
    let constructed: Option<Vec<Vec<f64>>> = construction.map(|c| {
        let dirs = orthonormal_complement(theta, c.distances.len());
        c.distances
            .iter()
            .zip(&dirs)
            .flat_map(|(d, u)| {
                let cos = 1.0 - d;
                let sin = (1.0 - cos * cos).sqrt();
                [1.0, -1.0].map(|sign| theta.iter().zip(u).map(|(t, ui)| t * cos + sign * sin * ui).collect())
            })
            .collect()
    });
    let onset = Utc.from_utc_datetime(&event.onset_date.and_hms_opt(0, 0, 0).expect("midnight"));
    let stream_tag = if is_event { "e" } else { "b" };
    let mut out = DayOutput {
        docs: Vec::with_capacity(n),
        rows: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut tokens: Vec<String> = (0..plan.tokens_per_doc)
            .map(|_| terms[weights.sample(&mut rng)].clone())
            .collect();
        if is_event {
            for kw in event.keywords.iter().take(2) {
                if rng.random_bool(plan.keyword_probability) {
                    let pos = rng.random_range(0..=tokens.len());
                    tokens.insert(pos, kw.clone());
                }
            }
        }
        let row = match &constructed {
            Some(points) => points[i].clone(),
            None if sigma == 0.0 => theta.to_vec(),
            None => {
                let noisy: Vec<f64> = theta
                    .iter()
                    .map(|t| t + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                normalize(&noisy).ok_or_else(|| Error::Degenerate("noise cancelled direction".into()))?
            }
        };
        let published = onset + Duration::days(day) + Duration::seconds((i as i64 * 60) % 86_400 + if is_event { 0 } else { 30 });
        let doc = Document::new(
            format!("https://synthetic.example/{}/{stream_tag}/{day}/{i}", event.event_id),
            "synthetic.example",
            "",
            tokens.join(" "),
            published,
        )
        .with_id(format!("{}-{stream_tag}{:02}-{i:05}", event.event_id, slot));
        out.docs.push(Document {
            embedding: Some(row.clone()),
            ..doc
        });
        out.rows.push(row);
    }
    Ok(out)
}

/// Generates the corpus and its embeddings, which are also attached to each
/// document so they bypass any provider.
/// Event documents come first, then baseline documents, each by day.
pub fn generate(plan: &SynthPlan, event: &EventSpec) -> Result<(Corpus, EmbeddingMatrix)> {
    plan.validate()?;
    if event.keywords.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "event `{}` needs at least two keywords to plant",
            event.event_id
        )));
    }
    let mut streams = vec![(&plan.event, true)];
    if let Some(b) = &plan.baseline {
        streams.push((b, false));
    }
    let mut docs = Vec::new();
    let mut rows = Vec::new();
    for (stream, is_event) in streams {
        let per_day: Vec<DayOutput> = (0..WINDOW_LEN)
            .into_par_iter()
            .map(|slot| generate_day(plan, event, stream, is_event, slot))
            .collect::<Result<_>>()?;
        for d in per_day {
            docs.extend(d.docs);
            rows.extend(d.rows);
        }
    }
    let matrix = EmbeddingMatrix::from_unit_rows(plan.dimension, rows)?;
    Ok((
        Corpus {
            event: event.clone(),
            documents: docs,
        },
        matrix,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedSignals {
    pub volume: DailySeries,
    /// Noise-free drift with alpha = 1.
    pub drift: DailySeries,
    /// Exact dispersion where the plan determines it, else `None`.
    pub dispersion: Vec<Option<f64>>,
}

/// Signals implied by the plan for the event stream.
pub fn expected_signals(plan: &SynthPlan) -> Result<ExpectedSignals> {
    plan.validate()?;
    let counts = &plan.event.counts;
    let offsets: Vec<i64> = days()
        .zip(counts)
        .flat_map(|(d, &n)| std::iter::repeat_n(d, n))
        .collect();
    let volume = volume_series(&offsets)?;

    let mut drift = vec![None; WINDOW_LEN];
    let mut prev: Option<usize> = None;
    for slot in 0..WINDOW_LEN {
        if counts[slot] == 0 {
            continue;
        }
        drift[slot] = Some(match prev {
            None => 0.0,
            Some(p) => (1.0 - dot(plan.event.direction(slot), plan.event.direction(p))).clamp(0.0, 2.0),
        });
        prev = Some(slot);
    }
    let drift = DailySeries::new(drift, counts.clone())?;

    let dispersion = (0..WINDOW_LEN)
        .map(|slot| {
            if counts[slot] == 0 {
                None
            } else if let Some(c) = plan.construction(slot) {
                let n = c.distances.len() as f64;
                let mean = c.distances.iter().sum::<f64>() / n;
                Some(c.distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n)
            } else if counts[slot] == 1 || plan.event.sigma(slot) == 0.0 {
                Some(0.0)
            } else {
                None
            }
        })
        .collect();
    Ok(ExpectedSignals {
        volume,
        drift,
        dispersion,
    })
}

/// Writes `<event_id>.jsonl` (embeddings inline at full precision) and the
/// matching `<event_id>.emb.bin` matrix into `dir`.
pub fn write_corpus(corpus: &Corpus, matrix: &EmbeddingMatrix, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    export_jsonl(&corpus.documents, dir.join(format!("{}.jsonl", corpus.event.event_id)))?;
    matrix.save(dir.join(format!("{}.emb.bin", corpus.event.event_id)))
}
