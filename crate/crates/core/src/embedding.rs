//! Document embeddings behind a pluggable provider.
//!
//! Two providers ship: [`HashEmbedder`], a deterministic signed feature
//! hasher used by default and in tests, and [`HttpEmbedder`], a client for an
//! external embedding service speaking
//! `POST /embed {"texts": [...]} -> {"vectors": [[...]], "dimension": D}`.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, UNIT_NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::preprocess::tokenize;

pub const DEFAULT_DIMENSION: usize = 384;
pub const DEFAULT_BATCH_SIZE: usize = 64;
/// Norm tolerance a provider must meet on the wire. Vectors are
/// renormalized on receipt.
pub const WIRE_NORM_TOLERANCE: f64 = 1e-4;

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    /// Embeds one batch, returning one vector per text in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    /// How many batches may be in flight at once.
    fn max_in_flight(&self) -> usize {
        1
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Scales to unit length; `None` for the zero vector.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

/// `1 - u·v` for unit vectors, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    for x in [u, v] {
        let n = norm(x);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "cosine distance needs unit vectors, got norm {n}"
            )));
        }
    }
    Ok((1.0 - dot(u, v)).clamp(0.0, 2.0))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn token_hash(seed: u64, token: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    for b in token.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

/// Signed feature hashing of the text's tokens into `dimension` buckets,
/// L2-normalized. Text without tokens (or whose buckets cancel) maps to e_0.
pub fn hash_embed(text: &str, dimension: usize, seed: u64) -> Vec<f64> {
    assert!(dimension >= 8, "hash embedding dimension must be at least 8");
    let mut v = vec![0.0; dimension];
    for token in tokenize(text) {
        let h = token_hash(seed, &token);
        let bucket = (h % dimension as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    normalize(&v).unwrap_or_else(|| {
        let mut e0 = vec![0.0; dimension];
        e0[0] = 1.0;
        e0
    })
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension < 8 {
            return Err(Error::InvalidInput(format!(
                "hash embedder dimension {dimension} < 8"
            )));
        }
        Ok(HashEmbedder { dimension, seed })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dimension: DEFAULT_DIMENSION,
            seed: 0,
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        "hash"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| hash_embed(t, self.dimension, self.seed))
            .collect())
    }

    fn max_in_flight(&self) -> usize {
        rayon::current_num_threads()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
    pub dimension: usize,
}

/// Client for a remote embedding service.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    dimension: usize,
    agent: ureq::Agent,
    max_in_flight: usize,
    attempts: u32,
    backoff: Duration,
    token: Option<String>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpEmbedder {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            dimension,
            agent,
            max_in_flight: 4,
            attempts: 3,
            backoff: Duration::from_millis(500),
            token: None,
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    /// Bearer token sent with every request.
    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn health(&self) -> Result<()> {
        let url = format!("{}/health", self.endpoint);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let _ = resp.body_mut().read_to_vec();
        if status == 200 {
            Ok(())
        } else {
            Err(Error::HttpStatus { status, url })
        }
    }

    fn post_once(&self, body: &[u8]) -> std::result::Result<Vec<u8>, (bool, Error)> {
        let url = format!("{}/embed", self.endpoint);
        let mut req = self
            .agent
            .post(&url)
            .header("content-type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| (true, Error::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(512 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| (true, Error::Transport(e.to_string())))?;
        match status {
            200 => Ok(bytes),
            429 | 500..=599 => Err((true, Error::HttpStatus { status, url })),
            _ => Err((false, Error::HttpStatus { status, url })),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        "http"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = serde_json::to_vec(&EmbedRequest {
            texts: texts.to_vec(),
        })?;
        let mut attempt = 0;
        let bytes = loop {
            attempt += 1;
            match self.post_once(&body) {
                Ok(bytes) => break bytes,
                Err((transient, err)) => {
                    if !transient || attempt >= self.attempts {
                        return Err(err);
                    }
                    std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
                }
            }
        };
        let resp: EmbedResponse = serde_json::from_slice(&bytes)?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::InvalidInput(format!(
                "service returned {} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        if resp.dimension != self.dimension || resp.vectors.iter().any(|v| v.len() != self.dimension) {
            return Err(Error::InvalidInput(format!(
                "service dimension {} does not match expected {}",
                resp.dimension, self.dimension
            )));
        }
        Ok(resp.vectors)
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

/// Unit row vectors aligned by position with the documents they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dimension: usize,
    rows: Vec<Vec<f64>>,
}

const MATRIX_MAGIC: &[u8; 4] = b"NCEM";
const MATRIX_VERSION: u32 = 1;

impl EmbeddingMatrix {
    /// Rows are re-normalized; a zero or wrongly sized row is an error.
    pub fn from_rows(dimension: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                if r.len() != dimension {
                    return Err(Error::InvalidInput(format!(
                        "row {i} has dimension {}, expected {dimension}",
                        r.len()
                    )));
                }
                normalize(&r).ok_or_else(|| Error::Degenerate(format!("row {i} is a zero vector")))
            })
            .collect::<Result<_>>()?;
        Ok(EmbeddingMatrix { dimension, rows })
    }

    /// Like [`from_rows`](Self::from_rows) but keeps rows bit-for-bit; each
    /// must already be unit norm.
    pub fn from_unit_rows(dimension: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dimension {
                return Err(Error::InvalidInput(format!(
                    "row {i} has dimension {}, expected {dimension}",
                    r.len()
                )));
            }
            if (norm(r) - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidInput(format!("row {i} is not unit norm")));
            }
        }
        Ok(EmbeddingMatrix { dimension, rows })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }

    /// Binary layout: `NCEM`, version (u32), dimension (u32), rows (u64),
    /// then row-major little-endian f32 values.
    pub fn write_binary(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(MATRIX_MAGIC)?;
        out.write_all(&MATRIX_VERSION.to_le_bytes())?;
        out.write_all(&(self.dimension as u32).to_le_bytes())?;
        out.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        for row in &self.rows {
            for &x in row {
                out.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + 4 * self.dimension * self.rows.len());
        self.write_binary(&mut buf).expect("write to Vec");
        buf
    }

    /// Reads the binary layout back; rows are re-normalized after widening.
    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |offset: usize, message: &str| Error::Parse {
            offset,
            message: message.to_string(),
        };
        if bytes.len() < 20 {
            return Err(bad(bytes.len(), "truncated embedding header"));
        }
        if &bytes[..4] != MATRIX_MAGIC {
            return Err(bad(0, "bad embedding file magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MATRIX_VERSION {
            return Err(bad(4, &format!("unsupported embedding file version {version}")));
        }
        let dimension = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n_rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let expected = n_rows
            .checked_mul(dimension)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(20))
            .ok_or_else(|| bad(12, "embedding file size overflows"))?;
        if bytes.len() != expected {
            return Err(bad(
                bytes.len().min(expected),
                &format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let rows = bytes[20..]
            .chunks_exact(4 * dimension.max(1))
            .take(n_rows)
            .map(|chunk| {
                chunk
                    .chunks_exact(4)
                    .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                    .collect()
            })
            .collect();
        Self::from_rows(dimension, rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Embeds every document's `raw_text`, `batch_size` texts per provider call.
/// Output rows follow input order regardless of batch completion order.
pub fn embed_corpus(
    provider: &dyn EmbeddingProvider,
    docs: &[Document],
    batch_size: usize,
) -> Result<EmbeddingMatrix> {
    let texts: Vec<String> = docs.iter().map(|d| d.raw_text.clone()).collect();
    embed_texts(provider, &texts, batch_size)
}

pub fn embed_texts(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
    batch_size: usize,
) -> Result<EmbeddingMatrix> {
    let batch_size = batch_size.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(provider.max_in_flight().max(1))
        .build()
        .map_err(|e| Error::Transport(e.to_string()))?;
    let batches: Vec<Vec<Vec<f64>>> = pool.install(|| {
        texts
            .par_chunks(batch_size)
            .enumerate()
            .map(|(batch, chunk)| {
                let vectors = provider.embed_batch(chunk).map_err(|e| Error::Provider {
                    batch,
                    message: e.to_string(),
                })?;
                if vectors.len() != chunk.len() {
                    return Err(Error::Provider {
                        batch,
                        message: format!("{} vectors for {} texts", vectors.len(), chunk.len()),
                    });
                }
                Ok(vectors)
            })
            .collect::<Result<_>>()
    })?;
    EmbeddingMatrix::from_rows(provider.dimension(), batches.into_iter().flatten().collect())
}

/// Checks the provider contract: declared dimension, unit norm, input-order
/// alignment and determinism. Shared by every provider implementation.
pub fn check_provider_contract(provider: &dyn EmbeddingProvider) -> Result<()> {
    let fail = |msg: String| Err(Error::InvalidInput(format!("{}: {msg}", provider.name())));
    let texts: Vec<String> = (0..12)
        .map(|i| format!("sentinel {i} flood warning issued for district {}", i * 7))
        .chain(["".to_string(), "hello".to_string(), "hello".to_string()])
        .collect();
    let first = provider.embed_batch(&texts)?;
    if first.len() != texts.len() {
        return fail(format!("{} vectors for {} texts", first.len(), texts.len()));
    }
    for (i, v) in first.iter().enumerate() {
        if v.len() != provider.dimension() {
            return fail(format!("vector {i} has dimension {}", v.len()));
        }
        let n = norm(v);
        if (n - 1.0).abs() > WIRE_NORM_TOLERANCE {
            return fail(format!("vector {i} has norm {n}"));
        }
    }
    if first[13] != first[14] {
        return fail("identical texts in one batch differ".into());
    }
    let second = provider.embed_batch(&texts)?;
    if first != second {
        return fail("repeated call is not deterministic".into());
    }
    // Order alignment: each text embedded alone matches its batch row.
    for (i, text) in texts.iter().enumerate().take(12) {
        let single = provider.embed_batch(std::slice::from_ref(text))?;
        if single.len() != 1 || single[0] != first[i] {
            return fail(format!("row {i} is not aligned with its input"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn e(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn cosine_distance_cases() {
        assert_eq!(cosine_distance(&e(0, 3), &e(0, 3)).unwrap(), 0.0);
        assert_eq!(cosine_distance(&e(0, 3), &e(1, 3)).unwrap(), 1.0);
        let neg: Vec<f64> = e(0, 3).iter().map(|x| -x).collect();
        assert_eq!(cosine_distance(&e(0, 3), &neg).unwrap(), 2.0);
        assert!(cosine_distance(&[2.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_distance(&e(0, 2), &e(0, 3)).is_err());
    }

    #[test]
    fn empty_text_maps_to_first_basis_vector() {
        assert_eq!(hash_embed("", 16, 7), e(0, 16));
        assert_eq!(hash_embed("  ,, !", 16, 7), e(0, 16));
    }

    #[test]
    fn hash_embed_is_deterministic_and_unit() {
        let a = hash_embed("Flood waters rise in the valley", 384, 1);
        assert_eq!(a, hash_embed("Flood waters rise in the valley", 384, 1));
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, hash_embed("Flood waters rise in the valley", 384, 2));
    }

    #[test]
    fn disjoint_texts_are_nearly_orthogonal() {
        let a = "alpha bravo charlie delta echo foxtrot golf hotel india juliet";
        let b = "kilo lima mike november oscar papa quebec romeo sierra tango";
        let ok = (0..100u64)
            .filter(|&seed| dot(&hash_embed(a, 4096, seed), &hash_embed(b, 4096, seed)).abs() < 0.1)
            .count();
        assert!(ok >= 95, "only {ok}/100 seeds nearly orthogonal");
    }

    fn docs(n: usize) -> Vec<Document> {
        let ts = Utc.with_ymd_and_hms(2022, 5, 24, 0, 0, 0).unwrap();
        (0..n)
            .map(|i| {
                Document::new(
                    format!("https://n/{i}"),
                    "n",
                    format!("headline {i}"),
                    format!("storm report number {} about levee {}", i, i % 3),
                    ts,
                )
            })
            .collect()
    }

    #[test]
    fn embed_corpus_contract() {
        let p = HashEmbedder::default();
        let m = embed_corpus(&p, &docs(3), 64).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.rows().iter().all(|r| (norm(r) - 1.0).abs() < 1e-6));
        assert_eq!(m.to_bytes(), embed_corpus(&p, &docs(3), 64).unwrap().to_bytes());
    }

    #[test]
    fn batching_invariance() {
        let p = HashEmbedder::default();
        let d = docs(10);
        assert_eq!(
            embed_corpus(&p, &d, 2).unwrap().to_bytes(),
            embed_corpus(&p, &d, 64).unwrap().to_bytes()
        );
    }

    #[test]
    fn binary_round_trip() {
        let p = HashEmbedder::new(32, 3).unwrap();
        let m = embed_corpus(&p, &docs(5), 2).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"NCEM");
        assert_eq!(bytes.len(), 20 + 5 * 32 * 4);
        let back = EmbeddingMatrix::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (a, b) in m.rows().iter().zip(back.rows()) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6));
        }
        assert!(EmbeddingMatrix::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(EmbeddingMatrix::from_bytes(b"XXXX").is_err());
    }

    #[test]
    fn builtin_provider_meets_contract() {
        check_provider_contract(&HashEmbedder::default()).unwrap();
        check_provider_contract(&HashEmbedder::new(8, 99).unwrap()).unwrap();
    }

    struct Failing;
    impl EmbeddingProvider for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn dimension(&self) -> usize {
            8
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            if texts.iter().any(|t| t.contains("number 5")) {
                Err(Error::Transport("boom".into()))
            } else {
                Ok(texts.iter().map(|_| e(0, 8)).collect())
            }
        }
    }

    #[test]
    fn provider_failure_names_batch() {
        let err = embed_corpus(&Failing, &docs(10), 2).unwrap_err();
        assert!(matches!(err, Error::Provider { batch: 2, .. }), "{err}");
    }
}
