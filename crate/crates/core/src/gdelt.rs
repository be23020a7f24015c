//! Client for the GDELT document API in article-list mode.

use std::collections::BTreeSet;
use std::thread::sleep;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{domain_of, Document, EventSpec, FIRST_DAY, LAST_DAY};
use crate::error::{Error, Result};

pub const DEFAULT_ENDPOINT: &str = "https://api.gdeltproject.org/api/v2/doc/doc";
/// The API caps article lists at 250 records per request.
pub const MAX_RECORDS_PER_REQUEST: usize = 250;
pub const DEFAULT_MAX_RECORDS: usize = 10_000;

const URL_TIME_FORMAT: &str = "%Y%m%d%H%M%S";
const SEENDATE_FORMAT: &str = "%Y%m%dT%H%M%SZ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GdeltQuery {
    pub keywords: Vec<String>,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_query: Option<String>,
    pub max_records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub url: String,
    pub title: String,
    pub domain: String,
    pub seen_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_country: Option<String>,
}

impl ArticleRecord {
    /// An ingestible document; the API carries no article text, so the first
    /// paragraph is empty.
    pub fn to_document(&self) -> Document {
        Document::new(&self.url, &self.domain, &self.title, "", self.seen_at)
    }
}

/// Query covering the event window `[onset - 7d, onset + 31d)` with the
/// event keywords OR-combined.
pub fn build_query(event: &EventSpec) -> GdeltQuery {
    let onset = Utc.from_utc_datetime(&event.onset_date.and_hms_opt(0, 0, 0).expect("midnight"));
    GdeltQuery {
        keywords: event.keywords.clone(),
        start: onset + Duration::days(FIRST_DAY),
        end: onset + Duration::days(LAST_DAY + 1),
        location_query: event.location_query.clone(),
        max_records: DEFAULT_MAX_RECORDS,
    }
}

impl GdeltQuery {
    /// The API's boolean query string. Multi-word phrases are quoted; the
    /// location filter is appended verbatim.
    pub fn query_string(&self) -> String {
        let terms: Vec<String> = self
            .keywords
            .iter()
            .map(|k| k.trim())
            .filter(|k| !k.is_empty())
            .map(|k| {
                if k.contains(char::is_whitespace) {
                    format!("\"{k}\"")
                } else {
                    k.to_string()
                }
            })
            .collect();
        let mut q = match terms.len() {
            0 => String::new(),
            1 => terms[0].clone(),
            _ => format!("({})", terms.join(" OR ")),
        };
        if let Some(loc) = self.location_query.as_deref().filter(|l| !l.trim().is_empty()) {
            if !q.is_empty() {
                q.push(' ');
            }
            q.push_str(loc.trim());
        }
        q
    }

    pub fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::InvalidInput(format!(
                "query start {} is not before end {}",
                self.start, self.end
            )));
        }
        if self.max_records == 0 {
            return Err(Error::InvalidInput("max_records must be positive".into()));
        }
        if self.keywords.iter().all(|k| k.trim().is_empty()) {
            return Err(Error::InvalidInput("query has no keywords".into()));
        }
        Ok(())
    }

    /// Request URL for the sub-window `[from, to)`.
    pub fn page_url(&self, endpoint: &str, from: DateTime<Utc>, to: DateTime<Utc>, max_records: usize) -> String {
        let params = form_urlencoded::Serializer::new(String::new())
            .append_pair("query", &self.query_string())
            .append_pair("mode", "artlist")
            .append_pair("format", "json")
            .append_pair("sort", "dateasc")
            .append_pair("maxrecords", &max_records.min(MAX_RECORDS_PER_REQUEST).to_string())
            .append_pair("startdatetime", &from.format(URL_TIME_FORMAT).to_string())
            .append_pair("enddatetime", &to.format(URL_TIME_FORMAT).to_string())
            .finish();
        format!("{endpoint}?{params}")
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ParsedArtlist {
    pub records: Vec<ArticleRecord>,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct RawArtlist {
    #[serde(default)]
    articles: Vec<RawArticle>,
}

#[derive(Deserialize)]
struct RawArticle {
    #[serde(default)]
    url: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    seendate: Option<String>,
    #[serde(default)]
    domain: Option<String>,
    #[serde(default)]
    sourcecountry: Option<String>,
}

fn valid_url(url: &str) -> bool {
    let Some((scheme, rest)) = url.split_once("://") else {
        return false;
    };
    matches!(scheme.to_ascii_lowercase().as_str(), "http" | "https")
        && !rest.split(['/', '?', '#']).next().unwrap_or("").is_empty()
        && !url.contains(char::is_whitespace)
}

fn byte_offset(body: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = body
        .split(|b| *b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(body.len())
}

/// Parses an article-list response. Entries without a valid url or
/// timestamp are skipped and counted. An empty body or `{}` is an empty list.
pub fn parse_artlist(body: &[u8]) -> Result<ParsedArtlist> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(ParsedArtlist::default());
    }
    let raw: RawArtlist = serde_json::from_slice(body).map_err(|e| Error::Parse {
        offset: byte_offset(body, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut out = ParsedArtlist::default();
    for a in raw.articles {
        let url = a.url.map(|u| u.trim().to_string()).unwrap_or_default();
        let seen_at = a
            .seendate
            .as_deref()
            .and_then(|s| NaiveDateTime::parse_from_str(s.trim(), SEENDATE_FORMAT).ok())
            .map(|t| Utc.from_utc_datetime(&t));
        let (true, Some(seen_at)) = (valid_url(&url), seen_at) else {
            out.skipped += 1;
            continue;
        };
        let domain = a
            .domain
            .filter(|d| !d.trim().is_empty())
            .unwrap_or_else(|| domain_of(&url));
        out.records.push(ArticleRecord {
            title: a.title.unwrap_or_default().trim().to_string(),
            domain,
            seen_at,
            source_country: a.sourcecountry.filter(|c| !c.trim().is_empty()),
            url,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

/// A blocking HTTP GET. Connection-level failures are reported as
/// [`Error::Transport`].
pub trait Transport {
    fn get(&self, url: &str) -> Result<HttpResponse>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: StdDuration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .user_agent(concat!("newscycle/", env!("CARGO_PKG_VERSION")))
            .build()
            .new_agent();
        UreqTransport { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(StdDuration::from_secs(60))
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str) -> Result<HttpResponse> {
        let mut resp = self.agent.get(url).call().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub endpoint: String,
    /// Width of each time slice requested.
    pub page_span: Duration,
    /// Minimum spacing between consecutive requests.
    pub spacing: StdDuration,
    pub max_attempts: u32,
    /// Delay before the first retry; doubled for each further retry.
    pub backoff: StdDuration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            page_span: Duration::days(1),
            spacing: StdDuration::from_secs(1),
            max_attempts: 3,
            backoff: StdDuration::from_secs(2),
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FetchOutcome {
    pub records: Vec<ArticleRecord>,
    pub pages: usize,
    pub retries: usize,
    pub skipped: usize,
    pub duplicates: usize,
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

fn get_with_retry(transport: &dyn Transport, url: &str, opts: &FetchOptions, retries: &mut usize) -> Result<Vec<u8>> {
    let attempts = opts.max_attempts.max(1);
    let mut delay = opts.backoff;
    let mut attempt = 1;
    loop {
        let err = match transport.get(url) {
            Ok(r) if (200..300).contains(&r.status) => return Ok(r.body),
            Ok(r) if !is_transient(r.status) => {
                return Err(Error::HttpStatus {
                    status: r.status,
                    url: url.to_string(),
                })
            }
            Ok(r) => Error::HttpStatus {
                status: r.status,
                url: url.to_string(),
            },
            Err(e @ Error::Transport(_)) => e,
            Err(e) => return Err(e),
        };
        if attempt >= attempts {
            return Err(err);
        }
        log::warn!("attempt {attempt} of {attempts} failed ({err}); retrying in {delay:?}");
        sleep(delay);
        delay = delay.saturating_mul(2);
        attempt += 1;
        *retries += 1;
    }
}

/// Fetches the query window slice by slice, in order, until `max_records`
/// unique urls are collected or the window is exhausted. Records outside the
/// query window are dropped; repeated urls keep their first occurrence.
pub fn fetch_article_list(query: &GdeltQuery, transport: &dyn Transport, opts: &FetchOptions) -> Result<FetchOutcome> {
    query.validate()?;
    if opts.page_span <= Duration::zero() {
        return Err(Error::InvalidInput("page span must be positive".into()));
    }
    let mut out = FetchOutcome::default();
    let mut seen = BTreeSet::new();
    let mut from = query.start;
    while from < query.end && out.records.len() < query.max_records {
        let to = (from + opts.page_span).min(query.end);
        if out.pages > 0 {
            sleep(opts.spacing);
        }
        let url = query.page_url(&opts.endpoint, from, to, query.max_records - out.records.len());
        let body = get_with_retry(transport, &url, opts, &mut out.retries)?;
        let parsed = parse_artlist(&body)?;
        out.pages += 1;
        out.skipped += parsed.skipped;
        for r in parsed.records {
            if r.seen_at < query.start || r.seen_at > query.end {
                out.skipped += 1;
            } else if !seen.insert(r.url.clone()) {
                out.duplicates += 1;
            } else if out.records.len() < query.max_records {
                out.records.push(r);
            }
        }
        from = to;
    }
    Ok(out)
}
