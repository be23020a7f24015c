mod common;

use std::sync::{Arc, Mutex};
use std::time::Duration as StdDuration;

use chrono::{Duration, TimeZone, Utc};
use common::{MockServer, Response};
use newscycle::corpus::Category;
use newscycle::gdelt::{
    build_query, fetch_article_list, parse_artlist, ArticleRecord, FetchOptions, GdeltQuery, UreqTransport,
};
use newscycle::Error;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    skipped: usize,
    records: Vec<ArticleRecord>,
}

#[test]
fn recorded_response_matches_golden() {
    let body = include_bytes!("fixtures/gdelt_artlist.json");
    let golden: Golden = serde_json::from_str(include_str!("fixtures/gdelt_artlist.golden.json")).unwrap();
    let parsed = parse_artlist(body).unwrap();
    assert_eq!(parsed.skipped, golden.skipped);
    assert_eq!(parsed.records, golden.records);
}

#[test]
fn query_serialization_round_trip() {
    for (i, cat) in Category::ALL.into_iter().enumerate() {
        let mut ev = common::event(&format!("ev-{i}"), cat, (2020 + i as i32, 2, 29 - i as u32));
        ev.location_query = (i == 0).then(|| "sourcecountry:US".to_string());
        let q = build_query(&ev);
        let back: GdeltQuery = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        assert_eq!(back, q);
        assert_eq!(q.end - q.start, Duration::days(38));
    }
}

fn page(urls: &[String], seen: &str) -> String {
    let arts: Vec<String> = urls
        .iter()
        .map(|u| format!(r#"{{"url":"{u}","title":"t","seendate":"{seen}","domain":"x.com","sourcecountry":"United States"}}"#))
        .collect();
    format!(r#"{{"articles":[{}]}}"#, arts.join(","))
}

fn quick(endpoint: String) -> FetchOptions {
    FetchOptions {
        endpoint,
        spacing: StdDuration::ZERO,
        backoff: StdDuration::from_millis(5),
        ..FetchOptions::default()
    }
}

fn uvalde_query() -> GdeltQuery {
    let mut ev = common::event("uvalde", Category::Violence, (2022, 5, 24));
    ev.keywords = vec!["uvalde".into(), "robb elementary".into()];
    build_query(&ev)
}

#[test]
fn two_pages_of_five_over_http() {
    let server = MockServer::start(|n, _| match n {
        0 => Response::json(200, page(&(0..5).map(|i| format!("https://x.com/a{i}")).collect::<Vec<_>>(), "20220518T100000Z")),
        1 => Response::json(200, page(&(0..5).map(|i| format!("https://x.com/b{i}")).collect::<Vec<_>>(), "20220519T100000Z")),
        _ => Response::json(200, "{}"),
    });
    let q = uvalde_query();
    let out = fetch_article_list(&q, &UreqTransport::default(), &quick(server.url("/api/v2/doc/doc"))).unwrap();
    assert_eq!(out.records.len(), 10);
    assert_eq!(out.retries, 0);
    assert!(out.records.iter().all(|r| r.seen_at >= q.start && r.seen_at <= q.end));
}

#[test]
fn duplicate_urls_across_pages_collapse() {
    let server = MockServer::start(|n, _| match n {
        0 => Response::json(200, page(&["https://x.com/1".into(), "https://x.com/2".into()], "20220520T000000Z")),
        1 => Response::json(200, page(&["https://x.com/2".into(), "https://x.com/3".into()], "20220521T000000Z")),
        _ => Response::json(200, ""),
    });
    let out = fetch_article_list(&uvalde_query(), &UreqTransport::default(), &quick(server.url("/doc"))).unwrap();
    let urls: Vec<_> = out.records.iter().map(|r| r.url.as_str()).collect();
    assert_eq!(urls, ["https://x.com/1", "https://x.com/2", "https://x.com/3"]);
    assert_eq!(out.duplicates, 1);
}

#[test]
fn service_unavailable_then_success_counts_one_retry() {
    let server = MockServer::start(|n, _| match n {
        0 => Response::json(503, "busy"),
        1 => Response::json(200, page(&["https://x.com/1".into()], "20220524T000000Z")),
        _ => Response::json(200, "{}"),
    });
    let out = fetch_article_list(&uvalde_query(), &UreqTransport::default(), &quick(server.url("/doc"))).unwrap();
    assert_eq!(out.retries, 1);
    assert_eq!(out.records.len(), 1);
}

#[test]
fn fatal_status_and_malformed_body() {
    let server = MockServer::start(|_, _| Response::json(400, "bad query"));
    let err = fetch_article_list(&uvalde_query(), &UreqTransport::default(), &quick(server.url("/doc"))).unwrap_err();
    assert!(matches!(err, Error::HttpStatus { status: 400, .. }), "{err}");
    assert_eq!(server.hits(), 1);

    let server = MockServer::start(|_, _| Response::json(200, r#"{"articles": [ {"url": }"#));
    let err = fetch_article_list(&uvalde_query(), &UreqTransport::default(), &quick(server.url("/doc"))).unwrap_err();
    assert!(matches!(err, Error::Parse { offset: 23, .. }), "{err}");
}

#[test]
fn records_outside_window_are_dropped() {
    let server = MockServer::start(|n, _| match n {
        0 => Response::json(200, page(&["https://x.com/old".into()], "20220101T000000Z")),
        _ => Response::json(200, "{}"),
    });
    let out = fetch_article_list(&uvalde_query(), &UreqTransport::default(), &quick(server.url("/doc"))).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.skipped, 1);
}

#[test]
fn request_carries_window_and_mode() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let server = MockServer::start(move |_, req| {
        log.lock().unwrap().push(req.path.clone());
        Response::json(200, "{}")
    });
    let mut q = uvalde_query();
    q.end = Utc.with_ymd_and_hms(2022, 5, 19, 0, 0, 0).unwrap();
    fetch_article_list(&q, &UreqTransport::default(), &quick(server.url("/doc"))).unwrap();
    let paths = seen.lock().unwrap().clone();
    assert_eq!(paths.len(), 2);
    assert!(paths[0].contains("mode=artlist"));
    assert!(paths[0].contains("format=json"));
    assert!(paths[0].contains("startdatetime=20220517000000"));
    assert!(paths[1].contains("enddatetime=20220519000000"));
}

proptest! {
    #[test]
    fn parsing_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_artlist(&bytes);
    }

    #[test]
    fn parse_errors_point_inside_the_body(prefix in "[ \\n{\\[\":a-z0-9,]{0,40}") {
        if let Err(Error::Parse { offset, .. }) = parse_artlist(prefix.as_bytes()) {
            prop_assert!(offset <= prefix.len());
        }
    }
}
