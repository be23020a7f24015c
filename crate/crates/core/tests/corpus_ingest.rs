use chrono::{Duration, NaiveDate, TimeZone, Utc};
use newscycle::corpus::{ingest_jsonl, ingest_reader, window_filter, write_jsonl, Document};
use newscycle::signals::day_offset;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/corpus_50.jsonl");

fn export(docs: &[Document]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(docs, &mut buf).unwrap();
    buf
}

#[test]
fn fixture_round_trips_byte_identically() {
    let first = ingest_jsonl(FIXTURE).unwrap();
    assert_eq!(first.documents.len(), 50);
    assert!(first.skipped.is_empty());
    let bytes = export(&first.documents);
    let second = ingest_reader(bytes.as_slice()).unwrap();
    assert_eq!(second.documents, first.documents);
    assert_eq!(export(&second.documents), bytes);
    let ids: Vec<_> = first.documents.iter().map(|d| d.id.clone()).collect();
    assert_eq!(ids.iter().filter(|i| i.starts_with("rec-")).count(), 17);
    // Derived ids are 16 hex chars.
    assert!(ids
        .iter()
        .filter(|i| !i.starts_with("rec-"))
        .all(|i| i.len() == 16 && i.chars().all(|c| c.is_ascii_hexdigit())));
}

#[test]
fn ingestion_is_deterministic() {
    let a = ingest_jsonl(FIXTURE).unwrap();
    let b = ingest_jsonl(FIXTURE).unwrap();
    assert_eq!(a.documents, b.documents);
}

#[test]
fn three_good_lines() {
    let input = r#"{"url":"https://a.com/1","domain":"a.com","title":"One","first_paragraph":"p","published_at":"2022-05-24T10:00:00Z"}
{"url":"https://a.com/2","domain":"a.com","title":"Two","first_paragraph":"p","published_at":"2022-05-24T11:00:00Z"}
{"url":"https://a.com/3","domain":"a.com","title":"Three","first_paragraph":"p","published_at":"2022-05-24T12:00:00Z"}
"#;
    let out = ingest_reader(input.as_bytes()).unwrap();
    assert_eq!(out.documents.len(), 3);
    assert!(out.skipped.is_empty());
    assert_eq!(out.documents[1].raw_text, "Two p");
}

#[test]
fn missing_timestamp_is_skipped_with_reason() {
    let input = r#"{"url":"https://a.com/1","domain":"a.com","title":"One","first_paragraph":"p","published_at":"2022-05-24T10:00:00Z"}
{"url":"https://a.com/2","domain":"a.com","title":"Two","first_paragraph":"p"}
{"url":"https://a.com/3","domain":"a.com","title":"Three","first_paragraph":"p","published_at":"2022-05-24T12:00:00Z"}
"#;
    let out = ingest_reader(input.as_bytes()).unwrap();
    assert_eq!(out.documents.len(), 2);
    assert_eq!(out.skipped.len(), 1);
    assert_eq!(out.skipped[0].line, 2);
    assert!(out.skipped[0].reason.contains("published_at"));
}

#[test]
fn unreadable_file_is_fatal() {
    assert!(ingest_jsonl("/nonexistent/corpus.jsonl").is_err());
}

fn doc_at(onset: NaiveDate, offset_days: i64, secs: i64, i: usize) -> Document {
    let ts = Utc.from_utc_datetime(&onset.and_hms_opt(0, 0, 0).unwrap()) + Duration::days(offset_days) + Duration::seconds(secs);
    Document::new(format!("https://x.com/{i}"), "x.com", format!("t{i}"), "", ts)
}

#[test]
fn window_boundaries() {
    let onset = NaiveDate::from_ymd_opt(2022, 5, 24).unwrap();
    let docs = vec![
        doc_at(onset, -7, 0, 0),
        doc_at(onset, -8, 86_399, 1),
        doc_at(onset, 30, 86_399, 2),
        doc_at(onset, 31, 0, 3),
    ];
    let kept: Vec<_> = window_filter(docs, onset).into_iter().map(|d| d.title).collect();
    assert_eq!(kept, vec!["t0", "t2"]);
}

#[test]
fn window_filter_matches_brute_force() {
    let onset = NaiveDate::from_ymd_opt(2023, 8, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let docs: Vec<Document> = (0..100)
        .map(|i| doc_at(onset, rng.random_range(-10..=40), rng.random_range(0..86_400), i))
        .collect();
    // Independent offset: whole days between calendar dates.
    let expected: Vec<String> = docs
        .iter()
        .filter(|d| {
            let days = (d.published_at.date_naive() - onset).num_days();
            (-7..=30).contains(&days)
        })
        .map(|d| d.id.clone())
        .collect();
    let kept = window_filter(docs.clone(), onset);
    assert_eq!(kept.iter().map(|d| d.id.clone()).collect::<Vec<_>>(), expected);
    assert!(kept.iter().all(|d| (-7..=30).contains(&day_offset(&d.published_at, onset))));
}

proptest! {
    #[test]
    fn window_filter_is_idempotent(offsets in prop::collection::vec((-12i64..45, 0i64..86_400), 0..60)) {
        let onset = NaiveDate::from_ymd_opt(2021, 12, 10).unwrap();
        let docs: Vec<Document> = offsets.iter().enumerate().map(|(i, (d, s))| doc_at(onset, *d, *s, i)).collect();
        let once = window_filter(docs, onset);
        let twice = window_filter(once.clone(), onset);
        prop_assert_eq!(&once, &twice);
        for d in &once {
            let off = day_offset(&d.published_at, onset);
            prop_assert!((-7..=30).contains(&off));
        }
    }
}
