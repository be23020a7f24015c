mod common;

use std::fs;
use std::path::Path;

use newscycle::config::RunConfig;
use newscycle::corpus::{Category, WINDOW_LEN};
use newscycle::pipeline::{Pipeline, RunManifest, Stage, StageStatus};
use newscycle::synth::SynthPlan;
use newscycle::Error;
use sha2::{Digest, Sha256};

fn two_event_config(root: &Path) -> RunConfig {
    let mut a = SynthPlan::flat(8, 1);
    a.event.counts = vec![4; WINDOW_LEN];
    a.event.sigma = vec![0.2];
    let mut b = a.clone();
    b.seed = 2;
    common::synthetic_setup(
        root,
        &[
            (common::event("flood-a", Category::Disaster, (2022, 9, 1)), a),
            (common::event("riot-b", Category::Violence, (2021, 1, 6)), b),
        ],
    )
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

#[test]
fn happy_path_writes_every_stage_and_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_event_config(dir.path());
    let out = cfg.paths.output_dir.clone();
    let report = Pipeline::new(cfg).unwrap().run().unwrap();
    let stages: Vec<Stage> = report.manifest.stages.iter().map(|s| s.stage).collect();
    assert_eq!(stages, Stage::ALL);
    for entry in &report.manifest.stages {
        let expected = if entry.stage == Stage::Aggregate { 1 } else { 2 };
        assert_eq!(entry.records.len(), expected, "{}", entry.stage);
        for rec in &entry.records {
            assert!(!rec.outputs.is_empty());
            for (rel, checksum) in &rec.outputs {
                assert_eq!(&sha(&out.join(rel)), checksum, "{rel}");
            }
        }
    }
    assert!(report.runs.iter().all(|r| r.status == StageStatus::Ran));
    assert_eq!(RunManifest::load(out.join("manifest.json")).unwrap(), report.manifest);
    for name in ["aggregate/aggregate.csv", "aggregate/change_points.json", "charts/disaster_volume.svg", "run_summary.txt"] {
        assert!(out.join(name).is_file(), "{name}");
    }
}

#[test]
fn rerun_skips_everything_with_identical_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_event_config(dir.path());
    let first = Pipeline::new(cfg.clone()).unwrap().run().unwrap();
    let bytes = fs::read(cfg.paths.output_dir.join("manifest.json")).unwrap();
    let second = Pipeline::new(cfg.clone()).unwrap().run().unwrap();
    assert!(second.all_skipped());
    assert_eq!(second.runs.len(), first.runs.len());
    assert_eq!(second.manifest, first.manifest);
    assert_eq!(fs::read(cfg.paths.output_dir.join("manifest.json")).unwrap(), bytes);
}

#[test]
fn parameter_change_reruns_only_dependent_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = two_event_config(dir.path());
    Pipeline::new(cfg.clone()).unwrap().run().unwrap();
    cfg.params.alpha = 0.5;
    let report = Pipeline::new(cfg).unwrap().run().unwrap();
    for run in &report.runs {
        let expect_ran = run.stage >= Stage::Signals;
        assert_eq!(run.status == StageStatus::Ran, expect_ran, "{} {}", run.stage, run.event_id);
    }
}

#[test]
fn corpus_change_reruns_only_that_event() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_event_config(dir.path());
    Pipeline::new(cfg.clone()).unwrap().run().unwrap();
    let mut plan = SynthPlan::flat(8, 99);
    plan.event.counts = vec![5; WINDOW_LEN];
    common::synthetic_setup(dir.path(), &[(common::event("riot-b", Category::Violence, (2021, 1, 6)), plan)]);
    let report = Pipeline::new(cfg).unwrap().run().unwrap();
    for run in &report.runs {
        let expect_ran = run.event_id != "flood-a";
        assert_eq!(run.status == StageStatus::Ran, expect_ran, "{} {}", run.stage, run.event_id);
    }
}

#[test]
fn partial_run_keeps_later_records_from_previous_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_event_config(dir.path());
    let full = Pipeline::new(cfg.clone()).unwrap().run().unwrap();
    let partial = Pipeline::new(cfg).unwrap().run_until(Stage::Partition).unwrap();
    assert!(partial.runs.iter().all(|r| r.stage <= Stage::Partition));
    assert_eq!(partial.manifest, full.manifest);
}

#[test]
fn tiny_corpus_aborts_naming_partition() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = SynthPlan::flat(8, 5);
    plan.event.counts = vec![0; WINDOW_LEN];
    plan.event.counts[7..15].fill(1);
    let cfg = common::synthetic_setup(dir.path(), &[(common::event("tiny", Category::Disaster, (2020, 8, 4)), plan)]);
    let err = Pipeline::new(cfg).unwrap().run().unwrap_err();
    match &err {
        Error::Stage { stage, event, .. } => {
            assert_eq!((stage.as_str(), event.as_str()), ("partition", "tiny"));
        }
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains("smaller k"), "{err}");
}

#[test]
fn missing_corpus_aborts_naming_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = two_event_config(dir.path());
    cfg.events.push(common::event("ghost", Category::Violence, (2020, 1, 1)));
    let err = Pipeline::new(cfg).unwrap().run().unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, event, .. } if stage == "ingest" && event == "ghost"), "{err}");
}

#[test]
fn invalid_events_are_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = two_event_config(dir.path());
    cfg.events[0].keywords.truncate(3);
    assert!(Pipeline::new(cfg.clone()).is_err());
    let mut dup = two_event_config(dir.path());
    dup.events[1].event_id = dup.events[0].event_id.clone();
    assert!(Pipeline::new(dup).is_err());
}

#[test]
fn worker_count_does_not_change_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut one = two_event_config(a.path());
    one.params.workers = 1;
    let mut many = two_event_config(b.path());
    many.params.workers = 4;
    let ra = Pipeline::new(one).unwrap().run().unwrap();
    let rb = Pipeline::new(many).unwrap().run().unwrap();
    assert_eq!(ra.manifest, rb.manifest);
}

#[test]
fn single_event_run_keeps_other_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_event_config(dir.path());
    let full = Pipeline::new(cfg.clone()).unwrap().run().unwrap();
    let one = Pipeline::new(cfg.clone()).unwrap().only_event("riot-b").unwrap();
    let report = one.run_until(Stage::Partition).unwrap();
    assert!(report.runs.iter().all(|r| r.event_id == "riot-b"));
    assert_eq!(report.manifest, full.manifest);
    assert!(Pipeline::new(cfg.clone()).unwrap().only_event("nope").is_err());
    let one = Pipeline::new(cfg).unwrap().only_event("riot-b").unwrap();
    assert!(one.run().is_err());
}
