//! On-disk formats: datasets, traces, predictions, labels, features and
//! model artifacts.

use std::path::Path;

use inputrisk::io::{
    load_dataset, load_traces, read_features, read_labels, read_model, read_predictions, read_traces,
    write_dataset, write_features, write_labels, write_model, write_predictions, write_traces, ModelArtifact,
    PredictionRow,
};
use inputrisk::pipeline::{featurize, FeatureSet};
use inputrisk::Error;
use inputrisk_core::corpus::{CharSpan, ErrorLabel, ExampleRecord, Prediction, TaskKind};
use inputrisk_core::measures::CwsConfig;
use inputrisk_core::synth::{make_synthetic, SyntheticSpec};
use inputrisk_core::trace::TokenRange;
use inputrisk_core::learn::{train, TrainConfig};

fn small_suite(n: usize) -> inputrisk_core::synth::SyntheticSuite {
    make_synthetic(&SyntheticSpec { n, corpus_sequences: 50, ..SyntheticSpec::default() }, 4).unwrap()
}

fn mixed_records() -> Vec<ExampleRecord> {
    let mut records = small_suite(5).records;
    records.push(ExampleRecord {
        id: "mc-1".into(),
        sentence: "She said, \"the bill, in full\", twice.".into(),
        expression: None,
        task: TaskKind::MultipleChoice,
        instruction: Some("Which reading fits?".into()),
        gold: "a|b".into(),
        choices: Some(vec!["a|b".into(), "c, d".into(), "é".into()]),
    });
    records.push(ExampleRecord {
        id: "met-1".into(),
        sentence: "The kettle is boiling.".into(),
        expression: Some(CharSpan::new(4, 10)),
        task: TaskKind::Metonymy,
        instruction: None,
        gold: "m".into(),
        choices: None,
    });
    records
}

#[test]
fn dataset_roundtrips_through_jsonl_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let records = mixed_records();
    for name in ["d.jsonl", "d.csv"] {
        let p = dir.path().join(name);
        write_dataset(&p, &records).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(back, records, "{name}");
        // writing what was read gives the same bytes
        let q = dir.path().join(format!("again.{name}"));
        write_dataset(&q, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap(), "{name}");
    }
}

#[test]
fn csv_choices_accept_pipes_or_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("mc.csv");
    std::fs::write(
        &p,
        "id,sentence,expression,task,instruction,gold,choices\n\
         a,The sky.,,multiple_choice,Q?,yes,yes|no\n\
         b,The sea.,,multiple_choice,Q?,x|y,\"[\"\"x|y\"\",\"\"z\"\"]\"\n",
    )
    .unwrap();
    let r = load_dataset(&p).unwrap();
    assert_eq!(r[0].choices.as_deref().unwrap(), ["yes", "no"]);
    assert_eq!(r[1].choices.as_deref().unwrap(), ["x|y", "z"]);
}

fn row_error(path: &Path) -> (usize, String) {
    match load_dataset(path).unwrap_err() {
        Error::Row { row, msg, .. } => (row, msg),
        other => panic!("expected a row error, got {other}"),
    }
}

#[test]
fn dataset_errors_name_row_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(
        &p,
        "id,sentence,expression,task,gold\n\
         a,kick the bucket,5:15,idiom,i\n\
         b,spill the beans,5-9,idiom,i\n",
    )
    .unwrap();
    let (row, msg) = row_error(&p);
    assert_eq!(row, 1);
    assert!(msg.contains("expression"), "{msg}");

    let p = dir.path().join("bad.jsonl");
    std::fs::write(
        &p,
        "{\"id\":\"a\",\"sentence\":\"x y\",\"task\":\"metaphor\",\"gold\":\"m\"}\n\
         \n\
         {\"id\":\"b\",\"sentence\":\"x y\",\"task\":\"metaphor\"}\n",
    )
    .unwrap();
    let (row, msg) = row_error(&p);
    assert_eq!(row, 1, "blank lines are not rows");
    assert!(msg.contains("gold"), "{msg}");

    std::fs::write(
        &p,
        "{\"id\":\"a\",\"sentence\":\"x y\",\"task\":\"metaphor\",\"gold\":\"m\"}\n\
         {\"id\":\"a\",\"sentence\":\"x z\",\"task\":\"metaphor\",\"gold\":\"l\"}\n",
    )
    .unwrap();
    let (row, msg) = row_error(&p);
    assert_eq!(row, 1);
    assert!(msg.contains("duplicate id `a`"), "{msg}");

    std::fs::write(&p, "{\"id\":\"a\",\"sentence\":\"xy\",\"expression\":{\"start\":1,\"end\":9},\"task\":\"idiom\",\"gold\":\"i\"}\n").unwrap();
    let (row, _) = row_error(&p);
    assert_eq!(row, 0);
}

/// A trace line written by hand from the documented schema, including the
/// optional base declaration an extractor may add.
const TRACE_FIXTURE: &str = r#"{"example_id": "ex-1", "sentence_token_range": [1, 2], "log_base_declared": 2, "tokens": [
  {"text": "Q", "span": [0, 1], "surprisal": 3.5, "entropy": 4.0, "kl_ref": 1.25, "max_prob": 0.5, "oddball": 0.25, "cis_next": -2.0},
  {"text": " a", "span": [1, 3], "surprisal": 1.0, "entropy": null, "kl_ref": null, "max_prob": 0.5, "oddball": 0.0, "cis_next": null},
  {"text": " b", "span": [3, 5], "surprisal": 0.5, "entropy": null, "kl_ref": null, "max_prob": null, "oddball": null, "cis_next": null}
]}"#;

#[test]
fn trace_schema_fixture_parses() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.jsonl");
    std::fs::write(&p, TRACE_FIXTURE.replace('\n', "") + "\n").unwrap();
    let t = &load_traces(&p).unwrap()[0];
    assert_eq!(t.example_id, "ex-1");
    assert_eq!(t.sentence_token_range, TokenRange::new(1, 2));
    assert_eq!(t.tokens.len(), 3);
    assert_eq!(t.tokens[1].token_text, " a");
    assert_eq!(t.tokens[1].span, CharSpan::new(1, 3));
    assert_eq!(t.tokens[0].cis_next, Some(-2.0));
    assert_eq!(t.tokens[1].entropy, None);
    assert_eq!(t.tokens[2].max_prob, None);

    std::fs::write(&p, TRACE_FIXTURE.replace('\n', "").replace("\"log_base_declared\": 2", "\"log_base_declared\": 10")).unwrap();
    let err = read_traces(&p).unwrap_err().to_string();
    assert!(err.contains("log_base_declared"), "{err}");

    // surprisal may not be null
    std::fs::write(&p, TRACE_FIXTURE.replace('\n', "").replace("\"surprisal\": 0.5", "\"surprisal\": null")).unwrap();
    assert!(read_traces(&p).is_err());

    // a range past the tokens parses but does not validate
    std::fs::write(&p, TRACE_FIXTURE.replace('\n', "").replace("[1, 2]", "[1, 3]")).unwrap();
    assert!(read_traces(&p).is_ok());
    let err = load_traces(&p).unwrap_err().to_string();
    assert!(err.contains("row 0") && err.contains("ex-1"), "{err}");
}

#[test]
fn traces_roundtrip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let suite = small_suite(30);
    let p = dir.path().join("t.jsonl");
    write_traces(&p, &suite.traces).unwrap();
    assert_eq!(load_traces(&p).unwrap(), suite.traces);
    for line in std::fs::read_to_string(&p).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 3, "{keys:?}");
        let step = v["tokens"][0].as_object().unwrap();
        for k in ["text", "span", "surprisal", "entropy", "kl_ref", "max_prob", "oddball", "cis_next"] {
            assert!(step.contains_key(k), "missing {k}");
        }
    }
}

#[test]
fn predictions_and_labels_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.jsonl");
    std::fs::write(
        &p,
        "{\"example_id\": \"a\", \"raw_output\": \"Answer: i\"}\n{\"example_id\": \"b\", \"raw_output\": \"\"}\n",
    )
    .unwrap();
    let rows = read_predictions(&p).unwrap();
    assert_eq!(
        rows,
        [
            PredictionRow { example_id: "a".into(), raw_output: "Answer: i".into() },
            PredictionRow { example_id: "b".into(), raw_output: String::new() },
        ]
    );
    let q = dir.path().join("q.jsonl");
    write_predictions(&q, &rows).unwrap();
    assert_eq!(read_predictions(&q).unwrap(), rows);

    std::fs::write(&p, "{\"example_id\": \"a\"}\n").unwrap();
    assert!(matches!(read_predictions(&p).unwrap_err(), Error::Row { row: 0, .. }));

    let labels = vec![
        ErrorLabel { example_id: "a".into(), predicted: Prediction::Label("i".into()), error: false },
        ErrorLabel { example_id: "b".into(), predicted: Prediction::Unparseable, error: true },
    ];
    let l = dir.path().join("labels.csv");
    write_labels(&l, &labels).unwrap();
    assert_eq!(read_labels(&l).unwrap(), labels);
    assert_eq!(std::fs::read_to_string(&l).unwrap(), "example_id,error,predicted\na,0,i\nb,1,\n");
}

#[test]
fn features_roundtrip_and_models_check_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let suite = small_suite(120);
    let full = featurize(&suite.records, &suite.traces, FeatureSet::Full, CwsConfig::default()).unwrap();
    let p = dir.path().join("full.csv");
    write_features(&p, &full).unwrap();
    assert!(dir.path().join("full.manifest.json").exists());
    let back = read_features(&p).unwrap();
    assert_eq!(back, full, "tables are rounded before writing, so reading is exact");

    let q = dir.path().join("again.csv");
    write_features(&q, &back).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());

    let model = train(&full.x, &suite.errors, &TrainConfig::default(), 0).unwrap();
    let m = dir.path().join("model.json");
    write_model(&m, &ModelArtifact::new(full.columns(), model)).unwrap();
    let artifact = read_model(&m).unwrap();
    let (p_full, d) = artifact.score(&back).unwrap();
    assert_eq!(p_full.len(), 120);
    assert_eq!(d.len(), 120);

    let sentence = featurize(&suite.records, &suite.traces, FeatureSet::Sentence, CwsConfig::default()).unwrap();
    match artifact.score(&sentence).unwrap_err() {
        Error::ManifestMismatch { expected, found } => {
            assert_eq!(expected, full.manifest_hash());
            assert_eq!(found, sentence.manifest_hash());
        }
        other => panic!("{other}"),
    }

    // a sidecar that disagrees with the CSV header is refused
    let sp = dir.path().join("sentence.csv");
    write_features(&sp, &sentence).unwrap();
    std::fs::copy(dir.path().join("full.manifest.json"), dir.path().join("sentence.manifest.json")).unwrap();
    assert!(read_features(&sp).is_err());

    // and a tampered artifact is refused on load
    let text = std::fs::read_to_string(&m).unwrap().replacen(&full.manifest_hash(), &"0".repeat(64), 1);
    std::fs::write(&m, text).unwrap();
    assert!(read_model(&m).is_err());
}
