use std::fs;
use std::path::Path;

use causal_core::corpus::{CausalPair, PoolEntry, TripletRecord};
use causal_core::index::{Hit, RetrievalResult};
use causal_core::text::build_vocab;
use causal_retrieval::embfile::{load_matrix, EmbeddingHeader, EmbeddingReader, EmbeddingWriter};
use causal_retrieval::formats::*;
use causal_retrieval::manifest::{default_path, RunManifest};
use causal_retrieval::FormatError;
use proptest::prelude::*;

fn record_line(err: FormatError) -> usize {
    match err {
        FormatError::Record { line, .. } => line,
        other => panic!("expected a record error, got {other}"),
    }
}

#[test]
fn malformed_pair_line_reports_its_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    fs::write(
        &path,
        "{\"id\":\"a\",\"cause\":\"rain\",\"effect\":\"wet\"}\n\n{\"id\":\"b\",\"cause\":\"sun\"}\n",
    )
    .unwrap();
    assert_eq!(record_line(load_pairs(&path).unwrap_err()), 3);
}

#[test]
fn duplicate_and_empty_records_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    fs::write(
        &path,
        "{\"id\":\"a\",\"cause\":\"rain\",\"effect\":\"wet\"}\n{\"id\":\"a\",\"cause\":\"sun\",\"effect\":\"dry\"}\n",
    )
    .unwrap();
    let err = load_pairs(&path).unwrap_err();
    assert!(err.to_string().contains("duplicate id `a`"), "{err}");
    assert_eq!(record_line(err), 2);

    fs::write(
        &path,
        "{\"id\":\"a\",\"cause\":\"  ?! \",\"effect\":\"wet\"}\n",
    )
    .unwrap();
    assert_eq!(record_line(load_pairs(&path).unwrap_err()), 1);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_pairs(Path::new("/nonexistent/pairs.jsonl")).unwrap_err();
    assert_eq!(err.kind(), "io");
}

#[test]
fn pair_group_defaults_to_id_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    fs::write(
        &path,
        "{\"id\":\"a\",\"cause\":\"rain\",\"effect\":\"wet\"}\n",
    )
    .unwrap();
    let pairs = load_pairs(&path).unwrap();
    assert_eq!(pairs[0].group_id, "a");

    let written = vec![
        CausalPair::new("x", "the storm hit", "roads flooded").with_group("g"),
        CausalPair::new("y", "prices rose", "demand fell").with_group("g"),
    ];
    write_pairs(&path, &written).unwrap();
    assert_eq!(load_pairs(&path).unwrap(), written);
}

#[test]
fn triplets_pools_and_sentences_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let triplets = vec![TripletRecord {
        id: "t".into(),
        cause: "a".into(),
        premise: "b".into(),
        effect: "c".into(),
    }];
    let p = dir.path().join("t.jsonl");
    write_triplets(&p, &triplets).unwrap();
    assert_eq!(load_triplets(&p).unwrap(), triplets);

    let pool = vec![
        PoolEntry {
            doc_id: "g".into(),
            text: "roads flooded".into(),
            gold_for: Some("q".into()),
        },
        PoolEntry {
            doc_id: "d0".into(),
            text: "sky cleared".into(),
            gold_for: None,
        },
    ];
    let p = dir.path().join("pool.jsonl");
    write_pool(&p, &pool).unwrap();
    assert_eq!(load_pool(&p).unwrap(), pool);

    let p = dir.path().join("s.txt");
    write_sentences(&p, &["one line", "another line"]).unwrap();
    assert_eq!(load_sentences(&p).unwrap(), ["one line", "another line"]);
}

#[test]
fn vocab_round_trips_and_rejects_gaps() {
    let vocab = build_vocab(&["the storm hit the coast"], 1);
    let mut buf = Vec::new();
    write_vocab_to(&mut buf, &vocab, Path::new("v")).unwrap();
    assert_eq!(read_vocab_from(&buf[..], Path::new("v")).unwrap(), vocab);

    let text = String::from_utf8(buf).unwrap();
    let gapped: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|&(i, _)| i != 3)
        .map(|(_, l)| l)
        .collect();
    assert!(read_vocab_from(gapped.join("\n").as_bytes(), Path::new("v")).is_err());
}

#[test]
fn embedding_file_round_trips_and_detects_damage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.emb");
    let header = EmbeddingHeader {
        n: 2,
        d: 3,
        similarity: "cosine".into(),
    };
    let mut w = EmbeddingWriter::create(&path, header.clone()).unwrap();
    w.push("a", &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(w.push("b", &[1.0]).unwrap_err().kind(), "integrity");
    w.push("b", &[0.5, -0.25, 0.0]).unwrap();
    w.finish().unwrap();

    let (h, ids, m) = load_matrix(&path).unwrap();
    assert_eq!(h, header);
    assert_eq!(ids, ["a", "b"]);
    assert_eq!(m.row(1), &[0.5, -0.25, 0.0]);

    let bytes = fs::read(&path).unwrap();
    let kind = |b: &[u8]| -> String {
        let r = EmbeddingReader::new(b, Path::new("x"));
        match r {
            Err(e) => e.kind().into(),
            Ok(r) => r
                .filter_map(Result::err)
                .map(|e| e.kind().to_string())
                .next()
                .unwrap_or_else(|| "ok".into()),
        }
    };
    assert_eq!(kind(&bytes), "ok");
    assert_eq!(kind(&bytes[..bytes.len() - 2]), "truncated");
    let mut extra = bytes.clone();
    extra.push(0);
    assert_eq!(kind(&extra), "integrity");
    let mut magic = bytes;
    magic[1] = b'x';
    assert_eq!(kind(&magic), "bad-magic");
}

#[test]
fn unfinished_embedding_writer_is_an_error() {
    let header = EmbeddingHeader {
        n: 2,
        d: 1,
        similarity: "dot".into(),
    };
    let mut w = EmbeddingWriter::new(Vec::new(), header, Path::new("x")).unwrap();
    w.push("a", &[1.0]).unwrap();
    assert_eq!(w.finish().unwrap_err().kind(), "integrity");
}

#[test]
fn manifest_round_trips_next_to_its_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "abc").unwrap();
    let mut m = RunManifest::new("train", &["--seed".into(), "3".into()]);
    m.seeds.push(3);
    m.input(&input).unwrap();
    let out = dir.path().join("model.bin");
    m.output(&out);
    let path = default_path(&out);
    assert!(path.to_string_lossy().ends_with("model.bin.manifest.json"));
    m.write(&path).unwrap();
    let loaded = RunManifest::load(&path).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(
        loaded.inputs.values().next().unwrap(),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn results_round_trip_exactly(
        scores in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 0..20),
        qid in "[a-z0-9_-]{1,12}",
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let results = vec![RetrievalResult {
            query_id: qid,
            hits: scores.iter().enumerate().map(|(i, &s)| Hit { doc_id: format!("d{i}"), score: s }).collect(),
        }];
        write_results(&path, &results).unwrap();
        prop_assert_eq!(load_results(&path).unwrap(), results);
    }

    #[test]
    fn pair_texts_survive_round_trip(cause in "\\PC{1,40}", effect in "\\PC{1,40}") {
        prop_assume!(!causal_core::text::normalize(&cause).is_empty());
        prop_assume!(!causal_core::text::normalize(&effect).is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let pairs = vec![CausalPair::new("id", cause, effect)];
        write_pairs(&path, &pairs).unwrap();
        prop_assert_eq!(load_pairs(&path).unwrap(), pairs);
    }
}
