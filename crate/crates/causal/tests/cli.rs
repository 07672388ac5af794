use std::fs;
use std::path::{Path, PathBuf};

use causal_core::corpus::{CausalPair, PoolEntry, TripletRecord};
use causal_retrieval::checkpoint;
use causal_retrieval::cli::main_with_args;
use causal_retrieval::formats::{
    load_pairs, load_results, write_pairs, write_pool, write_triplets,
};
use causal_retrieval::report::{read_json, AblationTable, MetricsJson};

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["causal-retrieval".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    main_with_args(argv)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Synthetic pairs split into `data/` under `dir`.
fn prepared(dir: &Path) -> PathBuf {
    let pairs = p(dir, "pairs.jsonl");
    assert_eq!(
        run(&["synth", "--n-pairs", "240", "--seed", "3", "--out", &pairs]),
        0
    );
    let data = dir.join("data");
    assert_eq!(
        run(&[
            "prepare",
            "--pairs",
            &pairs,
            "--seed",
            "3",
            "--out-dir",
            data.to_str().unwrap()
        ]),
        0
    );
    data
}

fn quick_train(dir: &Path, data: &Path, out: &str, extra: &[&str]) -> String {
    let model = p(dir, out);
    let train = p(data, "train.jsonl");
    let val = p(data, "val.jsonl");
    let mut args = vec![
        "train",
        "--train",
        &train,
        "--val",
        &val,
        "--out",
        &model,
        "--epochs",
        "2",
        "--semantic-epochs",
        "1",
        "--d-emb",
        "16",
        "--d",
        "16",
    ];
    args.extend_from_slice(extra);
    assert_eq!(run(&args), 0);
    model
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "r.jsonl");
    assert_eq!(
        run(&[
            "retrieve",
            "--pool-embeddings",
            "x.emb",
            "--query-embeddings",
            "q.emb",
            "--out",
            &out
        ]),
        2
    );
    assert_eq!(run(&["no-such-command"]), 2);
    let missing = p(dir.path(), "missing.jsonl");
    let data = p(dir.path(), "data");
    assert_eq!(
        run(&["prepare", "--pairs", &missing, "--out-dir", &data]),
        3
    );

    let bad = p(dir.path(), "bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    assert_eq!(run(&["prepare", "--pairs", &bad, "--out-dir", &data]), 3);
}

#[test]
fn prepare_turns_triplets_into_grouped_pairs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let triplets: Vec<TripletRecord> = (0..40)
        .map(|i| TripletRecord {
            id: format!("t{i}"),
            cause: format!("cause number {i}"),
            premise: format!("premise number {i}"),
            effect: format!("effect number {i}"),
        })
        .collect();
    let input = p(dir.path(), "triplets.jsonl");
    write_triplets(Path::new(&input), &triplets).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(
            run(&[
                "prepare",
                "--triplets",
                &input,
                "--seed",
                "9",
                "--out-dir",
                out.to_str().unwrap()
            ]),
            0
        );
    }
    let mut total = 0;
    for name in ["train.jsonl", "val.jsonl", "test.jsonl", "pool.jsonl"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    for name in ["train.jsonl", "val.jsonl", "test.jsonl"] {
        let pairs = load_pairs(&a.join(name)).unwrap();
        total += pairs.len();
        // Both pairs of a triplet land in the same split.
        for pair in &pairs {
            assert_eq!(
                pairs.iter().filter(|q| q.group_id == pair.group_id).count(),
                2
            );
        }
    }
    assert_eq!(total, 80);
}

#[test]
fn training_is_reproducible_and_records_beta() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepared(dir.path());
    let a = quick_train(
        dir.path(),
        &data,
        "a.bin",
        &["--beta", "0.5", "--seed", "4"],
    );
    let b = quick_train(
        dir.path(),
        &data,
        "b.bin",
        &["--beta", "0.5", "--seed", "4"],
    );
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let header = checkpoint::read_header(Path::new(&a)).unwrap();
    assert_eq!(header.beta, 0.5);
    assert_eq!(header.seed, 4);
    assert!(Path::new(&format!("{a}.manifest.json")).exists());
}

#[test]
fn eval_over_three_seeds_reports_each_and_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepared(dir.path());
    let pool = data.join("pool.jsonl");
    let test = data.join("test.jsonl");
    let emb = p(dir.path(), "pool.emb");
    let mut results = Vec::new();
    let mut models = Vec::new();
    for seed in ["1", "2", "3"] {
        let model = quick_train(
            dir.path(),
            &data,
            &format!("m{seed}.bin"),
            &["--seed", seed],
        );
        assert_eq!(
            run(&[
                "embed",
                "--checkpoint",
                &model,
                "--pool",
                pool.to_str().unwrap(),
                "--out",
                &emb
            ]),
            0
        );
        let out = p(dir.path(), &format!("r{seed}.jsonl"));
        let code = run(&[
            "retrieve",
            "--direction",
            "cause2effect",
            "--pool-embeddings",
            &emb,
            "--checkpoint",
            &model,
            "--queries",
            test.to_str().unwrap(),
            "--k",
            "10",
            "--out",
            &out,
        ]);
        assert_eq!(code, 0);
        results.push(out);
        models.push(model);
    }
    let metrics = p(dir.path(), "metrics.json");
    let mut args = vec![
        "eval",
        "--pool",
        pool.to_str().unwrap(),
        "--seeds",
        "1,2,3",
        "--ks",
        "1,10",
        "--out",
        &metrics,
    ];
    args.push("--results");
    args.extend(results.iter().map(String::as_str));
    args.push("--checkpoints");
    args.extend(models.iter().map(String::as_str));
    assert_eq!(run(&args), 0);

    let m: MetricsJson = read_json(Path::new(&metrics)).unwrap();
    assert_eq!(m.seeds.len(), 3);
    assert_eq!(
        m.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(),
        [1, 2, 3]
    );
    let mean: f64 = m.seeds.iter().map(|s| s.hit[&10]).sum::<f64>() / 3.0;
    assert!((m.hit[&10] - mean).abs() < 1e-12);
    assert!(m.mrr[&10] <= m.hit[&10]);
}

#[test]
fn ablate_with_one_beta_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepared(dir.path());
    let out = p(dir.path(), "ablation.json");
    let split = |n: &str| p(&data, n);
    let code = run(&[
        "ablate",
        "--train",
        &split("train.jsonl"),
        "--val",
        &split("val.jsonl"),
        "--test",
        &split("test.jsonl"),
        "--betas",
        "0.5",
        "--epochs",
        "1",
        "--semantic-epochs",
        "1",
        "--d-emb",
        "8",
        "--d",
        "8",
        "--out",
        &out,
    ]);
    assert_eq!(code, 0);
    let table: AblationTable = read_json(Path::new(&out)).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].beta, 0.5);
}

#[test]
fn export_of_no_pairs_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepared(dir.path());
    let model = quick_train(dir.path(), &data, "m.bin", &[]);
    let empty = p(dir.path(), "empty.jsonl");
    write_pairs(Path::new(&empty), &[]).unwrap();
    let tsv = p(dir.path(), "e.tsv");
    assert_eq!(
        run(&[
            "export-embeddings",
            "--checkpoint",
            &model,
            "--pairs",
            &empty,
            "--out",
            &tsv
        ]),
        0
    );
    let text = fs::read_to_string(&tsv).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("id\trole\tv1\t"));
    assert!(text.trim_end().ends_with("\tv16"));

    let one = p(dir.path(), "one.jsonl");
    write_pairs(
        Path::new(&one),
        &[CausalPair::new("x", "rain fell", "roads flooded")],
    )
    .unwrap();
    assert_eq!(
        run(&[
            "export-embeddings",
            "--checkpoint",
            &model,
            "--pairs",
            &one,
            "--out",
            &tsv
        ]),
        0
    );
    let roles: Vec<String> = fs::read_to_string(&tsv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().to_owned())
        .collect();
    assert_eq!(
        roles,
        ["cause", "effect", "semantic_cause", "semantic_effect"]
    );
}

#[test]
fn single_gold_pool_with_k1_returns_the_gold() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepared(dir.path());
    let model = quick_train(dir.path(), &data, "m.bin", &[]);
    let test = load_pairs(&data.join("test.jsonl")).unwrap();
    let query = &test[0];
    let pool = p(dir.path(), "pool1.jsonl");
    write_pool(
        Path::new(&pool),
        &[PoolEntry {
            doc_id: query.id.clone(),
            text: query.effect_text.clone(),
            gold_for: Some(query.id.clone()),
        }],
    )
    .unwrap();
    let queries = p(dir.path(), "q.jsonl");
    write_pairs(Path::new(&queries), std::slice::from_ref(query)).unwrap();
    let emb = p(dir.path(), "pool1.emb");
    assert_eq!(
        run(&[
            "embed",
            "--checkpoint",
            &model,
            "--pool",
            &pool,
            "--out",
            &emb
        ]),
        0
    );
    let out = p(dir.path(), "r.jsonl");
    let code = run(&[
        "retrieve",
        "--direction",
        "cause2effect",
        "--pool-embeddings",
        &emb,
        "--checkpoint",
        &model,
        "--queries",
        &queries,
        "--k",
        "1",
        "--out",
        &out,
    ]);
    assert_eq!(code, 0);
    let results = load_results(Path::new(&out)).unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0].hits.len(), 1);
    assert_eq!(results[0].hits[0].doc_id, query.id);
}
