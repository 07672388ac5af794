use causal_core::corpus::PoolEntry;
use causal_core::encoder::{init_params, unk_vector};
use causal_core::index::{embed_pool, VectorIndex};
use causal_core::loss::SimilarityKind;
use causal_core::text::build_vocab;
use causal_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn batch_of_64_over_100k_equals_per_query_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (n, d) = (100_000, 16);
    let docs = random_matrix(n, d, &mut rng);
    let ids: Vec<String> = (0..n).map(|i| format!("doc{i:06}")).collect();
    let index = VectorIndex::from_matrix(ids, &docs, SimilarityKind::Dot, 4096).unwrap();
    let queries = random_matrix(64, d, &mut rng);
    let qids: Vec<String> = (0..64).map(|i| format!("q{i}")).collect();
    let batch = index.batch_top_k(&qids, &queries, 10).unwrap();
    for (i, r) in batch.iter().enumerate() {
        assert_eq!(r.query_id, qids[i]);
        assert_eq!(r.hits, index.top_k(queries.row(i), 10).unwrap());
    }
}

#[test]
fn embed_pool_is_pure_and_restartable() {
    let texts = ["the storm hit", "roads flooded", "", "?!"];
    let vocab = build_vocab(&texts, 1);
    let params = init_params(vocab.len(), 8, 4, 3).unwrap();
    let pool: Vec<PoolEntry> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| PoolEntry {
            doc_id: format!("p{i}"),
            text: t.to_string(),
            gold_for: None,
        })
        .collect();
    let first: Vec<_> = embed_pool(&pool, &params, &vocab, 64)
        .map(Result::unwrap)
        .collect();
    let second: Vec<_> = embed_pool(&pool, &params, &vocab, 64)
        .map(Result::unwrap)
        .collect();
    assert_eq!(first, second);
    let ids: Vec<&str> = first.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, ["p0", "p1", "p2", "p3"]);
    let unk = unk_vector(&params).unwrap();
    assert_eq!(first[2].1, unk);
    assert_eq!(first[3].1, unk);
}
