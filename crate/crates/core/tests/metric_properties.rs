use std::collections::BTreeMap;

use npcforge::memory::{EmbeddingVector, RetrievalIndex, RetrievalRecord};
use npcforge::metrics::{
    aggregate, bleu4, embed_f1, key, word_f1, TokenEmbeddingSequence, TokenSequence, Weights,
};
use npcforge::text::split_tokens;
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "sword", "gold"]), 0..8)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn vectors(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-3.0f64..3.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3)),
        1..6,
    )
}

fn seq_of(rows: &[Vec<f64>]) -> TokenEmbeddingSequence {
    TokenEmbeddingSequence::from_vectors(rows.iter().map(|r| EmbeddingVector::new(r.clone()).unwrap()).collect())
        .unwrap()
}

proptest! {
    #[test]
    fn word_f1_is_bounded_and_symmetric(a in words(), b in words()) {
        let (x, y) = (TokenSequence::new(a), TokenSequence::new(b));
        let f = word_f1(&x, &y);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f - word_f1(&y, &x)).abs() < 1e-12);
    }

    #[test]
    fn deleting_a_shared_token_never_helps(a in words(), b in words(), pick in 0usize..8) {
        let reference = TokenSequence::new(b.clone());
        let before = word_f1(&TokenSequence::new(a.clone()), &reference);
        let shared: Vec<usize> = (0..a.len()).filter(|&i| b.contains(&a[i])).collect();
        prop_assume!(!shared.is_empty());
        let mut smaller = a.clone();
        smaller.remove(shared[pick % shared.len()]);
        prop_assert!(word_f1(&TokenSequence::new(smaller), &reference) <= before + 1e-12);
    }

    #[test]
    fn bleu_identity_and_bounds(a in words(), b in words()) {
        let x = TokenSequence::new(a);
        let s = bleu4(&x, &TokenSequence::new(b)).score;
        prop_assert!((0.0..=1.0).contains(&s));
        if x.len() >= 4 {
            prop_assert!((bleu4(&x, &x).score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_f1_is_symmetric(a in vectors(3), b in vectors(3)) {
        let (x, y) = (seq_of(&a), seq_of(&b));
        let xy = embed_f1(&x, &y).unwrap();
        let yx = embed_f1(&y, &x).unwrap();
        prop_assert!((xy.f1 - yx.f1).abs() < 1e-12);
        prop_assert!((xy.precision - yx.recall).abs() < 1e-12);
        prop_assert!((embed_f1(&x, &x).unwrap().f1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn retrieval_is_sorted_and_self_query_wins(rows in vectors(4), k in 1usize..8) {
        let mut index = RetrievalIndex::new("p", 4);
        for (i, r) in rows.iter().enumerate() {
            index.push(RetrievalRecord {
                id: format!("r{i}"),
                player_text: String::new(),
                npc_text: String::new(),
                gold_functions: None,
                embedding: EmbeddingVector::new(r.clone()).unwrap(),
                source: String::new(),
            }).unwrap();
        }
        let q = EmbeddingVector::new(rows[0].clone()).unwrap();
        let hits = index.retrieve(&q, k, -1.0).unwrap();
        prop_assert_eq!(hits.len(), k.min(rows.len()));
        prop_assert!((hits[0].similarity - 1.0).abs() < 1e-9);
        prop_assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn aggregate_of_perfect_scores_is_one(w1 in 0.0f64..1.0, w2 in 0.0f64..1.0) {
        let weights = Weights {
            task1: [(key::ACC_NAME.to_string(), w1), (key::ACC_ARGS.to_string(), 1.0 - w1)].into(),
            task2: [(key::BLEU4.to_string(), w2), (key::WORD_F1.to_string(), 1.0 - w2)].into(),
            overall: [("task1".to_string(), 0.5), ("task2".to_string(), 0.5)].into(),
        };
        let ones: BTreeMap<String, f64> = [key::ACC_NAME, key::ACC_ARGS, key::BLEU4, key::WORD_F1]
            .into_iter()
            .map(|k| (k.to_string(), 1.0))
            .collect();
        let a = aggregate(&ones, &ones, &weights).unwrap();
        prop_assert!((a.overall - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tokenize_is_stable_on_joined_output(text in "[A-Za-z' ,.!?]{0,40}") {
        let once = TokenSequence::tokenize(&text);
        let again = TokenSequence::tokenize(&once.tokens().join(" "));
        prop_assert_eq!(once.tokens(), again.tokens());
        prop_assert!(split_tokens(&text).iter().all(|t| !t.is_empty()));
    }
}

#[test]
fn tokenizer_golden() {
    assert_eq!(TokenSequence::tokenize("Hello, world").tokens(), ["hello", ",", "world"]);
    assert_eq!(TokenSequence::tokenize("I'm sure").tokens(), ["i", "'m", "sure"]);
    assert!(TokenSequence::tokenize("").is_empty());
}
