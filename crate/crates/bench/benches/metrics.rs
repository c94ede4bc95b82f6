use criterion::{criterion_group, criterion_main, Criterion};
use npcforge::memory::HashEmbedder;
use npcforge::metrics::{bleu4, embed_f1, word_f1, TokenEmbeddingSequence, TokenSequence};
use npcforge_bench::{sentence, VOCAB};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::hint::black_box;

fn pair(rng: &mut StdRng, len: usize) -> (String, String) {
    let mut pick = || sentence((0..len).map(|_| rng.random_range(0..VOCAB.len())).collect::<Vec<_>>());
    (pick(), pick())
}

fn metrics(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(7);
    let (a, b) = pair(&mut rng, 40);
    let (ta, tb) = (TokenSequence::tokenize(&a), TokenSequence::tokenize(&b));
    c.bench_function("tokenize_40", |bch| bch.iter(|| TokenSequence::tokenize(black_box(&a))));
    c.bench_function("bleu4_40", |bch| bch.iter(|| bleu4(black_box(&ta), black_box(&tb))));
    c.bench_function("word_f1_40", |bch| bch.iter(|| word_f1(black_box(&ta), black_box(&tb))));

    let provider = HashEmbedder::new(HashEmbedder::DEFAULT_DIM);
    let ea = TokenEmbeddingSequence::embed(&provider, ta.clone()).unwrap();
    let eb = TokenEmbeddingSequence::embed(&provider, tb.clone()).unwrap();
    c.bench_function("embed_f1_40", |bch| bch.iter(|| embed_f1(black_box(&ea), black_box(&eb)).unwrap()));
    c.bench_function("embed_tokens_40", |bch| {
        bch.iter(|| TokenEmbeddingSequence::embed(&provider, black_box(ta.clone())).unwrap())
    });
}

criterion_group!(benches, metrics);
criterion_main!(benches);
