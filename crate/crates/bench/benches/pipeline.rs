//! Wall-clock benchmarks for the hot paths: matrix multiplication, the
//! tokenizer, the encoder forward pass, the joint loss with its backward
//! sweep, and CRF decoding.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use jointnlu::data::LabelMaps;
use jointnlu::encoder::EncoderConfig;
use jointnlu::model::{JointModel, LossMode, Variant};
use jointnlu::synth;
use jointnlu::tape::Tape;
use jointnlu::tensor::Tensor;
use jointnlu::tokenizer::{build_vocab, encode_example, TokenizedExample, Vocabulary};

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Tensor::new(shape, data)
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_tensor(&mut rng, vec![64, 128]);
    let b = random_tensor(&mut rng, vec![128, 128]);
    let mut group = c.benchmark_group("matmul_64x128x128");
    group.measurement_time(Duration::from_secs(2));
    group.bench_function("forward", |bencher| {
        bencher.iter(|| {
            let tape = Tape::new();
            let va = tape.constant(black_box(a.clone()));
            let vb = tape.constant(black_box(b.clone()));
            black_box(tape.value(tape.matmul(va, vb)))
        })
    });
    group.bench_function("forward_backward", |bencher| {
        bencher.iter(|| {
            let tape = Tape::new();
            let va = tape.leaf(black_box(a.clone()), true);
            let vb = tape.leaf(black_box(b.clone()), true);
            let loss = tape.sum(tape.matmul(va, vb));
            black_box(tape.backward(loss))
        })
    });
    group.finish();
}

struct Pipeline {
    vocab: Vocabulary,
    labels: LabelMaps,
    examples: Vec<TokenizedExample>,
    sentence: Vec<String>,
}

fn pipeline_fixture() -> Pipeline {
    let records = synth::generate(64, 5);
    let corpus: Vec<Vec<String>> = records.iter().map(|r| r.words.clone()).collect();
    let vocab = build_vocab(&corpus, 400).expect("vocab");
    let labels = LabelMaps::from_records(&records);
    let examples: Vec<TokenizedExample> = records
        .iter()
        .take(8)
        .map(|r| {
            encode_example(&r.words, Some(&r.slots), Some(&r.intent), &vocab, &labels, 50)
                .expect("encode")
        })
        .collect();
    let sentence = records[0].words.clone();
    Pipeline {
        vocab,
        labels,
        examples,
        sentence,
    }
}

fn bench_tokenizer(c: &mut Criterion) {
    let fx = pipeline_fixture();
    c.bench_function("tokenizer_encode_example", |bencher| {
        bencher.iter(|| {
            encode_example(
                black_box(&fx.sentence),
                None,
                None,
                &fx.vocab,
                &fx.labels,
                50,
            )
            .expect("encode")
        })
    });
}

fn bench_joint_model(c: &mut Criterion) {
    let fx = pipeline_fixture();
    let config = EncoderConfig::desk_default(fx.vocab.len());
    let refs: Vec<&TokenizedExample> = fx.examples.iter().collect();
    let pad = fx.vocab.pad_id();

    let mut group = c.benchmark_group("joint_batch8_desk_config");
    group.sample_size(10);
    group.measurement_time(Duration::from_secs(3));
    group.warm_up_time(Duration::from_millis(500));
    for variant in [Variant::Softmax, Variant::Crf] {
        let model = JointModel::new(
            config.clone(),
            variant,
            fx.labels.intents.len(),
            fx.labels.slots.len(),
            9,
        )
        .expect("model");
        group.bench_with_input(
            BenchmarkId::new("loss_forward_backward", format!("{:?}", variant)),
            &model,
            |bencher, model| {
                bencher.iter(|| {
                    let tape = Tape::new();
                    let vars = model.params.inject(&tape, true);
                    let loss = model
                        .batch_loss(&tape, &vars, &refs, pad, None, LossMode::Joint)
                        .expect("loss");
                    black_box(tape.backward(loss))
                })
            },
        );
    }
    let model = JointModel::new(
        config,
        Variant::Softmax,
        fx.labels.intents.len(),
        fx.labels.slots.len(),
        9,
    )
    .expect("model");
    group.bench_function("decode", |bencher| {
        bencher.iter(|| black_box(model.decode_batch(&refs, pad)))
    });
    group.finish();
}

fn bench_crf(c: &mut Criterion) {
    use jointnlu::crf::viterbi_decode;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Sequence length and label count shaped like a real slot-filling split.
    let (n, l) = (30, 72);
    let emissions = random_tensor(&mut rng, vec![n, l]);
    let transitions = random_tensor(&mut rng, vec![l, l]);
    let start: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
    let end: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
    c.bench_function("crf_viterbi_n30_l72", |bencher| {
        bencher.iter(|| {
            black_box(viterbi_decode(
                black_box(&emissions),
                black_box(&transitions),
                &start,
                &end,
            ))
        })
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_tokenizer,
    bench_joint_model,
    bench_crf
);
criterion_main!(benches);
