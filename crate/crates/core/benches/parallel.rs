use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kernspace::dataset::{synthesize_corpus, Corpus, Split, SynthConfig};
use kernspace::eval::{evaluate, GroundTruth, Method};
use kernspace::features::{Encoder, EncoderConfig, FeatureExtractor};
use kernspace::models::{ModelConfig, SetwiseConfig, SpacingModel};
use kernspace::par::Execution;
use kernspace::training::{batch_gradients, prepare_fonts, Batch};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn corpus() -> Corpus {
    let mut cfg = SynthConfig::new(1);
    cfg.train_fonts = 32;
    cfg.val_fonts = 4;
    cfg.test_fonts = 4;
    let (manifest, records) = synthesize_corpus(&cfg, Execution::Parallel).unwrap();
    Corpus::from_records(manifest, records).unwrap()
}

fn bench(c: &mut Criterion) {
    let data = corpus();
    let train = data.split(Split::Train);
    let mut config = EncoderConfig::new(data.image_size(), 32, data.n_categories());
    config.channels = vec![8, 16, 32, 32];
    let mut encoder = Encoder::new(config, 1);
    encoder.freeze();
    let extractor = FeatureExtractor::Encoder(encoder);

    let mut group = c.benchmark_group("encoder_features");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| prepare_fonts(&train[..8], &extractor, exec).unwrap())
        });
    }
    group.finish();

    let fonts = prepare_fonts(&train, &extractor, Execution::Parallel).unwrap();
    let model =
        SpacingModel::<f32>::init(ModelConfig::Setwise(SetwiseConfig::new(32, data.n_categories())), 1).unwrap();
    let batch = Batch::Fonts((0..fonts.len()).collect());
    let mut group = c.benchmark_group("setwise_batch_gradients");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| batch_gradients(&model, &fonts, &batch, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("evaluate");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(&[Method::new("gt", &GroundTruth)], &train, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
