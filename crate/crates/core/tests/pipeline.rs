use kernspace::baselines::{Baseline, BaselineKind};
use kernspace::dataset::{synthesize_corpus, Corpus, Split, SynthConfig, SynthMode};
use kernspace::eval::{evaluate, write_report, GroundTruth, Method, ModelPredictor};
use kernspace::features::{center_of_gravity, FeatureKind};
use kernspace::models::ModelKind;
use kernspace::par::Execution;
use kernspace::render::{compose_word, word_spaces};
use kernspace::training::{self, TrainConfig};

fn small(seed: u64, mode: SynthMode) -> Corpus {
    let mut cfg = SynthConfig::new(seed);
    cfg.image_size = 32;
    cfg.train_fonts = 24;
    cfg.val_fonts = 6;
    cfg.test_fonts = 6;
    cfg.mode = mode;
    let (manifest, records) = synthesize_corpus(&cfg, Execution::Parallel).unwrap();
    Corpus::from_records(manifest, records).unwrap()
}

fn peripheral(kind: ModelKind, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(kind, FeatureKind::Peripheral, 21);
    cfg.max_epochs = epochs;
    cfg.batch_size = 8;
    cfg
}

#[test]
fn training_reduces_validation_loss() {
    let data = small(1, SynthMode::A);
    for kind in [ModelKind::Setwise, ModelKind::Pairwise] {
        let out = training::train(&peripheral(kind, 8), &data, None).unwrap();
        let first = out.history[0].val_loss;
        assert!(
            out.checkpoint.best_val_loss < first,
            "{kind:?}: {first} -> {}",
            out.checkpoint.best_val_loss
        );
        assert_eq!(out.history[0].epoch, 0);
    }
}

#[test]
fn reported_val_loss_matches_evaluation() {
    let data = small(2, SynthMode::B);
    let out = training::train(&peripheral(ModelKind::Setwise, 4), &data, None).unwrap();
    let best = out.checkpoint.best_val_loss;
    let model = ModelPredictor::new(out.checkpoint).unwrap();
    let report = evaluate(
        &[Method::new("m", &model)],
        &data.split(Split::Val),
        Execution::Parallel,
    )
    .unwrap();
    assert!(
        (report.methods[0].mae - best).abs() < 1e-6,
        "{} vs {best}",
        report.methods[0].mae
    );
}

#[test]
fn max_steps_caps_updates_mid_epoch() {
    let data = small(3, SynthMode::A);
    let mut cfg = peripheral(ModelKind::Pairwise, 50);
    cfg.max_steps = Some(7);
    let out = training::train(&cfg, &data, None).unwrap();
    assert_eq!(out.steps, 7);
    assert_eq!(out.history.len(), 2);
}

#[test]
fn models_beat_nothing_and_baselines_rank_sensibly() {
    let data = small(4, SynthMode::A);
    let train = data.split(Split::Train);
    let test = data.split(Split::Test);
    let mono = Baseline::fit(BaselineKind::Monospace, &train).unwrap();
    let avg = Baseline::fit(BaselineKind::Average, &train).unwrap();
    let report = evaluate(
        &[
            Method::new("gt", &GroundTruth),
            Method::new("mono", &mono),
            Method::new("avg", &avg),
        ],
        &test,
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(report.method("gt").unwrap().mae, 0.0);
    assert_eq!(report.method("gt").unwrap().wins, test.len());
    assert!(report.method("avg").unwrap().mae <= report.method("mono").unwrap().mae);

    let dir = tempfile::tempdir().unwrap();
    write_report(&report, &test, dir.path()).unwrap();
    for file in [
        "report.json",
        "gt_mean.csv",
        "gt_variance.csv",
        "mae_mono.csv",
        "curve_avg.csv",
        "ae_gt.csv",
    ] {
        assert!(dir.path().join(file).is_file(), "{file}");
    }
}

#[test]
fn rendered_words_reproduce_table_spacing() {
    let data = small(5, SynthMode::A);
    for record in data.split(Split::Test) {
        let cats = [0usize, 3, 1, 7, 2, 9];
        let glyphs: Vec<_> = cats.iter().map(|&c| &record.glyphs[c]).collect();
        let spaces = word_spaces(&record.gt, &cats);
        let comp = compose_word(&glyphs, &spaces).unwrap();
        for k in 1..cats.len() {
            let placed = |i: usize| comp.placements[i] as f64 + center_of_gravity(glyphs[i]).unwrap();
            let distance = placed(k) - placed(k - 1);
            assert!(
                (distance - spaces[k - 1]).abs() <= 0.5 + 1e-9,
                "gap {k}: {distance} vs {}",
                spaces[k - 1]
            );
        }
        let inked = comp.pixels.iter().filter(|&&p| p == 0).count();
        let expected: usize = glyphs.iter().map(|g| g.ink_count()).sum();
        assert!(inked <= expected && inked > 0);
    }
}
