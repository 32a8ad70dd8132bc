//! Acceptance criteria 1–9, run in order with one PASS/FAIL line each.
//!
//! Lines go straight to the stderr handle so they show without
//! `--nocapture`. The slow learning criteria (2 and 3) take a few minutes.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kernspace::baselines::{blank_area, fit_average, Baseline, BaselineKind};
use kernspace::dataset::{
    generate_synthetic_corpus, load_font_record, save_font_record, synthesize_corpus, Corpus, FontRecord, GlyphImage,
    KerningTable, ShapeSet, Split, Style, SynthConfig, SynthMode,
};
use kernspace::eval::{evaluate, table_mae, GroundTruth, Method, ModelPredictor, TablePredictor};
use kernspace::features::{center_of_gravity, peripheral_feature, pretrain_encoder, FeatureKind, PretrainConfig};
use kernspace::models::{setwise_forward, ModelConfig, ModelKind, SetwiseConfig, SpacingModel};
use kernspace::par::{self, Execution};
use kernspace::pgm;
use kernspace::training::{
    self, gradcheck_tiny, load_checkpoint, load_encoder, save_checkpoint, save_encoder, EncoderCheckpoint, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn corpus(cfg: &SynthConfig) -> Corpus {
    let (manifest, records) = synthesize_corpus(cfg, Execution::Parallel).unwrap();
    Corpus::from_records(manifest, records).unwrap()
}

fn mean_gt(fonts: &[&FontRecord]) -> f64 {
    fonts.iter().map(|r| r.gt.mean()).sum::<f64>() / fonts.len() as f64
}

fn method_mae(predictor: &dyn TablePredictor, fonts: &[&FontRecord]) -> f64 {
    evaluate(&[Method::new("m", predictor)], fonts, Execution::Parallel)
        .unwrap()
        .methods[0]
        .mae
}

fn random_glyph(rng: &mut ChaCha8Rng, category: usize, size: usize) -> GlyphImage {
    let x0 = rng.gen_range(0..size - 2);
    let y0 = rng.gen_range(0..size - 2);
    let x1 = rng.gen_range(x0 + 1..size);
    let y1 = rng.gen_range(y0 + 1..size);
    let density = rng.gen_range(0.2..1.0);
    let mut ink: Vec<bool> = (0..size * size)
        .map(|k| {
            let (x, y) = (k % size, k / size);
            (x0..=x1).contains(&x) && (y0..=y1).contains(&y) && rng.gen_bool(density)
        })
        .collect();
    ink[y0 * size + x0] = true;
    GlyphImage::new(category, size, ink)
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let pw = gradcheck_tiny(ModelKind::Pairwise, 2024).unwrap();
    let sw = gradcheck_tiny(ModelKind::Setwise, 2024).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pw.max_rel_error <= 1e-5 && sw.max_rel_error <= 1e-5 && secs < 60.0,
        format!(
            "pairwise max rel err {:.2e} ({} probes), setwise {:.2e} ({} probes), {secs:.1}s",
            pw.max_rel_error, pw.probes, sw.max_rel_error, sw.probes
        ),
    )
}

fn synthetic_learning() -> Outcome {
    par::with_threads(Some(1), || {
        let start = Instant::now();
        let data = corpus(&SynthConfig::new(11));
        let train = data.split(Split::Train);
        let (encoder, pre) = pretrain_encoder(&train, &data.split(Split::Val), &PretrainConfig::new(11)).unwrap();
        let mut cfg = TrainConfig::new(ModelKind::Setwise, FeatureKind::Encoder, 11);
        cfg.max_epochs = 300;
        let out = training::train(&cfg, &data, Some(&encoder)).unwrap();
        let model = ModelPredictor::new(out.checkpoint).unwrap();
        let mono = Baseline::fit(BaselineKind::Monospace, &train).unwrap();
        let test = data.split(Split::Test);
        let (mae, mono_mae, mean) = (method_mae(&model, &test), method_mae(&mono, &test), mean_gt(&test));
        let secs = start.elapsed().as_secs_f64();
        outcome(
            mae <= 0.08 * mean && mae < mono_mae && secs <= 1800.0,
            format!(
                "setwise test MAE {mae:.3} = {:.2}% of mean gt {mean:.2} (limit 8%), monospace {mono_mae:.3}, \
                 encoder acc {:.3}, {secs:.0}s single-threaded",
                100.0 * mae / mean,
                pre.best_accuracy
            ),
        )
    })
}

/// Both models get the same number of optimizer updates at batch size 64.
const STEP_BUDGET: u64 = 1200;

fn setwise_advantage() -> Outcome {
    let mut synth = SynthConfig::new(12);
    synth.mode = SynthMode::B;
    let data = corpus(&synth);
    let (encoder, _) = pretrain_encoder(
        &data.split(Split::Train),
        &data.split(Split::Val),
        &PretrainConfig::new(12),
    )
    .unwrap();
    let test = data.split(Split::Test);
    let mut results = Vec::new();
    for kind in [ModelKind::Setwise, ModelKind::Pairwise] {
        let mut cfg = TrainConfig::new(kind, FeatureKind::Encoder, 12);
        cfg.max_steps = Some(STEP_BUDGET);
        let start = Instant::now();
        let out = training::train(&cfg, &data, Some(&encoder)).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let mae = method_mae(&ModelPredictor::new(out.checkpoint).unwrap(), &test);
        results.push((mae, out.steps, secs));
    }
    let (sw, pw) = (results[0], results[1]);
    let gain = 1.0 - sw.0 / pw.0;
    outcome(
        gain >= 0.10,
        format!(
            "mode B, {STEP_BUDGET} updates each: setwise MAE {:.3} ({:.0}s), pairwise {:.3} ({:.0}s), \
             setwise {:.1}% lower (need 10%)",
            sw.0,
            sw.2,
            pw.0,
            pw.2,
            100.0 * gain
        ),
    )
}

fn optical_sanity() -> Outcome {
    let mut synth = SynthConfig::new(13);
    synth.shapes = ShapeSet::Bars;
    let data = corpus(&synth);
    let optical = Baseline::fit(BaselineKind::Optical, &data.split(Split::Train)).unwrap();
    let mae = method_mae(&optical, &data.split(Split::Test));
    outcome(mae <= 2.0, format!("optical MAE on bars corpus {mae:.3} px (limit 2)"))
}

fn brute_cog(g: &GlyphImage) -> f64 {
    let (mut sum, mut count) = (0.0, 0.0);
    for y in 0..g.size() {
        for x in 0..g.size() {
            if g.is_ink(x, y) {
                sum += x as f64;
                count += 1.0;
            }
        }
    }
    sum / count
}

/// Empty rows report a full-width gap, H/H.
fn brute_peripheral(g: &GlyphImage) -> Vec<f64> {
    let h = g.size();
    let mut left = vec![1.0; h];
    let mut right = left.clone();
    for y in 0..h {
        if let Some(x) = (0..h).find(|&x| g.is_ink(x, y)) {
            left[y] = x as f64 / h as f64;
        }
        if let Some(x) = (0..h).rev().find(|&x| g.is_ink(x, y)) {
            right[y] = (h - 1 - x) as f64 / h as f64;
        }
    }
    left.extend(right);
    left
}

/// Composites both glyphs on one canvas with the right glyph `k` columns to
/// the right of the left one, then counts blank cells between facing ink in
/// every row inked by both.
fn brute_blank_cells(left: &GlyphImage, right: &GlyphImage, k: i64) -> usize {
    let h = left.size() as i64;
    let width = (4 * h) as usize;
    let base = h;
    let mut total = 0;
    for y in 0..left.size() {
        let mut canvas = vec![0u8; width];
        for x in 0..left.size() {
            if left.is_ink(x, y) {
                canvas[(base + x as i64) as usize] |= 1;
            }
            if right.is_ink(x, y) {
                canvas[(base + k + x as i64) as usize] |= 2;
            }
        }
        let r = canvas.iter().rposition(|c| c & 1 != 0);
        let l = canvas.iter().position(|c| c & 2 != 0);
        if let (Some(r), Some(l)) = (r, l) {
            total += (r + 1..l.max(r + 1)).filter(|&c| canvas[c] == 0).count();
        }
    }
    total
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 150;
    let mut failures = Vec::new();

    for t in 0..trials {
        let size = [32, 64][t % 2];
        let g = random_glyph(&mut rng, 0, size);
        if center_of_gravity(&g).unwrap() != brute_cog(&g) {
            failures.push(format!("center_of_gravity trial {t}"));
        }
        if peripheral_feature(&g) != brute_peripheral(&g) {
            failures.push(format!("peripheral_feature trial {t}"));
        }
    }

    for t in 0..trials {
        let a = random_glyph(&mut rng, 0, 32);
        let b = random_glyph(&mut rng, 1, 32);
        let k: i64 = rng.gen_range(-8..40);
        let s = k as f64 + center_of_gravity(&b).unwrap() - center_of_gravity(&a).unwrap();
        let area = blank_area(&a, &b, s).unwrap();
        if (area - brute_blank_cells(&a, &b, k) as f64).abs() > 1e-9 {
            failures.push(format!("blank_area trial {t}"));
        }
    }

    for t in 0..trials {
        let n = rng.gen_range(1..6);
        let fonts: Vec<FontRecord> = (0..rng.gen_range(1..6))
            .map(|f| FontRecord {
                font_id: format!("f{f}"),
                family_id: format!("f{f}"),
                style: None,
                glyphs: (0..n)
                    .map(|c| GlyphImage::from_fn(c, 32, |x, y| x == 3 + c && y > 4))
                    .collect(),
                gt: KerningTable::from_fn(n, |_, _| rng.gen_range(-10.0..60.0)).unwrap(),
                synthetic: None,
            })
            .collect();
        let refs: Vec<&FontRecord> = fonts.iter().collect();
        let avg = fit_average(&refs).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut sum = 0.0;
                for f in &fonts {
                    sum += f.gt.get(i, j);
                }
                if (avg.get(i, j) - sum / fonts.len() as f64).abs() > 1e-9 {
                    failures.push(format!("fit_average trial {t}"));
                }
            }
        }

        let pred = KerningTable::from_fn(n, |_, _| rng.gen_range(-10.0..60.0)).unwrap();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                sum += (pred.get(i, j) - fonts[0].gt.get(i, j)).abs();
            }
        }
        if (table_mae(&pred, &fonts[0].gt).unwrap() - sum / (n * n) as f64).abs() > 1e-9 {
            failures.push(format!("table_mae trial {t}"));
        }
    }
    failures.dedup();
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("5 functions × {trials} random inputs agree with brute force")
        } else {
            format!("mismatches: {}", failures.join(", "))
        },
    )
}

fn permutation_equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 7;
    let model = SpacingModel::<f32>::init(ModelConfig::Setwise(SetwiseConfig::new(16, n)), 6).unwrap();
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let base = setwise_forward(&model, &features).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&p| features[p].clone()).collect();
        let out = setwise_forward(&model, &permuted).unwrap();
        let expected = base.permuted(&perm);
        for (a, b) in out.values().iter().zip(expected.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-5, format!("20 permutations, max abs diff {worst:.2e}"))
}

struct Noisy {
    seed: u64,
    spread: f64,
}

impl TablePredictor for Noisy {
    fn predict(&self, record: &FontRecord) -> Result<KerningTable, kernspace::eval::EvalError> {
        let salt: u64 = record.font_id.bytes().map(u64::from).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt);
        Ok(KerningTable::from_fn(record.n(), |i, j| {
            record.gt.get(i, j) + rng.gen_range(-self.spread..self.spread)
        })
        .unwrap())
    }
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let styles = [Some(Style::Serif), Some(Style::Display), None, Some(Style::Handwriting)];
    let fonts: Vec<FontRecord> = (0..12)
        .map(|f| FontRecord {
            font_id: format!("font{f}"),
            family_id: format!("font{f}"),
            style: styles[f % styles.len()],
            glyphs: (0..5)
                .map(|c| GlyphImage::from_fn(c, 64, |x, y| x == 10 + c && y > 9))
                .collect(),
            gt: KerningTable::from_fn(5, |_, _| rng.gen_range(10.0..50.0)).unwrap(),
            synthetic: None,
        })
        .collect();
    let refs: Vec<&FontRecord> = fonts.iter().collect();
    let (a, b) = (Noisy { seed: 1, spread: 12.0 }, Noisy { seed: 2, spread: 20.0 });
    let report = evaluate(
        &[Method::new("a", &a), Method::new("b", &b), Method::new("a_again", &a)],
        &refs,
        Execution::Parallel,
    )
    .unwrap();
    let mut problems = Vec::new();
    for m in &report.methods {
        let pairs: usize = m.per_style.values().map(|s| s.pairs).sum();
        let recombined: f64 = m.per_style.values().map(|s| s.mae * s.pairs as f64).sum::<f64>() / pairs as f64;
        if (recombined - m.mae).abs() > 1e-9 {
            problems.push(format!(
                "{}: per-style recombination off by {:e}",
                m.name,
                recombined - m.mae
            ));
        }
        let cells: Vec<f64> = m.per_pair_mae.iter().flatten().copied().collect();
        if (cells.iter().sum::<f64>() / cells.len() as f64 - m.mae).abs() > 1e-9 {
            problems.push(format!("{}: per-pair matrix mean differs", m.name));
        }
        if m.curve.windows(2).any(|w| w[1].fraction < w[0].fraction)
            || m.curve.iter().any(|p| !(0.0..=1.0).contains(&p.fraction))
        {
            problems.push(format!("{}: curve not monotone in [0,1]", m.name));
        }
    }
    let wins: Vec<usize> = report.methods.iter().map(|m| m.wins).collect();
    if wins[0] != wins[2] || wins.iter().sum::<usize>() < fonts.len() {
        problems.push(format!("tie rule violated: wins {wins:?}"));
    }
    let exact = evaluate(
        &[
            Method::new("gt", &GroundTruth),
            Method::new("gt2", &GroundTruth),
            Method::new("a", &a),
        ],
        &refs,
        Execution::Parallel,
    )
    .unwrap();
    let exact_wins: Vec<usize> = exact.methods.iter().map(|m| m.wins).collect();
    if exact_wins != vec![fonts.len(), fonts.len(), 0] {
        problems.push(format!("constructed tie gave wins {exact_wins:?}"));
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "styles {}, wins {wins:?} on {} fonts, tie wins {exact_wins:?}",
                report.methods[0].per_style.len(),
                fonts.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn small_synth(seed: u64) -> SynthConfig {
    let mut cfg = SynthConfig::new(seed);
    cfg.image_size = 32;
    cfg.train_fonts = 16;
    cfg.val_fonts = 4;
    cfg.test_fonts = 4;
    cfg
}

fn quick_train(data: &Corpus, exec: Execution) -> training::TrainOutcome {
    let mut cfg = TrainConfig::new(ModelKind::Setwise, FeatureKind::Peripheral, 3);
    cfg.max_epochs = 5;
    cfg.batch_size = 4;
    cfg.execution = exec;
    training::train(&cfg, data, None).unwrap()
}

fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();

    let data = corpus(&small_synth(8));
    let out = quick_train(&data, Execution::Parallel);
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&out.checkpoint, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let feats = back
        .extractor()
        .unwrap()
        .extract(&data.split(Split::Test)[0].glyphs)
        .unwrap();
    let same_predictions = out
        .checkpoint
        .model
        .predict_table(&feats)
        .unwrap()
        .values()
        .iter()
        .map(|v| v.to_bits())
        .eq(back
            .model
            .predict_table(&feats)
            .unwrap()
            .values()
            .iter()
            .map(|v| v.to_bits()));
    if !back.model.params.bit_identical(&out.checkpoint.model.params)
        || back.model.norm != out.checkpoint.model.norm
        || back.best_val_loss.to_bits() != out.checkpoint.best_val_loss.to_bits()
        || !same_predictions
    {
        problems.push("model checkpoint".to_string());
    }
    save_checkpoint(&back, &dir.path().join("again.ckpt")).unwrap();
    if std::fs::read(&path).unwrap() != std::fs::read(dir.path().join("again.ckpt")).unwrap() {
        problems.push("checkpoint re-save bytes".to_string());
    }

    let mut pre = PretrainConfig::new(8);
    pre.max_epochs = 1;
    pre.channels = vec![4, 8, 8, 8];
    pre.feature_dim = 8;
    let (encoder, _) = pretrain_encoder(&data.split(Split::Train), &data.split(Split::Val), &pre).unwrap();
    let enc_path = dir.path().join("encoder.ckpt");
    save_encoder(
        &EncoderCheckpoint {
            encoder: encoder.clone(),
            pretrain_config: Some(pre),
            report: None,
        },
        &enc_path,
    )
    .unwrap();
    if !load_encoder(&enc_path)
        .unwrap()
        .encoder
        .params()
        .bit_identical(encoder.params())
    {
        problems.push("encoder checkpoint".to_string());
    }

    for (k, record) in data.records().enumerate().take(6) {
        let font_dir = dir.path().join(format!("font{k}"));
        save_font_record(record, &font_dir).unwrap();
        if &load_font_record(&font_dir).unwrap() != record {
            problems.push(format!("font record {}", record.font_id));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in 0..20 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let img = pgm::Gray {
            width: w,
            height: h,
            pixels: (0..w * h).map(|_| rng.gen()).collect(),
        };
        let p = dir.path().join(format!("img{t}.pgm"));
        pgm::write(&img, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let back = pgm::read(&p).unwrap();
        pgm::write(&back, &p).unwrap();
        if back != img || std::fs::read(&p).unwrap() != bytes {
            problems.push(format!("pgm {t}"));
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "checkpoints bit-exact, 6 font records lossless, 20 PGMs byte-identical".to_string()
        } else {
            format!("failed: {}", problems.join(", "))
        },
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synth(9);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    generate_synthetic_corpus(&cfg, &a).unwrap();
    generate_synthetic_corpus(&cfg, &b).unwrap();
    let files = files_under(&a);
    let corpus_same = files == files_under(&b)
        && files
            .iter()
            .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());

    let data = Corpus::load(&a).unwrap();
    let first = quick_train(&data, Execution::Parallel);
    let second = quick_train(&data, Execution::Parallel);
    let sequential = quick_train(&data, Execution::Sequential);
    let loss_bits = [&first, &second, &sequential].map(|o| o.checkpoint.best_val_loss.to_bits());
    let same_loss = loss_bits.iter().all(|&b| b == loss_bits[0]);
    outcome(
        corpus_same && same_loss,
        format!(
            "{} corpus files identical: {corpus_same}; best val loss {:.6} identical across 3 runs: {same_loss}",
            files.len(),
            first.checkpoint.best_val_loss
        ),
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        (1, "gradient fidelity", gradient_fidelity),
        (2, "synthetic learning, mode A", synthetic_learning),
        (3, "set-wise advantage, mode B", setwise_advantage),
        (4, "optical baseline sanity", optical_sanity),
        (5, "oracle equivalence", oracle_equivalence),
        (6, "permutation equivariance", permutation_equivariance),
        (7, "metric identities", metric_identities),
        (8, "format round-trips", format_round_trips),
        (9, "determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(
            std::io::stderr(),
            "criterion {n} ({name}): {verdict} - {}",
            result.detail
        );
        if !result.pass {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed acceptance criteria: {failed:?}");
}
