use std::path::{Path, PathBuf};

use log::info;

use kernspace::baselines::Baseline;
use kernspace::dataset::{
    generate_synthetic_corpus, load_font_glyphs, load_font_record, read_table, write_table, Corpus, GlyphImage,
    KerningTable, Split,
};
use kernspace::eval::{evaluate, load_predictor, write_report, GroundTruth, Method, TablePredictor};
use kernspace::features::{pretrain_encoder, FeatureKind};
use kernspace::numerics::GradCheckReport;
use kernspace::par::{self, Execution};
use kernspace::render::{compose_comparison, compose_word, word_categories, word_spaces, write_gap_csv, write_pgm};
use kernspace::training::{self, load_checkpoint, load_encoder, save_checkpoint, save_encoder, EncoderCheckpoint};

use crate::config::{overlay, RunConfig};
use crate::{
    CliError, Command, EvalArgs, FitBaselineArgs, GradcheckArgs, KernArgs, PretrainArgs, RenderArgs, SynthArgs,
    TrainArgs,
};

const GRADCHECK_TOLERANCE: f64 = 1e-5;

pub fn run(command: Command) -> Result<(), CliError> {
    let common = match &command {
        Command::Synth(a) => &a.common,
        Command::PretrainEncoder(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::FitBaseline(a) => &a.common,
        Command::Kern(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Render(a) => &a.common,
        Command::Gradcheck(a) => &a.common,
    };
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    overlay!(cfg, common; threads);
    if cfg.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    par::with_threads(cfg.threads, move || match command {
        Command::Synth(a) => synth(cfg, a),
        Command::PretrainEncoder(a) => pretrain(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::FitBaseline(a) => fit_baseline(cfg, a),
        Command::Kern(a) => kern(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Render(a) => render(cfg, a),
        Command::Gradcheck(a) => gradcheck(a),
    })
}

/// `<path>.<suffix>` next to a file output.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    Ok(Corpus::load(&RunConfig::required(&cfg.corpus, "corpus")?)?)
}

fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<(), CliError> {
    overlay!(cfg, a; out, seed, n_categories, image_size, train_fonts, val_fonts, test_fonts, mode, shapes);
    let out = RunConfig::required(&cfg.out, "out")?;
    let synth = cfg.synth();
    generate_synthetic_corpus(&synth, &out)?;
    cfg.echo(&out.join("config.json"))?;
    println!(
        "wrote {} fonts ({} train, {} val, {} test) to {}",
        synth.train_fonts + synth.val_fonts + synth.test_fonts,
        synth.train_fonts,
        synth.val_fonts,
        synth.test_fonts,
        out.display()
    );
    Ok(())
}

fn pretrain(mut cfg: RunConfig, a: PretrainArgs) -> Result<(), CliError> {
    overlay!(cfg, a; corpus, out, seed, feature_dim, channels, pretrain_lr, pretrain_batch_size,
        pretrain_max_epochs, pretrain_patience);
    let out = RunConfig::required(&cfg.out, "out")?;
    let corpus = load_corpus(&cfg)?;
    let pcfg = cfg.pretrain();
    let (encoder, report) = pretrain_encoder(&corpus.split(Split::Train), &corpus.split(Split::Val), &pcfg)?;
    create_parent(&out)?;
    save_encoder(
        &EncoderCheckpoint {
            encoder,
            pretrain_config: Some(pcfg),
            report: Some(report.clone()),
        },
        &out,
    )?;
    cfg.echo(&sibling(&out, "config.json"))?;
    println!(
        "held-out accuracy {:.4} at epoch {} ({} epochs run); encoder written to {}",
        report.best_accuracy,
        report.best_epoch,
        report.epochs_run,
        out.display()
    );
    Ok(())
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<(), CliError> {
    overlay!(cfg, a; model, features, corpus, encoder, out, seed, lr, batch_size, patience, max_epochs, max_steps,
        pairwise_hidden, d_model, heads, ffn_hidden, max_tokens);
    let out = RunConfig::required(&cfg.out, "out")?;
    let tcfg = cfg.train()?;
    let encoder = match (tcfg.features, &cfg.encoder) {
        (FeatureKind::Encoder, None) => {
            return Err(CliError::Usage("--features encoder needs --encoder CKPT".into()));
        }
        (FeatureKind::Encoder, Some(path)) => Some(load_encoder(path)?.encoder),
        (FeatureKind::Peripheral, _) => None,
    };
    let corpus = load_corpus(&cfg)?;
    let outcome = training::train(&tcfg, &corpus, encoder.as_ref())?;
    create_parent(&out)?;
    save_checkpoint(&outcome.checkpoint, &out)?;
    training::write_training_log(&sibling(&out, "log.csv"), &outcome.history)?;
    cfg.echo(&sibling(&out, "config.json"))?;
    println!(
        "best val MAE {:.4} at epoch {} after {} updates; checkpoint written to {}",
        outcome.checkpoint.best_val_loss,
        outcome.checkpoint.epoch,
        outcome.steps,
        out.display()
    );
    Ok(())
}

fn fit_baseline(mut cfg: RunConfig, a: FitBaselineArgs) -> Result<(), CliError> {
    overlay!(cfg, a; corpus, out);
    let out = RunConfig::required(&cfg.out, "out")?;
    let corpus = load_corpus(&cfg)?;
    let baseline = Baseline::fit(a.kind, &corpus.split(Split::Train))?;
    create_parent(&out)?;
    baseline.save(&out)?;
    cfg.echo(&sibling(&out, "config.json"))?;
    println!("{:?} baseline written to {}", a.kind, out.display());
    Ok(())
}

fn kern(mut cfg: RunConfig, a: KernArgs) -> Result<(), CliError> {
    overlay!(cfg, a; out);
    let out = RunConfig::required(&cfg.out, "out")?;
    let ckpt = load_checkpoint(&a.model)?;
    let glyphs = load_font_glyphs(&a.font_dir, ckpt.model.config.n_categories())?;
    let features = ckpt.extractor()?.extract(&glyphs)?;
    let table = ckpt
        .model
        .predict_table(&features)
        .map_err(kernspace::training::TrainingError::from)?;
    create_parent(&out)?;
    write_table(&out, &table)?;
    cfg.echo(&sibling(&out, "config.json"))?;
    info!(
        "kerning table for {} written to {}",
        a.font_dir.display(),
        out.display()
    );
    Ok(())
}

fn parse_methods(list: &str) -> Result<Vec<(String, String)>, CliError> {
    list.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            pair.split_once('=')
                .map(|(n, p)| (n.trim().to_string(), p.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("method {pair:?} is not name=artifact")))
        })
        .collect()
}

fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<(), CliError> {
    overlay!(cfg, a; corpus, out);
    let out = RunConfig::required(&cfg.out, "out")?;
    let corpus = load_corpus(&cfg)?;
    let specs = parse_methods(&a.methods)?;
    let predictors: Vec<Box<dyn TablePredictor>> = specs
        .iter()
        .map(|(_, artifact)| -> Result<Box<dyn TablePredictor>, CliError> {
            if artifact == "gt" {
                Ok(Box::new(GroundTruth))
            } else {
                Ok(load_predictor(Path::new(artifact))?)
            }
        })
        .collect::<Result<_, _>>()?;
    let methods: Vec<Method<'_>> = specs
        .iter()
        .zip(&predictors)
        .map(|((name, _), p)| Method::new(name.clone(), p.as_ref()))
        .collect();
    let fonts = corpus.split(a.split);
    let report = evaluate(&methods, &fonts, Execution::Parallel)?;
    write_report(&report, &fonts, &out)?;
    cfg.echo(&out.join("config.json"))?;
    println!("{:<16} {:>10} {:>14} {:>6}", "method", "mae", "fonts_below_7", "wins");
    for m in &report.methods {
        println!("{:<16} {:>10.4} {:>14} {:>6}", m.name, m.mae, m.fonts_below_7, m.wins);
    }
    Ok(())
}

enum Spacing {
    Gt,
    Table(KerningTable),
}

impl Spacing {
    fn parse(source: &str) -> Result<Self, CliError> {
        Ok(if source == "gt" {
            Spacing::Gt
        } else {
            Spacing::Table(read_table(Path::new(source), None)?)
        })
    }

    fn table<'a>(&'a self, gt: Option<&'a KerningTable>) -> &'a KerningTable {
        match self {
            Spacing::Gt => gt.expect("ground truth loaded when requested"),
            Spacing::Table(t) => t,
        }
    }
}

fn render(mut cfg: RunConfig, a: RenderArgs) -> Result<(), CliError> {
    overlay!(cfg, a; out);
    let out = RunConfig::required(&cfg.out, "out")?;
    let primary = Spacing::parse(&a.spaces)?;
    let secondary = a.compare.as_deref().map(Spacing::parse).transpose()?;
    let wants_gt = matches!(primary, Spacing::Gt) || matches!(secondary, Some(Spacing::Gt));

    let (glyphs, gt): (Vec<GlyphImage>, Option<KerningTable>) = if wants_gt {
        let record = load_font_record(&a.font_dir)?;
        (record.glyphs, Some(record.gt))
    } else {
        let n = primary.table(None).n();
        (load_font_glyphs(&a.font_dir, n)?, None)
    };
    let n = glyphs.len();
    for s in [Some(&primary), secondary.as_ref()].into_iter().flatten() {
        if s.table(gt.as_ref()).n() != n {
            return Err(CliError::Validation(format!(
                "spacing table is {0}x{0} but the font has {n} glyphs",
                s.table(gt.as_ref()).n()
            )));
        }
    }
    let cats = word_categories(&a.word, n)?;
    let letters: Vec<&GlyphImage> = cats.iter().map(|&c| &glyphs[c]).collect();
    let spaces = word_spaces(primary.table(gt.as_ref()), &cats);

    create_parent(&out)?;
    match &secondary {
        None => write_pgm(&compose_word(&letters, &spaces)?, &out)?,
        Some(second) => {
            let other = word_spaces(second.table(gt.as_ref()), &cats);
            let comparison = compose_comparison(&letters, &spaces, &other)?;
            write_pgm(&comparison.image, &out)?;
            write_gap_csv(&comparison.gaps, &sibling(&out, "gaps.csv"))?;
        }
    }
    cfg.echo(&sibling(&out, "config.json"))?;
    info!("rendered {:?} to {}", a.word, out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    if !a.tiny {
        return Err(CliError::Usage("only the --tiny gradient check is available".into()));
    }
    let GradCheckReport {
        max_rel_error, probes, ..
    } = training::gradcheck_tiny(a.model, a.seed)?;
    println!("max relative error {max_rel_error:.3e} over {probes} parameters");
    if max_rel_error > GRADCHECK_TOLERANCE {
        return Err(CliError::Runtime(format!(
            "max relative error {max_rel_error:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}
