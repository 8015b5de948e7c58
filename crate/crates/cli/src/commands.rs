use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use gridptr::data::{filter_trainable, load_dataset, EmbeddingTable, FeatureProvider, QaExample};
use gridptr::metrics::{
    answer_recall, ensemble_select, read_predictions, score_anls, write_predictions, EnsembleInput, EvalReport,
    PredictionRecord, RecallReport, Source,
};
use gridptr::model::{predict, train, train_to_dir, PointerModel, Providers};
use gridptr::synth::{generate, write_corpus, SynthConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::viz::{render, write_pgm, write_pgm_ascii, UPSCALE};
use crate::{Cli, Command, DataArgs, GlobalArgs, UsageError};

const DEFAULT_OUT: &str = "gridptr-out";

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = resolve_config(&cli.global)?;
    let quiet = cli.global.quiet;
    match cli.command {
        Command::Train {
            data,
            out,
            epochs,
            lr,
            batch_size,
        } => {
            apply_data(&mut cfg, data);
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.lr = lr.unwrap_or(cfg.train.lr);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
            cmd_train(&cfg, &out_dir(&cfg, out), quiet)
        }
        Command::Eval {
            data,
            checkpoint,
            predictions,
            out,
        } => {
            apply_data(&mut cfg, data);
            cfg.paths.checkpoint = checkpoint.or(cfg.paths.checkpoint);
            let out = out.unwrap_or_else(|| out_dir(&cfg, None).join("report.json"));
            cmd_eval(&cfg, predictions.as_deref(), cli.global.ensemble_preds.as_deref(), &out, quiet)
        }
        Command::Predict { data, checkpoint, out } => {
            apply_data(&mut cfg, data);
            cfg.paths.checkpoint = checkpoint.or(cfg.paths.checkpoint);
            let out = out.unwrap_or_else(|| out_dir(&cfg, None).join("predictions.jsonl"));
            cmd_predict(&cfg, &out, quiet)
        }
        Command::Viz {
            data,
            checkpoint,
            question_id,
            out,
            ascii,
        } => {
            apply_data(&mut cfg, data);
            cfg.paths.checkpoint = checkpoint.or(cfg.paths.checkpoint);
            cmd_viz(&cfg, question_id.as_deref(), &out, ascii, quiet)
        }
        Command::Synth { count, extra_grids, out } => {
            let synth = SynthConfig {
                seed: cfg.train.seed,
                count,
                grid: cfg.grid_size,
                vis_channels: cfg.model.vis_channels,
                extra_grids,
            };
            cmd_synth(&synth, &out_dir(&cfg, out), quiet)
        }
        Command::Analyze { dataset, out } => {
            cfg.paths.dataset = dataset.or(cfg.paths.dataset);
            cmd_analyze(&cfg, out.as_deref(), quiet)
        }
    }
}

fn resolve_config(g: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    if let Some(gs) = g.grid_size {
        cfg.grid_size = gs;
    }
    if let Some(s) = g.stack {
        cfg.model.stack = s;
    }
    if g.anls_threshold.is_some() {
        cfg.metrics.anls_threshold = g.anls_threshold;
    }
    if let Some(t) = g.ensemble_tau {
        cfg.metrics.ensemble_tau = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, data: DataArgs) {
    let p = &mut cfg.paths;
    p.dataset = data.dataset.or(p.dataset.take());
    p.features = data.features.or(p.features.take());
    p.embeddings = data.embeddings.or(p.embeddings.take());
}

fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.paths.output_dir.clone()).unwrap_or_else(|| DEFAULT_OUT.into())
}

fn require(path: &Option<PathBuf>, what: &str, flag: &str) -> anyhow::Result<PathBuf> {
    let p = path
        .as_ref()
        .ok_or_else(|| UsageError(format!("no {what} given (use {flag} or the config file)")))?;
    if !p.is_file() {
        return Err(UsageError(format!("{what} not found: {}", p.display())).into());
    }
    Ok(p.clone())
}

fn check_optional(path: &Option<PathBuf>, what: &str) -> anyhow::Result<()> {
    match path {
        Some(p) if !p.is_file() => Err(UsageError(format!("{what} not found: {}", p.display())).into()),
        _ => Ok(()),
    }
}

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        println!("{}", msg.as_ref());
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(gridptr::Error::from)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")
        .map_err(gridptr::Error::from)
        .with_context(|| format!("writing {}", path.display()))
}

/// Checked inputs shared by the commands that read a dataset.
struct Inputs {
    examples: Vec<QaExample>,
    table: EmbeddingTable,
}

fn load_inputs(cfg: &RunConfig, need_checkpoint: bool) -> anyhow::Result<Inputs> {
    // All paths are checked before any of them is read.
    let dataset = require(&cfg.paths.dataset, "dataset", "--dataset")?;
    check_optional(&cfg.paths.features, "feature file")?;
    check_optional(&cfg.paths.embeddings, "embedding file")?;
    if need_checkpoint {
        require(&cfg.paths.checkpoint, "checkpoint", "--checkpoint")?;
    }
    let examples = load_dataset(&dataset)?;
    let table = match &cfg.paths.embeddings {
        Some(p) => EmbeddingTable::load(p)?,
        None => EmbeddingTable::fixture(),
    };
    Ok(Inputs { examples, table })
}

fn load_features(cfg: &RunConfig, channels: usize) -> anyhow::Result<FeatureProvider> {
    let provider = match &cfg.paths.features {
        Some(p) => FeatureProvider::from_file(p, cfg.grid_size)?,
        None => FeatureProvider::synthetic(cfg.grid_size, channels, cfg.train.seed),
    };
    if provider.channels != channels {
        return Err(UsageError(format!(
            "feature file has {} visual channels, the model expects {channels}",
            provider.channels
        ))
        .into());
    }
    Ok(provider)
}

fn load_model(cfg: &RunConfig, table: &EmbeddingTable) -> anyhow::Result<PointerModel> {
    let path = cfg.paths.checkpoint.as_ref().expect("checked by load_inputs");
    let model = PointerModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if model.config.emb_dim != table.dim() {
        return Err(gridptr::Error::Incompatible(format!(
            "checkpoint expects {}-d embeddings, table has {}",
            model.config.emb_dim,
            table.dim()
        ))
        .into());
    }
    Ok(model)
}

#[derive(Serialize)]
struct TrainSummary {
    examples: usize,
    kept: usize,
    discarded: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_anls: f64,
    final_anls: f64,
}

fn cmd_train(cfg: &RunConfig, out: &Path, quiet: bool) -> anyhow::Result<()> {
    let Inputs { examples, table } = load_inputs(cfg, false)?;
    if table.dim() != cfg.model.emb_dim {
        return Err(UsageError(format!(
            "embedding table is {}-d but model.emb_dim is {}",
            table.dim(),
            cfg.model.emb_dim
        ))
        .into());
    }
    let features = load_features(cfg, cfg.model.vis_channels)?;
    let total = examples.len();
    let (kept, discarded) = filter_trainable(examples);
    say(
        quiet,
        format!(
            "kept {} of {total} examples; discarded {} whose answer is not among the OCR tokens",
            kept.len(),
            discarded.len()
        ),
    );
    let model = PointerModel::new(cfg.model.clone(), cfg.train.seed)?;
    let mut outcome = train(model, &kept, &table, &features, &cfg.train)?;
    let art = train_to_dir(&mut outcome, out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(gridptr::Error::from)?;
    let summary = TrainSummary {
        examples: total,
        kept: kept.len(),
        discarded: discarded.len(),
        epochs_run: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_anls: outcome.best_anls,
        final_anls: outcome.final_anls(),
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    say(
        quiet,
        format!(
            "trained {} epochs; best train ANLS {:.4} at epoch {}; checkpoint {}",
            summary.epochs_run,
            summary.best_anls,
            summary.best_epoch,
            art.final_checkpoint.display()
        ),
    );
    Ok(())
}

fn run_predictions(cfg: &RunConfig, inputs: &Inputs) -> anyhow::Result<Vec<PredictionRecord>> {
    let model = load_model(cfg, &inputs.table)?;
    let features = load_features(cfg, model.config.vis_channels)?;
    let providers = Providers {
        table: &inputs.table,
        features: &features,
    };
    inputs
        .examples
        .iter()
        .map(|e| {
            let out = predict(&model, e, providers).with_context(|| format!("question {}", e.question_id))?;
            Ok(PredictionRecord {
                question_id: e.question_id.clone(),
                answer: out.answer().to_string(),
                confidence: out.confidence as f64,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct EnsembleSummary {
    tau: f64,
    classifier_chosen: Vec<String>,
}

#[derive(Serialize)]
struct ReportFile {
    #[serde(flatten)]
    report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    ensemble: Option<EnsembleSummary>,
}

fn cmd_eval(
    cfg: &RunConfig,
    predictions: Option<&Path>,
    ensemble: Option<&Path>,
    out: &Path,
    quiet: bool,
) -> anyhow::Result<()> {
    if let Some(p) = predictions {
        require(&Some(p.to_path_buf()), "predictions file", "--predictions")?;
    }
    if let Some(p) = ensemble {
        require(&Some(p.to_path_buf()), "ensemble predictions file", "--ensemble-preds")?;
    }
    let inputs = load_inputs(cfg, predictions.is_none())?;
    let pointer = match predictions {
        Some(p) => read_predictions(p)?,
        None => run_predictions(cfg, &inputs)?,
    };
    let mut answers: HashMap<String, String> =
        pointer.iter().map(|r| (r.question_id.clone(), r.answer.clone())).collect();

    let ensemble = match ensemble {
        None => None,
        Some(path) => {
            let classifier: HashMap<String, PredictionRecord> =
                read_predictions(path)?.into_iter().map(|r| (r.question_id.clone(), r)).collect();
            let by_id: HashMap<&str, &PredictionRecord> =
                pointer.iter().map(|r| (r.question_id.as_str(), r)).collect();
            let inputs: Vec<EnsembleInput> = inputs
                .examples
                .iter()
                .map(|e| {
                    let p = by_id.get(e.question_id.as_str());
                    let c = classifier.get(&e.question_id);
                    EnsembleInput {
                        question_id: e.question_id.clone(),
                        classifier_answer: c.map(|c| c.answer.clone()).unwrap_or_default(),
                        classifier_confidence: c.map_or(0.0, |c| c.confidence),
                        pointer_answer: p.map(|p| p.answer.clone()).unwrap_or_default(),
                        pointer_confidence: p.map_or(0.0, |p| p.confidence),
                    }
                })
                .collect();
            let tau = cfg.metrics.ensemble_tau;
            let choices = ensemble_select(&inputs, tau)?;
            let mut chosen = Vec::new();
            for c in choices {
                if c.source == Source::Classifier {
                    chosen.push(c.question_id.clone());
                }
                answers.insert(c.question_id, c.answer);
            }
            say(quiet, format!("ensemble: classifier answer used for {} questions (tau {tau})", chosen.len()));
            Some(EnsembleSummary {
                tau,
                classifier_chosen: chosen,
            })
        }
    };

    let report = score_anls(&answers, &inputs.examples, cfg.metrics.anls_threshold);
    say(
        quiet,
        format!(
            "{} questions: ANLS {:.4}, accuracy {:.2}%",
            report.count, report.anls, report.accuracy
        ),
    );
    for (name, s) in &report.subsets {
        say(quiet, format!("  {name}: {} questions, ANLS {:.4}, accuracy {:.2}%", s.count, s.anls, s.accuracy));
    }
    write_json(out, &ReportFile { report, ensemble })
}

fn cmd_predict(cfg: &RunConfig, out: &Path, quiet: bool) -> anyhow::Result<()> {
    let inputs = load_inputs(cfg, true)?;
    let records = run_predictions(cfg, &inputs)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(gridptr::Error::from)?;
    }
    write_predictions(out, &records)?;
    say(quiet, format!("wrote {} predictions to {}", records.len(), out.display()));
    Ok(())
}

fn cmd_viz(cfg: &RunConfig, question_id: Option<&str>, out: &Path, ascii: bool, quiet: bool) -> anyhow::Result<()> {
    let inputs = load_inputs(cfg, true)?;
    let example = match question_id {
        Some(id) => inputs.examples.iter().find(|e| e.question_id == id),
        None => inputs.examples.first(),
    }
    .ok_or_else(|| UsageError(format!("question {:?} not in dataset", question_id.unwrap_or("<first>"))))?;
    let model = load_model(cfg, &inputs.table)?;
    let features = load_features(cfg, model.config.vis_channels)?;
    let pred = predict(
        &model,
        example,
        Providers {
            table: &inputs.table,
            features: &features,
        },
    )?;
    let img = render(&pred.p_att, UPSCALE);
    write_pgm(&img, out)
        .map_err(gridptr::Error::from)
        .with_context(|| format!("writing {}", out.display()))?;
    if ascii {
        let txt = out.with_extension("ascii.pgm");
        write_pgm_ascii(&img, &txt).map_err(gridptr::Error::from)?;
    }
    say(
        quiet,
        format!(
            "{}: answer {:?} at cell {:?} (p = {:.3}); image {}",
            example.question_id,
            pred.answer(),
            pred.argmax_cell,
            pred.confidence,
            out.display()
        ),
    );
    Ok(())
}

fn cmd_synth(synth: &SynthConfig, out: &Path, quiet: bool) -> anyhow::Result<()> {
    if synth.count == 0 {
        return Err(UsageError("--count must be at least 1".into()).into());
    }
    let corpus = generate(synth)?;
    let paths = write_corpus(&corpus, out)?;
    say(
        quiet,
        format!(
            "wrote {} examples to {} and features to {}",
            corpus.examples.len(),
            paths.dataset.display(),
            paths.features.display()
        ),
    );
    Ok(())
}

#[derive(Serialize)]
struct Analysis {
    examples: usize,
    trainable: usize,
    #[serde(flatten)]
    recall: RecallReport,
}

fn cmd_analyze(cfg: &RunConfig, out: Option<&Path>, quiet: bool) -> anyhow::Result<()> {
    let dataset = require(&cfg.paths.dataset, "dataset", "--dataset")?;
    let examples = load_dataset(&dataset)?;
    let recall = answer_recall(&examples);
    let n = examples.len();
    let (kept, _) = filter_trainable(examples);
    let analysis = Analysis {
        examples: n,
        trainable: kept.len(),
        recall,
    };
    say(
        quiet,
        format!(
            "{n} questions: answer recall {:.2}%, ANLS upper bound {:.4}",
            recall.recall, recall.anls_upper_bound
        ),
    );
    match out {
        Some(p) => write_json(p, &analysis),
        None => Ok(()),
    }
}
