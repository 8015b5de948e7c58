//! Mini-batch training with Adam on the summed cell-wise BCE.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decode, PointerModel};
use crate::data::{EmbeddingTable, FeatureProvider, QaExample};
use crate::error::{Error, Result};
use crate::grid::{encode_example, fuse};
use crate::metrics::best_nls;
use crate::nn::{scale_grads, Mode};
use crate::optim::{AdamConfig, OptimizerState};
use crate::tensor::Tensor;

/// Learning rate of the default (reduced-width) configuration.
pub const DESK_LR: f64 = 3e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many epochs without a new best train ANLS.
    pub patience: usize,
    /// Stop as soon as train ANLS reaches this value.
    pub target_anls: Option<f64>,
}

impl TrainConfig {
    /// Optimizer defaults intended for the full-width model.
    pub fn full_scale() -> Self {
        TrainConfig {
            lr: AdamConfig::default().lr,
            ..Self::default()
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            lr: DESK_LR,
            seed: 0,
            patience: 20,
            target_anls: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_anls: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PointerModel<f32>,
    pub best: PointerModel<f32>,
    pub best_epoch: usize,
    pub best_anls: f64,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn final_anls(&self) -> f64 {
        self.log.last().map_or(0.0, |r| r.train_anls)
    }
}

/// An example with its fused features, embedded question and mask computed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub question_id: String,
    pub f_m: Tensor<f32>,
    pub question: Vec<Tensor<f32>>,
    pub gt: Tensor<f32>,
    pub cell_token: Vec<Option<usize>>,
    pub texts: Vec<String>,
    pub answers: Vec<String>,
}

pub fn prepare(
    model: &PointerModel<f32>,
    examples: &[QaExample],
    table: &EmbeddingTable,
    features: &FeatureProvider,
) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|e| {
            let a = encode_example(e, table, features.grid)?;
            let visual = features.get_features(&e.image_id)?;
            Ok(Prepared {
                question_id: e.question_id.clone(),
                f_m: fuse(&visual, &a.text_grid)?,
                question: model.question.embed(table, &e.question)?,
                gt: a.gt_mask,
                cell_token: a.cell_token,
                texts: e.ocr.iter().map(|t| t.text.clone()).collect(),
                answers: e.answers.clone(),
            })
        })
        .collect()
}

fn train_anls(model: &PointerModel<f32>, data: &[Prepared]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for d in data {
        let (p, _) = model.forward(&d.f_m, &d.question, Mode::Eval, &mut rng)?;
        let out = decode(p, &d.cell_token, &d.texts);
        total += best_nls(out.answer(), &d.answers, None).0;
    }
    Ok(total / data.len() as f64)
}

/// Trains `model` in place on pre-filtered examples. The examples must all
/// have their answer among the OCR tokens.
pub fn train(
    mut model: PointerModel<f32>,
    examples: &[QaExample],
    table: &EmbeddingTable,
    features: &FeatureProvider,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let data = prepare(&model, examples, table, features)?;
    let mut opt = OptimizerState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    // Separate stream from the one used for initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let (mut best, mut best_anls, mut best_epoch) = (model.clone(), f64::NEG_INFINITY, 0);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            for &i in batch {
                let d = &data[i];
                let e = model.loss(&d.f_m, &d.question, &d.gt, Mode::Train, &mut rng, true)?;
                if !e.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {e} on example {} in epoch {epoch}",
                        d.question_id
                    )));
                }
                loss_sum += e as f64;
            }
            scale_grads(&mut model, 1.0 / batch.len() as f32);
            opt.step(&mut model)?;
        }
        let anls = train_anls(&model, &data)?;
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_anls: anls,
        };
        log::info!("epoch {epoch}: loss {:.4} train ANLS {:.4}", record.mean_loss, anls);
        log.push(record);
        if anls > best_anls {
            best_anls = anls;
            best_epoch = epoch;
            best = model.clone();
        }
        if config.target_anls.is_some_and(|t| anls >= t) || epoch - best_epoch >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        best_anls,
        log,
    })
}

/// Paths written by [`train_to_dir`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Writes `final.ckpt`, `best.ckpt` and `train_log.jsonl` into `dir`.
pub fn train_to_dir(outcome: &mut TrainOutcome, dir: &Path) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(dir)?;
    let art = TrainArtifacts {
        final_checkpoint: dir.join("final.ckpt"),
        best_checkpoint: dir.join("best.ckpt"),
        log: dir.join("train_log.jsonl"),
    };
    outcome.model.save(&art.final_checkpoint)?;
    outcome.best.save(&art.best_checkpoint)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(&art.log)?);
    for r in &outcome.log {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(art)
}
