//! Answer prediction: attention heads over fused grid features, the BCE
//! objective, cell-pointer decoding and training.

mod attention;
mod fcn;
mod loss;
mod predict;
mod train;

pub use attention::{AttentionCache, AttentionLayer, AttentionStack, StackCache, StackTrace};
pub use fcn::{tile_question, FcnCache, FcnHead};
pub use loss::{bce_grad_logits, bce_loss, bce_terms, CLAMP};
pub use predict::{argmax_cell, decode, predict, predict_at, predict_multiscale, PredictionOutput, Providers};
pub use train::{prepare, train, train_to_dir, EpochRecord, Prepared, TrainArtifacts, TrainConfig, TrainOutcome, DESK_LR};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Records};
use crate::error::{Error, Result};
use crate::nn::{join, Mode, ParamVisitor, Parameterized};
use crate::question::{QuestionCache, QuestionEncoder};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackMode {
    Single,
    Stacked,
    Fcn,
}

impl FromStr for StackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(StackMode::Single),
            "stacked" => Ok(StackMode::Stacked),
            "fcn" => Ok(StackMode::Fcn),
            _ => Err(Error::Config(format!("unknown stack mode {s:?} (single, stacked, fcn)"))),
        }
    }
}

impl fmt::Display for StackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StackMode::Single => "single",
            StackMode::Stacked => "stacked",
            StackMode::Fcn => "fcn",
        })
    }
}

/// Architecture hyper-parameters. Grid size is not among them: every
/// spatial operator works at any `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vis_channels: usize,
    pub emb_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub q_dim: usize,
    pub att_hidden: usize,
    pub att_dim: usize,
    pub fcn_widths: [usize; 2],
    pub stack: StackMode,
    pub dropout: f64,
}

impl ModelConfig {
    /// Full-size model: 512 visual channels, 300-d embeddings, 2x256 LSTM,
    /// 1024-d question vector, 1024/512 attention kernels.
    pub fn full_scale() -> Self {
        ModelConfig {
            vis_channels: 512,
            emb_dim: 300,
            lstm_hidden: 256,
            lstm_layers: 2,
            q_dim: 1024,
            att_hidden: 1024,
            att_dim: 512,
            fcn_widths: [512, 256],
            stack: StackMode::Stacked,
            dropout: 0.5,
        }
    }

    /// Reduced widths that train on one CPU core in minutes; matches the
    /// bundled 50-d embedding fixture and the synthetic corpus.
    pub fn desk() -> Self {
        ModelConfig {
            vis_channels: 16,
            emb_dim: 50,
            lstm_hidden: 32,
            lstm_layers: 2,
            q_dim: 64,
            att_hidden: 32,
            att_dim: 16,
            fcn_widths: [16, 8],
            stack: StackMode::Stacked,
            dropout: 0.5,
        }
    }

    pub fn fused_channels(&self) -> usize {
        self.vis_channels + self.emb_dim
    }

    /// Recovers the architecture from checkpoint record names and shapes.
    pub fn from_records(records: &Records) -> Result<Self> {
        let shape = |name: &str| {
            checkpoint::find(records, name)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| Error::Incompatible(format!("missing {name}")))
        };
        let mut cfg = ModelConfig::desk();
        let proj = shape("question.proj.weight")?;
        cfg.lstm_hidden = proj[0];
        cfg.q_dim = proj[1];
        cfg.lstm_layers = (0..)
            .take_while(|i| checkpoint::find(records, &format!("question.lstm.{i}.weight")).is_some())
            .count();
        cfg.emb_dim = shape("question.lstm.0.weight")?[0]
            .checked_sub(cfg.lstm_hidden)
            .ok_or_else(|| Error::Incompatible("lstm weight smaller than hidden size".into()))?;
        let fused = if checkpoint::find(records, "head.fcn.conv0.weight").is_some() {
            cfg.stack = StackMode::Fcn;
            let c0 = shape("head.fcn.conv0.weight")?;
            cfg.fcn_widths = [c0[3], shape("head.fcn.conv1.weight")?[3]];
            c0[2].checked_sub(cfg.q_dim)
        } else {
            let a = shape("head.att0.conv_a.weight")?;
            cfg.att_hidden = a[1];
            cfg.att_dim = shape("head.att0.conv_b.weight")?[1];
            cfg.stack = if checkpoint::find(records, "head.att1.conv_a.weight").is_some() {
                StackMode::Stacked
            } else {
                StackMode::Single
            };
            Some(a[0])
        };
        cfg.vis_channels = fused
            .and_then(|f| f.checked_sub(cfg.emb_dim))
            .ok_or_else(|| Error::Incompatible("fused channel count smaller than embedding size".into()))?;
        Ok(cfg)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head<T = f32> {
    Attention(AttentionStack<T>),
    Fcn(FcnHead<T>),
}

#[derive(Debug, Clone)]
pub enum HeadCache<T> {
    Attention(StackCache<T>),
    Fcn(FcnCache<T>),
}

#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    question: QuestionCache<T>,
    head: HeadCache<T>,
}

/// Question encoder plus answer head; all trainable weights of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerModel<T = f32> {
    pub config: ModelConfig,
    pub question: QuestionEncoder<T>,
    pub head: Head<T>,
}

impl<T: Scalar> PointerModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let c = &config;
        if [c.vis_channels, c.emb_dim, c.lstm_hidden, c.lstm_layers, c.q_dim, c.att_hidden, c.att_dim]
            .contains(&0)
            || c.fcn_widths.contains(&0)
        {
            return Err(Error::Config(format!("model sizes must be positive: {c:?}")));
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", c.dropout)));
        }
        let question = QuestionEncoder::new(c.emb_dim, c.lstm_hidden, c.lstm_layers, c.q_dim, c.dropout, rng);
        let fused = c.fused_channels();
        let head = match c.stack {
            StackMode::Single | StackMode::Stacked => {
                let depth = if c.stack == StackMode::Single { 1 } else { 2 };
                Head::Attention(AttentionStack::new(depth, fused, c.q_dim, c.att_hidden, c.att_dim, rng))
            }
            StackMode::Fcn => Head::Fcn(FcnHead::new(fused + c.q_dim, c.fcn_widths, rng)),
        };
        Ok(PointerModel { config, question, head })
    }

    /// Builds a model shaped like the checkpoint and loads its values.
    pub fn from_records(records: &Records) -> Result<Self> {
        let config = ModelConfig::from_records(records)?;
        let mut model = Self::new(config, 0)?;
        checkpoint::load_into(&mut model, records)?;
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_records(&checkpoint::read(path)?)
    }

    pub fn save(&mut self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    /// `p_att` over the grid of `f_m` (`[G, G, C_vis + emb_dim]`).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        f_m: &Tensor<T>,
        question: &[Tensor<T>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, ModelCache<T>)> {
        if f_m.rank() != 3 || f_m.shape()[2] != self.config.fused_channels() {
            return Err(Error::dim("model input f_m", f_m.shape(), &[0, 0, self.config.fused_channels()]));
        }
        let (f_q, qc) = self.question.forward(question, mode, rng)?;
        let (p, head) = match &self.head {
            Head::Attention(s) => {
                let (p, c) = s.forward(f_m, &f_q)?;
                (p, HeadCache::Attention(c))
            }
            Head::Fcn(h) => {
                let (p, c) = h.forward(f_m, &f_q, mode)?;
                (p, HeadCache::Fcn(c))
            }
        };
        Ok((p, ModelCache { question: qc, head }))
    }

    /// Accumulates gradients given `dE/dlogits` of the output map.
    pub fn backward(&mut self, cache: &ModelCache<T>, grad_logits: &Tensor<T>) -> Result<()> {
        let dq = match (&mut self.head, &cache.head) {
            (Head::Attention(s), HeadCache::Attention(c)) => s.backward(c, grad_logits)?,
            (Head::Fcn(h), HeadCache::Fcn(c)) => h.backward(c, grad_logits)?,
            _ => return Err(Error::Contract("cache does not belong to this head".into())),
        };
        self.question.backward(&cache.question, &dq)
    }

    /// Forward pass, BCE against `gt`, and optionally the backward pass.
    pub fn loss<R: Rng + ?Sized>(
        &mut self,
        f_m: &Tensor<T>,
        question: &[Tensor<T>],
        gt: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
        backward: bool,
    ) -> Result<T> {
        let (p, cache) = self.forward(f_m, question, mode, rng)?;
        let e = bce_loss(&p, gt)?;
        if backward {
            self.backward(&cache, &bce_grad_logits(&p, gt)?)?;
        }
        Ok(e)
    }

    /// Per-cell loss terms of [`PointerModel::loss`], for gradient checking.
    pub fn loss_terms<R: Rng + ?Sized>(
        &mut self,
        f_m: &Tensor<T>,
        question: &[Tensor<T>],
        gt: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
        backward: bool,
    ) -> Result<Vec<f64>> {
        let (p, cache) = self.forward(f_m, question, mode, rng)?;
        let terms = bce_terms(&p, gt)?;
        if backward {
            self.backward(&cache, &bce_grad_logits(&p, gt)?)?;
        }
        Ok(terms)
    }

    pub fn cast<U: Scalar>(&self) -> PointerModel<U> {
        PointerModel {
            config: self.config.clone(),
            question: self.question.cast(),
            head: match &self.head {
                Head::Attention(s) => Head::Attention(s.cast()),
                Head::Fcn(h) => Head::Fcn(h.cast()),
            },
        }
    }
}

impl<T> Parameterized<T> for PointerModel<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        self.question.visit(&join(prefix, "question"), v);
        match &mut self.head {
            Head::Attention(s) => s.visit(&join(prefix, "head"), v),
            Head::Fcn(h) => h.visit(&join(prefix, "head.fcn"), v),
        }
    }
}
