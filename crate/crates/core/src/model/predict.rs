//! Cell-pointer decoding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::PointerModel;
use crate::data::{EmbeddingTable, FeatureProvider, QaExample};
use crate::error::Result;
use crate::grid::{build_text_grid, fuse};
use crate::nn::Mode;
use crate::tensor::{Scalar, Tensor};

/// Everything prediction needs besides the model.
#[derive(Debug, Clone, Copy)]
pub struct Providers<'a> {
    pub table: &'a EmbeddingTable,
    pub features: &'a FeatureProvider,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionOutput {
    pub grid: usize,
    /// `[G, G]` in (0, 1).
    #[serde(skip)]
    pub p_att: Tensor<f32>,
    pub argmax_cell: (usize, usize),
    /// Text of the token at `argmax_cell`; `None` when the cell is empty.
    pub answer_text: Option<String>,
    pub confidence: f32,
}

impl PredictionOutput {
    pub fn answer(&self) -> &str {
        self.answer_text.as_deref().unwrap_or("")
    }
}

/// Row-major index of the first maximum of a `[G, G]` map.
pub fn argmax_cell<T: Scalar>(p: &Tensor<T>) -> (usize, usize) {
    let w = p.shape()[1];
    let mut best = 0;
    for (i, &v) in p.data().iter().enumerate() {
        if v > p.data()[best] {
            best = i;
        }
    }
    (best / w, best % w)
}

/// Turns a probability map into a prediction given the cell-to-token table.
pub fn decode(p: Tensor<f32>, cell_token: &[Option<usize>], texts: &[String]) -> PredictionOutput {
    let grid = p.shape()[0];
    let (r, c) = argmax_cell(&p);
    let answer_text = cell_token[r * grid + c].map(|t| texts[t].clone());
    PredictionOutput {
        grid,
        confidence: p.data()[r * grid + c],
        argmax_cell: (r, c),
        answer_text,
        p_att: p,
    }
}

/// Eval-mode prediction at the provider's default grid size.
pub fn predict(model: &PointerModel<f32>, example: &QaExample, providers: Providers<'_>) -> Result<PredictionOutput> {
    predict_at(model, example, providers, providers.features.grid)
}

pub fn predict_at(
    model: &PointerModel<f32>,
    example: &QaExample,
    providers: Providers<'_>,
    grid: usize,
) -> Result<PredictionOutput> {
    let visual = providers.features.get_features_at(&example.image_id, grid)?;
    let assignment = build_text_grid(&example.ocr, providers.table, grid);
    let f_m = fuse(&visual, &assignment.text_grid)?;
    let q = model.question.embed(providers.table, &example.question)?;
    // Eval mode draws nothing from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (p, _) = model.forward(&f_m, &q, Mode::Eval, &mut rng)?;
    let texts: Vec<String> = example.ocr.iter().map(|t| t.text.clone()).collect();
    Ok(decode(p, &assignment.cell_token, &texts))
}

/// The same weights applied at each grid size in `grids`.
pub fn predict_multiscale(
    model: &PointerModel<f32>,
    example: &QaExample,
    providers: Providers<'_>,
    grids: &[usize],
) -> Result<Vec<PredictionOutput>> {
    grids.iter().map(|&g| predict_at(model, example, providers, g)).collect()
}
