//! Rasterization of OCR tokens onto the feature grid.

use crate::data::{BBox, EmbeddingTable, OcrToken, QaExample};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Overlaps thinner than this fraction of a cell are treated as touching.
pub const BORDER_EPS: f64 = 1e-9;

/// Cells whose square `[c/G, (c+1)/G) x [r/G, (r+1)/G)` intersects the box
/// with positive area, in row-major order.
pub fn cells_for_box(b: &BBox, grid: usize) -> Vec<(usize, usize)> {
    let rows = span(b.y0, b.y1, grid);
    let cols = span(b.x0, b.x1, grid);
    rows.flat_map(|r| cols.clone().map(move |c| (r, c))).collect()
}

fn span(lo: f64, hi: f64, grid: usize) -> std::ops::Range<usize> {
    let g = grid as f64;
    let (lo, hi) = (lo * g, hi * g);
    let first = (lo.floor().max(0.0) as usize).saturating_sub(1);
    let last = ((hi.ceil() + 1.0).max(0.0) as usize).min(grid);
    let claimed = |i: usize| hi - i as f64 > BORDER_EPS && (i + 1) as f64 - lo > BORDER_EPS;
    let start = (first..last).find(|&i| claimed(i));
    match start {
        None => 0..0,
        Some(s) => s..(s..last).take_while(|&i| claimed(i)).last().unwrap() + 1,
    }
}

/// Token placement on a `G x G` grid. Cell `(r, c)` lives at index `r * G + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAssignment {
    pub grid: usize,
    pub cell_token: Vec<Option<usize>>,
    /// `[G, G, emb_dim]`; zero wherever no token was written.
    pub text_grid: Tensor<f32>,
    /// `[G, G]` of 0/1 answer cells; all zero until a mask is attached.
    pub gt_mask: Tensor<f32>,
}

impl GridAssignment {
    pub fn token_at(&self, row: usize, col: usize) -> Option<usize> {
        self.cell_token[row * self.grid + col]
    }
}

/// Writes token embeddings into the cells they overlap, largest boxes first,
/// so that smaller words win contested cells. Equal areas keep input order.
pub fn build_text_grid(tokens: &[OcrToken], table: &EmbeddingTable, grid: usize) -> GridAssignment {
    let dim = table.dim();
    let mut cell_token = vec![None; grid * grid];
    let mut text_grid = Tensor::zeros(&[grid, grid, dim]);
    for idx in write_order(tokens) {
        let v = table.embed(&tokens[idx].text);
        for (r, c) in cells_for_box(&tokens[idx].bbox, grid) {
            let cell = r * grid + c;
            cell_token[cell] = Some(idx);
            text_grid.row_mut(cell).copy_from_slice(&v);
        }
    }
    GridAssignment {
        grid,
        cell_token,
        text_grid,
        gt_mask: Tensor::zeros(&[grid, grid]),
    }
}

/// Token indices sorted by descending box area; the sort is stable.
pub fn write_order(tokens: &[OcrToken]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by(|&a, &b| tokens[b].bbox.area().total_cmp(&tokens[a].bbox.area()));
    order
}

pub fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Runs of consecutive OCR tokens whose folded texts, joined by single
/// spaces, equal a folded ground-truth answer. Duplicates across answers are
/// reported once.
pub fn ground_truth_match(example: &QaExample) -> Vec<Vec<usize>> {
    let folded: Vec<String> = example.ocr.iter().map(|t| fold(&t.text)).collect();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for answer in &example.answers {
        let target = fold(answer);
        if target.is_empty() {
            continue;
        }
        for start in 0..folded.len() {
            let mut joined = folded[start].clone();
            let mut end = start;
            loop {
                if joined == target {
                    let run: Vec<usize> = (start..=end).collect();
                    if !out.contains(&run) {
                        out.push(run);
                    }
                    break;
                }
                end += 1;
                if joined.len() >= target.len() || end >= folded.len() {
                    break;
                }
                joined.push(' ');
                joined.push_str(&folded[end]);
            }
        }
    }
    out
}

/// 1 on every cell overlapped by a matched token's box, 0 elsewhere.
pub fn build_gt_mask(tokens: &[OcrToken], matches: &[Vec<usize>], grid: usize) -> Result<Tensor<f32>> {
    if matches.is_empty() {
        return Err(Error::Contract(
            "no answer matches the OCR tokens; the example should have been filtered out".into(),
        ));
    }
    let mut mask = Tensor::zeros(&[grid, grid]);
    for &idx in matches.iter().flatten() {
        let tok = tokens
            .get(idx)
            .ok_or_else(|| Error::Contract(format!("matched token {idx} out of range")))?;
        for (r, c) in cells_for_box(&tok.bbox, grid) {
            mask.data_mut()[r * grid + c] = 1.0;
        }
    }
    Ok(mask)
}

/// Text grid plus ground-truth mask for a training example.
pub fn encode_example(example: &QaExample, table: &EmbeddingTable, grid: usize) -> Result<GridAssignment> {
    let mut a = build_text_grid(&example.ocr, table, grid);
    a.gt_mask = build_gt_mask(&example.ocr, &ground_truth_match(example), grid)?;
    Ok(a)
}

/// Channel-wise concatenation `[visual; text]`.
pub fn fuse<T: Scalar>(visual: &Tensor<T>, text: &Tensor<T>) -> Result<Tensor<T>> {
    let (vs, ts) = (visual.shape(), text.shape());
    if vs.len() != 3 || ts.len() != 3 || vs[..2] != ts[..2] {
        return Err(Error::dim("fuse", vs, ts));
    }
    let (cv, ct) = (vs[2], ts[2]);
    let cells = vs[0] * vs[1];
    let mut data = Vec::with_capacity(cells * (cv + ct));
    for cell in 0..cells {
        data.extend_from_slice(visual.row(cell));
        data.extend_from_slice(text.row(cell));
    }
    Tensor::new(vec![vs[0], vs[1], cv + ct], data)
}

/// Inverse of [`fuse`]: splits channels at `at`.
pub fn split_channels<T: Scalar>(fused: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = fused.shape();
    if s.len() != 3 || at == 0 || at >= s[2] {
        return Err(Error::dim("split_channels", s, &[at]));
    }
    let cells = s[0] * s[1];
    let mut a = Vec::with_capacity(cells * at);
    let mut b = Vec::with_capacity(cells * (s[2] - at));
    for cell in 0..cells {
        let row = fused.row(cell);
        a.extend_from_slice(&row[..at]);
        b.extend_from_slice(&row[at..]);
    }
    Ok((Tensor::new(vec![s[0], s[1], at], a)?, Tensor::new(vec![s[0], s[1], s[2] - at], b)?))
}
