//! Synthetic corpus whose answers are learnable from fused features.
//!
//! Each image holds 3 to 8 separated one-row token boxes. Every token gets
//! a distinct color, painted as a one-hot value in the first visual channels
//! at the token's cells; the remaining channels carry weak noise. The
//! question asks for the word written in one of the colors.

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{fixture_words, save_dataset, write_feature_file, BBox, OcrToken, QaExample};
use crate::error::{Error, Result};
use crate::grid::cells_for_box;
use crate::tensor::Tensor;

pub const COLORS: [&str; 8] = ["red", "green", "blue", "yellow", "orange", "purple", "pink", "brown"];
pub const NOISE: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub grid: usize,
    pub vis_channels: usize,
    /// Grid sizes written to the feature file besides `grid`.
    pub extra_grids: Vec<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            count: 200,
            grid: 19,
            vis_channels: 16,
            extra_grids: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub examples: Vec<QaExample>,
    /// `(image_id, [G, G, C_vis])` for every image and requested grid size.
    pub features: Vec<(String, Tensor<f32>)>,
}

pub struct SynthPaths {
    pub dataset: PathBuf,
    pub features: PathBuf,
}

fn vocabulary() -> Vec<&'static str> {
    fixture_words()
        .filter(|w| w.len() >= 3 && w.chars().all(|c| c.is_ascii_lowercase()) && !COLORS.contains(w))
        .collect()
}

/// Places `k` boxes of 1 to 3 cells on a `grid` layout, one cell of margin
/// between any two. Returns `None` when the layout is too crowded.
fn place_boxes<R: Rng>(k: usize, grid: usize, rng: &mut R) -> Option<Vec<(usize, usize, usize)>> {
    let mut taken = vec![false; grid * grid];
    let mut boxes = Vec::with_capacity(k);
    for _ in 0..k {
        let mut placed = false;
        for _ in 0..200 {
            let w = rng.random_range(1..=3usize.min(grid));
            let r = rng.random_range(0..grid);
            let c = rng.random_range(0..=grid - w);
            let free = (r.saturating_sub(1)..(r + 2).min(grid))
                .all(|rr| (c.saturating_sub(1)..(c + w + 1).min(grid)).all(|cc| !taken[rr * grid + cc]));
            if free {
                for cc in c..c + w {
                    taken[r * grid + cc] = true;
                }
                boxes.push((r, c, w));
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(boxes)
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.count == 0 {
        return Err(Error::Config("synthetic count must be at least 1".into()));
    }
    if config.vis_channels < COLORS.len() {
        return Err(Error::Config(format!("need at least {} visual channels", COLORS.len())));
    }
    if config.grid < 6 {
        return Err(Error::Config("synthetic grid must be at least 6".into()));
    }
    let vocab = vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let g = config.grid as f64;
    // Keeps boxes clear of cell borders at every grid size that is a multiple of `grid`.
    let inset = 0.05 / g;
    let mut grids = vec![config.grid];
    grids.extend(config.extra_grids.iter().copied().filter(|&x| x != config.grid));

    let mut examples = Vec::with_capacity(config.count);
    let mut features = Vec::new();
    for i in 0..config.count {
        let k = rng.random_range(3..=8usize);
        let boxes = place_boxes(k, config.grid, &mut rng)
            .ok_or_else(|| Error::Config(format!("grid {} too small for {k} tokens", config.grid)))?;
        let words: Vec<&str> = vocab.choose_multiple(&mut rng, k).copied().collect();
        let mut colors: Vec<usize> = (0..COLORS.len()).collect();
        colors.shuffle(&mut rng);
        let ocr: Vec<OcrToken> = boxes
            .iter()
            .zip(&words)
            .map(|(&(r, c, w), word)| {
                let b = BBox::new(c as f64 / g + inset, r as f64 / g + inset, (c + w) as f64 / g - inset, (r + 1) as f64 / g - inset);
                OcrToken::new(*word, b)
            })
            .collect::<Result<_>>()?;
        let target = rng.random_range(0..k);
        let image_id = format!("img-{i:04}");
        examples.push(QaExample {
            question_id: format!("synth-{i:04}"),
            image_id: image_id.clone(),
            question: ["what", "word", "is", "written", "in", COLORS[colors[target]]]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            answers: vec![words[target].to_string()],
            ocr: ocr.clone(),
        });
        for &gs in &grids {
            let ch = config.vis_channels;
            let mut t = Tensor::from_fn(&[gs, gs, ch], |j| {
                if j % ch < COLORS.len() {
                    0.0
                } else {
                    rng.random_range(0.0..NOISE)
                }
            });
            for (tok, &color) in ocr.iter().zip(&colors) {
                for (r, c) in cells_for_box(&tok.bbox, gs) {
                    t.set(&[r, c, color], 1.0);
                }
            }
            features.push((image_id.clone(), t));
        }
    }
    Ok(SynthCorpus { examples, features })
}

/// Writes `dataset.json` and `features.bin` into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<SynthPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = SynthPaths {
        dataset: dir.join("dataset.json"),
        features: dir.join("features.bin"),
    };
    save_dataset(&corpus.examples, &paths.dataset)?;
    write_feature_file(&paths.features, &corpus.features)?;
    Ok(paths)
}
