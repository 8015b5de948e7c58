//! Visual feature maps `[G, G, C_vis]`, read from a binary file or derived
//! deterministically from the image id.
//!
//! File layout: the 5 bytes `GFEA1`, then records until end of file:
//!
//! ```text
//! u32 id_len | id (UTF-8) | u32 G | u32 C | f32 value * (G * G * C)
//! ```
//!
//! Little-endian throughout, values in `[row, col, channel]` order. An image
//! may have one record per grid size.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Reader;
use crate::data::fnv1a;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"GFEA1";

#[derive(Debug, Clone)]
pub enum FeatureSource {
    File(HashMap<(String, usize), Tensor<f32>>),
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct FeatureProvider {
    /// Grid size served by [`FeatureProvider::get_features`].
    pub grid: usize,
    pub channels: usize,
    pub source: FeatureSource,
}

impl FeatureProvider {
    pub fn synthetic(grid: usize, channels: usize, seed: u64) -> Self {
        FeatureProvider {
            grid,
            channels,
            source: FeatureSource::Synthetic { seed },
        }
    }

    pub fn from_records(records: Vec<(String, Tensor<f32>)>, grid: usize) -> Result<Self> {
        let mut channels = None;
        let mut map = HashMap::new();
        for (id, t) in records {
            let s = t.shape().to_vec();
            if s.len() != 3 || s[0] != s[1] {
                return Err(Error::dim("feature record", &s, &[grid, grid, 0]));
            }
            if *channels.get_or_insert(s[2]) != s[2] {
                return Err(Error::Config(format!("image {id} has {} channels, expected {}", s[2], channels.unwrap())));
            }
            map.insert((id, s[0]), t);
        }
        Ok(FeatureProvider {
            grid,
            channels: channels.unwrap_or(0),
            source: FeatureSource::File(map),
        })
    }

    pub fn from_file(path: &Path, grid: usize) -> Result<Self> {
        Self::from_records(read_feature_file(path)?, grid)
    }

    pub fn get_features(&self, image_id: &str) -> Result<Tensor<f32>> {
        self.get_features_at(image_id, self.grid)
    }

    pub fn get_features_at(&self, image_id: &str, grid: usize) -> Result<Tensor<f32>> {
        match &self.source {
            FeatureSource::File(map) => map
                .get(&(image_id.to_string(), grid))
                .cloned()
                .ok_or_else(|| Error::MissingFeatures {
                    image_id: image_id.to_string(),
                    grid,
                }),
            FeatureSource::Synthetic { seed } => {
                if grid == 0 || self.channels == 0 {
                    return Err(Error::Config("synthetic features need grid and channels > 0".into()));
                }
                let id_hash = fnv1a(image_id.as_bytes()) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (id_hash << 16) ^ grid as u64);
                Ok(Tensor::from_fn(&[grid, grid, self.channels], |_| rng.random::<f32>()))
            }
        }
    }
}

pub fn write_feature_file(path: &Path, records: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut buf = MAGIC.to_vec();
    for (id, t) in records {
        let s = t.shape();
        if s.len() != 3 || s[0] != s[1] {
            return Err(Error::dim("feature record", s, &[0, 0, 0]));
        }
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        buf.extend_from_slice(&(s[0] as u32).to_le_bytes());
        buf.extend_from_slice(&(s[2] as u32).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|message| Error::Format {
        what: "feature",
        path: path.to_path_buf(),
        message,
    })
}

fn decode(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor<f32>)>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("bad magic".into());
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let n = r.u32()? as usize;
        let id = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| e.to_string())?;
        let g = r.u32()? as usize;
        let c = r.u32()? as usize;
        let len = g
            .checked_mul(g)
            .and_then(|v| v.checked_mul(c))
            .and_then(|v| v.checked_mul(4))
            .ok_or("record too large")?;
        let data = r
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(vec![g, g, c], data).map_err(|e| format!("{id}: {e}"))?;
        out.push((id, t));
    }
    Ok(out)
}
