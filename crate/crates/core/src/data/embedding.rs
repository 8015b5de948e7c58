use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FIXTURE_WORDS: &str = include_str!("../../data/fixture_words.txt");
pub const FIXTURE_DIM: usize = 50;
const FIXTURE_SEED: u64 = 0x6772_6964;

/// Words of the bundled fixture vocabulary, in file order.
pub fn fixture_words() -> impl Iterator<Item = &'static str> {
    FIXTURE_WORDS.lines().filter(|l| !l.is_empty())
}

/// Parameters of the subword fallback for out-of-vocabulary words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OovHashing {
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: u32,
    pub seed: u64,
}

impl Default for OovHashing {
    fn default() -> Self {
        OovHashing {
            min_n: 3,
            max_n: 6,
            buckets: 1 << 15,
            seed: 0x5eed,
        }
    }
}

/// 32-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Character n-grams of `<word>` with `min_n <= n <= max_n`, in order of
/// start position then length.
pub fn char_ngrams(word: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
    let mut out = Vec::new();
    for start in 0..chars.len() {
        for n in min_n..=max_n {
            if start + n > chars.len() {
                break;
            }
            out.push(chars[start..start + n].iter().collect());
        }
    }
    out
}

/// Word vectors with a total lookup: unknown words are embedded as the mean
/// of hashed character n-gram bucket vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
    oov: OovHashing,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov: OovHashing) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
            oov,
        }
    }

    /// The bundled test vocabulary (about 2k words) with seeded 50-d vectors.
    pub fn fixture() -> Self {
        Self::synthetic(fixture_words(), FIXTURE_DIM, FIXTURE_SEED)
    }

    /// Assigns every word a vector drawn from a generator seeded by the
    /// word's hash, so a word's vector does not depend on the rest of the list.
    pub fn synthetic<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let mut table = Self::new(dim, OovHashing::default());
        for w in words {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (fnv1a(w.as_bytes()) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let v = (0..dim).map(|_| rng.random_range(-0.5f32..0.5)).collect();
            table.vectors.insert(w.to_string(), v);
        }
        table
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn oov(&self) -> OovHashing {
        self.oov
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dim("embedding insert", &[vector.len()], &[self.dim]));
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    /// Exact match, then the lowercased word, then the subword fallback on
    /// the lowercased word. The empty string maps to the zero vector.
    pub fn embed(&self, word: &str) -> Vec<f32> {
        if let Some(v) = self.vectors.get(word) {
            return v.clone();
        }
        let lower = word.to_lowercase();
        if let Some(v) = self.vectors.get(&lower) {
            return v.clone();
        }
        self.subword_vector(&lower)
    }

    pub fn embed_word(&self, word: &str) -> Tensor<f32> {
        Tensor::from_vec(self.embed(word))
    }

    fn subword_vector(&self, word: &str) -> Vec<f32> {
        let mut acc = vec![0.0f32; self.dim];
        if word.is_empty() {
            return acc;
        }
        let grams = char_ngrams(word, self.oov.min_n, self.oov.max_n);
        for g in &grams {
            let bucket = fnv1a(g.as_bytes()) % self.oov.buckets;
            for (a, b) in acc.iter_mut().zip(self.bucket_vector(bucket)) {
                *a += b;
            }
        }
        let k = 1.0 / grams.len().max(1) as f32;
        acc.iter_mut().for_each(|a| *a *= k);
        acc
    }

    fn bucket_vector(&self, bucket: u32) -> impl Iterator<Item = f32> {
        let seed = self.oov.seed ^ ((bucket as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dim).map(move |_| rng.random_range(-0.5f32..0.5))
    }

    /// Reads `word v1 v2 ... vd` lines. An optional first line `count dim`
    /// is accepted and checked.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, message: String| Error::Format {
            what: "embedding",
            path: path.to_path_buf(),
            message: format!("line {}: {message}", line + 1),
        };
        let mut table: Option<EmbeddingTable> = None;
        let mut declared: Option<usize> = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if i == 0 && rest.len() == 1 {
                if let (Ok(count), Ok(dim)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                    declared = Some(count);
                    table = Some(EmbeddingTable::new(dim, OovHashing::default()));
                    continue;
                }
            }
            let values = rest
                .iter()
                .map(|s| s.parse::<f32>().map_err(|e| bad(i, format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len(), OovHashing::default()));
            if values.len() != t.dim || values.is_empty() {
                return Err(bad(i, format!("expected {} values, found {}", t.dim, values.len())));
            }
            t.vectors.insert(word.to_string(), values);
        }
        let table = table.ok_or_else(|| bad(0, "no vectors".into()))?;
        if let Some(n) = declared {
            if n != table.len() {
                return Err(bad(0, format!("header declares {n} words, found {}", table.len())));
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{} {}", words.len(), self.dim)?;
        for w in words {
            write!(f, "{w}")?;
            for v in &self.vectors[w] {
                write!(f, " {v}")?;
            }
            writeln!(f)?;
        }
        f.flush()?;
        Ok(())
    }
}
