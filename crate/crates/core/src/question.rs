//! Question encoder: word embeddings through stacked LSTMs, final hidden
//! state projected to the question vector.

use rand::Rng;

use crate::data::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::{
    dense_apply, dense_backward, dropout, join, lstm_backward, lstm_step, Dropout, LayerParams, LstmCache, Mode,
    ParamVisitor, Parameterized,
};
use crate::tensor::{Scalar, Tensor};

pub const MAX_QUESTION_LEN: usize = 30;

/// Lowercases, strips every non-alphanumeric character, drops words left
/// empty and truncates to [`MAX_QUESTION_LEN`] words.
pub fn normalize_question<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    let mut out: Vec<String> = words
        .iter()
        .map(|w| w.as_ref().chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect();
    if out.len() > MAX_QUESTION_LEN {
        log::warn!("question of {} words truncated to {MAX_QUESTION_LEN}", out.len());
        out.truncate(MAX_QUESTION_LEN);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionEncoder<T = f32> {
    /// Stacked LSTM layers, each `[in + hidden, 4 * hidden]`.
    pub lstm: Vec<LayerParams<T>>,
    /// `[hidden, q_dim]`
    pub proj: LayerParams<T>,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct QuestionCache<T> {
    steps: Vec<Vec<LstmCache<T>>>,
    /// Dropout on every step output of each non-final layer.
    between: Vec<Vec<Dropout<T>>>,
    last: Dropout<T>,
    final_hidden: Tensor<T>,
}

impl<T: Scalar> QuestionEncoder<T> {
    pub fn new<R: Rng + ?Sized>(emb_dim: usize, hidden: usize, layers: usize, q_dim: usize, dropout: f64, rng: &mut R) -> Self {
        let lstm = (0..layers)
            .map(|l| {
                let input = if l == 0 { emb_dim } else { hidden };
                LayerParams::glorot(&[input + hidden, 4 * hidden], rng)
            })
            .collect();
        QuestionEncoder {
            lstm,
            proj: LayerParams::glorot(&[hidden, q_dim], rng),
            dropout,
        }
    }

    pub fn hidden(&self) -> usize {
        self.proj.weight.shape()[0]
    }

    pub fn emb_dim(&self) -> usize {
        self.lstm[0].weight.shape()[0] - self.hidden()
    }

    pub fn q_dim(&self) -> usize {
        self.proj.weight.shape()[1]
    }

    /// Normalized question words as embedding vectors.
    pub fn embed<S: AsRef<str>>(&self, table: &EmbeddingTable, words: &[S]) -> Result<Vec<Tensor<T>>> {
        if table.dim() != self.emb_dim() {
            return Err(Error::dim("question embedding", &[table.dim()], &[self.emb_dim()]));
        }
        let words = normalize_question(words);
        if words.is_empty() {
            return Err(Error::Contract("question has no words".into()));
        }
        Ok(words.iter().map(|w| table.embed_word(w).cast()).collect())
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        embedded: &[Tensor<T>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, QuestionCache<T>)> {
        if embedded.is_empty() {
            return Err(Error::Contract("question has no words".into()));
        }
        let hid = self.hidden();
        let mut seq: Vec<Tensor<T>> = embedded.to_vec();
        let mut steps = Vec::with_capacity(self.lstm.len());
        let mut between = Vec::new();
        for (l, p) in self.lstm.iter().enumerate() {
            let (mut h, mut c) = (Tensor::zeros(&[hid]), Tensor::zeros(&[hid]));
            let mut outs = Vec::with_capacity(seq.len());
            let mut caches = Vec::with_capacity(seq.len());
            for x in &seq {
                let (h2, c2, cache) = lstm_step(x, &h, &c, p)?;
                h = h2;
                c = c2;
                outs.push(h.clone());
                caches.push(cache);
            }
            steps.push(caches);
            if l + 1 < self.lstm.len() {
                let mut masks = Vec::with_capacity(outs.len());
                seq = outs
                    .iter()
                    .map(|o| {
                        let (y, m) = dropout(o, self.dropout, mode, rng)?;
                        masks.push(m);
                        Ok(y)
                    })
                    .collect::<Result<_>>()?;
                between.push(masks);
            } else {
                seq = outs;
            }
        }
        let (final_hidden, last) = dropout(seq.last().unwrap(), self.dropout, mode, rng)?;
        let q = dense_apply(&final_hidden, &self.proj)?;
        Ok((
            q,
            QuestionCache {
                steps,
                between,
                last,
                final_hidden,
            },
        ))
    }

    /// Backpropagates through time; word embeddings are frozen.
    pub fn backward(&mut self, cache: &QuestionCache<T>, grad_q: &Tensor<T>) -> Result<()> {
        let hid = self.hidden();
        let g_final = dense_backward(&cache.final_hidden, &mut self.proj, grad_q, true)?.unwrap();
        let g_last = cache.last.backward(&g_final);
        let len = cache.steps[0].len();
        // Gradient w.r.t. each step output of the layer being processed.
        let mut grad_out: Vec<Vec<T>> = vec![vec![T::zero(); hid]; len];
        grad_out[len - 1] = g_last.into_data();
        for l in (0..self.lstm.len()).rev() {
            let p = &mut self.lstm[l];
            let mut dh_next = vec![T::zero(); hid];
            let mut dc_next = vec![T::zero(); hid];
            let mut grad_in: Vec<Vec<T>> = vec![Vec::new(); len];
            for t in (0..len).rev() {
                let dh: Vec<T> = grad_out[t].iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
                let (dx, dh_prev, dc_prev) = lstm_backward(&cache.steps[l][t], p, &dh, &dc_next);
                grad_in[t] = dx;
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            if l > 0 {
                grad_out = grad_in
                    .into_iter()
                    .zip(&cache.between[l - 1])
                    .map(|(g, m)| m.backward(&Tensor::from_vec(g)).into_data())
                    .collect();
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> QuestionEncoder<U> {
        QuestionEncoder {
            lstm: self.lstm.iter().map(LayerParams::cast).collect(),
            proj: self.proj.cast(),
            dropout: self.dropout,
        }
    }
}

impl<T> Parameterized<T> for QuestionEncoder<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        self.lstm.visit(&join(prefix, "lstm"), v);
        v.param(&join(prefix, "proj"), &mut self.proj);
    }
}

/// Embeds and encodes a question in one call.
pub fn encode_question<T: Scalar, R: Rng + ?Sized, S: AsRef<str>>(
    params: &QuestionEncoder<T>,
    table: &EmbeddingTable,
    question: &[S],
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let emb = params.embed(table, question)?;
    Ok(params.forward(&emb, mode, rng)?.0)
}
