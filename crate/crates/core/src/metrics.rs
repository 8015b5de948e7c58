//! Answer scoring: normalized Levenshtein similarity (ANLS), VQA accuracy,
//! OCR answer recall with its ANLS upper bound, and the confidence-threshold
//! ensemble.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::QaExample;
use crate::error::{Error, Result};
use crate::grid::{fold, ground_truth_match};

/// Default classifier-confidence threshold of the ensemble.
pub const ENSEMBLE_TAU: f64 = 0.37;
/// Longest run of consecutive OCR tokens the upper-bound oracle joins.
pub const MAX_JOIN: usize = 4;
pub const SUBSET_ANSWER_IN_OCR: &str = "answer_in_ocr";

/// Edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + (ca != cb) as usize).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// `1 - levenshtein / max_len` on case-folded, trimmed strings; 1 when both
/// are empty. With `threshold = Some(t)` similarities below `t` become 0.
pub fn nls(pred: &str, gt: &str, threshold: Option<f64>) -> f64 {
    let (p, g) = (fold(pred), fold(gt));
    let longest = p.chars().count().max(g.chars().count());
    let s = if longest == 0 {
        1.0
    } else {
        1.0 - levenshtein(&p, &g) as f64 / longest as f64
    };
    match threshold {
        Some(t) if s < t => 0.0,
        _ => s,
    }
}

/// `min(h / 3, 1)` where `h` counts human answers equal to `pred` after folding.
pub fn vqa_accuracy<S: AsRef<str>>(pred: &str, human_answers: &[S]) -> Result<f64> {
    if human_answers.is_empty() {
        return Err(Error::Contract("no human answers".into()));
    }
    if human_answers.len() != 10 {
        log::warn!("VQA accuracy expects 10 human answers, got {}", human_answers.len());
    }
    let p = fold(pred);
    let h = human_answers.iter().filter(|a| fold(a.as_ref()) == p).count();
    Ok((h as f64 / 3.0).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub question_id: String,
    pub prediction: String,
    pub best_ground_truth: String,
    pub nls: f64,
    pub correct: bool,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub count: usize,
    pub anls: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub anls: f64,
    /// Exact-match accuracy after folding, in percent.
    pub accuracy: f64,
    pub subsets: BTreeMap<String, SubsetScore>,
    pub examples: Vec<ExampleScore>,
}

fn aggregate<'a>(rows: impl Iterator<Item = &'a ExampleScore>) -> SubsetScore {
    let (mut n, mut s, mut c) = (0usize, 0.0f64, 0usize);
    for r in rows {
        n += 1;
        s += r.nls;
        c += r.correct as usize;
    }
    SubsetScore {
        count: n,
        anls: if n == 0 { 0.0 } else { s / n as f64 },
        accuracy: if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 },
    }
}

/// Best similarity of `pred` over the example's answers, with that answer.
pub fn best_nls<'a>(pred: &str, answers: &'a [String], threshold: Option<f64>) -> (f64, &'a str) {
    answers
        .iter()
        .map(|a| (nls(pred, a, threshold), a.as_str()))
        .fold((0.0, answers.first().map_or("", |a| a.as_str())), |best, cur| {
            if cur.0 > best.0 {
                cur
            } else {
                best
            }
        })
}

/// Scores predictions keyed by question id. Missing predictions count as
/// the empty string. Examples whose answer is among the OCR tokens are
/// tagged [`SUBSET_ANSWER_IN_OCR`].
pub fn score_anls(predictions: &HashMap<String, String>, examples: &[QaExample], threshold: Option<f64>) -> EvalReport {
    let rows: Vec<ExampleScore> = examples
        .iter()
        .map(|e| {
            let pred = predictions.get(&e.question_id).map(String::as_str).unwrap_or("");
            let (s, best) = best_nls(pred, &e.answers, threshold);
            let correct = e.answers.iter().any(|a| fold(a) == fold(pred));
            let mut tags = Vec::new();
            if !ground_truth_match(e).is_empty() {
                tags.push(SUBSET_ANSWER_IN_OCR.to_string());
            }
            ExampleScore {
                question_id: e.question_id.clone(),
                prediction: pred.to_string(),
                best_ground_truth: best.to_string(),
                nls: s,
                correct,
                tags,
            }
        })
        .collect();
    let all = aggregate(rows.iter());
    let mut subsets = BTreeMap::new();
    subsets.insert(
        SUBSET_ANSWER_IN_OCR.to_string(),
        aggregate(rows.iter().filter(|r| r.tags.iter().any(|t| t == SUBSET_ANSWER_IN_OCR))),
    );
    EvalReport {
        count: all.count,
        anls: all.anls,
        accuracy: all.accuracy,
        subsets,
        examples: rows,
    }
}

/// Prediction of an oracle restricted to OCR output: the join of at most
/// [`MAX_JOIN`] consecutive tokens closest to any ground-truth answer.
pub fn oracle_prediction(example: &QaExample) -> String {
    let texts: Vec<&str> = example.ocr.iter().map(|t| t.text.trim()).collect();
    let mut best = (0.0f64, String::new());
    for start in 0..texts.len() {
        for end in start..(start + MAX_JOIN).min(texts.len()) {
            let joined = texts[start..=end].join(" ");
            let (s, _) = best_nls(&joined, &example.answers, None);
            if s > best.0 {
                best = (s, joined);
            }
        }
    }
    best.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    /// Percent of examples whose answer is found among the OCR tokens.
    pub recall: f64,
    pub anls_upper_bound: f64,
}

pub fn answer_recall(examples: &[QaExample]) -> RecallReport {
    if examples.is_empty() {
        return RecallReport {
            recall: 0.0,
            anls_upper_bound: 0.0,
        };
    }
    let hits = examples.iter().filter(|e| !ground_truth_match(e).is_empty()).count();
    let preds: HashMap<String, String> =
        examples.iter().map(|e| (e.question_id.clone(), oracle_prediction(e))).collect();
    RecallReport {
        recall: 100.0 * hits as f64 / examples.len() as f64,
        anls_upper_bound: score_anls(&preds, examples, None).anls,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleInput {
    pub question_id: String,
    pub classifier_answer: String,
    pub classifier_confidence: f64,
    pub pointer_answer: String,
    pub pointer_confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Classifier,
    Pointer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleChoice {
    pub question_id: String,
    pub answer: String,
    pub source: Source,
}

/// Classifier answer when its confidence is strictly above `tau`, pointer
/// answer otherwise.
pub fn ensemble_select(inputs: &[EnsembleInput], tau: f64) -> Result<Vec<EnsembleChoice>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("ensemble threshold {tau} outside [0, 1]")));
    }
    inputs
        .iter()
        .map(|i| {
            for c in [i.classifier_confidence, i.pointer_confidence] {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::Contract(format!("confidence {c} for {} outside [0, 1]", i.question_id)));
                }
            }
            let (answer, source) = if i.classifier_confidence > tau {
                (i.classifier_answer.clone(), Source::Classifier)
            } else {
                (i.pointer_answer.clone(), Source::Pointer)
            };
            Ok(EnsembleChoice {
                question_id: i.question_id.clone(),
                answer,
                source,
            })
        })
        .collect()
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub answer: String,
    pub confidence: f64,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "predictions",
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}
