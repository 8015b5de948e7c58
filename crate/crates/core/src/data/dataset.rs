use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::ground_truth_match;

/// Box corners normalized to `[0, 1]` of the image width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let vals = [self.x0, self.y0, self.x1, self.y1];
        if vals.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(format!("coordinates {vals:?} must lie in [0, 1]"));
        }
        if self.x0 >= self.x1 {
            return Err(format!("x0 {} must be < x1 {}", self.x0, self.x1));
        }
        if self.y0 >= self.y1 {
            return Err(format!("y0 {} must be < y1 {}", self.y0, self.y1));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcrToken {
    pub text: String,
    pub bbox: BBox,
}

impl OcrToken {
    pub fn new(text: impl Into<String>, bbox: BBox) -> Result<Self> {
        let t = OcrToken { text: text.into(), bbox };
        if t.text.trim().is_empty() {
            return Err(Error::Contract("OCR token text is empty".into()));
        }
        t.bbox.validate().map_err(Error::Contract)?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaExample {
    pub question_id: String,
    pub image_id: String,
    /// Whitespace tokens of the question, in order.
    pub question: Vec<String>,
    pub answers: Vec<String>,
    pub ocr: Vec<OcrToken>,
}

impl QaExample {
    pub fn question_text(&self) -> String {
        self.question.join(" ")
    }
}

fn parse_err(index: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        index,
        field: field.to_string(),
        message: message.into(),
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, index: usize, field: &str) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(parse_err(index, field, format!("expected a string, found {other}"))),
        None => Err(parse_err(index, field, "missing")),
    }
}

fn parse_example(index: usize, value: &Value) -> Result<QaExample> {
    let obj = value.as_object().ok_or_else(|| parse_err(index, "example", "expected an object"))?;
    let image_id = string_field(obj, index, "image_id")?;
    let question_id = match obj.get("question_id") {
        None | Some(Value::Null) => index.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(other) => return Err(parse_err(index, "question_id", format!("unexpected {other}"))),
    };
    let question: Vec<String> = string_field(obj, index, "question")?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if question.is_empty() {
        return Err(parse_err(index, "question", "question has no words"));
    }
    let answers = match obj.get("answers") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|a| a.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| parse_err(index, "answers", "answers must be strings"))?,
        Some(_) => return Err(parse_err(index, "answers", "expected an array")),
        None => return Err(parse_err(index, "answers", "missing")),
    };
    if answers.is_empty() {
        return Err(parse_err(index, "answers", "at least one answer is required"));
    }
    let ocr_items = match obj.get("ocr") {
        Some(Value::Array(items)) => items,
        Some(_) => return Err(parse_err(index, "ocr", "expected an array")),
        None => return Err(parse_err(index, "ocr", "missing")),
    };
    let mut ocr = Vec::with_capacity(ocr_items.len());
    for (t, item) in ocr_items.iter().enumerate() {
        let tok = item.as_object().ok_or_else(|| parse_err(index, "ocr", format!("token {t} is not an object")))?;
        let text = match tok.get("text") {
            Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
            _ => return Err(parse_err(index, "text", format!("token {t} needs non-empty text"))),
        };
        let coords = tok
            .get("box")
            .and_then(Value::as_array)
            .filter(|a| a.len() == 4)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| parse_err(index, "box", format!("token {t} needs box [x0, y0, x1, y1]")))?;
        let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3]);
        bbox.validate().map_err(|m| parse_err(index, "box", format!("token {t}: {m}")))?;
        ocr.push(OcrToken { text, bbox });
    }
    Ok(QaExample {
        question_id,
        image_id,
        question,
        answers,
        ocr,
    })
}

/// Parses an annotation document `{"examples": [...]}`.
pub fn parse_dataset(text: &str) -> Result<Vec<QaExample>> {
    let doc: Value = serde_json::from_str(text)?;
    let items = doc
        .get("examples")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err(0, "examples", "document needs an \"examples\" array"))?;
    items.iter().enumerate().map(|(i, v)| parse_example(i, v)).collect()
}

pub fn load_dataset(path: &Path) -> Result<Vec<QaExample>> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

pub fn to_json(examples: &[QaExample]) -> Value {
    let items: Vec<Value> = examples
        .iter()
        .map(|e| {
            json!({
                "question_id": e.question_id,
                "image_id": e.image_id,
                "question": e.question_text(),
                "answers": e.answers,
                "ocr": e.ocr.iter().map(|t| json!({
                    "text": t.text,
                    "box": [t.bbox.x0, t.bbox.y0, t.bbox.x1, t.bbox.y1],
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "examples": items })
}

pub fn save_dataset(examples: &[QaExample], path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&to_json(examples))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discarded {
    pub example: QaExample,
    pub reason: String,
}

/// Splits examples into those whose answer can be located among the OCR
/// tokens and those that cannot be used as training targets.
pub fn filter_trainable(examples: Vec<QaExample>) -> (Vec<QaExample>, Vec<Discarded>) {
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for e in examples {
        let reason = if e.ocr.is_empty() {
            Some("no OCR tokens".to_string())
        } else if ground_truth_match(&e).is_empty() {
            Some(format!("no answer among {:?} matches the OCR tokens", e.answers))
        } else {
            None
        };
        match reason {
            Some(reason) => {
                log::debug!("discarding {} ({}): {reason}", e.question_id, e.image_id);
                discarded.push(Discarded { example: e, reason });
            }
            None => kept.push(e),
        }
    }
    (kept, discarded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(text: &str, b: [f64; 4]) -> OcrToken {
        OcrToken::new(text, BBox::new(b[0], b[1], b[2], b[3])).unwrap()
    }

    fn example(answers: &[&str], ocr: Vec<OcrToken>) -> QaExample {
        QaExample {
            question_id: "q".into(),
            image_id: "img".into(),
            question: vec!["what".into(), "is".into(), "this".into()],
            answers: answers.iter().map(|s| s.to_string()).collect(),
            ocr,
        }
    }

    #[test]
    fn empty_array() {
        assert!(parse_dataset(r#"{"examples": []}"#).unwrap().is_empty());
    }

    #[test]
    fn invalid_box_names_example_and_field() {
        let doc = r#"{"examples": [
            {"image_id": "a", "question": "what is it", "answers": ["x"], "ocr": [{"text": "x", "box": [0.1, 0.1, 0.2, 0.2]}]},
            {"image_id": "b", "question": "what is it", "answers": ["y"], "ocr": [{"text": "y", "box": [0.5, 0.1, 0.5, 0.2]}]},
            {"image_id": "c", "question": "what is it", "answers": ["z"], "ocr": []}
        ]}"#;
        match parse_dataset(doc).unwrap_err() {
            Error::Parse { index, field, .. } => {
                assert_eq!(index, 1);
                assert_eq!(field, "box");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_fields_are_reported() {
        let doc = r#"{"examples": [{"image_id": "a", "question": "q", "ocr": []}]}"#;
        assert!(matches!(parse_dataset(doc), Err(Error::Parse { field, .. }) if field == "answers"));
        let doc = r#"{"examples": [{"image_id": "a", "question": "  ", "answers": ["x"], "ocr": []}]}"#;
        assert!(matches!(parse_dataset(doc), Err(Error::Parse { field, .. }) if field == "question"));
    }

    #[test]
    fn question_is_whitespace_tokenized_and_ids_default() {
        let doc = r#"{"examples": [{"image_id": "a", "question": "what  brand\tname ?", "answers": ["x"], "ocr": []}]}"#;
        let ex = parse_dataset(doc).unwrap();
        assert_eq!(ex[0].question, vec!["what", "brand", "name", "?"]);
        assert_eq!(ex[0].question_id, "0");
    }

    #[test]
    fn filter_keeps_matchable() {
        let keep = example(&["COLUMBIA"], vec![tok("Columbia", [0.1, 0.1, 0.3, 0.2])]);
        let no_ocr = example(&["x"], vec![]);
        let (kept, dropped) = filter_trainable(vec![keep.clone(), no_ocr]);
        assert_eq!(kept, vec![keep]);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].reason, "no OCR tokens");
    }

    #[test]
    fn filter_hand_labelled_fixture() {
        // Six of these ten are answerable from their OCR tokens.
        let b = [0.1, 0.1, 0.2, 0.2];
        let c = [0.3, 0.1, 0.4, 0.2];
        let fixture = vec![
            example(&["stop"], vec![tok("STOP", b)]),
            example(&["new york"], vec![tok("New", b), tok("York", c)]),
            example(&["50p"], vec![tok("50", b)]),
            example(&["domino"], vec![tok("sugar", b), tok("Domino", c)]),
            example(&["exit"], vec![]),
            example(&["pub", "bar"], vec![tok("bar", b)]),
            example(&["york new"], vec![tok("New", b), tok("York", c)]),
            example(&[" Tropicana "], vec![tok("tropicana", b)]),
            example(&["sinclair"], vec![tok("sinclairs", b)]),
            example(&["stock port"], vec![tok("stock", b), tok("port", c)]),
        ];
        let (kept, dropped) = filter_trainable(fixture);
        assert_eq!(kept.len(), 6);
        assert_eq!(dropped.len(), 4);
        let (again, none) = filter_trainable(kept.clone());
        assert_eq!(again, kept);
        assert!(none.is_empty());
    }

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let data = vec![
            example(&["stop", "halt"], vec![tok("STOP", [0.1, 0.1, 0.2, 0.2])]),
            example(&["x"], vec![]),
        ];
        save_dataset(&data, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), data);
    }
}
