use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{match_index, CandidateError, CandidateSet};
use crate::pipeline::{Query, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Vqa,
    Classification,
    Caption,
}

impl Schema {
    pub const fn as_str(self) -> &'static str {
        match self {
            Self::Vqa => "vqa",
            Self::Classification => "classification",
            Self::Caption => "caption",
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vqa" => Ok(Self::Vqa),
            "classification" => Ok(Self::Classification),
            "caption" => Ok(Self::Caption),
            other => Err(format!("unknown schema `{other}` (expected vqa|classification|caption)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Clean,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detailed_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<CandidateSet>,
    /// Gold label(s): VQA annotator answers, the class label, or reference
    /// captions.
    #[serde(default)]
    pub gold: Vec<String>,
    #[serde(default)]
    pub split: Split,
}

impl DatasetItem {
    pub fn to_query(&self) -> Query {
        let task = match (&self.candidates, &self.short_caption) {
            (Some(candidates), _) => Task::Structured { candidates: candidates.clone() },
            (None, short) => Task::OpenForm { short_caption: short.clone(), detailed_caption: self.detailed_caption.clone() },
        };
        let text = self.question.clone().or_else(|| self.short_caption.clone()).unwrap_or_default();
        Query {
            id: self.id.clone(),
            image_ref: self.image_ref.clone(),
            text,
            task,
            gold: self.gold.clone(),
            adversarial: self.split == Split::Adversarial,
        }
    }

    pub fn is_caption(&self) -> bool {
        self.short_caption.is_some()
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VqaLine {
    id: String,
    image: String,
    question: String,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(default)]
    candidates: Option<Vec<String>>,
    #[serde(default)]
    split: Split,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassificationLine {
    id: String,
    image: String,
    question: String,
    candidates: Vec<String>,
    #[serde(default)]
    gold: Option<String>,
    #[serde(default)]
    split: Split,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionLine {
    id: String,
    image: String,
    short_caption: String,
    #[serde(default)]
    detailed_caption: String,
    #[serde(default)]
    gold_captions: Vec<String>,
    #[serde(default)]
    split: Split,
}

pub fn load_dataset(path: &Path, schema: Schema) -> Result<Vec<DatasetItem>, DatasetError> {
    let io = |source| DatasetError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(io)?;
    parse_dataset(std::io::BufReader::new(file), schema)
}

/// Parses line-delimited JSON; blank lines are skipped, line numbers are
/// 1-based.
pub fn parse_dataset(reader: impl BufRead, schema: Schema) -> Result<Vec<DatasetItem>, DatasetError> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse_line(&line, schema, line_no)?;
        if !seen.insert(item.id.clone()) {
            return Err(DatasetError::DuplicateId { line: line_no, id: item.id });
        }
        items.push(item);
    }
    Ok(items)
}

fn parse_line(line: &str, schema: Schema, line_no: usize) -> Result<DatasetItem, DatasetError> {
    let schema_err = |message: String| DatasetError::Schema { line: line_no, message };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
    let typed_err = |e: serde_json::Error| schema_err(format!("{schema} schema: {e}"));
    let candidate_err = |e: CandidateError| schema_err(format!("invalid candidates: {e}"));
    let item = match schema {
        Schema::Vqa => {
            let l: VqaLine = serde_json::from_value(value).map_err(typed_err)?;
            let candidates = l.candidates.map(CandidateSet::new).transpose().map_err(candidate_err)?;
            DatasetItem {
                id: l.id,
                image_ref: l.image,
                question: Some(l.question),
                short_caption: None,
                detailed_caption: None,
                candidates,
                gold: l.answers,
                split: l.split,
            }
        }
        Schema::Classification => {
            let l: ClassificationLine = serde_json::from_value(value).map_err(typed_err)?;
            let candidates = CandidateSet::new(&l.candidates).map_err(candidate_err)?;
            if let Some(gold) = &l.gold {
                if match_index(gold, &candidates).is_none() {
                    return Err(schema_err(format!("gold `{gold}` is not among the candidates")));
                }
            }
            DatasetItem {
                id: l.id,
                image_ref: l.image,
                question: Some(l.question),
                short_caption: None,
                detailed_caption: None,
                candidates: Some(candidates),
                gold: l.gold.into_iter().collect(),
                split: l.split,
            }
        }
        Schema::Caption => {
            let l: CaptionLine = serde_json::from_value(value).map_err(typed_err)?;
            if l.short_caption.trim().is_empty() {
                return Err(schema_err("short_caption is empty".into()));
            }
            DatasetItem {
                id: l.id,
                image_ref: l.image,
                question: None,
                short_caption: Some(l.short_caption),
                detailed_caption: Some(l.detailed_caption),
                candidates: None,
                gold: l.gold_captions,
                split: l.split,
            }
        }
    };
    if item.id.trim().is_empty() {
        return Err(schema_err("empty id".into()));
    }
    Ok(item)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::TaskKind;

    fn parse(text: &str, schema: Schema) -> Result<Vec<DatasetItem>, DatasetError> {
        parse_dataset(text.as_bytes(), schema)
    }

    #[test]
    fn one_vqa_line() {
        let items = parse(r#"{"id":"q1","image":"img/1.jpg","question":"What color?","answers":["red","red","dark red"]}"#, Schema::Vqa).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].to_query().kind(), TaskKind::OpenForm);
        assert_eq!(items[0].gold.len(), 3);
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = "{\"id\":\"a\",\"image\":\"i\",\"question\":\"q\"}\n\n{\"id\":\"a\",\"image\":\"j\",\"question\":\"q\"}\n";
        let err = parse(text, Schema::Vqa).unwrap_err();
        assert!(matches!(&err, DatasetError::DuplicateId { line: 3, id } if id == "a"), "{err}");
        assert!(err.to_string().contains("`a`"));
    }

    #[test]
    fn classification_needs_candidates() {
        let err = parse(r#"{"id":"c1","image":"i","question":"Which?","gold":"cat"}"#, Schema::Classification).unwrap_err();
        assert!(matches!(err, DatasetError::Schema { line: 1, .. }), "{err}");
        let ok = parse(r#"{"id":"c1","image":"i","question":"Which?","candidates":["cat","dog"],"gold":"Cat","split":"adversarial"}"#, Schema::Classification).unwrap();
        let q = ok[0].to_query();
        assert_eq!(q.kind(), TaskKind::Structured);
        assert!(q.adversarial);
    }

    #[test]
    fn gold_outside_candidates_is_rejected() {
        assert!(parse(r#"{"id":"c","image":"i","question":"q","candidates":["cat","dog"],"gold":"bird"}"#, Schema::Classification).is_err());
    }

    #[test]
    fn caption_lines_become_caption_queries() {
        let items = parse(
            r#"{"id":"k","image":"i","short_caption":"Two women with an umbrella.","detailed_caption":"...","gold_captions":["a"]}"#,
            Schema::Caption,
        )
        .unwrap();
        assert_eq!(items[0].to_query().kind(), TaskKind::Caption);
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse("{\"id\":\"a\",\"image\":\"i\",\"question\":\"q\"}\n{oops", Schema::Vqa).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }));
    }
}
