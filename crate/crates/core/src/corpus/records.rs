use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::scorer::parse_answer;

/// A generated caption for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub model_id: String,
    pub prompt_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CaptionsHeader {
    kind: String,
    producer: String,
    fingerprint: String,
}

/// Reads captions JSONL; a leading `{"kind": ...}` header is skipped.
pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let text = jsonl::read_to_string(path)?;
    let location = path.display().to_string();
    let (_, body) = jsonl::split_header(&text);
    body.into_iter()
        .map(|(n, line)| jsonl::parse_line(&location, n, line))
        .collect()
}

/// Captions JSONL with a producer header.
pub fn write_captions(records: &[CaptionRecord], producer: &str, fingerprint: &str) -> String {
    let mut out = Vec::new();
    let header = CaptionsHeader {
        kind: "captions".into(),
        producer: producer.into(),
        fingerprint: fingerprint.into(),
    };
    jsonl::write_line(&mut out, &header).expect("in-memory write");
    for r in records {
        jsonl::write_line(&mut out, r).expect("in-memory write");
    }
    String::from_utf8(out).expect("JSON is UTF-8")
}

/// A response label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
    Unparsed,
}

/// One model response to one probe question, keyed by `(image_id, object)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnswerRecord {
    pub image_id: String,
    pub object: String,
    pub raw_text: String,
    pub parsed: Answer,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Deserialize)]
struct AnswerLine {
    image_id: String,
    object: String,
    raw_text: String,
    #[serde(default)]
    parsed: Option<Answer>,
    #[serde(default)]
    error: Option<String>,
}

impl AnswerRecord {
    pub fn new(
        image_id: impl Into<String>,
        object: impl Into<String>,
        raw_text: impl Into<String>,
    ) -> Self {
        let raw_text = raw_text.into();
        AnswerRecord {
            image_id: image_id.into(),
            object: object.into(),
            parsed: parse_answer(&raw_text),
            raw_text,
            error: None,
        }
    }

    /// A question that could not be answered; recorded as unparsed with a note.
    pub fn failed(
        image_id: impl Into<String>,
        object: impl Into<String>,
        note: impl Into<String>,
    ) -> Self {
        AnswerRecord {
            image_id: image_id.into(),
            object: object.into(),
            raw_text: String::new(),
            parsed: Answer::Unparsed,
            error: Some(note.into()),
        }
    }

    pub fn key(&self) -> (String, String) {
        (self.image_id.clone(), self.object.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswersHeader {
    pub kind: String,
    pub producer: String,
    /// Fingerprint of the probe set these answers respond to.
    pub probe_fingerprint: String,
    pub template_id: String,
}

impl AnswersHeader {
    pub fn new(producer: &str, probe_fingerprint: &str, template_id: &str) -> Self {
        AnswersHeader {
            kind: "answers".into(),
            producer: producer.into(),
            probe_fingerprint: probe_fingerprint.into(),
            template_id: template_id.into(),
        }
    }
}

/// Answers JSONL contents. External files may lack the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSet {
    pub header: Option<AnswersHeader>,
    pub records: Vec<AnswerRecord>,
}

impl AnswerSet {
    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        if let Some(h) = &self.header {
            jsonl::write_line(&mut out, h).expect("in-memory write");
        }
        for r in &self.records {
            jsonl::write_line(&mut out, r).expect("in-memory write");
        }
        String::from_utf8(out).expect("JSON is UTF-8")
    }

    pub fn from_jsonl(text: &str, location: &str) -> Result<Self> {
        let (header, body) = jsonl::split_header(text);
        let header = match header {
            Some((n, line)) => {
                let h: AnswersHeader = jsonl::parse_line(location, n, line)?;
                if h.kind != "answers" {
                    return Err(Error::schema(
                        format!("{location}:{n}"),
                        format!("expected kind \"answers\", found {:?}", h.kind),
                    ));
                }
                Some(h)
            }
            None => None,
        };
        let records = body
            .into_iter()
            .map(|(n, line)| {
                let l: AnswerLine = jsonl::parse_line(location, n, line)?;
                Ok(AnswerRecord {
                    parsed: l.parsed.unwrap_or_else(|| parse_answer(&l.raw_text)),
                    image_id: l.image_id,
                    object: l.object,
                    raw_text: l.raw_text,
                    error: l.error,
                })
            })
            .collect::<Result<_>>()?;
        Ok(AnswerSet { header, records })
    }
}

pub fn read_answers(path: &Path) -> Result<AnswerSet> {
    let text = jsonl::read_to_string(path)?;
    AnswerSet::from_jsonl(&text, &path.display().to_string())
}

pub fn write_answers(path: &Path, answers: &AnswerSet) -> Result<()> {
    jsonl::write_file(path, answers.to_jsonl().as_bytes())
}
