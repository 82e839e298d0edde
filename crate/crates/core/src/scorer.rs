//! Yes/No answer parsing, binary classification metrics and the
//! caption/answer consistency audit.
//!
//! The positive class is "yes": precision is the share of "yes" answers
//! that were right, recall the share of present objects affirmed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::builder::{Expected, ProbeQuestion, ProbeSet};
use crate::chair::MentionSet;
use crate::corpus::{Answer, AnswerRecord, ObjectId};
use crate::error::{Error, Result};
use crate::render;

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
}

/// Maps a free-text response onto yes / no / unparsed.
///
/// A leading "yes" or "no" decides. Otherwise the first sentence decides
/// if it contains whole-word "yes" or "no" but not both.
pub fn parse_answer(raw: &str) -> Answer {
    let lower = raw.to_lowercase();
    match words(&lower).next() {
        Some("yes") => return Answer::Yes,
        Some("no") => return Answer::No,
        _ => {}
    }
    let first_sentence = lower
        .split(['.', '!', '?', '\n'])
        .find(|s| !s.trim().is_empty())
        .unwrap_or("");
    let mut yes = false;
    let mut no = false;
    for w in words(first_sentence) {
        yes |= w == "yes";
        no |= w == "no";
    }
    match (yes, no) {
        (true, false) => Answer::Yes,
        (false, true) => Answer::No,
        _ => Answer::Unparsed,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum UnparsedPolicy {
    /// Count unparsed answers as "no".
    #[default]
    AsNo,
    /// Drop questions with unparsed answers before computing metrics.
    Exclude,
}

/// Mergeable confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, expected: Expected, predicted_yes: bool) {
        match (expected, predicted_yes) {
            (Expected::Yes, true) => self.tp += 1,
            (Expected::Yes, false) => self.fn_ += 1,
            (Expected::No, true) => self.fp += 1,
            (Expected::No, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        *self = *self + o;
    }
}

/// Metrics as percentages with two decimals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedScores {
    pub accuracy: Option<String>,
    pub precision: Option<String>,
    pub recall: Option<String>,
    pub f1: Option<String>,
    pub yes_ratio: Option<String>,
}

/// Fractions are `None` when their denominator is zero; `flags` says which.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub yes_ratio: Option<f64>,
    pub confusion: Confusion,
    pub unparsed: u64,
    pub unparsed_policy: UnparsedPolicy,
    pub questions: u64,
    pub rendered: RenderedScores,
    pub flags: Vec<String>,
}

impl ScoreReport {
    pub fn from_confusion(
        c: Confusion,
        unparsed: u64,
        policy: UnparsedPolicy,
        questions: u64,
    ) -> Self {
        let frac = |n: u64, d: u64| (d > 0).then(|| n as f64 / d as f64);
        let total = c.total();
        // f1 = 2PR/(P+R) = 2tp/(2tp+fp+fn); zero when tp = 0.
        let f1_den = 2 * c.tp + c.fp + c.fn_;
        let mut flags = Vec::new();
        if total == 0 {
            flags.push("no_scored_questions".to_string());
        }
        if c.tp + c.fp == 0 {
            flags.push("precision_undefined_no_yes_predictions".to_string());
        }
        if c.tp + c.fn_ == 0 {
            flags.push("recall_undefined_no_positive_questions".to_string());
        }
        ScoreReport {
            accuracy: frac(c.tp + c.tn, total),
            precision: frac(c.tp, c.tp + c.fp),
            recall: frac(c.tp, c.tp + c.fn_),
            f1: frac(2 * c.tp, f1_den),
            yes_ratio: frac(c.tp + c.fp, total),
            rendered: RenderedScores {
                accuracy: render::percent(c.tp + c.tn, total, 2),
                precision: render::percent(c.tp, c.tp + c.fp, 2),
                recall: render::percent(c.tp, c.tp + c.fn_, 2),
                f1: render::percent(2 * c.tp, f1_den, 2),
                yes_ratio: render::percent(c.tp + c.fp, total, 2),
            },
            confusion: c,
            unparsed,
            unparsed_policy: policy,
            questions,
            flags,
        }
    }
}

type QuestionKey<'a> = (&'a str, ObjectId);

/// Pairs each probe question with exactly one answer, or reports every
/// missing, duplicate and unexpected reference.
fn match_answers<'p, 'a>(
    probe: &'p ProbeSet,
    answers: &'a [AnswerRecord],
) -> Result<Vec<(&'p ProbeQuestion, &'a AnswerRecord)>> {
    let vocab = probe.vocabulary();
    let mut by_key: HashMap<QuestionKey<'a>, Vec<&'a AnswerRecord>> = HashMap::new();
    let mut unexpected = Vec::new();
    let question_keys: BTreeSet<(&str, ObjectId)> = probe
        .questions()
        .iter()
        .map(|q| (q.image_id.as_str(), q.object_id))
        .collect();
    for a in answers {
        match vocab.id(&a.object) {
            Some(id) if question_keys.contains(&(a.image_id.as_str(), id)) => {
                by_key.entry((a.image_id.as_str(), id)).or_default().push(a);
            }
            _ => unexpected.push(format!("{}/{}", a.image_id, a.object)),
        }
    }
    let mut missing = Vec::new();
    let mut duplicate = Vec::new();
    let mut pairs = Vec::with_capacity(probe.questions().len());
    for q in probe.questions() {
        let label = || format!("{}/{}", q.image_id, probe.object_name(q));
        match by_key
            .get(&(q.image_id.as_str(), q.object_id))
            .map(Vec::as_slice)
        {
            None | Some([]) => missing.push(label()),
            Some([one]) => pairs.push((q, *one)),
            Some(_) => duplicate.push(label()),
        }
    }
    if missing.is_empty() && duplicate.is_empty() && unexpected.is_empty() {
        Ok(pairs)
    } else {
        Err(Error::Coverage {
            missing,
            duplicate,
            unexpected,
        })
    }
}

/// Accuracy, precision, recall, F1 and yes-ratio of `answers` against `probe`.
pub fn score(
    probe: &ProbeSet,
    answers: &[AnswerRecord],
    policy: UnparsedPolicy,
) -> Result<ScoreReport> {
    let pairs = match_answers(probe, answers)?;
    let mut confusion = Confusion::default();
    let mut unparsed = 0;
    for (q, a) in &pairs {
        match (a.parsed, policy) {
            (Answer::Unparsed, UnparsedPolicy::Exclude) => unparsed += 1,
            (Answer::Unparsed, UnparsedPolicy::AsNo) => {
                unparsed += 1;
                confusion.record(q.expected, false);
            }
            (label, _) => confusion.record(q.expected, label == Answer::Yes),
        }
    }
    Ok(ScoreReport::from_confusion(
        confusion,
        unparsed,
        policy,
        pairs.len() as u64,
    ))
}

/// Agreement between probe answers and what the same model put in captions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Probed objects answered "no".
    pub no_answered_objects: u64,
    /// ... of which the image's caption nevertheless mentions.
    pub no_answered_mentioned_in_caption: u64,
    /// Probed objects that the image's caption mentions.
    pub caption_mentioned_objects: u64,
    /// ... of which were answered "yes".
    pub caption_mentioned_answered_yes: u64,
}

/// Cross-checks answers against caption mentions for the same images.
///
/// Several mention sets for one image are merged.
pub fn consistency(
    probe: &ProbeSet,
    answers: &[AnswerRecord],
    mentions: &[MentionSet],
) -> Result<ConsistencyReport> {
    let pairs = match_answers(probe, answers)?;
    let mut mentioned: BTreeMap<&str, BTreeSet<ObjectId>> = BTreeMap::new();
    for m in mentions {
        mentioned
            .entry(m.image_id.as_str())
            .or_default()
            .extend(m.mentioned.iter().copied());
    }
    let mut report = ConsistencyReport::default();
    for (q, a) in pairs {
        let in_caption = mentioned
            .get(q.image_id.as_str())
            .ok_or_else(|| {
                Error::Reference(format!(
                    "image {:?} was answered but has no caption mentions",
                    q.image_id
                ))
            })?
            .contains(&q.object_id);
        if a.parsed == Answer::No {
            report.no_answered_objects += 1;
            report.no_answered_mentioned_in_caption += u64::from(in_caption);
        }
        if in_caption {
            report.caption_mentioned_objects += 1;
            report.caption_mentioned_answered_yes += u64::from(a.parsed == Answer::Yes);
        }
    }
    Ok(report)
}
