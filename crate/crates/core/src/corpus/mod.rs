//! Object vocabularies, image annotations, lexicons, captions and answers.
//!
//! Whatever the input flavor (COCO instances, segmentation object lists),
//! images end up in a [`Corpus`], which has a single JSONL representation:
//! a header line carrying the vocabulary, then one line per image.

mod coco;
mod lexicon;
mod object_lists;
mod records;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub use coco::{load_coco_instances, parse_coco_instances};
pub use lexicon::{load_lexicon, parse_lexicon, SynonymLexicon};
pub use object_lists::{load_object_lists, parse_object_lists, UnknownObjectPolicy};
pub use records::{
    read_answers, read_captions, write_answers, write_captions, Answer, AnswerRecord, AnswerSet,
    AnswersHeader, CaptionRecord,
};

/// Dense index into an [`ObjectVocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl ObjectId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Lowercases and collapses runs of whitespace to one space.
pub fn canonical_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The universe of probe-able objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectVocabulary {
    names: Vec<String>,
    index: HashMap<String, ObjectId>,
}

impl ObjectVocabulary {
    /// Builds a vocabulary whose ids follow the order of `names`.
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = ObjectVocabulary {
            names: Vec::new(),
            index: HashMap::new(),
        };
        for (i, raw) in names.into_iter().enumerate() {
            let name = canonical_name(raw.as_ref());
            if name.is_empty() {
                return Err(Error::schema(
                    format!("vocabulary[{i}]"),
                    "object name must be non-empty",
                ));
            }
            let id = ObjectId(vocab.names.len() as u32);
            if vocab.index.insert(name.clone(), id).is_some() {
                return Err(Error::Conflict(format!(
                    "object name {name:?} appears twice in the vocabulary"
                )));
            }
            vocab.names.push(name);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ObjectId> + '_ {
        (0..self.names.len() as u32).map(ObjectId)
    }

    pub fn contains(&self, id: ObjectId) -> bool {
        id.index() < self.names.len()
    }

    /// Canonical name of `id`.
    ///
    /// Panics if `id` does not belong to this vocabulary.
    pub fn name(&self, id: ObjectId) -> &str {
        &self.names[id.index()]
    }

    /// Case-insensitive lookup of a canonical name.
    pub fn id(&self, name: &str) -> Option<ObjectId> {
        self.index.get(&canonical_name(name)).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Annotation,
    Segmentation,
}

/// One image and the set of objects present in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: String,
    pub ground_truth: BTreeSet<ObjectId>,
    pub source: Source,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        ground_truth: impl IntoIterator<Item = ObjectId>,
        source: Source,
    ) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            ground_truth: ground_truth.into_iter().collect(),
            source,
        }
    }

    pub fn contains(&self, id: ObjectId) -> bool {
        self.ground_truth.contains(&id)
    }
}

/// A validated vocabulary plus the images annotated against it.
#[derive(Debug, Clone)]
pub struct Corpus {
    vocabulary: ObjectVocabulary,
    images: Vec<ImageRecord>,
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    kind: String,
    vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingerprint: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    image_id: String,
    objects: Vec<String>,
    source: Source,
}

const CORPUS_KIND: &str = "corpus";

impl Corpus {
    pub fn new(vocabulary: ObjectVocabulary, images: Vec<ImageRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(images.len());
        for (i, image) in images.iter().enumerate() {
            if image.image_id.is_empty() {
                return Err(Error::schema(
                    format!("images[{i}]"),
                    "image_id must be non-empty",
                ));
            }
            if by_id.insert(image.image_id.clone(), i).is_some() {
                return Err(Error::Conflict(format!(
                    "image_id {:?} appears more than once",
                    image.image_id
                )));
            }
            if let Some(bad) = image
                .ground_truth
                .iter()
                .find(|id| !vocabulary.contains(**id))
            {
                return Err(Error::Reference(format!(
                    "image {:?} references object {bad} outside a vocabulary of {}",
                    image.image_id,
                    vocabulary.len()
                )));
            }
        }
        Ok(Corpus {
            vocabulary,
            images,
            by_id,
        })
    }

    pub fn vocabulary(&self) -> &ObjectVocabulary {
        &self.vocabulary
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.by_id.get(image_id).map(|&i| &self.images[i])
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn body_lines(&self) -> Vec<String> {
        self.images
            .iter()
            .map(|image| {
                let line = CorpusLine {
                    image_id: image.image_id.clone(),
                    objects: image
                        .ground_truth
                        .iter()
                        .map(|&id| self.vocabulary.name(id).to_string())
                        .collect(),
                    source: image.source,
                };
                serde_json::to_string(&line).expect("corpus line serializes")
            })
            .collect()
    }

    /// Content hash over the vocabulary and every image record.
    pub fn fingerprint(&self) -> String {
        let mut bytes = serde_json::to_vec(self.vocabulary.names()).expect("names serialize");
        for line in self.body_lines() {
            bytes.push(b'\n');
            bytes.extend_from_slice(line.as_bytes());
        }
        jsonl::sha256_hex(&bytes)
    }

    pub fn to_jsonl(&self) -> String {
        let header = CorpusHeader {
            kind: CORPUS_KIND.to_string(),
            vocabulary: self.vocabulary.names().to_vec(),
            fingerprint: Some(self.fingerprint()),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for line in self.body_lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, location: &str) -> Result<Self> {
        let (header, body) = jsonl::split_header(text);
        let Some((line_no, header)) = header else {
            return Err(Error::schema(
                format!("{location}:1"),
                "corpus file must start with a header line carrying the vocabulary",
            ));
        };
        let header: CorpusHeader = jsonl::parse_line(location, line_no, header)?;
        if header.kind != CORPUS_KIND {
            return Err(Error::schema(
                format!("{location}:{line_no}"),
                format!("expected kind {CORPUS_KIND:?}, found {:?}", header.kind),
            ));
        }
        let vocabulary = ObjectVocabulary::new(&header.vocabulary)?;
        let mut images = Vec::with_capacity(body.len());
        for (line_no, line) in body {
            let record: CorpusLine = jsonl::parse_line(location, line_no, line)?;
            let mut ground_truth = BTreeSet::new();
            for name in &record.objects {
                let id = vocabulary.id(name).ok_or_else(|| {
                    Error::Reference(format!(
                        "{location}:{line_no}: object {name:?} is not in the vocabulary"
                    ))
                })?;
                ground_truth.insert(id);
            }
            images.push(ImageRecord {
                image_id: record.image_id,
                ground_truth,
                source: record.source,
            });
        }
        let corpus = Corpus::new(vocabulary, images)?;
        if let Some(recorded) = header.fingerprint {
            if recorded != corpus.fingerprint() {
                log::warn!("{location}: recorded corpus fingerprint does not match its content");
            }
        }
        Ok(corpus)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = jsonl::read_to_string(path)?;
        Self::from_jsonl(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        jsonl::write_file(path, self.to_jsonl().as_bytes())
    }
}

/// Reads a plain vocabulary list: one canonical name per line, `#` comments.
pub fn parse_vocabulary_list(text: &str) -> Result<ObjectVocabulary> {
    ObjectVocabulary::new(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#')),
    )
}
