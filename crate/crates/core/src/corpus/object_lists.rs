//! Ingestion of per-image object lists produced by a segmentation model.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;

use super::{ImageRecord, ObjectVocabulary, Source, SynonymLexicon};
use crate::error::{Error, Result};
use crate::jsonl;

/// What to do with an object name that resolves to nothing in the vocabulary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum UnknownObjectPolicy {
    #[default]
    Reject,
    /// Drop the name and log a warning.
    Skip,
}

#[derive(Deserialize)]
struct ObjectListLine {
    image_id: String,
    objects: Vec<String>,
}

pub fn load_object_lists(
    path: &Path,
    vocab: &ObjectVocabulary,
    lexicon: Option<&SynonymLexicon>,
    policy: UnknownObjectPolicy,
) -> Result<Vec<ImageRecord>> {
    let text = jsonl::read_to_string(path)?;
    parse_object_lists(&text, &path.display().to_string(), vocab, lexicon, policy)
}

/// Parses `{"image_id", "objects": [names]}` lines.
///
/// Names go through the lexicon first (when given), then the vocabulary,
/// both case-insensitively.
pub fn parse_object_lists(
    text: &str,
    location: &str,
    vocab: &ObjectVocabulary,
    lexicon: Option<&SynonymLexicon>,
    policy: UnknownObjectPolicy,
) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (line_no, line) in jsonl::lines(text) {
        let entry: ObjectListLine = jsonl::parse_line(location, line_no, line)?;
        if entry.image_id.is_empty() {
            return Err(Error::schema(
                format!("{location}:{line_no}"),
                "image_id must be non-empty",
            ));
        }
        if !seen.insert(entry.image_id.clone()) {
            return Err(Error::Conflict(format!(
                "{location}:{line_no}: image_id {:?} appears more than once",
                entry.image_id
            )));
        }
        let mut ground_truth = BTreeSet::new();
        for name in &entry.objects {
            let resolved = lexicon
                .and_then(|lex| lex.lookup(name))
                .or_else(|| vocab.id(name));
            match (resolved, policy) {
                (Some(id), _) => {
                    ground_truth.insert(id);
                }
                (None, UnknownObjectPolicy::Reject) => {
                    return Err(Error::Reference(format!(
                        "{location}:{line_no}: object {name:?} is not in the vocabulary"
                    )));
                }
                (None, UnknownObjectPolicy::Skip) => {
                    log::warn!(
                        "{location}:{line_no}: skipping object {name:?} outside the vocabulary"
                    );
                }
            }
        }
        records.push(ImageRecord {
            image_id: entry.image_id,
            ground_truth,
            source: Source::Segmentation,
        });
    }
    Ok(records)
}
