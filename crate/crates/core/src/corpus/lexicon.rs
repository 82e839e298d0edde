use std::collections::BTreeMap;
use std::path::Path;

use super::{ObjectId, ObjectVocabulary};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::text;

/// Surface phrases (normalized token sequences) mapped onto canonical objects.
///
/// Every canonical name always maps to itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymLexicon {
    phrases: BTreeMap<String, ObjectId>,
    max_tokens: usize,
}

impl SynonymLexicon {
    /// The lexicon that only knows canonical names.
    pub fn identity(vocab: &ObjectVocabulary) -> Self {
        Self::from_pairs(vocab, std::iter::empty::<(&str, ObjectId)>())
            .expect("canonical names are unique")
    }

    /// Builds a lexicon from `(surface, object)` pairs plus the identity mappings.
    pub fn from_pairs<I, S>(vocab: &ObjectVocabulary, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, ObjectId)>,
        S: AsRef<str>,
    {
        let mut lexicon = SynonymLexicon {
            phrases: BTreeMap::new(),
            max_tokens: 0,
        };
        for id in vocab.ids() {
            lexicon.insert(vocab, vocab.name(id), id)?;
        }
        for (surface, id) in pairs {
            lexicon.insert(vocab, surface.as_ref(), id)?;
        }
        Ok(lexicon)
    }

    fn insert(&mut self, vocab: &ObjectVocabulary, surface: &str, id: ObjectId) -> Result<()> {
        let key = text::phrase_key(surface);
        if key.is_empty() {
            return Err(Error::schema(
                "lexicon",
                format!("surface phrase {surface:?} has no alphanumeric tokens"),
            ));
        }
        if !vocab.contains(id) {
            return Err(Error::Reference(format!(
                "lexicon phrase {key:?} targets unknown object {id}"
            )));
        }
        match self.phrases.get(&key) {
            Some(&existing) if existing != id => Err(Error::Conflict(format!(
                "surface phrase {key:?} maps to both {:?} and {:?}",
                vocab.name(existing),
                vocab.name(id)
            ))),
            Some(_) => Ok(()),
            None => {
                self.max_tokens = self.max_tokens.max(key.split(' ').count());
                self.phrases.insert(key, id);
                Ok(())
            }
        }
    }

    /// Exact lookup of an already tokenized phrase.
    pub fn get_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Option<ObjectId> {
        let key = tokens
            .iter()
            .map(|t| t.as_ref())
            .collect::<Vec<_>>()
            .join(" ");
        self.phrases.get(&key).copied()
    }

    /// Lookup of free text after normalization.
    pub fn lookup(&self, phrase: &str) -> Option<ObjectId> {
        self.phrases.get(&text::phrase_key(phrase)).copied()
    }

    /// Longest surface phrase, in tokens.
    pub fn max_phrase_len(&self) -> usize {
        self.max_tokens
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ObjectId)> {
        self.phrases.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

pub fn load_lexicon(path: &Path, vocab: &ObjectVocabulary) -> Result<SynonymLexicon> {
    let text = jsonl::read_to_string(path)?;
    parse_lexicon(&text, &path.display().to_string(), vocab)
}

/// Parses `surface<TAB>canonical` lines; `#` lines and blank lines are skipped.
pub fn parse_lexicon(
    text: &str,
    location: &str,
    vocab: &ObjectVocabulary,
) -> Result<SynonymLexicon> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (surface, canonical) = line.split_once('\t').ok_or_else(|| {
            Error::schema(
                format!("{location}:{line_no}"),
                "expected `surface<TAB>canonical`",
            )
        })?;
        let id = vocab.id(canonical.trim()).ok_or_else(|| {
            Error::schema(
                format!("{location}:{line_no}"),
                format!(
                    "canonical name {:?} is not in the vocabulary",
                    canonical.trim()
                ),
            )
        })?;
        pairs.push((line_no, surface.to_string(), id));
    }
    let mut lexicon = SynonymLexicon::identity(vocab);
    for (line_no, surface, id) in pairs {
        lexicon.insert(vocab, &surface, id).map_err(|e| match e {
            Error::Conflict(msg) => Error::Conflict(format!("{location}:{line_no}: {msg}")),
            Error::Schema { message, .. } => {
                Error::schema(format!("{location}:{line_no}"), message)
            }
            other => other,
        })?;
    }
    Ok(lexicon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> ObjectVocabulary {
        ObjectVocabulary::new(["person", "dog", "dining table"]).unwrap()
    }

    #[test]
    fn empty_file_gives_identity_mappings() {
        let lex = parse_lexicon("", "mem", &vocab()).unwrap();
        assert_eq!(lex.len(), 3);
        assert_eq!(lex.lookup("Dining Table"), Some(ObjectId(2)));
        assert_eq!(lex.max_phrase_len(), 2);
    }

    #[test]
    fn alias_maps_to_target() {
        let lex = parse_lexicon("# comment\npuppy\tdog\n", "mem", &vocab()).unwrap();
        assert_eq!(lex.lookup("puppy"), Some(ObjectId(1)));
    }

    #[test]
    fn unknown_canonical_is_schema_error() {
        let err = parse_lexicon("kitty\tcat\n", "lex.tsv", &vocab()).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
        assert!(err.to_string().contains("lex.tsv:1"));
    }

    #[test]
    fn conflicting_surface_is_rejected() {
        let err = parse_lexicon("man\tperson\nman\tdog\n", "lex.tsv", &vocab()).unwrap_err();
        assert!(matches!(err, Error::Conflict(_)), "{err}");
        // Re-declaring the same mapping is fine, as is restating an identity.
        parse_lexicon("man\tperson\nman\tperson\ndog\tdog\n", "lex.tsv", &vocab()).unwrap();
    }

    #[test]
    fn canonical_surface_cannot_be_redirected() {
        let err = parse_lexicon("dog\tperson\n", "lex.tsv", &vocab()).unwrap_err();
        assert!(matches!(err, Error::Conflict(_)));
    }

    #[test]
    fn missing_tab_is_schema_error() {
        let err = parse_lexicon("puppy dog\n", "lex.tsv", &vocab()).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }
}
