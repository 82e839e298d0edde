//! Caption-level object hallucination: mention extraction and CHAIR_I / CHAIR_S.
//!
//! A caption is lowercased and tokenized, then lexicon phrases are matched
//! left to right, longest phrase first, each token consumed at most once.
//! Matching is on token boundaries only ("cartoon" never fires "car"). When
//! no phrase matches exactly, a trailing `s` is stripped from the last token
//! of the candidate phrase and the lookup retried.
//!
//! Mentions are deduplicated per caption: a caption naming "dog" twice
//! mentions one object. The number of collapsed repeats is kept in
//! [`ChairTotals::duplicate_mentions`].

use std::collections::BTreeSet;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, Corpus, ImageRecord, ObjectId, SynonymLexicon};
use crate::error::{Error, Result};
use crate::render;
use crate::text;

/// Objects mentioned by one caption, and which of them are hallucinated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSet {
    pub image_id: String,
    pub mentioned: BTreeSet<ObjectId>,
    pub hallucinated: BTreeSet<ObjectId>,
}

/// All lexicon matches in `caption`, in order, repeats included.
pub fn match_objects(caption: &str, lexicon: &SynonymLexicon) -> Vec<ObjectId> {
    let max_len = lexicon.max_phrase_len().max(1);
    let mut found = Vec::new();
    for segment in text::segments(caption) {
        let mut i = 0;
        while i < segment.len() {
            let longest = max_len.min(segment.len() - i);
            let hit = (1..=longest)
                .rev()
                .find_map(|n| lookup_phrase(lexicon, &segment[i..i + n]).map(|id| (id, n)));
            match hit {
                Some((id, n)) => {
                    found.push(id);
                    i += n;
                }
                None => i += 1,
            }
        }
    }
    found
}

fn lookup_phrase(lexicon: &SynonymLexicon, phrase: &[String]) -> Option<ObjectId> {
    if let Some(id) = lexicon.get_tokens(phrase) {
        return Some(id);
    }
    let (last, head) = phrase.split_last()?;
    let stem = last.strip_suffix('s').filter(|s| !s.is_empty())?;
    let mut singular: Vec<&str> = head.iter().map(String::as_str).collect();
    singular.push(stem);
    lexicon.get_tokens(&singular)
}

pub fn extract_mentions(
    caption: &str,
    lexicon: &SynonymLexicon,
    image: &ImageRecord,
) -> MentionSet {
    let mentioned: BTreeSet<ObjectId> = match_objects(caption, lexicon).into_iter().collect();
    let hallucinated = mentioned
        .iter()
        .copied()
        .filter(|id| !image.contains(*id))
        .collect();
    MentionSet {
        image_id: image.image_id.clone(),
        mentioned,
        hallucinated,
    }
}

/// Mergeable CHAIR counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChairTotals {
    /// Distinct objects per caption, summed over captions.
    pub mentions: u64,
    pub hallucinated_mentions: u64,
    pub captions: u64,
    /// Captions with at least one hallucinated object.
    pub hallucinated_captions: u64,
    /// Whitespace-separated words over all captions.
    pub words: u64,
    /// Repeated mentions removed by per-caption deduplication.
    pub duplicate_mentions: u64,
}

impl Add for ChairTotals {
    type Output = ChairTotals;

    fn add(self, o: ChairTotals) -> ChairTotals {
        ChairTotals {
            mentions: self.mentions + o.mentions,
            hallucinated_mentions: self.hallucinated_mentions + o.hallucinated_mentions,
            captions: self.captions + o.captions,
            hallucinated_captions: self.hallucinated_captions + o.hallucinated_captions,
            words: self.words + o.words,
            duplicate_mentions: self.duplicate_mentions + o.duplicate_mentions,
        }
    }
}

impl AddAssign for ChairTotals {
    fn add_assign(&mut self, o: ChairTotals) {
        *self = *self + o;
    }
}

impl ChairTotals {
    fn for_caption(caption: &str, matches: usize, mentions: &MentionSet) -> Self {
        ChairTotals {
            mentions: mentions.mentioned.len() as u64,
            hallucinated_mentions: mentions.hallucinated.len() as u64,
            captions: 1,
            hallucinated_captions: u64::from(!mentions.hallucinated.is_empty()),
            words: caption.split_whitespace().count() as u64,
            duplicate_mentions: (matches - mentions.mentioned.len()) as u64,
        }
    }
}

/// CHAIR_I, CHAIR_S and average caption length.
///
/// Fractions are `None` when their denominator is zero; `flags` then names
/// the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairReport {
    pub chair_i: Option<f64>,
    pub chair_s: Option<f64>,
    pub avg_len: Option<f64>,
    /// Percent with one decimal, as printed in result tables.
    pub chair_i_pct: Option<String>,
    pub chair_s_pct: Option<String>,
    pub avg_len_str: Option<String>,
    pub totals: ChairTotals,
    pub flags: Vec<String>,
}

impl ChairReport {
    pub fn from_totals(totals: ChairTotals) -> Self {
        let frac = |n: u64, d: u64| (d > 0).then(|| n as f64 / d as f64);
        let mut flags = Vec::new();
        if totals.captions == 0 {
            flags.push("no_captions".to_string());
        }
        if totals.mentions == 0 {
            flags.push("no_mentions".to_string());
        }
        ChairReport {
            chair_i: frac(totals.hallucinated_mentions, totals.mentions),
            chair_s: frac(totals.hallucinated_captions, totals.captions),
            avg_len: frac(totals.words, totals.captions),
            chair_i_pct: render::percent(totals.hallucinated_mentions, totals.mentions, 1),
            chair_s_pct: render::percent(totals.hallucinated_captions, totals.captions, 1),
            avg_len_str: render::ratio(totals.words, totals.captions, 1, 1),
            totals,
            flags,
        }
    }
}

fn resolve<'c>(corpus: &'c Corpus, caption: &CaptionRecord) -> Result<&'c ImageRecord> {
    corpus.image(&caption.image_id).ok_or_else(|| {
        Error::Reference(format!(
            "caption from model {:?} refers to unknown image_id {:?}",
            caption.model_id, caption.image_id
        ))
    })
}

/// Mention sets for every caption, in input order.
pub fn caption_mentions(
    captions: &[CaptionRecord],
    corpus: &Corpus,
    lexicon: &SynonymLexicon,
) -> Result<Vec<MentionSet>> {
    captions
        .iter()
        .map(|c| Ok(extract_mentions(&c.text, lexicon, resolve(corpus, c)?)))
        .collect()
}

pub fn chair_scores(
    captions: &[CaptionRecord],
    corpus: &Corpus,
    lexicon: &SynonymLexicon,
) -> Result<ChairReport> {
    let mut totals = ChairTotals::default();
    for caption in captions {
        let image = resolve(corpus, caption)?;
        let matches = match_objects(&caption.text, lexicon);
        let mentions = extract_mentions(&caption.text, lexicon, image);
        totals += ChairTotals::for_caption(&caption.text, matches.len(), &mentions);
    }
    Ok(ChairReport::from_totals(totals))
}
