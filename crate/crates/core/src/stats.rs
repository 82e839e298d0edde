//! Image-level object statistics and hallucination hit ratios.
//!
//! Frequencies count images, not instances: an object present in an image
//! counts once for that image. Every ranking orders by count descending and
//! breaks ties by canonical name ascending, so rankings are total orders.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chair::MentionSet;
use crate::corpus::{Corpus, ImageRecord, ObjectId, ObjectVocabulary};
use crate::error::{Error, Result};

/// Sorts `ids` by `score` descending, then by canonical name.
pub fn rank_by(
    mut ids: Vec<ObjectId>,
    vocab: &ObjectVocabulary,
    score: impl Fn(ObjectId) -> u64,
) -> Vec<ObjectId> {
    ids.sort_by(|&a, &b| {
        score(b)
            .cmp(&score(a))
            .then_with(|| vocab.name(a).cmp(vocab.name(b)))
    });
    ids
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    ranking: Vec<ObjectId>,
    images: u64,
}

impl FrequencyTable {
    /// Number of images containing `id`.
    pub fn count(&self, id: ObjectId) -> u64 {
        self.counts[id.index()]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Every vocabulary object, most frequent first.
    pub fn ranking(&self) -> &[ObjectId] {
        &self.ranking
    }

    pub fn top_k(&self, k: usize) -> &[ObjectId] {
        &self.ranking[..k.min(self.ranking.len())]
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn images(&self) -> u64 {
        self.images
    }

    pub fn vocab_len(&self) -> usize {
        self.counts.len()
    }

    /// Combines tables built over disjoint image shards.
    pub fn merge(&self, other: &FrequencyTable, vocab: &ObjectVocabulary) -> FrequencyTable {
        let counts: Vec<u64> = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a + b)
            .collect();
        let ranking = rank_by(vocab.ids().collect(), vocab, |id| counts[id.index()]);
        FrequencyTable {
            counts,
            ranking,
            images: self.images + other.images,
        }
    }
}

pub fn build_frequency(images: &[ImageRecord], vocab: &ObjectVocabulary) -> Result<FrequencyTable> {
    if images.is_empty() {
        return Err(Error::EmptyInput(
            "frequency table needs at least one image".into(),
        ));
    }
    let mut counts = vec![0u64; vocab.len()];
    for image in images {
        for id in &image.ground_truth {
            counts[id.index()] += 1;
        }
    }
    let ranking = rank_by(vocab.ids().collect(), vocab, |id| counts[id.index()]);
    Ok(FrequencyTable {
        counts,
        ranking,
        images: images.len() as u64,
    })
}

/// Symmetric image-level co-occurrence counts. The diagonal is undefined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl CooccurrenceMatrix {
    /// Images containing both `a` and `b`; `None` on the diagonal.
    pub fn get(&self, a: ObjectId, b: ObjectId) -> Option<u64> {
        (a != b).then(|| self.counts[a.index() * self.n + b.index()])
    }

    /// Like [`get`](Self::get) with the diagonal read as zero.
    pub fn count(&self, a: ObjectId, b: ObjectId) -> u64 {
        self.get(a, b).unwrap_or(0)
    }

    pub fn vocab_len(&self) -> usize {
        self.n
    }

    /// Summed co-occurrence of `object` with every member of `with`.
    pub fn sum_with(&self, object: ObjectId, with: &BTreeSet<ObjectId>) -> u64 {
        with.iter().map(|&g| self.count(object, g)).sum()
    }

    /// Largest co-occurrence of `object` with any member of `with`.
    pub fn max_with(&self, object: ObjectId, with: &BTreeSet<ObjectId>) -> u64 {
        with.iter()
            .map(|&g| self.count(object, g))
            .max()
            .unwrap_or(0)
    }

    /// All objects other than `anchor`, most co-occurring with it first.
    pub fn ranking_for(&self, anchor: ObjectId, vocab: &ObjectVocabulary) -> Vec<ObjectId> {
        rank_by(vocab.ids().filter(|&o| o != anchor).collect(), vocab, |o| {
            self.count(anchor, o)
        })
    }

    pub fn merge(&self, other: &CooccurrenceMatrix) -> CooccurrenceMatrix {
        CooccurrenceMatrix {
            n: self.n,
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

pub fn build_cooccurrence(
    images: &[ImageRecord],
    vocab: &ObjectVocabulary,
) -> Result<CooccurrenceMatrix> {
    if images.is_empty() {
        return Err(Error::EmptyInput(
            "co-occurrence matrix needs at least one image".into(),
        ));
    }
    let n = vocab.len();
    let mut counts = vec![0u64; n * n];
    for image in images {
        let objects: Vec<usize> = image.ground_truth.iter().map(|id| id.index()).collect();
        for (i, &a) in objects.iter().enumerate() {
            for &b in &objects[i + 1..] {
                counts[a * n + b] += 1;
                counts[b * n + a] += 1;
            }
        }
    }
    Ok(CooccurrenceMatrix { n, counts })
}

/// Per object, the number of mention sets in which it was hallucinated.
pub fn hallucination_counts(mentions: &[MentionSet], vocab: &ObjectVocabulary) -> Vec<u64> {
    let mut counts = vec![0u64; vocab.len()];
    for m in mentions {
        for id in &m.hallucinated {
            counts[id.index()] += 1;
        }
    }
    counts
}

/// Share of all hallucinations that fall on the first `k` objects of `ranking`.
///
/// `None` when nothing was hallucinated at all.
pub fn cumulative_shares(
    counts: &[u64],
    ranking: &[ObjectId],
    ks: &[usize],
) -> Option<BTreeMap<usize, f64>> {
    let total: u64 = ranking.iter().map(|id| counts[id.index()]).sum();
    if total == 0 {
        return None;
    }
    Some(
        ks.iter()
            .map(|&k| {
                let top: u64 = ranking.iter().take(k).map(|id| counts[id.index()]).sum();
                (k, top as f64 / total as f64)
            })
            .collect(),
    )
}

/// One bar of a hallucination histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub rank: usize,
    pub object: String,
    /// Appearance or co-occurrence count used for ranking.
    pub statistic: u64,
    pub hallucinations: u64,
    pub cumulative_share: Option<f64>,
}

pub fn histogram(
    ranking: &[ObjectId],
    statistic: impl Fn(ObjectId) -> u64,
    hallucinations: &[u64],
    vocab: &ObjectVocabulary,
) -> Vec<HistogramRow> {
    let total: u64 = ranking.iter().map(|id| hallucinations[id.index()]).sum();
    let mut running = 0;
    ranking
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            running += hallucinations[id.index()];
            HistogramRow {
                rank: i + 1,
                object: vocab.name(id).to_string(),
                statistic: statistic(id),
                hallucinations: hallucinations[id.index()],
                cumulative_share: (total > 0).then(|| running as f64 / total as f64),
            }
        })
        .collect()
}

pub fn histogram_csv(rows: &[HistogramRow]) -> String {
    let mut out = String::from("rank,object,statistic,hallucinations,cumulative_share\n");
    for r in rows {
        let share = r
            .cumulative_share
            .map(|s| format!("{s:.4}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.rank, r.object, r.statistic, r.hallucinations, share
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum HitRatioKind {
    Appearing,
    Cooccurring { anchor: String },
}

/// HR@k values for several k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRatioReport {
    pub kind: HitRatioKind,
    pub values: BTreeMap<usize, f64>,
    /// Images that entered the average (those with at least one hallucination).
    pub images_used: usize,
}

fn check_ks(ks: &[usize], vocab_len: usize) -> Result<()> {
    match ks.iter().find(|&&k| k == 0 || k > vocab_len) {
        Some(k) => Err(Error::Precondition(format!(
            "k = {k} outside [1, {vocab_len}]"
        ))),
        None => Ok(()),
    }
}

/// Mean over images of |hallucinated ∩ top_k| / |hallucinated|.
fn mean_hit_ratio<'a>(
    hallucinated: impl Iterator<Item = &'a BTreeSet<ObjectId>> + Clone,
    ranking: &[ObjectId],
    ks: &[usize],
) -> (BTreeMap<usize, f64>, usize) {
    let mut position = vec![usize::MAX; ranking.iter().map(|id| id.index() + 1).max().unwrap_or(0)];
    for (rank, id) in ranking.iter().enumerate() {
        position[id.index()] = rank;
    }
    let used = hallucinated.clone().filter(|h| !h.is_empty()).count();
    let values = ks
        .iter()
        .map(|&k| {
            let sum: f64 = hallucinated
                .clone()
                .filter(|h| !h.is_empty())
                .map(|h| {
                    let hits = h
                        .iter()
                        .filter(|id| position.get(id.index()).is_some_and(|&p| p < k))
                        .count();
                    hits as f64 / h.len() as f64
                })
                .sum();
            (k, sum / used as f64)
        })
        .collect();
    (values, used)
}

/// HR_A@k: how much of each image's hallucination falls on globally frequent objects.
pub fn hr_appearing(
    mentions: &[MentionSet],
    freq: &FrequencyTable,
    ks: &[usize],
) -> Result<HitRatioReport> {
    check_ks(ks, freq.vocab_len())?;
    let hallucinated = mentions.iter().map(|m| &m.hallucinated);
    if hallucinated.clone().all(|h| h.is_empty()) {
        return Err(Error::UndefinedRatio(
            "no image has a hallucinated object".into(),
        ));
    }
    let (values, images_used) = mean_hit_ratio(hallucinated, freq.ranking(), ks);
    Ok(HitRatioReport {
        kind: HitRatioKind::Appearing,
        values,
        images_used,
    })
}

/// HR_C@k(anchor): restricted to images that truly contain `anchor`, how much
/// hallucination falls on the objects most co-occurring with it.
pub fn hr_cooccurring(
    mentions: &[MentionSet],
    corpus: &Corpus,
    cooc: &CooccurrenceMatrix,
    anchor: ObjectId,
    ks: &[usize],
) -> Result<HitRatioReport> {
    let vocab = corpus.vocabulary();
    if !vocab.contains(anchor) {
        return Err(Error::Precondition(format!(
            "anchor {anchor} is not in the vocabulary"
        )));
    }
    check_ks(ks, vocab.len())?;
    let mut qualifying = Vec::new();
    for m in mentions {
        let image = corpus.image(&m.image_id).ok_or_else(|| {
            Error::Reference(format!(
                "mentions refer to unknown image_id {:?}",
                m.image_id
            ))
        })?;
        if image.contains(anchor) && !m.hallucinated.is_empty() {
            qualifying.push(&m.hallucinated);
        }
    }
    if qualifying.is_empty() {
        return Err(Error::UndefinedRatio(format!(
            "no image containing {:?} has a hallucinated object",
            vocab.name(anchor)
        )));
    }
    let ranking = cooc.ranking_for(anchor, vocab);
    let (values, images_used) = mean_hit_ratio(qualifying.iter().copied(), &ranking, ks);
    Ok(HitRatioReport {
        kind: HitRatioKind::Cooccurring {
            anchor: vocab.name(anchor).to_string(),
        },
        values,
        images_used,
    })
}
