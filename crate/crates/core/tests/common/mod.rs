//! Fixtures, reference implementations and generators shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod stub;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pope::builder::{
    build_probe_set, Aggregation, Expected, ProbeConfig, ProbeSet, SamplingMode, Strategy as Picked,
};
use pope::chair::MentionSet;
use pope::corpus::{
    read_captions, CaptionRecord, Corpus, ImageRecord, ObjectId, ObjectVocabulary, Source,
    SynonymLexicon,
};
use pope::stats::{build_cooccurrence, build_frequency};
use proptest::prelude::*;
use regex::Regex;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn chair_corpus() -> Corpus {
    Corpus::read(&fixture("chair_corpus.jsonl")).unwrap()
}

pub fn chair_lexicon(corpus: &Corpus) -> SynonymLexicon {
    pope::corpus::load_lexicon(&fixture("lexicon.tsv"), corpus.vocabulary()).unwrap()
}

pub fn chair_captions() -> Vec<CaptionRecord> {
    read_captions(&fixture("captions20.jsonl")).unwrap()
}

/// CHAIR counts as exact integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChairCounts {
    pub mentions: u64,
    pub hallucinated_mentions: u64,
    pub captions: u64,
    pub hallucinated_captions: u64,
}

/// Brute-force CHAIR built from raw fixture text with regular expressions.
///
/// Every surface phrase (vocabulary names plus lexicon lines, each with an
/// optional plural "s") becomes a whole-word pattern. All matches are
/// collected, then resolved leftmost-first, longest-first, without overlap.
pub struct ChairOracle {
    patterns: Vec<(Regex, String)>,
}

impl ChairOracle {
    pub fn new(vocabulary: &[String], lexicon_tsv: &str) -> Self {
        let mut surface: Vec<(String, String)> =
            vocabulary.iter().map(|n| (n.clone(), n.clone())).collect();
        for line in lexicon_tsv.lines() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (phrase, target) = line.split_once('\t').expect("tab-separated lexicon");
            surface.push((phrase.trim().to_lowercase(), target.trim().to_lowercase()));
        }
        // Words inside one phrase may be separated by anything except
        // letters, digits and sentence punctuation.
        let gap = r#"[^a-z0-9.,;:!?()\[\]{}"\n]+"#;
        let patterns = surface
            .into_iter()
            .map(|(phrase, target)| {
                let words: Vec<String> = phrase.split_whitespace().map(regex::escape).collect();
                let re = Regex::new(&format!(r"\b{}s?\b", words.join(gap))).unwrap();
                (re, target)
            })
            .collect();
        ChairOracle { patterns }
    }

    /// Canonical names of the objects mentioned in `caption`.
    pub fn mentioned(&self, caption: &str) -> BTreeSet<String> {
        let lower = caption.to_lowercase();
        let mut hits: Vec<(usize, usize, &str)> = Vec::new();
        for (re, target) in &self.patterns {
            for m in re.find_iter(&lower) {
                hits.push((m.start(), m.end(), target));
            }
        }
        hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut out = BTreeSet::new();
        let mut cursor = 0;
        for (start, end, target) in hits {
            if start >= cursor {
                out.insert(target.to_string());
                cursor = end;
            }
        }
        out
    }

    pub fn counts(&self, captions: &[(String, BTreeSet<String>)]) -> ChairCounts {
        let mut c = ChairCounts::default();
        for (text, truth) in captions {
            let mentioned = self.mentioned(text);
            let hallucinated = mentioned.iter().filter(|m| !truth.contains(*m)).count() as u64;
            c.captions += 1;
            c.mentions += mentioned.len() as u64;
            c.hallucinated_mentions += hallucinated;
            c.hallucinated_captions += u64::from(hallucinated > 0);
        }
        c
    }
}

/// Caption text and the ground-truth names of its image.
pub type TruthCaption = (String, BTreeSet<String>);

/// Caption text paired with ground-truth names, read straight from the
/// fixture files.
pub fn raw_chair_fixture() -> (Vec<String>, String, Vec<TruthCaption>) {
    let corpus_text = fixture_text("chair_corpus.jsonl");
    let mut lines = corpus_text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    let vocabulary: Vec<String> = header["vocabulary"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let truth: BTreeMap<String, BTreeSet<String>> = lines
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let objects = v["objects"]
                .as_array()
                .unwrap()
                .iter()
                .map(|o| o.as_str().unwrap().to_string())
                .collect();
            (v["image_id"].as_str().unwrap().to_string(), objects)
        })
        .collect();
    let captions = fixture_text("captions20.jsonl")
        .lines()
        .skip(1)
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let id = v["image_id"].as_str().unwrap();
            (v["text"].as_str().unwrap().to_string(), truth[id].clone())
        })
        .collect();
    (vocabulary, fixture_text("lexicon.tsv"), captions)
}

// ---------------------------------------------------------------------------
// Generators

pub fn vocab(n: usize) -> ObjectVocabulary {
    ObjectVocabulary::new((0..n).map(|i| format!("obj{i:02}"))).unwrap()
}

/// Random corpus: `vocab` objects, each image a random subset leaving at
/// least `spare` objects absent.
pub fn arb_corpus(
    vocab_len: std::ops::Range<usize>,
    images: std::ops::Range<usize>,
    spare: usize,
) -> impl Strategy<Value = Corpus> {
    (vocab_len, images).prop_flat_map(move |(v, n)| {
        let max_size = v.saturating_sub(spare).max(1);
        prop::collection::vec(prop::collection::btree_set(0..v as u32, 0..=max_size), n).prop_map(
            move |sets| {
                let images = sets
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| ImageRecord {
                        image_id: format!("img{i:03}"),
                        ground_truth: s.into_iter().map(ObjectId).collect(),
                        source: Source::Annotation,
                    })
                    .collect();
                Corpus::new(vocab(v), images).unwrap()
            },
        )
    })
}

pub fn arb_mode() -> impl Strategy<Value = SamplingMode> {
    prop_oneof![
        Just(SamplingMode::Random),
        Just(SamplingMode::Popular),
        Just(SamplingMode::Adversarial),
    ]
}

/// (corpus, config) pairs where the config is satisfiable most of the time.
pub fn arb_setup() -> impl Strategy<Value = (Corpus, ProbeConfig)> {
    (
        arb_corpus(6..30, 1..40, 4),
        1usize..=4,
        0usize..3,
        arb_mode(),
        any::<u64>(),
        0.0f64..1.0,
        prop_oneof![Just(Aggregation::Sum), Just(Aggregation::Max)],
    )
        .prop_map(|(corpus, half, extra, mode, seed, frac, aggregation)| {
            let min_objects = half + extra;
            let eligible = corpus
                .images()
                .iter()
                .filter(|i| i.ground_truth.len() >= min_objects)
                .count();
            let n = 1 + (frac * eligible as f64) as usize;
            let config = ProbeConfig {
                l: 2 * half,
                n: n.min(eligible.max(1)),
                mode,
                seed,
                min_objects,
                template_id: "t1".into(),
                aggregation,
            };
            (corpus, config)
        })
}

/// Corpus plus, for every image, a random subset of its absent objects as
/// hallucinations (at least one image hallucinates).
pub fn arb_corpus_with_mentions() -> impl Strategy<Value = (Corpus, Vec<MentionSet>)> {
    arb_corpus(3..25, 1..30, 1).prop_flat_map(|corpus| {
        let n = corpus.len();
        let v = corpus.vocabulary().len();
        (
            Just(corpus),
            prop::collection::vec(prop::collection::btree_set(0..v as u32, 0..v), n),
        )
            .prop_filter_map("no hallucination", |(corpus, picks)| {
                let mentions: Vec<MentionSet> = corpus
                    .images()
                    .iter()
                    .zip(picks)
                    .map(|(image, pick)| {
                        let hallucinated: BTreeSet<ObjectId> = pick
                            .into_iter()
                            .map(ObjectId)
                            .filter(|o| !image.contains(*o))
                            .collect();
                        MentionSet {
                            image_id: image.image_id.clone(),
                            mentioned: image.ground_truth.union(&hallucinated).copied().collect(),
                            hallucinated,
                        }
                    })
                    .collect();
                mentions
                    .iter()
                    .any(|m| !m.hallucinated.is_empty())
                    .then_some((corpus, mentions))
            })
    })
}

pub fn build(corpus: &Corpus, config: &ProbeConfig) -> pope::Result<ProbeSet> {
    let freq = build_frequency(corpus.images(), corpus.vocabulary())?;
    let cooc = build_cooccurrence(corpus.images(), corpus.vocabulary())?;
    build_probe_set(corpus, config, Some(&freq), Some(&cooc))
}

/// Checks a probe set against its corpus with no help from the builder.
/// Returns a description of the first violation.
pub fn check_probe(corpus: &Corpus, probe: &ProbeSet, config: &ProbeConfig) -> Result<(), String> {
    let l = config.l;
    let questions = probe.questions();
    let mut per_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, q) in questions.iter().enumerate() {
        per_image.entry(q.image_id.as_str()).or_default().push(i);
    }
    if per_image.len() != config.n {
        return Err(format!("{} images, expected {}", per_image.len(), config.n));
    }
    let mut pairs = BTreeSet::new();
    for (image_id, idx) in &per_image {
        let image = corpus
            .image(image_id)
            .ok_or(format!("unknown image {image_id}"))?;
        if image.ground_truth.len() < config.min_objects {
            return Err(format!("{image_id} has fewer than min_objects"));
        }
        if idx.len() != l || idx.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(format!(
                "{image_id}: {} questions or not contiguous",
                idx.len()
            ));
        }
        let yes = idx
            .iter()
            .filter(|&&i| questions[i].expected == Expected::Yes)
            .count();
        if yes != l / 2 {
            return Err(format!("{image_id}: {yes} yes questions"));
        }
        for &i in idx {
            let q = &questions[i];
            if !pairs.insert((q.image_id.clone(), q.object_id)) {
                return Err(format!("duplicate pair {image_id}/{}", q.object_id));
            }
            let present = image.ground_truth.contains(&q.object_id);
            match q.expected {
                Expected::Yes if !present => {
                    return Err(format!("{image_id}: yes on absent object"))
                }
                Expected::No if present => return Err(format!("{image_id}: no on present object")),
                _ => {}
            }
            if (q.expected == Expected::Yes) != (q.strategy == Picked::Positive) {
                return Err(format!("{image_id}: strategy/label mismatch"));
            }
        }
        for w in idx.windows(2) {
            if questions[w[0]].expected == questions[w[1]].expected {
                return Err(format!("{image_id}: questions do not alternate"));
            }
        }
    }
    Ok(())
}

/// Image-level frequency, counted directly.
pub fn brute_frequency(corpus: &Corpus) -> Vec<u64> {
    let mut counts = vec![0; corpus.vocabulary().len()];
    for image in corpus.images() {
        for o in &image.ground_truth {
            counts[o.index()] += 1;
        }
    }
    counts
}

/// Objects with count > 0 ordered by count descending, then name.
pub fn brute_ranking(counts: &[u64], vocab: &ObjectVocabulary) -> Vec<ObjectId> {
    let mut ids: Vec<ObjectId> = vocab.ids().collect();
    ids.sort_by(|&a, &b| {
        counts[b.index()]
            .cmp(&counts[a.index()])
            .then_with(|| vocab.name(a).cmp(vocab.name(b)))
    });
    ids
}

// ---------------------------------------------------------------------------
// Hand-built corpora

pub fn named_corpus(vocab: &[&str], images: &[(&str, &[&str])]) -> Corpus {
    let vocab = ObjectVocabulary::new(vocab).unwrap();
    let images = images
        .iter()
        .map(|(id, objs)| {
            ImageRecord::new(
                *id,
                objs.iter().map(|o| vocab.id(o).unwrap()),
                Source::Annotation,
            )
        })
        .collect();
    Corpus::new(vocab, images).unwrap()
}

pub fn mention(corpus: &Corpus, image_id: &str, mentioned: &[&str]) -> MentionSet {
    let v = corpus.vocabulary();
    let mentioned: BTreeSet<ObjectId> = mentioned.iter().map(|o| v.id(o).unwrap()).collect();
    let hallucinated = match corpus.image(image_id) {
        Some(image) => mentioned
            .iter()
            .copied()
            .filter(|o| !image.contains(*o))
            .collect(),
        None => mentioned.clone(),
    };
    MentionSet {
        image_id: image_id.into(),
        mentioned,
        hallucinated,
    }
}

/// HR_A@10 = (1/2 + 3/4) / 2.
pub fn two_image_fixture() -> (Corpus, Vec<MentionSet>) {
    let names: Vec<String> = (0..14).map(|i| format!("o{i:02}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let frequent: Vec<&str> = names[..10].to_vec();
    let rare: Vec<&str> = names[10..].to_vec();
    let corpus = named_corpus(
        &names,
        &[
            ("f1", &frequent),
            ("f2", &frequent),
            ("f3", &rare),
            ("img1", &["o04"]),
            ("img2", &["o05"]),
        ],
    );
    let mentions = vec![
        mention(&corpus, "img1", &["o04", "o00", "o12"]),
        mention(&corpus, "img2", &["o05", "o01", "o02", "o03", "o13"]),
    ];
    (corpus, mentions)
}
