//! Probe set construction: image selection, positive sampling and
//! Random / Popular / Adversarial negative sampling.
//!
//! A probe set asks `l` questions per image: `l/2` about objects present in
//! the image (expected "yes") and `l/2` about absent ones (expected "no").
//! All randomness comes from [`rng::stream`] keyed by the global seed and the
//! image id, so sampling for one image is independent of every other image
//! and of the order images are processed in.

pub mod rng;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::template::{render_prompt, PromptTemplate, TemplateKind};
use crate::corpus::{Corpus, ImageRecord, ObjectId, ObjectVocabulary};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::stats::{rank_by, CooccurrenceMatrix, FrequencyTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Random,
    Popular,
    Adversarial,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::Random => "random",
            SamplingMode::Popular => "popular",
            SamplingMode::Adversarial => "adversarial",
        }
    }
}

/// How the question's object was chosen. Negatives that had to fall back
/// to uniform sampling are marked `Random` whatever the set's mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Positive,
    Random,
    Popular,
    Adversarial,
}

impl From<SamplingMode> for Strategy {
    fn from(mode: SamplingMode) -> Self {
        match mode {
            SamplingMode::Random => Strategy::Random,
            SamplingMode::Popular => Strategy::Popular,
            SamplingMode::Adversarial => Strategy::Adversarial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expected {
    Yes,
    No,
}

/// Combination of per-ground-truth co-occurrence counts for adversarial ranking.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Max,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Questions per image; even and at least 2.
    pub l: usize,
    /// Images to select.
    pub n: usize,
    pub mode: SamplingMode,
    pub seed: u64,
    /// Images need at least this many ground-truth objects.
    pub min_objects: usize,
    pub template_id: String,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l: 6,
            n: 500,
            mode: SamplingMode::Random,
            seed: 0,
            min_objects: 4,
            template_id: "t1".into(),
            aggregation: Aggregation::Sum,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<PromptTemplate> {
        if self.l < 2 || !self.l.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "l must be even and >= 2, got {}",
                self.l
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.min_objects < self.l / 2 {
            return Err(Error::Config(format!(
                "min_objects ({}) must be at least l/2 ({})",
                self.min_objects,
                self.l / 2
            )));
        }
        let template = PromptTemplate::builtin(&self.template_id)?;
        if template.kind != TemplateKind::Pope {
            return Err(Error::Config(format!(
                "template {:?} is a caption instruction, not a probe question",
                self.template_id
            )));
        }
        Ok(template)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeQuestion {
    pub image_id: String,
    pub object_id: ObjectId,
    pub template_id: String,
    pub expected: Expected,
    pub strategy: Strategy,
}

/// Set-level provenance, written as the first line of a probe file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeHeader {
    pub kind: String,
    pub l: usize,
    pub n: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    pub min_objects: usize,
    pub template_id: String,
    pub aggregation: Aggregation,
    pub rng: String,
    pub corpus_id: String,
    pub vocabulary: Vec<String>,
    pub fingerprint: String,
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    corpus_id: &'a str,
    vocabulary: &'a [String],
    l: usize,
    n: usize,
    seed: u64,
    mode: SamplingMode,
    min_objects: usize,
    template_id: &'a str,
    aggregation: Aggregation,
    rng: &'a str,
}

impl ProbeHeader {
    fn new(config: &ProbeConfig, corpus: &Corpus) -> Self {
        let corpus_id = corpus.fingerprint();
        let vocabulary = corpus.vocabulary().names().to_vec();
        let input = FingerprintInput {
            corpus_id: &corpus_id,
            vocabulary: &vocabulary,
            l: config.l,
            n: config.n,
            seed: config.seed,
            mode: config.mode,
            min_objects: config.min_objects,
            template_id: &config.template_id,
            aggregation: config.aggregation,
            rng: rng::RNG_NAME,
        };
        let fingerprint = jsonl::sha256_hex(&serde_json::to_vec(&input).expect("serializes"));
        ProbeHeader {
            kind: PROBE_KIND.into(),
            l: config.l,
            n: config.n,
            seed: config.seed,
            mode: config.mode,
            min_objects: config.min_objects,
            template_id: config.template_id.clone(),
            aggregation: config.aggregation,
            rng: rng::RNG_NAME.into(),
            corpus_id,
            vocabulary,
            fingerprint,
        }
    }
}

const PROBE_KIND: &str = "pope_probe";

#[derive(Serialize, Deserialize)]
struct QuestionLine {
    image_id: String,
    object: String,
    question: String,
    expected: Expected,
    strategy: Strategy,
    template_id: String,
}

/// A balanced probe set: `l` questions per selected image, grouped by image.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    header: ProbeHeader,
    vocabulary: ObjectVocabulary,
    questions: Vec<ProbeQuestion>,
}

impl ProbeSet {
    pub fn header(&self) -> &ProbeHeader {
        &self.header
    }

    pub fn fingerprint(&self) -> &str {
        &self.header.fingerprint
    }

    pub fn l(&self) -> usize {
        self.header.l
    }

    pub fn vocabulary(&self) -> &ObjectVocabulary {
        &self.vocabulary
    }

    pub fn questions(&self) -> &[ProbeQuestion] {
        &self.questions
    }

    pub fn object_name(&self, q: &ProbeQuestion) -> &str {
        self.vocabulary.name(q.object_id)
    }

    /// Finds the question answering to `(image_id, object name)`.
    pub fn resolve(&self, image_id: &str, object: &str) -> Option<&ProbeQuestion> {
        let id = self.vocabulary.id(object)?;
        self.questions
            .iter()
            .find(|q| q.image_id == image_id && q.object_id == id)
    }

    /// Distinct image ids in emission order.
    pub fn image_ids(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for q in &self.questions {
            if out.last() != Some(&q.image_id.as_str()) {
                out.push(&q.image_id);
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = Vec::new();
        jsonl::write_line(&mut out, &self.header).expect("in-memory write");
        let template = PromptTemplate::builtin(&self.header.template_id)?;
        for q in &self.questions {
            let object = self.object_name(q).to_string();
            let line = QuestionLine {
                image_id: q.image_id.clone(),
                question: render_prompt(&template, &object)?,
                object,
                expected: q.expected,
                strategy: q.strategy,
                template_id: q.template_id.clone(),
            };
            jsonl::write_line(&mut out, &line).expect("in-memory write");
        }
        Ok(String::from_utf8(out).expect("JSON is UTF-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        jsonl::write_file(path, self.to_jsonl()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = jsonl::read_to_string(path)?;
        Self::from_jsonl(&text, &path.display().to_string())
    }

    /// Parses a probe file and re-checks the per-image balance.
    pub fn from_jsonl(text: &str, location: &str) -> Result<Self> {
        let (header, body) = jsonl::split_header(text);
        let Some((header_line, header)) = header else {
            return Err(Error::schema(
                format!("{location}:1"),
                "probe file must start with a header line",
            ));
        };
        let header: ProbeHeader = jsonl::parse_line(location, header_line, header)?;
        if header.kind != PROBE_KIND {
            return Err(Error::schema(
                format!("{location}:{header_line}"),
                format!("expected kind {PROBE_KIND:?}, found {:?}", header.kind),
            ));
        }
        let vocabulary = ObjectVocabulary::new(&header.vocabulary)?;
        let mut questions = Vec::with_capacity(body.len());
        for (line_no, line) in body {
            let q: QuestionLine = jsonl::parse_line(location, line_no, line)?;
            let at = || format!("{location}:{line_no}");
            let object_id = vocabulary.id(&q.object).ok_or_else(|| {
                Error::schema(
                    at(),
                    format!("object {:?} is not in the probe vocabulary", q.object),
                )
            })?;
            if (q.expected == Expected::Yes) != (q.strategy == Strategy::Positive) {
                return Err(Error::schema(
                    at(),
                    "expected must be \"yes\" exactly when strategy is \"positive\"",
                ));
            }
            questions.push(ProbeQuestion {
                image_id: q.image_id,
                object_id,
                template_id: q.template_id,
                expected: q.expected,
                strategy: q.strategy,
            });
        }
        let set = ProbeSet {
            header,
            vocabulary,
            questions,
        };
        set.check_balance()
            .map_err(|msg| Error::schema(location, msg))?;
        Ok(set)
    }

    fn check_balance(&self) -> std::result::Result<(), String> {
        let l = self.header.l;
        let mut seen_images = HashSet::new();
        let mut pairs = HashSet::new();
        for group in self.questions.chunk_by(|a, b| a.image_id == b.image_id) {
            let image = &group[0].image_id;
            if !seen_images.insert(image.as_str()) {
                return Err(format!("questions for image {image:?} are not contiguous"));
            }
            let yes = group.iter().filter(|q| q.expected == Expected::Yes).count();
            if group.len() != l || yes * 2 != l {
                return Err(format!(
                    "image {image:?} has {} questions ({yes} yes); expected {l} with {} yes",
                    group.len(),
                    l / 2
                ));
            }
            for q in group {
                if !pairs.insert((q.image_id.as_str(), q.object_id)) {
                    return Err(format!(
                        "object {:?} is probed twice for image {image:?}",
                        self.object_name(q)
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Uniform sample of `n` images with at least `min_objects` objects,
/// returned sorted by image id.
pub fn select_images(
    images: &[ImageRecord],
    min_objects: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<ImageRecord>> {
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    let mut eligible: Vec<&ImageRecord> = images
        .iter()
        .filter(|im| im.ground_truth.len() >= min_objects)
        .collect();
    if eligible.len() < n {
        return Err(Error::InsufficientCorpus {
            needed: n,
            available: eligible.len(),
        });
    }
    eligible.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut chosen = rng::sample(&eligible, n, &mut rng::stream(seed, "select", ""));
    chosen.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(chosen.into_iter().cloned().collect())
}

/// `count` ground-truth objects of `image`, uniformly at random.
pub fn sample_positives(image: &ImageRecord, count: usize, seed: u64) -> Result<Vec<ObjectId>> {
    let truth: Vec<ObjectId> = image.ground_truth.iter().copied().collect();
    if truth.len() < count {
        return Err(Error::Precondition(format!(
            "image {:?} has {} ground-truth objects, {count} positives requested",
            image.image_id,
            truth.len()
        )));
    }
    Ok(rng::sample(
        &truth,
        count,
        &mut rng::stream(seed, "positives", &image.image_id),
    ))
}

/// Draws absent objects for one image under a sampling mode.
#[derive(Debug, Clone, Copy)]
pub struct NegativeSampler<'a> {
    pub vocabulary: &'a ObjectVocabulary,
    pub frequency: Option<&'a FrequencyTable>,
    pub cooccurrence: Option<&'a CooccurrenceMatrix>,
    pub aggregation: Aggregation,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(vocabulary: &'a ObjectVocabulary) -> Self {
        NegativeSampler {
            vocabulary,
            frequency: None,
            cooccurrence: None,
            aggregation: Aggregation::Sum,
        }
    }

    /// Objects absent from `image` with a positive statistic under `mode`,
    /// best first. Empty for random mode.
    pub fn ranking(&self, image: &ImageRecord, mode: SamplingMode) -> Result<Vec<ObjectId>> {
        match mode {
            SamplingMode::Random => Ok(Vec::new()),
            SamplingMode::Popular => {
                let freq = self.frequency.ok_or_else(|| {
                    Error::Precondition("popular sampling needs a frequency table".into())
                })?;
                Ok(freq
                    .ranking()
                    .iter()
                    .copied()
                    .filter(|&o| !image.contains(o) && freq.count(o) > 0)
                    .collect())
            }
            SamplingMode::Adversarial => {
                let cooc = self.cooccurrence.ok_or_else(|| {
                    Error::Precondition("adversarial sampling needs a co-occurrence matrix".into())
                })?;
                let score = |o: ObjectId| self.adversarial_score(cooc, o, &image.ground_truth);
                let candidates: Vec<ObjectId> = self
                    .vocabulary
                    .ids()
                    .filter(|&o| !image.contains(o) && score(o) > 0)
                    .collect();
                Ok(rank_by(candidates, self.vocabulary, score))
            }
        }
    }

    pub fn adversarial_score(
        &self,
        cooc: &CooccurrenceMatrix,
        object: ObjectId,
        truth: &BTreeSet<ObjectId>,
    ) -> u64 {
        match self.aggregation {
            Aggregation::Sum => cooc.sum_with(object, truth),
            Aggregation::Max => cooc.max_with(object, truth),
        }
    }

    /// `count` absent objects, each tagged with the strategy that chose it.
    ///
    /// Popular and adversarial walk their ranking; whatever the ranking cannot
    /// supply is drawn uniformly from the remaining absent objects.
    pub fn sample(
        &self,
        image: &ImageRecord,
        mode: SamplingMode,
        count: usize,
        seed: u64,
    ) -> Result<Vec<(ObjectId, Strategy)>> {
        let absent: Vec<ObjectId> = self
            .vocabulary
            .ids()
            .filter(|&o| !image.contains(o))
            .collect();
        if absent.len() < count {
            return Err(Error::Precondition(format!(
                "image {:?}: only {} absent objects for {count} negatives",
                image.image_id,
                absent.len()
            )));
        }
        let mut picked: Vec<(ObjectId, Strategy)> = self
            .ranking(image, mode)?
            .into_iter()
            .take(count)
            .map(|o| (o, Strategy::from(mode)))
            .collect();
        if picked.len() < count {
            let taken: HashSet<ObjectId> = picked.iter().map(|(o, _)| *o).collect();
            let rest: Vec<ObjectId> = absent.into_iter().filter(|o| !taken.contains(o)).collect();
            let mut rng = rng::stream(seed, "negatives", &image.image_id);
            picked.extend(
                rng::sample(&rest, count - picked.len(), &mut rng)
                    .into_iter()
                    .map(|o| (o, Strategy::Random)),
            );
        }
        Ok(picked)
    }
}

fn with_image(image: &ImageRecord, err: Error) -> Error {
    match err {
        Error::Precondition(msg) if !msg.contains(&image.image_id) => {
            Error::Precondition(format!("image {:?}: {msg}", image.image_id))
        }
        other => other,
    }
}

/// Selects images and emits `l/2` positive and `l/2` negative questions
/// for each, alternating positive and negative from a seeded first side.
pub fn build_probe_set(
    corpus: &Corpus,
    config: &ProbeConfig,
    frequency: Option<&FrequencyTable>,
    cooccurrence: Option<&CooccurrenceMatrix>,
) -> Result<ProbeSet> {
    config.validate()?;
    let sampler = NegativeSampler {
        vocabulary: corpus.vocabulary(),
        frequency,
        cooccurrence,
        aggregation: config.aggregation,
    };
    let half = config.l / 2;
    let images = select_images(corpus.images(), config.min_objects, config.n, config.seed)?;
    let mut questions = Vec::with_capacity(images.len() * config.l);
    for image in &images {
        let positives =
            sample_positives(image, half, config.seed).map_err(|e| with_image(image, e))?;
        let negatives = sampler
            .sample(image, config.mode, half, config.seed)
            .map_err(|e| with_image(image, e))?;
        let question = |object_id, expected, strategy| ProbeQuestion {
            image_id: image.image_id.clone(),
            object_id,
            template_id: config.template_id.clone(),
            expected,
            strategy,
        };
        let negative_first =
            rng::below(&mut rng::stream(config.seed, "order", &image.image_id), 2) == 1;
        for (pos, (neg, strategy)) in positives.into_iter().zip(negatives) {
            let p = question(pos, Expected::Yes, Strategy::Positive);
            let n = question(neg, Expected::No, strategy);
            if negative_first {
                questions.extend([n, p]);
            } else {
                questions.extend([p, n]);
            }
        }
    }
    Ok(ProbeSet {
        header: ProbeHeader::new(config, corpus),
        vocabulary: corpus.vocabulary().clone(),
        questions,
    })
}
