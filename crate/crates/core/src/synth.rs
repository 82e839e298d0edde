//! Synthetic responders and captioners with controllable hallucination bias.
//!
//! A synthetic model affirms a present object with probability `recall`
//! and an absent object `o` with probability
//! `min(1, yes_bias + bias_strength * stat(o))`, where `stat` is zero in
//! uniform mode, `freq(o) / max freq` in frequency mode, and in
//! co-occurrence mode the summed co-occurrence of `o` with the image's
//! objects divided by the largest such sum over the vocabulary.
//!
//! Each decision draws one uniform number from a stream keyed by the seed
//! and the (image, object) pair, so with `bias_strength = 0` all three modes
//! produce identical output.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::builder::{rng, ProbeSet};
use crate::corpus::{
    AnswerRecord, CaptionRecord, Corpus, ImageRecord, ObjectId, ObjectVocabulary, Source,
};
use crate::error::{Error, Result};
use crate::stats::{CooccurrenceMatrix, FrequencyTable};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    #[default]
    Uniform,
    Frequency,
    Cooccurrence,
}

fn default_cap() -> usize {
    3
}
fn default_model() -> String {
    "synth".into()
}
fn default_prompt() -> String {
    "i1".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Base probability of affirming an absent object.
    pub yes_bias: f64,
    #[serde(default)]
    pub bias_mode: BiasMode,
    /// Scale of the statistic-driven increase in false affirmations.
    #[serde(default)]
    pub bias_strength: f64,
    /// Probability of affirming a present object.
    pub recall: f64,
    /// Most hallucinated objects per synthetic caption.
    #[serde(default = "default_cap")]
    pub max_hallucinations: usize,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default = "default_prompt")]
    pub prompt_id: String,
}

impl SynthConfig {
    pub fn new(seed: u64, yes_bias: f64, recall: f64) -> Self {
        SynthConfig {
            seed,
            yes_bias,
            bias_mode: BiasMode::Uniform,
            bias_strength: 0.0,
            recall,
            max_hallucinations: default_cap(),
            model_id: default_model(),
            prompt_id: default_prompt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("yes_bias", self.yes_bias), ("recall", self.recall)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !(self.bias_strength >= 0.0 && self.bias_strength.is_finite()) {
            return Err(Error::Config(format!(
                "bias_strength must be non-negative, got {}",
                self.bias_strength
            )));
        }
        Ok(())
    }
}

/// Per-image affirmation model.
struct Bias<'a> {
    cfg: &'a SynthConfig,
    stat: Vec<f64>,
}

impl<'a> Bias<'a> {
    fn new(
        cfg: &'a SynthConfig,
        vocab: &ObjectVocabulary,
        image: &ImageRecord,
        frequency: Option<&FrequencyTable>,
        cooccurrence: Option<&CooccurrenceMatrix>,
    ) -> Result<Self> {
        let stat = match cfg.bias_mode {
            BiasMode::Uniform => vec![0.0; vocab.len()],
            BiasMode::Frequency => {
                let freq = frequency.ok_or_else(|| {
                    Error::Precondition("frequency bias needs a frequency table".into())
                })?;
                normalize(vocab.ids().map(|o| freq.count(o)).collect())
            }
            BiasMode::Cooccurrence => {
                let cooc = cooccurrence.ok_or_else(|| {
                    Error::Precondition("co-occurrence bias needs a co-occurrence matrix".into())
                })?;
                normalize(
                    vocab
                        .ids()
                        .map(|o| cooc.sum_with(o, &image.ground_truth))
                        .collect(),
                )
            }
        };
        Ok(Bias { cfg, stat })
    }

    fn false_affirm(&self, object: ObjectId) -> f64 {
        (self.cfg.yes_bias + self.cfg.bias_strength * self.stat[object.index()]).min(1.0)
    }
}

fn normalize(raw: Vec<u64>) -> Vec<f64> {
    let max = raw.iter().copied().max().unwrap_or(0);
    raw.into_iter()
        .map(|v| if max == 0 { 0.0 } else { v as f64 / max as f64 })
        .collect()
}

fn draw(seed: u64, purpose: &str, image_id: &str, object: &str) -> f64 {
    rng::unit(&mut rng::stream(
        seed,
        purpose,
        &format!("{image_id}\u{0}{object}"),
    ))
}

/// Answers every probe question the way a biased model would.
pub fn synth_answers(
    probe: &ProbeSet,
    corpus: &Corpus,
    cfg: &SynthConfig,
    frequency: Option<&FrequencyTable>,
    cooccurrence: Option<&CooccurrenceMatrix>,
) -> Result<Vec<AnswerRecord>> {
    cfg.validate()?;
    let vocab = corpus.vocabulary();
    if vocab.names() != probe.vocabulary().names() {
        return Err(Error::Reference(
            "probe set and corpus use different vocabularies".into(),
        ));
    }
    let mut out = Vec::with_capacity(probe.questions().len());
    let mut current: Option<(&str, Bias)> = None;
    for q in probe.questions() {
        let image = corpus.image(&q.image_id).ok_or_else(|| {
            Error::Reference(format!("probe image {:?} is not in the corpus", q.image_id))
        })?;
        if current.as_ref().map(|(id, _)| *id) != Some(q.image_id.as_str()) {
            current = Some((
                q.image_id.as_str(),
                Bias::new(cfg, vocab, image, frequency, cooccurrence)?,
            ));
        }
        let bias = &current.as_ref().expect("set above").1;
        let object = probe.object_name(q);
        let p = if image.contains(q.object_id) {
            cfg.recall
        } else {
            bias.false_affirm(q.object_id)
        };
        let text = if draw(cfg.seed, "synth-answer", &q.image_id, object) < p {
            format!("Yes, there is a {object} in the image.")
        } else {
            format!("No, there is no {object} in the image.")
        };
        out.push(AnswerRecord::new(q.image_id.clone(), object, text));
    }
    Ok(out)
}

/// One caption per image: its ground-truth objects, then any hallucinated ones.
pub fn synth_captions(
    corpus: &Corpus,
    cfg: &SynthConfig,
    frequency: Option<&FrequencyTable>,
    cooccurrence: Option<&CooccurrenceMatrix>,
) -> Result<Vec<CaptionRecord>> {
    cfg.validate()?;
    let vocab = corpus.vocabulary();
    corpus
        .images()
        .iter()
        .map(|image| {
            let bias = Bias::new(cfg, vocab, image, frequency, cooccurrence)?;
            let mut hallucinated: Vec<ObjectId> = vocab
                .ids()
                .filter(|&o| !image.contains(o))
                .filter(|&o| {
                    draw(cfg.seed, "synth-caption", &image.image_id, vocab.name(o))
                        < bias.false_affirm(o)
                })
                .collect();
            if hallucinated.len() > cfg.max_hallucinations {
                let mut r = rng::stream(cfg.seed, "synth-caption-cap", &image.image_id);
                hallucinated = rng::sample(&hallucinated, cfg.max_hallucinations, &mut r);
            }
            let text = image
                .ground_truth
                .iter()
                .chain(&hallucinated)
                .map(|&o| vocab.name(o))
                .collect::<Vec<_>>()
                .join(", ");
            Ok(CaptionRecord {
                image_id: image.image_id.clone(),
                model_id: cfg.model_id.clone(),
                prompt_id: cfg.prompt_id.clone(),
                text,
            })
        })
        .collect()
}

/// The 80 MSCOCO detection categories, in category-id order.
pub const COCO_80: [&str; 80] = [
    "person",
    "bicycle",
    "car",
    "motorcycle",
    "airplane",
    "bus",
    "train",
    "truck",
    "boat",
    "traffic light",
    "fire hydrant",
    "stop sign",
    "parking meter",
    "bench",
    "bird",
    "cat",
    "dog",
    "horse",
    "sheep",
    "cow",
    "elephant",
    "bear",
    "zebra",
    "giraffe",
    "backpack",
    "umbrella",
    "handbag",
    "tie",
    "suitcase",
    "frisbee",
    "skis",
    "snowboard",
    "sports ball",
    "kite",
    "baseball bat",
    "baseball glove",
    "skateboard",
    "surfboard",
    "tennis racket",
    "bottle",
    "wine glass",
    "cup",
    "fork",
    "knife",
    "spoon",
    "bowl",
    "banana",
    "apple",
    "sandwich",
    "orange",
    "broccoli",
    "carrot",
    "hot dog",
    "pizza",
    "donut",
    "cake",
    "chair",
    "couch",
    "potted plant",
    "bed",
    "dining table",
    "toilet",
    "tv",
    "laptop",
    "mouse",
    "remote",
    "keyboard",
    "cell phone",
    "microwave",
    "oven",
    "toaster",
    "sink",
    "refrigerator",
    "book",
    "clock",
    "vase",
    "scissors",
    "teddy bear",
    "hair drier",
    "toothbrush",
];

/// Shape of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub images: usize,
    /// Vocabulary size; the first names come from [`COCO_80`].
    pub objects: usize,
    /// Objects are partitioned into this many scene groups.
    pub scenes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that an object is drawn from the image's scene group.
    pub scene_affinity: f64,
    /// Exponent of the Zipf popularity over objects.
    pub zipf: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            images: 200,
            objects: 80,
            scenes: 10,
            min_objects: 4,
            max_objects: 8,
            scene_affinity: 0.75,
            zipf: 1.0,
        }
    }
}

fn weighted_pick<R: rand_core::RngCore>(
    rng: &mut R,
    items: &[usize],
    weights: &[f64],
    exclude: &BTreeSet<ObjectId>,
) -> Option<usize> {
    let open: Vec<usize> = items
        .iter()
        .copied()
        .filter(|&i| !exclude.contains(&ObjectId(i as u32)))
        .collect();
    let total: f64 = open.iter().map(|&i| weights[i]).sum();
    if open.is_empty() || total <= 0.0 {
        return None;
    }
    let mut x = rng::unit(rng) * total;
    for &i in &open {
        x -= weights[i];
        if x < 0.0 {
            return Some(i);
        }
    }
    open.last().copied()
}

/// A corpus with skewed object popularity and scene-level co-occurrence.
pub fn synth_corpus(spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    if spec.objects == 0 || spec.scenes == 0 || spec.images == 0 {
        return Err(Error::Config(
            "images, objects and scenes must be positive".into(),
        ));
    }
    if spec.min_objects > spec.max_objects || spec.max_objects > spec.objects {
        return Err(Error::Config(
            "need min_objects <= max_objects <= objects".into(),
        ));
    }
    let names: Vec<String> = (0..spec.objects)
        .map(|i| match COCO_80.get(i) {
            Some(n) => n.to_string(),
            None => format!("object {i}"),
        })
        .collect();
    let vocab = ObjectVocabulary::new(&names)?;

    // Popularity rank is a seeded permutation so frequent objects are not
    // simply the first names.
    let all: Vec<usize> = (0..spec.objects).collect();
    let order = rng::sample(
        &all,
        spec.objects,
        &mut rng::stream(seed, "corpus-popularity", ""),
    );
    let mut weights = vec![0.0; spec.objects];
    for (rank, &o) in order.iter().enumerate() {
        weights[o] = 1.0 / ((rank + 1) as f64).powf(spec.zipf);
    }
    let scenes: Vec<Vec<usize>> = (0..spec.scenes)
        .map(|s| {
            all.iter()
                .copied()
                .filter(|o| o % spec.scenes == s)
                .collect()
        })
        .collect();

    let mut images = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let image_id = format!("synth-{i:06}");
        let mut r = rng::stream(seed, "corpus-image", &image_id);
        let scene = &scenes[rng::below(&mut r, spec.scenes)];
        let size = spec.min_objects + rng::below(&mut r, spec.max_objects - spec.min_objects + 1);
        let mut truth = BTreeSet::new();
        while truth.len() < size {
            let pool = if rng::unit(&mut r) < spec.scene_affinity {
                scene
            } else {
                &all
            };
            let pick = weighted_pick(&mut r, pool, &weights, &truth)
                .or_else(|| weighted_pick(&mut r, &all, &weights, &truth));
            match pick {
                Some(o) => {
                    truth.insert(ObjectId(o as u32));
                }
                None => break,
            }
        }
        images.push(ImageRecord {
            image_id,
            ground_truth: truth,
            source: Source::Annotation,
        });
    }
    Corpus::new(vocab, images)
}
