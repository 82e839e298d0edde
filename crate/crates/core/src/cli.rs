//! Command-line entry point.
//!
//! Every subcommand reads and writes JSONL/JSON artifacts. Exit status is 0
//! on success, 1 when inputs fail validation, 2 on file-system or network
//! failure and 64 on a malformed command line.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::builder::{build_probe_set, Aggregation, ProbeConfig, ProbeSet, SamplingMode};
use crate::chair::{caption_mentions, chair_scores, MentionSet};
use crate::client::{poll, EndpointConfig, PromptTemplate};
use crate::corpus::{
    load_coco_instances, load_lexicon, load_object_lists, parse_vocabulary_list, read_answers,
    read_captions, write_captions, AnswerSet, AnswersHeader, Corpus, ImageRecord, ObjectVocabulary,
    SynonymLexicon, UnknownObjectPolicy,
};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::scorer::{consistency, score, UnparsedPolicy};
use crate::stats::{
    build_cooccurrence, build_frequency, hallucination_counts, histogram, histogram_csv,
    hr_appearing, hr_cooccurring, HitRatioReport,
};
use crate::synth::{
    synth_answers, synth_captions, synth_corpus, BiasMode, CorpusSpec, SynthConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_ENVIRONMENT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

const PRODUCER: &str = concat!("pope/", env!("CARGO_PKG_VERSION"));

#[derive(Parser, Debug)]
#[command(
    name = "pope",
    version,
    about = "Object-hallucination evaluation for vision-language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert COCO instances and/or object lists into a corpus JSONL.
    Ingest(IngestArgs),
    /// Frequency and co-occurrence statistics, optionally with hit ratios.
    Stats(StatsArgs),
    /// Build a balanced yes/no probe set.
    BuildPope(BuildArgs),
    /// Send a probe set to an HTTP endpoint and record the answers.
    Poll(PollArgs),
    /// Generate synthetic corpora, answers or captions.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Score answers against a probe set.
    Score(ScoreArgs),
    /// CHAIR scores for a captions file.
    Chair(ChairArgs),
    /// Compare probe answers with caption mentions for the same images.
    Consist(ConsistArgs),
    /// Merge JSON reports into one document.
    Report(ReportArgs),
}

/// Settings shared across subcommands, loadable with `--config`.
///
/// Command-line flags take precedence over file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Toolkit corpus JSONL.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub coco: Option<PathBuf>,
    #[serde(default)]
    pub object_lists: Option<PathBuf>,
    /// One object name per line; required for object lists without COCO.
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
    #[serde(default)]
    pub endpoint: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let cfg: RunConfig = read_json(path)?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        let mut cfg = cfg;
        rebase(&mut cfg.corpus);
        rebase(&mut cfg.coco);
        rebase(&mut cfg.object_lists);
        rebase(&mut cfg.vocabulary);
        rebase(&mut cfg.lexicon);
        rebase(&mut cfg.endpoint);
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }

    fn output(&self, flag: Option<PathBuf>, default_name: &str) -> Option<PathBuf> {
        flag.or_else(|| self.output_dir.as_ref().map(|d| d.join(default_name)))
    }
}

fn pick(flag: Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| Error::Config(format!("no {what} given (flag or config file)")))
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Run configuration JSON; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// COCO-style instances JSON.
    #[arg(long)]
    coco: Option<PathBuf>,
    /// Object-list JSONL (`{"image_id", "objects"}` per line).
    #[arg(long)]
    object_lists: Option<PathBuf>,
    /// Vocabulary for object lists, one name per line.
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Synonym lexicon used to resolve object-list names.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Drop object-list names outside the vocabulary instead of failing.
    #[arg(long)]
    allow_skip: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Captions to compute hallucination hit ratios from.
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 30])]
    ks: Vec<usize>,
    /// Anchor object for co-occurrence ranking and HR_C.
    #[arg(long)]
    anchor: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frequency-ranked hallucination histogram as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<SamplingMode>,
    /// Questions per image.
    #[arg(long)]
    l: Option<usize>,
    /// Images to sample.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    min_objects: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long, value_enum)]
    aggregation: Option<Aggregation>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PollArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Endpoint configuration JSON.
    #[arg(long)]
    endpoint: Option<PathBuf>,
    #[arg(long)]
    probe: PathBuf,
    /// Template id; defaults to the probe set's template.
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue an interrupted run, appending to `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Answer a probe set with a biased synthetic responder.
    Answers(SynthAnswersArgs),
    /// Caption a corpus with a biased synthetic captioner.
    Captions(SynthCaptionsArgs),
    /// Generate a corpus with skewed popularity and scene co-occurrence.
    Corpus(SynthCorpusArgs),
}

#[derive(Args, Debug)]
struct SynthModelArgs {
    /// Synthetic model configuration JSON.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    yes_bias: Option<f64>,
    #[arg(long)]
    recall: Option<f64>,
    #[arg(long, value_enum)]
    bias_mode: Option<BiasModeArg>,
    #[arg(long)]
    bias_strength: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BiasModeArg {
    Uniform,
    Frequency,
    Cooccurrence,
}

impl From<BiasModeArg> for BiasMode {
    fn from(m: BiasModeArg) -> Self {
        match m {
            BiasModeArg::Uniform => BiasMode::Uniform,
            BiasModeArg::Frequency => BiasMode::Frequency,
            BiasModeArg::Cooccurrence => BiasMode::Cooccurrence,
        }
    }
}

impl SynthModelArgs {
    fn resolve(&self) -> Result<SynthConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_json(path)?,
            None => SynthConfig::new(0, 0.0, 1.0),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.yes_bias {
            cfg.yes_bias = v;
        }
        if let Some(v) = self.recall {
            cfg.recall = v;
        }
        if let Some(v) = self.bias_mode {
            cfg.bias_mode = v.into();
        }
        if let Some(v) = self.bias_strength {
            cfg.bias_strength = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SynthAnswersArgs {
    #[command(flatten)]
    model: SynthModelArgs,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    probe: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthCaptionsArgs {
    #[command(flatten)]
    model: SynthModelArgs,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthCorpusArgs {
    #[arg(long, default_value_t = 200)]
    images: usize,
    #[arg(long, default_value_t = 80)]
    objects: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    probe: PathBuf,
    #[arg(long)]
    answers: PathBuf,
    #[arg(long, value_enum, default_value = "as-no")]
    unparsed: UnparsedPolicy,
    /// Score even when the answers were produced for a different probe set.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ChairArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-caption mention sets as JSONL.
    #[arg(long)]
    mentions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConsistArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    probe: PathBuf,
    #[arg(long)]
    answers: PathBuf,
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// JSON reports written by `score`, `chair`, `stats` or `consist`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `source,section,metric,value` table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_environmental() {
                EXIT_ENVIRONMENT
            } else {
                EXIT_VALIDATION
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Stats(a) => stats(a),
        Command::BuildPope(a) => build(a),
        Command::Poll(a) => poll_cmd(a),
        Command::Synth(SynthCommand::Answers(a)) => synth_answers_cmd(a),
        Command::Synth(SynthCommand::Captions(a)) => synth_captions_cmd(a),
        Command::Synth(SynthCommand::Corpus(a)) => synth_corpus_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Chair(a) => chair_cmd(a),
        Command::Consist(a) => consist_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = jsonl::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        let location = format!("{}:{}", path.display(), e.line());
        if e.is_data() {
            Error::schema(location, e.to_string())
        } else {
            Error::Json {
                location,
                source: e,
            }
        }
    })
}

fn emit_json(out: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    match out {
        Some(path) => jsonl::write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn load_corpus(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<Corpus> {
    Corpus::read(&existing(pick(flag, &cfg.corpus, "corpus")?)?)
}

fn load_lexicon_or_identity(
    flag: Option<PathBuf>,
    cfg: &RunConfig,
    vocab: &ObjectVocabulary,
) -> Result<SynonymLexicon> {
    match flag.or_else(|| cfg.lexicon.clone()) {
        Some(path) => load_lexicon(&existing(path)?, vocab),
        None => Ok(SynonymLexicon::identity(vocab)),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?;
    let coco = a.coco.or_else(|| cfg.coco.clone());
    let lists = a.object_lists.or_else(|| cfg.object_lists.clone());
    if coco.is_none() && lists.is_none() {
        return Err(Error::Config(
            "ingest needs --coco and/or --object-lists".into(),
        ));
    }
    let mut vocab: Option<ObjectVocabulary> = None;
    let mut images: Vec<ImageRecord> = Vec::new();
    if let Some(path) = coco {
        let (v, imgs) = load_coco_instances(&existing(path)?)?;
        vocab = Some(v);
        images.extend(imgs);
    }
    if let Some(path) = lists {
        let vocab = match (&vocab, a.vocabulary.or_else(|| cfg.vocabulary.clone())) {
            (Some(v), None) => v.clone(),
            (_, Some(vpath)) => {
                let listed = parse_vocabulary_list(&jsonl::read_to_string(&existing(vpath)?)?)?;
                if let Some(v) = &vocab {
                    if v.names() != listed.names() {
                        return Err(Error::Conflict(
                            "--vocabulary differs from the COCO categories".into(),
                        ));
                    }
                }
                listed
            }
            (None, None) => {
                return Err(Error::Config(
                    "object lists need --vocabulary when no COCO file is given".into(),
                ))
            }
        };
        let lexicon = match a.lexicon.or_else(|| cfg.lexicon.clone()) {
            Some(p) => Some(load_lexicon(&existing(p)?, &vocab)?),
            None => None,
        };
        let policy = if a.allow_skip {
            UnknownObjectPolicy::Skip
        } else {
            UnknownObjectPolicy::Reject
        };
        images.extend(load_object_lists(
            &existing(path)?,
            &vocab,
            lexicon.as_ref(),
            policy,
        )?);
        return finish_ingest(vocab, images, &cfg, a.out);
    }
    finish_ingest(vocab.expect("coco given"), images, &cfg, a.out)
}

fn finish_ingest(
    vocab: ObjectVocabulary,
    images: Vec<ImageRecord>,
    cfg: &RunConfig,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus = Corpus::new(vocab, images)?;
    let out = cfg
        .output(out, "corpus.jsonl")
        .ok_or_else(|| Error::Config("ingest needs --out or output_dir".into()))?;
    corpus.write(&out)?;
    log::info!("wrote {} images to {}", corpus.len(), out.display());
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?;
    let corpus = load_corpus(a.corpus, &cfg)?;
    let vocab = corpus.vocabulary();
    let freq = build_frequency(corpus.images(), vocab)?;
    let cooc = build_cooccurrence(corpus.images(), vocab)?;
    let anchor = match &a.anchor {
        Some(name) => Some(vocab.id(name).ok_or_else(|| {
            Error::Reference(format!("anchor {name:?} is not in the vocabulary"))
        })?),
        None => None,
    };
    let mut report = json!({
        "kind": "stats_report",
        "producer": PRODUCER,
        "corpus_fingerprint": corpus.fingerprint(),
        "images": freq.images(),
        "frequency": freq.ranking().iter().map(|&o| json!({
            "object": vocab.name(o), "count": freq.count(o)
        })).collect::<Vec<_>>(),
    });
    if let Some(anchor) = anchor {
        report["cooccurrence"] = json!({
            "anchor": vocab.name(anchor),
            "ranking": cooc.ranking_for(anchor, vocab).iter().map(|&o| json!({
                "object": vocab.name(o), "count": cooc.count(anchor, o)
            })).collect::<Vec<_>>(),
        });
    }
    let mut hallucinations = vec![0; vocab.len()];
    if let Some(path) = a.captions {
        let lexicon = load_lexicon_or_identity(a.lexicon, &cfg, vocab)?;
        let captions = read_captions(&existing(path)?)?;
        let mentions = caption_mentions(&captions, &corpus, &lexicon)?;
        hallucinations = hallucination_counts(&mentions, vocab);
        let mut ratios: Vec<HitRatioReport> = vec![hr_appearing(&mentions, &freq, &a.ks)?];
        if let Some(anchor) = anchor {
            ratios.push(hr_cooccurring(&mentions, &corpus, &cooc, anchor, &a.ks)?);
        }
        report["hit_ratios"] = to_value(&ratios);
    }
    if let Some(csv) = &a.csv {
        let rows = histogram(freq.ranking(), |o| freq.count(o), &hallucinations, vocab);
        jsonl::write_file(csv, histogram_csv(&rows).as_bytes())?;
    }
    emit_json(cfg.output(a.out, "stats.json").as_deref(), &report)
}

fn build(a: BuildArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?;
    let mut probe = cfg.probe.clone().unwrap_or_default();
    if let Some(v) = a.mode {
        probe.mode = v;
    }
    if let Some(v) = a.l {
        probe.l = v;
    }
    if let Some(v) = a.n {
        probe.n = v;
    }
    if let Some(v) = a.min_objects {
        probe.min_objects = v;
    }
    if let Some(v) = a.seed {
        probe.seed = v;
    }
    if let Some(v) = a.template {
        probe.template_id = v;
    }
    if let Some(v) = a.aggregation {
        probe.aggregation = v;
    }
    probe.validate()?;
    let corpus = load_corpus(a.corpus, &cfg)?;
    let out = cfg
        .output(a.out, &format!("probe-{}.jsonl", probe.mode.as_str()))
        .ok_or_else(|| Error::Config("build-pope needs --out or output_dir".into()))?;
    let (freq, cooc) = match probe.mode {
        SamplingMode::Random => (None, None),
        SamplingMode::Popular => (
            Some(build_frequency(corpus.images(), corpus.vocabulary())?),
            None,
        ),
        SamplingMode::Adversarial => (
            None,
            Some(build_cooccurrence(corpus.images(), corpus.vocabulary())?),
        ),
    };
    let set = build_probe_set(&corpus, &probe, freq.as_ref(), cooc.as_ref())?;
    set.write(&out)?;
    log::info!(
        "wrote {} questions to {}",
        set.questions().len(),
        out.display()
    );
    Ok(())
}

fn poll_cmd(a: PollArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?;
    let endpoint: EndpointConfig = read_json(&existing(pick(
        a.endpoint,
        &cfg.endpoint,
        "endpoint config",
    )?)?)?;
    let probe = ProbeSet::read(&a.probe)?;
    let template_id = a
        .template
        .unwrap_or_else(|| probe.header().template_id.clone());
    let template = PromptTemplate::builtin(&template_id)?;
    let out = cfg
        .output(a.out, "answers.jsonl")
        .ok_or_else(|| Error::Config("poll needs --out or output_dir".into()))?;

    let start = if a.resume && out.exists() {
        resume_point(&out, &probe, &template_id)?
    } else {
        let header = AnswerSet {
            header: Some(AnswersHeader::new(
                PRODUCER,
                probe.fingerprint(),
                &template_id,
            )),
            records: Vec::new(),
        };
        jsonl::write_file(&out, header.to_jsonl().as_bytes())?;
        0
    };
    let mut file = OpenOptions::new()
        .append(true)
        .open(&out)
        .map_err(|e| Error::io(&out, e))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Transport(format!("cannot start async runtime: {e}")))?;
    let outcome = runtime.block_on(poll(&endpoint, &probe, &template, start, |record| {
        jsonl::write_line(&mut file, record)
            .and_then(|()| file.flush())
            .map_err(|e| Error::io(&out, e))
    }))?;
    match outcome.aborted {
        Some(abort) => Err(Error::Transport(format!(
            "{}; {} answers saved, rerun with --resume to continue at question {}",
            abort.error,
            start + outcome.records.len(),
            abort.resume_cursor
        ))),
        None => {
            log::info!(
                "wrote {} answers to {}",
                probe.questions().len(),
                out.display()
            );
            Ok(())
        }
    }
}

/// Checks an existing answers file against the probe and returns how many
/// questions it already covers.
fn resume_point(out: &Path, probe: &ProbeSet, template_id: &str) -> Result<usize> {
    let existing = read_answers(out)?;
    let header = existing.header.as_ref().ok_or_else(|| {
        Error::schema(
            out.display().to_string(),
            "answers file has no header to resume from",
        )
    })?;
    if header.probe_fingerprint != probe.fingerprint() {
        return Err(Error::FingerprintMismatch {
            probe: probe.fingerprint().to_string(),
            answers: header.probe_fingerprint.clone(),
        });
    }
    if header.template_id != template_id {
        return Err(Error::Conflict(format!(
            "answers were collected with template {:?}, not {template_id:?}",
            header.template_id
        )));
    }
    for (i, (q, r)) in probe.questions().iter().zip(&existing.records).enumerate() {
        if q.image_id != r.image_id || probe.object_name(q) != r.object {
            return Err(Error::schema(
                format!("{}:{}", out.display(), i + 2),
                format!("answer does not match probe question {}", i + 1),
            ));
        }
    }
    if existing.records.len() > probe.questions().len() {
        return Err(Error::schema(
            out.display().to_string(),
            "more answers than questions",
        ));
    }
    Ok(existing.records.len())
}

fn synth_fingerprint(cfg: &SynthConfig, input: &str) -> String {
    let body = json!({ "synth": cfg, "input": input });
    jsonl::sha256_hex(body.to_string().as_bytes())
}

fn synth_answers_cmd(a: SynthAnswersArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    let corpus = Corpus::read(&a.corpus)?;
    let probe = ProbeSet::read(&a.probe)?;
    let freq = build_frequency(corpus.images(), corpus.vocabulary())?;
    let cooc = build_cooccurrence(corpus.images(), corpus.vocabulary())?;
    let records = synth_answers(&probe, &corpus, &cfg, Some(&freq), Some(&cooc))?;
    let producer = format!(
        "{PRODUCER} synth:{}",
        synth_fingerprint(&cfg, probe.fingerprint())
    );
    let set = AnswerSet {
        header: Some(AnswersHeader::new(
            &producer,
            probe.fingerprint(),
            &probe.header().template_id,
        )),
        records,
    };
    jsonl::write_file(&a.out, set.to_jsonl().as_bytes())
}

fn synth_captions_cmd(a: SynthCaptionsArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    let corpus = Corpus::read(&a.corpus)?;
    let freq = build_frequency(corpus.images(), corpus.vocabulary())?;
    let cooc = build_cooccurrence(corpus.images(), corpus.vocabulary())?;
    let records = synth_captions(&corpus, &cfg, Some(&freq), Some(&cooc))?;
    let text = write_captions(
        &records,
        &format!("{PRODUCER} synth"),
        &synth_fingerprint(&cfg, &corpus.fingerprint()),
    );
    jsonl::write_file(&a.out, text.as_bytes())
}

fn synth_corpus_cmd(a: SynthCorpusArgs) -> Result<()> {
    let spec = CorpusSpec {
        images: a.images,
        objects: a.objects,
        ..CorpusSpec::default()
    };
    synth_corpus(&spec, a.seed)?.write(&a.out)
}

fn score_cmd(a: ScoreArgs) -> Result<()> {
    let probe = ProbeSet::read(&a.probe)?;
    let answers = read_answers(&a.answers)?;
    match &answers.header {
        Some(h) if h.probe_fingerprint != probe.fingerprint() => {
            let err = Error::FingerprintMismatch {
                probe: probe.fingerprint().to_string(),
                answers: h.probe_fingerprint.clone(),
            };
            if !a.force {
                return Err(err);
            }
            log::warn!("{err}; scoring anyway (--force)");
        }
        Some(_) => {}
        None if a.force => log::warn!("answers carry no probe fingerprint; scoring anyway"),
        None => {
            return Err(Error::schema(
                a.answers.display().to_string(),
                "answers have no header with a probe fingerprint; use --force to score anyway",
            ))
        }
    }
    let report = score(&probe, &answers.records, a.unparsed)?;
    let mut value = json!({
        "kind": "score_report",
        "producer": PRODUCER,
        "probe_fingerprint": probe.fingerprint(),
        "mode": probe.header().mode,
    });
    merge_into(&mut value, to_value(&report));
    emit_json(a.out.as_deref(), &value)
}

fn merge_into(target: &mut Value, extra: Value) {
    if let (Value::Object(t), Value::Object(e)) = (target, extra) {
        t.extend(e);
    }
}

fn chair_cmd(a: ChairArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?;
    let corpus = load_corpus(a.corpus, &cfg)?;
    let lexicon = load_lexicon_or_identity(a.lexicon, &cfg, corpus.vocabulary())?;
    let captions = read_captions(&a.captions)?;
    if captions.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no captions in {}",
            a.captions.display()
        )));
    }
    let report = chair_scores(&captions, &corpus, &lexicon)?;
    if let Some(path) = &a.mentions {
        let mentions = caption_mentions(&captions, &corpus, &lexicon)?;
        let mut out = Vec::new();
        for m in &mentions {
            jsonl::write_line(&mut out, m).expect("in-memory write");
        }
        jsonl::write_file(path, &out)?;
    }
    let mut value = json!({
        "kind": "chair_report",
        "producer": PRODUCER,
        "corpus_fingerprint": corpus.fingerprint(),
    });
    merge_into(&mut value, to_value(&report));
    emit_json(cfg.output(a.out, "chair.json").as_deref(), &value)
}

fn consist_cmd(a: ConsistArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?;
    let corpus = load_corpus(a.corpus, &cfg)?;
    let lexicon = load_lexicon_or_identity(a.lexicon, &cfg, corpus.vocabulary())?;
    let probe = ProbeSet::read(&a.probe)?;
    if corpus.vocabulary().names() != probe.vocabulary().names() {
        return Err(Error::Reference(
            "probe set and corpus use different vocabularies".into(),
        ));
    }
    let answers = read_answers(&a.answers)?;
    let captions = read_captions(&a.captions)?;
    if captions.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no captions in {}",
            a.captions.display()
        )));
    }
    let mentions: Vec<MentionSet> = caption_mentions(&captions, &corpus, &lexicon)?;
    let report = consistency(&probe, &answers.records, &mentions)?;
    let mut value = json!({
        "kind": "consistency_report",
        "producer": PRODUCER,
        "probe_fingerprint": probe.fingerprint(),
    });
    merge_into(&mut value, to_value(&report));
    emit_json(cfg.output(a.out, "consistency.json").as_deref(), &value)
}

fn report(a: ReportArgs) -> Result<()> {
    let mut sections: Vec<Value> = Vec::new();
    let mut csv = String::from("source,section,metric,value\n");
    for path in &a.inputs {
        let mut doc: Value = read_json(path)?;
        let kind = doc
            .get("kind")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::schema(path.display().to_string(), "report has no \"kind\""))?;
        let section = match kind.as_str() {
            "score_report" => "score",
            "chair_report" => "chair",
            "consistency_report" => "consistency",
            "stats_report" => "hit_ratio",
            other => {
                return Err(Error::schema(
                    path.display().to_string(),
                    format!("cannot merge report of kind {other:?}"),
                ))
            }
        };
        let source = path.display().to_string();
        if section == "hit_ratio" {
            let ratios = doc.get_mut("hit_ratios").map(Value::take).ok_or_else(|| {
                Error::schema(
                    &source,
                    "stats report has no hit ratios (run stats with --captions)",
                )
            })?;
            let ratios: Vec<HitRatioReport> = serde_json::from_value(ratios)
                .map_err(|e| Error::schema(&source, e.to_string()))?;
            for r in &ratios {
                let label = match &r.kind {
                    crate::stats::HitRatioKind::Appearing => "hr_a".to_string(),
                    crate::stats::HitRatioKind::Cooccurring { anchor } => format!("hr_c[{anchor}]"),
                };
                for (k, v) in &r.values {
                    csv.push_str(&csv_row(
                        &source,
                        section,
                        &format!("{label}@{k}"),
                        &v.to_string(),
                    ));
                }
                sections.push(json!({ "source": source, "section": section, "report": r }));
            }
            continue;
        }
        for (metric, value) in flat_metrics(&doc) {
            csv.push_str(&csv_row(&source, section, &metric, &value));
        }
        sections.push(json!({ "source": source, "section": section, "report": doc }));
    }
    let merged = json!({
        "kind": "merged_report",
        "producer": PRODUCER,
        "reports": sections,
    });
    if let Some(path) = &a.csv {
        jsonl::write_file(path, csv.as_bytes())?;
    }
    emit_json(a.out.as_deref(), &merged)
}

fn flat_metrics(doc: &Value) -> Vec<(String, String)> {
    let mut out = Vec::new();
    flatten("", doc, &mut out);
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                if matches!(k.as_str(), "kind" | "producer") {
                    continue;
                }
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        Value::Number(n) => out.push((prefix.to_string(), n.to_string())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::Array(items) => {
            let joined: Vec<String> = items
                .iter()
                .map(|i| {
                    i.as_str()
                        .map(str::to_string)
                        .unwrap_or_else(|| i.to_string())
                })
                .collect();
            out.push((prefix.to_string(), joined.join(";")));
        }
    }
}

fn csv_row(source: &str, section: &str, metric: &str, value: &str) -> String {
    let quote = |s: &str| {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    };
    format!(
        "{},{},{},{}\n",
        quote(source),
        quote(section),
        quote(metric),
        quote(value)
    )
}
