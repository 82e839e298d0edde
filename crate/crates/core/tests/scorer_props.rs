mod common;

use common::*;
use pope::builder::{Expected, ProbeConfig, ProbeSet};
use pope::chair::caption_mentions;
use pope::corpus::{Answer, AnswerRecord, AnswerSet};
use pope::scorer::{consistency, parse_answer, score, ConsistencyReport, UnparsedPolicy};
use pope::synth::{synth_corpus, CorpusSpec};
use pope::Error;
use proptest::prelude::*;

fn small_probe(seed: u64, n: usize) -> ProbeSet {
    let corpus = synth_corpus(
        &CorpusSpec {
            images: 40,
            ..Default::default()
        },
        seed,
    )
    .unwrap();
    build(
        &corpus,
        &ProbeConfig {
            n,
            seed,
            ..ProbeConfig::default()
        },
    )
    .unwrap()
}

fn respond(
    probe: &ProbeSet,
    mut f: impl FnMut(usize, Expected) -> &'static str,
) -> Vec<AnswerRecord> {
    probe
        .questions()
        .iter()
        .enumerate()
        .map(|(i, q)| AnswerRecord::new(q.image_id.clone(), probe.object_name(q), f(i, q.expected)))
        .collect()
}

#[test]
fn all_yes_baseline_renders_exactly() {
    let probe = small_probe(1, 25);
    let report = score(&probe, &respond(&probe, |_, _| "Yes"), UnparsedPolicy::AsNo).unwrap();
    let r = &report.rendered;
    assert_eq!(
        [&r.accuracy, &r.precision, &r.recall, &r.f1, &r.yes_ratio].map(|s| s.as_deref()),
        [
            Some("50.00"),
            Some("50.00"),
            Some("100.00"),
            Some("66.67"),
            Some("100.00")
        ]
    );
    assert_eq!(report.yes_ratio, Some(1.0));
}

#[test]
fn perfect_responder() {
    let probe = small_probe(2, 20);
    let answers = respond(
        &probe,
        |_, e| if e == Expected::Yes { "Yes." } else { "No." },
    );
    let report = score(&probe, &answers, UnparsedPolicy::AsNo).unwrap();
    assert_eq!(report.rendered.accuracy.as_deref(), Some("100.00"));
    assert_eq!(report.rendered.f1.as_deref(), Some("100.00"));
    assert_eq!(report.rendered.yes_ratio.as_deref(), Some("50.00"));
}

#[test]
fn all_no_responder_flags_precision() {
    let probe = small_probe(3, 20);
    let report = score(&probe, &respond(&probe, |_, _| "No"), UnparsedPolicy::AsNo).unwrap();
    assert_eq!(report.accuracy, Some(0.5));
    assert_eq!(report.recall, Some(0.0));
    assert_eq!(report.precision, None);
    assert_eq!(report.f1, Some(0.0));
    assert_eq!(report.yes_ratio, Some(0.0));
    assert!(report.flags.iter().any(|f| f.contains("precision")));
}

#[test]
fn unparsed_policies() {
    let probe = small_probe(4, 10);
    let answers = respond(&probe, |i, _| if i % 3 == 0 { "Maybe?" } else { "Yes" });
    let unparsed = answers
        .iter()
        .filter(|a| a.parsed == Answer::Unparsed)
        .count() as u64;
    let as_no = score(&probe, &answers, UnparsedPolicy::AsNo).unwrap();
    let excluded = score(&probe, &answers, UnparsedPolicy::Exclude).unwrap();
    assert_eq!(as_no.unparsed, unparsed);
    assert_eq!(as_no.confusion.total(), probe.questions().len() as u64);
    assert_eq!(
        excluded.confusion.total(),
        probe.questions().len() as u64 - unparsed
    );
    assert_eq!(excluded.yes_ratio, Some(1.0));
}

#[test]
fn coverage_errors_list_every_problem() {
    let probe = small_probe(5, 10);
    let mut answers = respond(&probe, |_, _| "yes");
    answers.remove(0);
    let dup = answers[0].clone();
    answers.push(dup);
    answers.push(AnswerRecord::new("nowhere", "person", "yes"));
    match score(&probe, &answers, UnparsedPolicy::AsNo) {
        Err(Error::Coverage {
            missing,
            duplicate,
            unexpected,
        }) => {
            assert_eq!(
                (missing.len(), duplicate.len(), unexpected.len()),
                (1, 1, 1)
            );
        }
        other => panic!("expected coverage error, got {other:?}"),
    }
}

#[test]
fn parse_answer_examples() {
    for (raw, want) in [
        ("Yes", Answer::Yes),
        ("yes, there is a dog", Answer::Yes),
        ("No.", Answer::No),
        ("  no", Answer::No),
        ("There is no dog in the image.", Answer::No),
        ("There is a dog in the image.", Answer::Unparsed),
        ("", Answer::Unparsed),
        ("Yes and no.", Answer::Yes),
        ("I cannot tell, yes or no.", Answer::Unparsed),
    ] {
        assert_eq!(parse_answer(raw), want, "{raw:?}");
    }
}

const HAND_PROBE: &str = r#"{"kind":"pope_probe","l":4,"n":5,"seed":0,"mode":"random","min_objects":3,"template_id":"t1","aggregation":"sum","rng":"hand","corpus_id":"hand","vocabulary":["person","dog","cat","car","bus","dining table","chair","cup","bicycle","hot dog","traffic light","couch","tv","laptop","pizza"],"fingerprint":"hand"}
{"image_id":"c01","object":"person","question":"Is there a person in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c01","object":"chair","question":"Is there a chair in the image?","expected":"no","strategy":"random","template_id":"t1"}
{"image_id":"c01","object":"dog","question":"Is there a dog in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c01","object":"tv","question":"Is there a tv in the image?","expected":"no","strategy":"random","template_id":"t1"}
{"image_id":"c02","object":"pizza","question":"Is there a pizza in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c02","object":"dog","question":"Is there a dog in the image?","expected":"no","strategy":"random","template_id":"t1"}
{"image_id":"c02","object":"cup","question":"Is there a cup in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c02","object":"car","question":"Is there a car in the image?","expected":"no","strategy":"random","template_id":"t1"}
{"image_id":"c03","object":"cat","question":"Is there a cat in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c03","object":"laptop","question":"Is there a laptop in the image?","expected":"no","strategy":"random","template_id":"t1"}
{"image_id":"c03","object":"tv","question":"Is there a tv in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c03","object":"bus","question":"Is there a bus in the image?","expected":"no","strategy":"random","template_id":"t1"}
{"image_id":"c04","object":"bus","question":"Is there a bus in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c04","object":"pizza","question":"Is there a pizza in the image?","expected":"no","strategy":"random","template_id":"t1"}
{"image_id":"c04","object":"car","question":"Is there a car in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c04","object":"cat","question":"Is there a cat in the image?","expected":"no","strategy":"random","template_id":"t1"}
{"image_id":"c05","object":"couch","question":"Is there a couch in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c05","object":"tv","question":"Is there a tv in the image?","expected":"no","strategy":"random","template_id":"t1"}
{"image_id":"c05","object":"dog","question":"Is there a dog in the image?","expected":"yes","strategy":"positive","template_id":"t1"}
{"image_id":"c05","object":"car","question":"Is there a car in the image?","expected":"no","strategy":"random","template_id":"t1"}
"#;

#[test]
fn consistency_five_image_fixture() {
    let corpus = chair_corpus();
    let lexicon = chair_lexicon(&corpus);
    let probe = ProbeSet::from_jsonl(HAND_PROBE, "hand").unwrap();
    let mentions = caption_mentions(&chair_captions()[..5], &corpus, &lexicon).unwrap();
    // Yes exactly on caption-mentioned objects, except c04/car which the
    // caption mentions but the answer denies.
    let answers: Vec<AnswerRecord> = probe
        .questions()
        .iter()
        .map(|q| {
            let m = mentions.iter().find(|m| m.image_id == q.image_id).unwrap();
            let say_yes = m.mentioned.contains(&q.object_id)
                && !(q.image_id == "c04" && probe.object_name(q) == "car");
            AnswerRecord::new(
                q.image_id.clone(),
                probe.object_name(q),
                if say_yes { "Yes" } else { "No" },
            )
        })
        .collect();
    let report = consistency(&probe, &answers, &mentions).unwrap();
    assert_eq!(
        report,
        ConsistencyReport {
            no_answered_objects: 10,
            no_answered_mentioned_in_caption: 1,
            caption_mentioned_objects: 11,
            caption_mentioned_answered_yes: 10,
        }
    );
}

#[test]
fn consistency_needs_mentions_for_answered_images() {
    let corpus = chair_corpus();
    let probe = ProbeSet::from_jsonl(HAND_PROBE, "hand").unwrap();
    let mentions =
        caption_mentions(&chair_captions()[..4], &corpus, &chair_lexicon(&corpus)).unwrap();
    let answers = respond(&probe, |_, _| "Yes");
    assert!(matches!(
        consistency(&probe, &answers, &mentions),
        Err(Error::Reference(_))
    ));
}

#[test]
fn answer_files_round_trip() {
    let probe = small_probe(6, 5);
    let set = AnswerSet {
        header: Some(pope::corpus::AnswersHeader::new(
            "test",
            probe.fingerprint(),
            "t1",
        )),
        records: respond(&probe, |i, _| ["Yes", "no", "unsure"][i % 3]),
    };
    let back = AnswerSet::from_jsonl(&set.to_jsonl(), "mem").unwrap();
    assert_eq!(back, set);
    // Files with only the required fields are accepted and parsed.
    let minimal = "{\"image_id\":\"a\",\"object\":\"dog\",\"raw_text\":\"Yes\"}\n";
    let parsed = AnswerSet::from_jsonl(minimal, "mem").unwrap();
    assert_eq!(parsed.header, None);
    assert_eq!(parsed.records[0].parsed, Answer::Yes);
}

const REPLIES: &[&str] = &[
    "Yes",
    "No",
    "yes.",
    "no, none",
    "Unclear",
    "There is no cat.",
    "",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_identities(seed in 0u64..1000, picks in prop::collection::vec(0..REPLIES.len(), 60)) {
        let probe = small_probe(seed, 10);
        let answers = respond(&probe, |i, _| REPLIES[picks[i % picks.len()]]);
        let report = score(&probe, &answers, UnparsedPolicy::AsNo).unwrap();
        let c = report.confusion;
        prop_assert_eq!(c.total(), probe.questions().len() as u64);
        prop_assert_eq!(c.tp + c.fn_, c.fp + c.tn);
        if let (Some(p), Some(r), Some(f1)) = (report.precision, report.recall, report.f1) {
            if p + r > 0.0 {
                prop_assert!((f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
            }
        }
        for (value, rendered) in [
            (report.accuracy, &report.rendered.accuracy),
            (report.f1, &report.rendered.f1),
            (report.yes_ratio, &report.rendered.yes_ratio),
        ] {
            match (value, rendered) {
                (Some(v), Some(s)) => prop_assert!((v * 100.0 - s.parse::<f64>().unwrap()).abs() <= 0.005 + 1e-9),
                (None, None) => {}
                other => return Err(TestCaseError::fail(format!("{other:?}"))),
            }
        }

        let mut reversed = answers.clone();
        reversed.reverse();
        let again = score(&probe, &reversed, UnparsedPolicy::AsNo).unwrap();
        prop_assert_eq!(again.f1, report.f1);
        prop_assert_eq!(again.confusion, report.confusion);
    }

    #[test]
    fn constant_responder_is_half_accurate(seed in 0u64..1000, reply in 0..REPLIES.len()) {
        let probe = small_probe(seed, 8);
        let report = score(&probe, &respond(&probe, |_, _| REPLIES[reply]), UnparsedPolicy::AsNo).unwrap();
        prop_assert_eq!(report.accuracy, Some(0.5));
        prop_assert_eq!(report.rendered.accuracy.as_deref(), Some("50.00"));
    }
}
