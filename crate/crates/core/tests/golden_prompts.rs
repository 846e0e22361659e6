use std::fs;
use std::path::PathBuf;

use emodetect_core::corpus::{Dataset, LabelAssignment, LabelSchema, Sample, Track};
use emodetect_core::prompting::{render_prompts, write_instruction_dataset, Strategy};

const EMOTIONS: [&str; 5] = ["anger", "fear", "joy", "sadness", "surprise"];

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/prompts")
        .join(name);
    fs::read_to_string(path).unwrap().trim_end().to_string()
}

/// Exports `text` with `gold` and returns the line for `target` (or the
/// single base line).
fn exported(
    text: &str,
    gold: &[(&str, u8)],
    track: Track,
    strategy: Strategy,
    target: Option<&str>,
) -> String {
    let schema = LabelSchema::new(EMOTIONS, track).unwrap();
    let mut pairs: Vec<(&str, u8)> = EMOTIONS.iter().map(|e| (*e, 0)).collect();
    for (label, v) in gold {
        pairs.iter_mut().find(|(e, _)| e == label).unwrap().1 = *v;
    }
    let gold = LabelAssignment::from_pairs(&schema, pairs).unwrap();
    let sample = Sample::new("eng_1", "eng", text, Some(gold)).unwrap();
    let d = Dataset::new(vec![sample.clone()], schema.clone()).unwrap();

    let mut buf = Vec::new();
    let n = write_instruction_dataset(&d, strategy, track, &mut buf).unwrap();
    let prompts = render_prompts(&schema, &sample, strategy, track, true).unwrap();
    assert_eq!(n, prompts.len());
    let idx = match target {
        None => 0,
        Some(t) => prompts
            .iter()
            .position(|p| p.target_label.as_deref() == Some(t))
            .unwrap(),
    };
    String::from_utf8(buf)
        .unwrap()
        .lines()
        .nth(idx)
        .unwrap()
        .to_string()
}

#[test]
fn track_a_base() {
    let line = exported(
        "bro dont do this to us",
        &[("fear", 1)],
        Track::A,
        Strategy::Base,
        None,
    );
    assert_eq!(line, fixture("track_a_base.json"));
}

#[test]
fn track_a_pairwise() {
    let line = exported(
        "I could not unbend my knees.",
        &[("fear", 1)],
        Track::A,
        Strategy::Pairwise,
        Some("anger"),
    );
    assert_eq!(line, fixture("track_a_pairwise.json"));
}

#[test]
fn track_b_base() {
    let line = exported(
        "A penny hit me square in the face.",
        &[("anger", 2), ("sadness", 1)],
        Track::B,
        Strategy::Base,
        None,
    );
    assert_eq!(line, fixture("track_b_base.json"));
}

#[test]
fn track_b_pairwise() {
    let line = exported(
        "Totally creeped me out.",
        &[("fear", 3)],
        Track::B,
        Strategy::Pairwise,
        Some("fear"),
    );
    assert_eq!(line, fixture("track_b_pairwise.json"));
}

#[test]
fn pairwise_asks_every_label_in_order() {
    let schema = LabelSchema::new(EMOTIONS, Track::B).unwrap();
    let s = Sample::new(
        "x",
        "eng",
        "calm day",
        Some(LabelAssignment::zeros(&schema)),
    )
    .unwrap();
    let prompts = render_prompts(&schema, &s, Strategy::Pairwise, Track::B, true).unwrap();
    let targets: Vec<_> = prompts
        .iter()
        .map(|p| p.target_label.clone().unwrap())
        .collect();
    assert_eq!(targets, EMOTIONS);
    assert!(prompts
        .iter()
        .all(|p| p.assistant.as_deref() == Some("none")));
}
