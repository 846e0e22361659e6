//! Seeded synthetic corpora for tests, demos and smoke runs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, LabelAssignment, LabelSchema, Sample, Track};

const FILLER: &[&str] = &[
    "the",
    "a",
    "today",
    "river",
    "window",
    "morning",
    "train",
    "paper",
    "green",
    "table",
    "walked",
    "said",
    "house",
    "street",
    "later",
    "music",
    "coffee",
    "phone",
    "garden",
    "quiet",
    "city",
    "letter",
    "cloud",
    "winter",
    "market",
    "road",
    "yesterday",
    "book",
    "friend",
    "door",
];

fn filler_sentence<R: Rng>(rng: &mut R, words: usize) -> Vec<&'static str> {
    (0..words)
        .map(|_| *FILLER.choose(rng).expect("non-empty"))
        .collect()
}

/// Per-language label sets used by [`multilingual`]: languages differ in
/// whether `disgust` is annotated.
pub fn language_schema(lang: &str, track: Track) -> LabelSchema {
    let labels: &[&str] = match lang {
        "eng" | "deu" => &["anger", "fear", "joy", "sadness", "surprise"],
        _ => &["anger", "disgust", "fear", "joy", "sadness", "surprise"],
    };
    LabelSchema::new(labels.iter().copied(), track).expect("static labels")
}

/// Random labeled samples spread round-robin over `langs`, mixed over the
/// union of their schemas. Every label takes at least two distinct values
/// once `n >= 2 * |langs| * 4`.
pub fn multilingual(n: usize, langs: &[&str], track: Track, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: Vec<Dataset> = langs
        .iter()
        .enumerate()
        .map(|(li, lang)| {
            let schema = language_schema(lang, track);
            let samples = (li..n)
                .step_by(langs.len())
                .map(|i| {
                    let mut gold = LabelAssignment::zeros(&schema);
                    for label in schema.labels() {
                        let v = rng.random_range(0..=track.max_value());
                        gold.set(label, v).expect("in range");
                    }
                    let mut words = filler_sentence(&mut rng, 6);
                    words.push(lang);
                    let text = format!("{} #{i}", words.join(" "));
                    Sample::new(format!("{lang}_{i:05}"), *lang, text, Some(gold))
                        .expect("non-empty")
                })
                .collect();
            Dataset::new(samples, schema).expect("unique ids")
        })
        .collect();
    crate::corpus::mix_languages(&parts).expect("same track")
}

/// Track A data where each label is active exactly when its keyword
/// appears in the text.
pub fn keyword_separable(n: usize, keywords: &[(&str, &str)], lang: &str, seed: u64) -> Dataset {
    let schema =
        LabelSchema::new(keywords.iter().map(|(label, _)| *label), Track::A).expect("valid labels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let mut words = filler_sentence(&mut rng, 8);
            let mut gold = LabelAssignment::zeros(&schema);
            for (label, keyword) in keywords {
                if rng.random_bool(0.5) {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, keyword);
                    gold.set(label, 1).expect("schema label");
                }
            }
            Sample::new(
                format!("{lang}_{seed}_{i:05}"),
                lang,
                words.join(" "),
                Some(gold),
            )
            .expect("non-empty")
        })
        .collect();
    Dataset::new(samples, schema).expect("unique ids")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multilingual_is_seeded() {
        let a = multilingual(40, &["eng", "amh"], Track::B, 5);
        assert_eq!(a, multilingual(40, &["eng", "amh"], Track::B, 5));
        assert_eq!(a.len(), 40);
        assert_eq!(a.schema().len(), 6);
        assert_eq!(a.langs().len(), 2);
    }

    #[test]
    fn keyword_labels_follow_text() {
        let d = keyword_separable(50, &[("anger", "furious"), ("joy", "delighted")], "eng", 1);
        for s in d.samples() {
            let gold = s.gold.as_ref().unwrap();
            assert_eq!(gold.get("anger") == Some(1), s.text.contains("furious"));
            assert_eq!(gold.get("joy") == Some(1), s.text.contains("delighted"));
        }
    }
}
