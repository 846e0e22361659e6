//! Fixture corpora written to disk in the task's CSV layout.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use emodetect_core::corpus::{Dataset, Track};
use emodetect_core::synthetic::multilingual;

/// Writes `d` as `id,text,<labels>` CSV.
pub fn write_csv(d: &Dataset, path: &Path) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let mut w = Vec::new();
    let schema = d.schema();
    let mut header = vec!["id".to_string(), "text".to_string()];
    header.extend(schema.labels().iter().cloned());
    w.push(header.join(","));
    for s in d.samples() {
        let gold = s.gold.as_ref().unwrap();
        let mut row = vec![s.id.clone(), format!("\"{}\"", s.text.replace('"', "\"\""))];
        row.extend(
            schema
                .labels()
                .iter()
                .map(|l| gold.get(l).unwrap().to_string()),
        );
        w.push(row.join(","));
    }
    fs::write(path, w.join("\n") + "\n").unwrap();
}

/// One CSV per language of a seeded synthetic corpus; returns
/// `--data LANG=PATH` arguments.
pub fn corpus(dir: &Path, n: usize, langs: &[&str], track: Track, seed: u64) -> Vec<String> {
    let d = multilingual(n, langs, track, seed);
    langs
        .iter()
        .flat_map(|lang| {
            let path: PathBuf = dir.join(format!("data/{lang}_{track}.csv"));
            write_csv(&d.language(lang).unwrap(), &path);
            ["--data".to_string(), format!("{lang}={}", path.display())]
        })
        .collect()
}

pub fn args(parts: &[&str], extra: &[String]) -> Vec<String> {
    let mut v: Vec<String> = std::iter::once("emodetect")
        .chain(parts.iter().copied())
        .map(String::from)
        .collect();
    v.extend(extra.iter().cloned());
    v
}
