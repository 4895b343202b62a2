//! Item files, payload files and synthetic input generation.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::transport::PartyInput;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: not a number: {text:?}")]
    BadPayload {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{payloads} payloads for {lines} item lines")]
    PayloadCount { lines: usize, payloads: usize },
}

fn read(path: &Path) -> Result<String, InputError> {
    fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Items read from a file, deduplicated in first-seen order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadedItems {
    pub items: Vec<Vec<u8>>,
    /// Zero-based line number of each kept item.
    pub lines: Vec<usize>,
    pub duplicates: usize,
}

/// One item per line (UTF-8); `\r\n` endings and a missing final newline are
/// accepted. Blank lines are skipped since the empty string cannot be hashed.
pub fn load_items(path: &Path) -> Result<LoadedItems, InputError> {
    let text = read(path)?;
    let mut seen = HashSet::new();
    let mut out = LoadedItems {
        items: Vec::new(),
        lines: Vec::new(),
        duplicates: 0,
    };
    for (line, raw) in text.lines().enumerate() {
        if raw.is_empty() {
            continue;
        }
        if seen.insert(raw) {
            out.items.push(raw.as_bytes().to_vec());
            out.lines.push(line);
        } else {
            out.duplicates += 1;
        }
    }
    if out.duplicates > 0 {
        warn!(
            "{}: dropped {} duplicate item(s)",
            path.display(),
            out.duplicates
        );
    }
    Ok(out)
}

/// One number per line, aligned with the item file's lines.
pub fn load_payloads(path: &Path) -> Result<Vec<f64>, InputError> {
    read(path)?
        .lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| InputError::BadPayload {
                path: path.display().to_string(),
                line: i + 1,
                text: l.to_string(),
            })
        })
        .collect()
}

/// Loads a party's items and, optionally, the payloads aligned with them.
pub fn load_party(items: &Path, payloads: Option<&Path>) -> Result<PartyInput, InputError> {
    let loaded = load_items(items)?;
    let payloads = match payloads {
        None => None,
        Some(p) => {
            let values = load_payloads(p)?;
            let Some(&last) = loaded.lines.last() else {
                return Ok(PartyInput {
                    items: vec![],
                    payloads: Some(vec![]),
                });
            };
            if values.len() <= last {
                return Err(InputError::PayloadCount {
                    lines: last + 1,
                    payloads: values.len(),
                });
            }
            Some(loaded.lines.iter().map(|&l| values[l]).collect())
        }
    };
    Ok(PartyInput {
        items: loaded.items,
        payloads,
    })
}

pub fn write_items(path: &Path, items: &[Vec<u8>]) -> Result<(), InputError> {
    let wrap = |source| InputError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(wrap)?);
    for item in items {
        w.write_all(item).map_err(wrap)?;
        w.write_all(b"\n").map_err(wrap)?;
    }
    w.flush().map_err(wrap)
}

/// Two sets of `n` distinct items sharing `round(n * overlap)` of them, each
/// in random order.
pub fn synthetic_pair<R: Rng + ?Sized>(
    n: usize,
    overlap: f64,
    rng: &mut R,
) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
    let shared = ((n as f64) * overlap.clamp(0.0, 1.0)).round() as usize;
    let salt: u64 = rng.gen();
    let make = |tag: &str, range: std::ops::Range<usize>| -> Vec<Vec<u8>> {
        range
            .map(|i| format!("{tag}-{salt:016x}-{i:010}").into_bytes())
            .collect()
    };
    let common = make("both", 0..shared);
    let mut x = common.clone();
    x.extend(make("send", shared..n));
    let mut y = common;
    y.extend(make("recv", shared..n));
    x.shuffle(rng);
    y.shuffle(rng);
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngMode;

    #[test]
    fn dedups_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("items.txt");
        fs::write(&p, "a\r\nb\na\n\nc").unwrap();
        let l = load_items(&p).unwrap();
        assert_eq!(l.items, vec![b"a".to_vec(), b"b".to_vec(), b"c".to_vec()]);
        assert_eq!(l.lines, vec![0, 1, 4]);
        assert_eq!(l.duplicates, 1);
    }

    #[test]
    fn empty_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.txt");
        fs::write(&p, "").unwrap();
        assert!(load_items(&p).unwrap().items.is_empty());
        assert!(matches!(
            load_items(&dir.path().join("nope")),
            Err(InputError::Io { .. })
        ));
    }

    #[test]
    fn payloads_follow_kept_lines() {
        let dir = tempfile::tempdir().unwrap();
        let items = dir.path().join("i.txt");
        let pay = dir.path().join("p.txt");
        fs::write(&items, "a\nb\na\nc\n").unwrap();
        fs::write(&pay, "1\n2\n3\n4.5\n").unwrap();
        let party = load_party(&items, Some(&pay)).unwrap();
        assert_eq!(party.payloads, Some(vec![1.0, 2.0, 4.5]));
        fs::write(&pay, "1\n2\n").unwrap();
        assert!(matches!(
            load_party(&items, Some(&pay)),
            Err(InputError::PayloadCount { .. })
        ));
        fs::write(&pay, "1\nx\n").unwrap();
        assert!(matches!(
            load_payloads(&pay),
            Err(InputError::BadPayload { line: 2, .. })
        ));
    }

    #[test]
    fn synthetic_overlap_is_planted() {
        let mut rng = RngMode::Seeded(4).stream(0);
        let (x, y) = synthetic_pair(1000, 0.7, &mut rng);
        let xs: HashSet<_> = x.iter().collect();
        assert_eq!(xs.len(), 1000);
        assert_eq!(y.iter().filter(|v| xs.contains(v)).count(), 700);
    }

    #[test]
    fn large_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.txt");
        let (x, _) = synthetic_pair(1 << 17, 0.7, &mut RngMode::Seeded(1).stream(0));
        write_items(&p, &x).unwrap();
        let l = load_items(&p).unwrap();
        assert_eq!(l.items.len(), 1 << 17);
        assert_eq!(l.items, x);
    }
}
