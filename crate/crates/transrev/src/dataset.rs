//! The preprocessed dataset directory.
//!
//! ```text
//! vocab.tsv          token \t id \t df            (sorted by id)
//! train.tsv          user \t item \t rating \t space-separated token ids
//! validation.tsv     same layout
//! test.tsv           same layout
//! users.tsv          index \t original user id
//! items.tsv          index \t original item id
//! train_text.txt     raw text of each train.tsv line, same order
//! manifest.json      counts, seed, threshold, format, removal statistics
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use transrev_core::{DatasetSplit, Format, InteractionTriple, PreparedCorpus, Vocabulary};

use crate::error::{Error, Result};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const VALIDATION_FILE: &str = "validation.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const ITEMS_FILE: &str = "items.tsv";
pub const TRAIN_TEXT_FILE: &str = "train_text.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub reviews: usize,
    pub skipped_lines: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub users: usize,
    pub items: usize,
    pub vocabulary: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removed {
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_format_version: u32,
    pub format: String,
    pub seed: u64,
    pub min_review_fraction: f64,
    pub min_document_frequency: usize,
    pub counts: Counts,
    pub removed: Removed,
    pub out_of_range_ratings: usize,
}

/// A dataset directory read back into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: DatasetSplit,
    pub vocabulary: Vocabulary,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub train_text: Vec<String>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == id)
    }

    pub fn part(&self, name: &str) -> Result<&[InteractionTriple]> {
        match name {
            "train" => Ok(&self.split.train),
            "validation" | "valid" => Ok(&self.split.validation),
            "test" => Ok(&self.split.test),
            other => Err(Error::Usage(format!(
                "unknown split `{other}` (train, validation, test)"
            ))),
        }
    }
}

pub fn vocabulary_tsv(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (token, id, df) in vocab.iter() {
        let _ = writeln!(out, "{token}\t{id}\t{df}");
    }
    out
}

/// SHA-256 of the vocabulary file contents; model files record it so a
/// model is never paired with the wrong vocabulary.
pub fn vocabulary_hash(vocab: &Vocabulary) -> [u8; 32] {
    Sha256::digest(vocabulary_tsv(vocab).as_bytes()).into()
}

pub fn triples_tsv(triples: &[InteractionTriple]) -> String {
    let mut out = String::new();
    for t in triples {
        let _ = write!(out, "{}\t{}\t{}\t", t.user, t.item, t.rating);
        for (n, id) in t.tokens.iter().enumerate() {
            if n > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{id}");
        }
        out.push('\n');
    }
    out
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r', '\t'], " ")
}

fn index_tsv(ids: &[String]) -> String {
    let mut out = String::new();
    for (i, id) in ids.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{}", one_line(id));
    }
    out
}

fn write_file(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

pub fn manifest_for(prepared: &PreparedCorpus, skipped_lines: usize) -> Manifest {
    let s = &prepared.split;
    Manifest {
        dataset_format_version: DATASET_FORMAT_VERSION,
        format: prepared.format.to_string(),
        seed: s.seed,
        min_review_fraction: prepared.vocabulary.min_review_fraction(),
        min_document_frequency: prepared.vocabulary.min_document_frequency(),
        counts: Counts {
            reviews: prepared.stats.total,
            skipped_lines,
            train: s.train.len(),
            validation: s.validation.len(),
            test: s.test.len(),
            users: s.num_users,
            items: s.num_items,
            vocabulary: prepared.vocabulary.len(),
        },
        removed: Removed {
            validation: prepared.stats.removed_validation,
            test: prepared.stats.removed_test,
        },
        out_of_range_ratings: prepared.stats.out_of_range_ratings,
    }
}

pub fn write_dataset(
    dir: &Path,
    prepared: &PreparedCorpus,
    skipped_lines: usize,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = &prepared.split;
    write_file(dir.join(VOCAB_FILE), &vocabulary_tsv(&prepared.vocabulary))?;
    write_file(dir.join(TRAIN_FILE), &triples_tsv(&s.train))?;
    write_file(dir.join(VALIDATION_FILE), &triples_tsv(&s.validation))?;
    write_file(dir.join(TEST_FILE), &triples_tsv(&s.test))?;
    write_file(dir.join(USERS_FILE), &index_tsv(&prepared.user_ids))?;
    write_file(dir.join(ITEMS_FILE), &index_tsv(&prepared.item_ids))?;
    let mut text = String::new();
    for t in &prepared.train_text {
        text.push_str(&one_line(t));
        text.push('\n');
    }
    write_file(dir.join(TRAIN_TEXT_FILE), &text)?;

    let manifest = manifest_for(prepared, skipped_lines);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(dir.join(MANIFEST_FILE), &(json + "\n"))?;
    Ok(manifest)
}

fn read_file(path: PathBuf) -> Result<String> {
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn parse_num<T: std::str::FromStr>(s: &str, path: &Path, line: usize, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("bad {what} `{s}`")))
}

fn read_triples(
    path: PathBuf,
    split_users: usize,
    split_items: usize,
    vocab: usize,
) -> Result<Vec<InteractionTriple>> {
    let text = read_file(path.clone())?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let ln = n + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(&path, ln, "expected 4 tab-separated columns"));
        }
        let user: usize = parse_num(cols[0], &path, ln, "user index")?;
        let item: usize = parse_num(cols[1], &path, ln, "item index")?;
        let rating: f64 = parse_num(cols[2], &path, ln, "rating")?;
        let tokens = cols[3]
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| parse_num::<u32>(s, &path, ln, "token id"))
            .collect::<Result<Vec<_>>>()?;
        if user >= split_users || item >= split_items || tokens.iter().any(|&t| t as usize >= vocab)
        {
            return Err(Error::parse(
                &path,
                ln,
                "index out of range for this dataset",
            ));
        }
        out.push(InteractionTriple {
            user,
            item,
            tokens,
            rating,
        });
    }
    Ok(out)
}

fn read_index(path: PathBuf) -> Result<Vec<String>> {
    let text = read_file(path.clone())?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let (idx, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&path, n + 1, "expected `index<TAB>id`"))?;
            if parse_num::<usize>(idx, &path, n + 1, "index")? != n {
                return Err(Error::parse(
                    &path,
                    n + 1,
                    "indices must be dense and ordered",
                ));
            }
            Ok(id.to_string())
        })
        .collect()
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = read_file(path.clone())?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))
}

pub fn read_vocabulary(dir: &Path, manifest: &Manifest) -> Result<Vocabulary> {
    let path = dir.join(VOCAB_FILE);
    let text = read_file(path.clone())?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(&path, n + 1, "expected `token<TAB>id<TAB>df`"));
        }
        if parse_num::<usize>(cols[1], &path, n + 1, "id")? != n {
            return Err(Error::parse(&path, n + 1, "ids must be dense and sorted"));
        }
        entries.push((
            cols[0].to_string(),
            parse_num::<u32>(cols[2], &path, n + 1, "df")?,
        ));
    }
    Ok(Vocabulary::from_parts(
        entries,
        manifest.min_review_fraction,
        manifest.counts.train,
    ))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let vocabulary = read_vocabulary(dir, &manifest)?;
    let user_ids = read_index(dir.join(USERS_FILE))?;
    let item_ids = read_index(dir.join(ITEMS_FILE))?;
    let (u, i, v) = (user_ids.len(), item_ids.len(), vocabulary.len());
    let split = DatasetSplit {
        train: read_triples(dir.join(TRAIN_FILE), u, i, v)?,
        validation: read_triples(dir.join(VALIDATION_FILE), u, i, v)?,
        test: read_triples(dir.join(TEST_FILE), u, i, v)?,
        num_users: u,
        num_items: i,
        vocab_size: v,
        seed: manifest.seed,
    };
    let train_text: Vec<String> = read_file(dir.join(TRAIN_TEXT_FILE))?
        .lines()
        .map(str::to_string)
        .collect();
    if train_text.len() != split.train.len() {
        return Err(Error::parse(
            dir.join(TRAIN_TEXT_FILE),
            train_text.len(),
            "line count differs from train.tsv",
        ));
    }
    Ok(Dataset {
        split,
        vocabulary,
        user_ids,
        item_ids,
        train_text,
        manifest,
    })
}

/// Parses `format` from the manifest.
pub fn manifest_format(manifest: &Manifest) -> Result<Format> {
    Ok(manifest.format.parse()?)
}
