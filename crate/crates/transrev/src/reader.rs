//! JSON-lines review corpora (Amazon and Yelp dumps), optionally gzipped.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde_json::Value;
use transrev_core::{Format, RawReview};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedCorpus {
    pub reviews: Vec<RawReview>,
    /// Lines that were not valid JSON or lacked a required field.
    pub skipped: usize,
}

struct Fields {
    user: &'static str,
    item: &'static str,
    rating: &'static str,
    text: &'static str,
    timestamp: &'static str,
}

fn fields(format: Format) -> Fields {
    match format {
        Format::Amazon => Fields {
            user: "reviewerID",
            item: "asin",
            rating: "overall",
            text: "summary",
            timestamp: "unixReviewTime",
        },
        Format::Yelp => Fields {
            user: "user_id",
            item: "business_id",
            rating: "stars",
            text: "text",
            timestamp: "timestamp",
        },
    }
}

fn id_field(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Maps one JSON line to a review, `None` if it is malformed or a required
/// field is missing.
pub fn parse_line(line: &str, format: Format) -> Option<RawReview> {
    let f = fields(format);
    let obj: Value = serde_json::from_str(line).ok()?;
    let rating = match obj.get(f.rating)? {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse().ok()?,
        _ => return None,
    };
    Some(RawReview {
        user_id: id_field(obj.get(f.user)?)?,
        item_id: id_field(obj.get(f.item)?)?,
        rating,
        text: obj.get(f.text)?.as_str()?.to_string(),
        timestamp: obj.get(f.timestamp).and_then(Value::as_i64),
    })
}

pub fn parse_reader<R: BufRead>(reader: R, format: Format, path: &Path) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, format) {
            Some(r) => out.reviews.push(r),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Reads a corpus file; `.gz` files are decompressed on the fly.
pub fn parse_corpus(path: &Path, format: Format) -> Result<ParsedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let inner: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let parsed = parse_reader(BufReader::new(inner), format, path)?;
    if parsed.skipped > 0 {
        log::warn!(
            "{}: skipped {} malformed or incomplete lines",
            path.display(),
            parsed.skipped
        );
    }
    let odd = parsed
        .reviews
        .iter()
        .filter(|r| !(1.0..=5.0).contains(&r.rating))
        .count();
    if odd > 0 {
        log::warn!("{}: {odd} ratings outside 1..=5 kept as-is", path.display());
    }
    Ok(parsed)
}
