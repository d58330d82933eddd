//! Review text preprocessing, vocabulary construction and the
//! train/validation/test split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Yelp reviews are cut to this many tokens; Amazon summaries are kept whole.
pub const YELP_MAX_TOKENS: usize = 200;

/// Default document-frequency cutoff: tokens in fewer than 0.1% of the
/// training reviews are dropped.
pub const DEFAULT_MIN_REVIEW_FRACTION: f64 = 0.001;

pub const TRAIN_FRACTION: f64 = 0.8;
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Amazon,
    Yelp,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Amazon => "amazon",
            Format::Yelp => "yelp",
        }
    }

    /// Maximum number of tokens kept per review.
    pub fn max_tokens(self) -> Option<usize> {
        match self {
            Format::Amazon => None,
            Format::Yelp => Some(YELP_MAX_TOKENS),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amazon" => Ok(Format::Amazon),
            "yelp" => Ok(Format::Yelp),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// One review as read from a corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawReview {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    /// Amazon summary or Yelp full text.
    pub text: String,
    pub timestamp: Option<i64>,
}

/// `(user, review, item)` with its rating, all as dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTriple {
    pub user: usize,
    pub item: usize,
    /// Token ids of the review; may be empty after vocabulary filtering.
    pub tokens: Vec<u32>,
    pub rating: f64,
}

fn is_word_char(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// Lowercases `text` and returns the maximal runs of word characters
/// (Unicode alphanumerics and `_`), truncated for Yelp reviews.
pub fn tokenize(text: &str, format: Format) -> Vec<String> {
    let limit = format.max_tokens().unwrap_or(usize::MAX);
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if is_word_char(c) {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
            if tokens.len() == limit {
                return tokens;
            }
        }
    }
    if !current.is_empty() && tokens.len() < limit {
        tokens.push(current);
    }
    tokens
}

/// Smallest document frequency a token needs to be kept:
/// `ceil(fraction * total)`, snapped to the nearest integer first when the
/// product is within float noise of it.
pub fn min_document_frequency(min_review_fraction: f64, total_reviews: usize) -> usize {
    let x = min_review_fraction * total_reviews as f64;
    let nearest = libm::round(x);
    let threshold = if libm::fabs(x - nearest) <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        libm::ceil(x)
    };
    threshold as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    document_frequency: Vec<u32>,
    token_to_id: BTreeMap<String, u32>,
    min_review_fraction: f64,
    total_reviews: usize,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from `(token, df)` rows listed in id order.
    pub fn from_parts(
        entries: Vec<(String, u32)>,
        min_review_fraction: f64,
        total_reviews: usize,
    ) -> Self {
        let mut tokens = Vec::with_capacity(entries.len());
        let mut document_frequency = Vec::with_capacity(entries.len());
        let mut token_to_id = BTreeMap::new();
        for (id, (token, df)) in entries.into_iter().enumerate() {
            token_to_id.insert(token.clone(), id as u32);
            tokens.push(token);
            document_frequency.push(df);
        }
        Vocabulary {
            tokens,
            document_frequency,
            token_to_id,
            min_review_fraction,
            total_reviews,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn document_frequency(&self, id: u32) -> Option<u32> {
        self.document_frequency.get(id as usize).copied()
    }

    pub fn min_review_fraction(&self) -> f64 {
        self.min_review_fraction
    }

    pub fn total_reviews(&self) -> usize {
        self.total_reviews
    }

    pub fn min_document_frequency(&self) -> usize {
        min_document_frequency(self.min_review_fraction, self.total_reviews)
    }

    /// `(token, id, df)` in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32, u32)> + '_ {
        self.tokens
            .iter()
            .zip(&self.document_frequency)
            .enumerate()
            .map(|(id, (t, &df))| (t.as_str(), id as u32, df))
    }

    /// Maps tokens to ids, silently dropping out-of-vocabulary tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }
}

/// Builds the vocabulary from tokenized training reviews. A token is kept
/// iff the number of distinct reviews containing it reaches
/// `ceil(min_review_fraction * reviews)`. Ids go by descending document
/// frequency, ties broken lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(
    train_reviews: &[Vec<S>],
    min_review_fraction: f64,
) -> Result<Vocabulary> {
    if !(min_review_fraction > 0.0 && min_review_fraction < 1.0) {
        return Err(Error::InvalidHyperparameter(alloc::format!(
            "min_review_fraction must lie in (0, 1), got {min_review_fraction}"
        )));
    }
    if train_reviews.is_empty() {
        return Err(Error::Empty("training reviews"));
    }

    let mut df: BTreeMap<&str, u32> = BTreeMap::new();
    for review in train_reviews {
        let distinct: BTreeSet<&str> = review.iter().map(AsRef::as_ref).collect();
        for token in distinct {
            *df.entry(token).or_insert(0) += 1;
        }
    }

    let threshold = min_document_frequency(min_review_fraction, train_reviews.len());
    let mut kept: Vec<(&str, u32)> = df
        .into_iter()
        .filter(|&(_, count)| count as usize >= threshold)
        .collect();
    // BTreeMap iteration is already lexicographic, so a stable sort on df
    // keeps the tie order.
    kept.sort_by(|a, b| b.1.cmp(&a.1));

    Ok(Vocabulary::from_parts(
        kept.into_iter().map(|(t, c)| (t.to_string(), c)).collect(),
        min_review_fraction,
        train_reviews.len(),
    ))
}

/// Removal counts from the split step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitStats {
    pub total: usize,
    pub train: usize,
    pub validation_before_filter: usize,
    pub test_before_filter: usize,
    pub removed_validation: usize,
    pub removed_test: usize,
    /// Ratings outside 1..=5, kept as they are.
    pub out_of_range_ratings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<InteractionTriple>,
    pub validation: Vec<InteractionTriple>,
    pub test: Vec<InteractionTriple>,
    pub num_users: usize,
    pub num_items: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl DatasetSplit {
    /// Cold-start closure: every validation/test user and item has a
    /// training triple.
    pub fn is_closed(&self) -> bool {
        let mut users = alloc::vec![false; self.num_users];
        let mut items = alloc::vec![false; self.num_items];
        for t in &self.train {
            users[t.user] = true;
            items[t.item] = true;
        }
        self.validation.iter().chain(&self.test).all(|t| {
            t.user < self.num_users && t.item < self.num_items && users[t.user] && items[t.item]
        })
    }
}

/// Everything produced by preprocessing one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCorpus {
    pub split: DatasetSplit,
    pub vocabulary: Vocabulary,
    /// Original user id for each dense user index.
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Raw text of each training triple, aligned with `split.train`.
    pub train_text: Vec<String>,
    pub format: Format,
    pub stats: SplitStats,
}

/// Shuffles `reviews` under `seed` and partitions them: the first
/// `floor(0.8 n)` go to train, the next `floor(0.1 n)` to validation and the
/// rest to test. Validation/test reviews whose user or item has no training
/// review are then removed.
///
/// Returns indices into `reviews` for each part.
pub fn split_dataset(
    reviews: &[RawReview],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>, SplitStats)> {
    if reviews.is_empty() {
        return Err(Error::Empty("review corpus"));
    }
    let n = reviews.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = (n as f64 * TRAIN_FRACTION) as usize;
    let n_valid = (n as f64 * VALIDATION_FRACTION) as usize;
    let train: Vec<usize> = order[..n_train].to_vec();
    let validation_raw = &order[n_train..n_train + n_valid];
    let test_raw = &order[n_train + n_valid..];

    let train_users: BTreeSet<&str> = train.iter().map(|&i| reviews[i].user_id.as_str()).collect();
    let train_items: BTreeSet<&str> = train.iter().map(|&i| reviews[i].item_id.as_str()).collect();
    let keep = |&&i: &&usize| {
        train_users.contains(reviews[i].user_id.as_str())
            && train_items.contains(reviews[i].item_id.as_str())
    };
    let validation: Vec<usize> = validation_raw.iter().filter(keep).copied().collect();
    let test: Vec<usize> = test_raw.iter().filter(keep).copied().collect();

    let stats = SplitStats {
        total: n,
        train: train.len(),
        validation_before_filter: validation_raw.len(),
        test_before_filter: test_raw.len(),
        removed_validation: validation_raw.len() - validation.len(),
        removed_test: test_raw.len() - test.len(),
        out_of_range_ratings: reviews
            .iter()
            .filter(|r| !(1.0..=5.0).contains(&r.rating))
            .count(),
    };
    Ok((train, validation, test, stats))
}

/// Full preprocessing: tokenize, split, build the vocabulary from the
/// training part and encode all three parts with it. Dense user/item
/// indices follow the lexicographic order of the training ids.
pub fn prepare_corpus(
    reviews: &[RawReview],
    format: Format,
    seed: u64,
    min_review_fraction: f64,
) -> Result<PreparedCorpus> {
    let (train_idx, valid_idx, test_idx, stats) = split_dataset(reviews, seed)?;
    if train_idx.is_empty() {
        return Err(Error::Empty("training split"));
    }

    let tokenized: Vec<Vec<String>> = reviews.iter().map(|r| tokenize(&r.text, format)).collect();
    let train_tokens: Vec<Vec<String>> = train_idx.iter().map(|&i| tokenized[i].clone()).collect();
    let vocabulary = build_vocabulary(&train_tokens, min_review_fraction)?;

    let user_ids: Vec<String> = train_idx
        .iter()
        .map(|&i| reviews[i].user_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(ToString::to_string)
        .collect();
    let item_ids: Vec<String> = train_idx
        .iter()
        .map(|&i| reviews[i].item_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(ToString::to_string)
        .collect();
    let user_index: BTreeMap<&str, usize> = user_ids
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let item_index: BTreeMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();

    let encode = |idx: &[usize]| -> Vec<InteractionTriple> {
        idx.iter()
            .map(|&i| InteractionTriple {
                user: user_index[reviews[i].user_id.as_str()],
                item: item_index[reviews[i].item_id.as_str()],
                tokens: vocabulary.encode(&tokenized[i]),
                rating: reviews[i].rating,
            })
            .collect()
    };

    let split = DatasetSplit {
        train: encode(&train_idx),
        validation: encode(&valid_idx),
        test: encode(&test_idx),
        num_users: user_ids.len(),
        num_items: item_ids.len(),
        vocab_size: vocabulary.len(),
        seed,
    };
    let train_text = train_idx.iter().map(|&i| reviews[i].text.clone()).collect();

    Ok(PreparedCorpus {
        split,
        vocabulary,
        user_ids,
        item_ids,
        train_text,
        format,
        stats,
    })
}
