//! Mean squared error, nearest-review retrieval and per-word sentiment
//! scores.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{InteractionTriple, Vocabulary};
use crate::error::{Error, Result};
use crate::math::{euclidean, sigmoid};
use crate::model::ModelParameters;

/// Anything that scores a `(user, item)` pair without seeing a review.
pub trait Predictor {
    fn predict(&self, user: usize, item: usize) -> Result<f64>;
}

impl Predictor for ModelParameters {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.predict_rating(user, item)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        (**self).predict(user, item)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mse: f64,
    pub n: usize,
    /// `prediction - rating` per pair, when requested.
    pub residuals: Option<Vec<f64>>,
}

fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    pairs: &[InteractionTriple],
    keep: bool,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let mut residuals = if keep {
        Vec::with_capacity(pairs.len())
    } else {
        Vec::new()
    };
    let mut sum = 0.0;
    for pair in pairs {
        // Only the ids reach the model; the review is unavailable at
        // prediction time.
        let r = model.predict(pair.user, pair.item)? - pair.rating;
        sum += r * r;
        if keep {
            residuals.push(r);
        }
    }
    Ok(EvalReport {
        mse: sum / pairs.len() as f64,
        n: pairs.len(),
        residuals: keep.then_some(residuals),
    })
}

/// MSE of raw (unclipped) predictions over `pairs`.
pub fn evaluate_mse<P: Predictor + ?Sized>(
    model: &P,
    pairs: &[InteractionTriple],
) -> Result<EvalReport> {
    evaluate(model, pairs, false)
}

pub fn evaluate_mse_with_residuals<P: Predictor + ?Sized>(
    model: &P,
    pairs: &[InteractionTriple],
) -> Result<EvalReport> {
    evaluate(model, pairs, true)
}

/// Review embeddings of the training set, computed once on frozen
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewIndex {
    k: usize,
    embeddings: Vec<f64>,
    items: Vec<usize>,
    ratings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    /// Position in the training set the index was built from.
    pub train_index: usize,
    pub distance: f64,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub user: usize,
    pub item: usize,
    pub neighbors: Vec<Neighbor>,
}

impl ReviewIndex {
    pub fn build(params: &ModelParameters, train: &[InteractionTriple]) -> Result<Self> {
        let k = params.k();
        let mut embeddings = vec![0.0; train.len() * k];
        for (t, row) in train.iter().zip(embeddings.chunks_exact_mut(k)) {
            params.embed_review_into(&t.tokens, row)?;
        }
        Ok(ReviewIndex {
            k,
            embeddings,
            items: train.iter().map(|t| t.item).collect(),
            ratings: train.iter().map(|t| t.rating).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn embedding(&self, train_index: usize) -> &[f64] {
        &self.embeddings[train_index * self.k..(train_index + 1) * self.k]
    }

    /// Exhaustive nearest-neighbour search by Euclidean distance. Ties keep
    /// training-set order. `only_item` restricts the pool to one item.
    pub fn nearest(
        &self,
        query: &[f64],
        top_n: usize,
        only_item: Option<usize>,
    ) -> Result<Vec<Neighbor>> {
        if top_n < 1 {
            return Err(Error::InvalidTopN);
        }
        if query.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: query.len(),
            });
        }
        let mut all: Vec<Neighbor> = (0..self.len())
            .filter(|&i| only_item.is_none_or(|item| self.items[i] == item))
            .map(|i| Neighbor {
                train_index: i,
                distance: euclidean(query, self.embedding(i)),
                rating: self.ratings[i],
            })
            .collect();
        // stable sort keeps index order among equal distances
        all.sort_by(|a, b| a.distance.total_cmp(&b.distance));
        all.truncate(top_n);
        Ok(all)
    }
}

/// Ranks training reviews by distance to `e_i - e_u`.
pub fn retrieve_reviews(
    params: &ModelParameters,
    index: &ReviewIndex,
    user: usize,
    item: usize,
    top_n: usize,
    same_item_only: bool,
) -> Result<RetrievalResult> {
    let query = params.approximate_review_embedding(user, item)?;
    let neighbors = index.nearest(&query, top_n, same_item_only.then_some(item))?;
    Ok(RetrievalResult {
        user,
        item,
        neighbors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordScore {
    pub token: String,
    /// Mean rating of the training reviews containing the token; NaN when
    /// no training review contains it.
    pub score: f64,
    pub embedding: Vec<f64>,
}

/// One row per vocabulary token, in id order.
pub fn word_scores(
    params: &ModelParameters,
    vocab: &Vocabulary,
    train: &[InteractionTriple],
) -> Result<Vec<WordScore>> {
    if vocab.len() != params.vocab_size() {
        return Err(Error::DimensionMismatch {
            expected: params.vocab_size(),
            got: vocab.len(),
        });
    }
    let mut sum = vec![0.0; vocab.len()];
    let mut count = vec![0usize; vocab.len()];
    let mut seen = vec![usize::MAX; vocab.len()];
    for (r, t) in train.iter().enumerate() {
        for &tok in &t.tokens {
            let id = tok as usize;
            if id >= vocab.len() {
                return Err(Error::TokenOutOfRange {
                    token: tok,
                    vocab_size: vocab.len(),
                });
            }
            if seen[id] != r {
                seen[id] = r;
                sum[id] += t.rating;
                count[id] += 1;
            }
        }
    }
    Ok(vocab
        .iter()
        .map(|(token, id, _)| {
            let i = id as usize;
            WordScore {
                token: token.to_string(),
                score: if count[i] == 0 {
                    f64::NAN
                } else {
                    sum[i] / count[i] as f64
                },
                embedding: params.word(id).to_vec(),
            }
        })
        .collect())
}

/// How much a word pushes the regressor on its own: `σ(v_t)·w`.
pub fn sentiment_projection(params: &ModelParameters, token: u32) -> Result<f64> {
    if token as usize >= params.vocab_size() {
        return Err(Error::TokenOutOfRange {
            token,
            vocab_size: params.vocab_size(),
        });
    }
    Ok(params
        .word(token)
        .iter()
        .zip(&params.regressor_weights)
        .map(|(&v, w)| sigmoid(v) * w)
        .sum())
}
