//! Learnable parameters, the forward pass and exact gradients of the joint
//! objective
//!
//! ```text
//! L = Σ (g(h) - r)² + λ Σ ‖e_u + h - e_i‖₂ + μ Σ θ²
//! h = mean(v_t) + h_0,    g(h) = σ(h)·w + b_u + b_i + b_0
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::InteractionTriple;
use crate::error::{Error, Result};
use crate::math::{dot, sigmoid, sq_norm, sqrt};

/// Guard for the gradient of `‖r‖₂` at `r = 0`.
pub const NORM_EPSILON: f64 = 1e-12;

pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Embedding dimension.
    pub k: usize,
    /// Weight of the translation loss.
    pub lambda: f64,
    /// Weight of the squared-L2 regularizer.
    pub mu: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validate_every: usize,
    pub seed: u64,
    /// Skip the final partial batch of every epoch.
    pub drop_last: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            k: 16,
            lambda: 0.5,
            mu: 1e-4,
            learning_rate: 0.01,
            batch_size: 64,
            max_epochs: 500,
            validate_every: 10,
            seed: 0,
            drop_last: false,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidHyperparameter(msg));
        if self.k < 1 {
            return bad(format!("k must be >= 1, got {}", self.k));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return bad(format!("mu must be finite and >= 0, got {}", self.mu));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size < 1 {
            return bad(format!("batch_size must be >= 1, got {}", self.batch_size));
        }
        if self.validate_every < 1 {
            return bad(format!(
                "validate_every must be >= 1, got {}",
                self.validate_every
            ));
        }
        if self.max_epochs < self.validate_every {
            return bad(format!(
                "max_epochs ({}) must be >= validate_every ({})",
                self.max_epochs, self.validate_every
            ));
        }
        Ok(())
    }
}

/// Weights of the two auxiliary terms of the objective for one evaluation
/// of the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub translation: f64,
    pub regularization: f64,
}

impl LossWeights {
    pub fn new(translation: f64, regularization: f64) -> Self {
        LossWeights {
            translation,
            regularization,
        }
    }

    /// Unscaled weights straight from the hyperparameters.
    pub fn from_hyperparameters(hp: &Hyperparameters) -> Self {
        LossWeights::new(hp.lambda, hp.mu)
    }

    /// Weights for one mini-batch during training: the regularizer is scaled
    /// by `batch_len / train_len` so a full epoch applies `μ` once.
    pub fn for_batch(hp: &Hyperparameters, batch_len: usize, train_len: usize) -> Self {
        LossWeights::new(hp.lambda, hp.mu * batch_len as f64 / train_len as f64)
    }
}

/// All learnable tensors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    k: usize,
    num_users: usize,
    num_items: usize,
    vocab_size: usize,
    /// `V × k`
    pub word_embeddings: Vec<f64>,
    /// `U × k`
    pub user_embeddings: Vec<f64>,
    /// `I × k`
    pub item_embeddings: Vec<f64>,
    /// Review bias `h_0`, shared by every review.
    pub review_bias: Vec<f64>,
    pub regressor_weights: Vec<f64>,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub global_bias: f64,
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    sqrt(6.0 / (fan_in + fan_out) as f64)
}

fn fill_uniform(rng: &mut ChaCha8Rng, out: &mut [f64], bound: f64) {
    for x in out {
        *x = rng.random_range(-bound..=bound);
    }
}

/// Glorot-uniform initialization. Each embedding matrix uses its own shape
/// `(rows, k)` as fans, `h_0` uses the word-matrix bound and `w` is treated
/// as a `k × 1` matrix. Biases start at zero.
pub fn init_parameters(
    hp: &Hyperparameters,
    num_users: usize,
    num_items: usize,
    vocab_size: usize,
) -> Result<ModelParameters> {
    if hp.k < 1 {
        return Err(Error::InvalidHyperparameter(format!(
            "k must be >= 1, got {}",
            hp.k
        )));
    }
    if num_users < 1 || num_items < 1 || vocab_size < 1 {
        return Err(Error::Empty("users, items and vocabulary"));
    }
    let k = hp.k;
    let mut params = ModelParameters::zeros(k, num_users, num_items, vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(INIT_STREAM);

    let word_bound = glorot_bound(vocab_size, k);
    fill_uniform(&mut rng, &mut params.word_embeddings, word_bound);
    fill_uniform(
        &mut rng,
        &mut params.user_embeddings,
        glorot_bound(num_users, k),
    );
    fill_uniform(
        &mut rng,
        &mut params.item_embeddings,
        glorot_bound(num_items, k),
    );
    fill_uniform(&mut rng, &mut params.review_bias, word_bound);
    fill_uniform(&mut rng, &mut params.regressor_weights, glorot_bound(k, 1));
    Ok(params)
}

/// Intermediates of one training-time forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub review_embedding: Vec<f64>,
    pub sigmoid_activations: Vec<f64>,
    pub prediction: f64,
    /// `e_u + h - e_i`
    pub translation_residual: Vec<f64>,
    pub residual_norm: f64,
}

impl ModelParameters {
    pub fn zeros(k: usize, num_users: usize, num_items: usize, vocab_size: usize) -> Self {
        ModelParameters {
            k,
            num_users,
            num_items,
            vocab_size,
            word_embeddings: vec![0.0; vocab_size * k],
            user_embeddings: vec![0.0; num_users * k],
            item_embeddings: vec![0.0; num_items * k],
            review_bias: vec![0.0; k],
            regressor_weights: vec![0.0; k],
            user_bias: vec![0.0; num_users],
            item_bias: vec![0.0; num_items],
            global_bias: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn word(&self, token: u32) -> &[f64] {
        let t = token as usize;
        &self.word_embeddings[t * self.k..(t + 1) * self.k]
    }

    pub fn user(&self, user: usize) -> &[f64] {
        &self.user_embeddings[user * self.k..(user + 1) * self.k]
    }

    pub fn item(&self, item: usize) -> &[f64] {
        &self.item_embeddings[item * self.k..(item + 1) * self.k]
    }

    pub(crate) fn check_pair(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.num_users {
            return Err(Error::UserOutOfRange {
                user,
                num_users: self.num_users,
            });
        }
        if item >= self.num_items {
            return Err(Error::ItemOutOfRange {
                item,
                num_items: self.num_items,
            });
        }
        Ok(())
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Every tensor, biases last.
    pub fn tensors(&self) -> [&[f64]; 7] {
        [
            &self.word_embeddings,
            &self.user_embeddings,
            &self.item_embeddings,
            &self.review_bias,
            &self.regressor_weights,
            &self.user_bias,
            &self.item_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
        [
            &mut self.word_embeddings,
            &mut self.user_embeddings,
            &mut self.item_embeddings,
            &mut self.review_bias,
            &mut self.regressor_weights,
            &mut self.user_bias,
            &mut self.item_bias,
        ]
    }

    /// Sum of squared entries over all of Θ.
    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| sq_norm(t)).sum::<f64>() + self.global_bias * self.global_bias
    }

    pub fn is_finite(&self) -> bool {
        self.global_bias.is_finite()
            && self
                .tensors()
                .iter()
                .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Review embedding: mean of the token embeddings plus `h_0`; exactly
    /// `h_0` for an empty review.
    pub fn embed_review(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let mut h = vec![0.0; self.k];
        self.embed_review_into(tokens, &mut h)?;
        Ok(h)
    }

    pub(crate) fn embed_review_into(&self, tokens: &[u32], h: &mut [f64]) -> Result<()> {
        if tokens.is_empty() {
            h.copy_from_slice(&self.review_bias);
            return Ok(());
        }
        h.iter_mut().for_each(|x| *x = 0.0);
        for &t in tokens {
            if t as usize >= self.vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab_size: self.vocab_size,
                });
            }
            for (acc, v) in h.iter_mut().zip(self.word(t)) {
                *acc += v;
            }
        }
        let n = tokens.len() as f64;
        for (x, b) in h.iter_mut().zip(&self.review_bias) {
            *x = *x / n + b;
        }
        Ok(())
    }

    /// `g(h) = σ(h)·w + b_u + b_i + b_0`, with σ applied per component.
    /// The output is not clipped.
    pub fn predict_from_embedding(&self, h: &[f64], user: usize, item: usize) -> Result<f64> {
        self.check_pair(user, item)?;
        self.check_len(h)?;
        Ok(self.regress(h, user, item))
    }

    fn regress(&self, h: &[f64], user: usize, item: usize) -> f64 {
        let s: f64 = h
            .iter()
            .zip(&self.regressor_weights)
            .map(|(&x, w)| sigmoid(x) * w)
            .sum();
        s + self.user_bias[user] + self.item_bias[item] + self.global_bias
    }

    /// `(e_u + h - e_i, ‖e_u + h - e_i‖₂)`
    pub fn translation_residual(
        &self,
        user: usize,
        h: &[f64],
        item: usize,
    ) -> Result<(Vec<f64>, f64)> {
        self.check_pair(user, item)?;
        self.check_len(h)?;
        let r: Vec<f64> = self
            .user(user)
            .iter()
            .zip(h)
            .zip(self.item(item))
            .map(|((u, h), i)| u + h - i)
            .collect();
        let norm = sqrt(sq_norm(&r));
        Ok((r, norm))
    }

    /// Test-time surrogate for a review that was never written: `e_i - e_u`.
    pub fn approximate_review_embedding(&self, user: usize, item: usize) -> Result<Vec<f64>> {
        self.check_pair(user, item)?;
        Ok(self
            .item(item)
            .iter()
            .zip(self.user(user))
            .map(|(i, u)| i - u)
            .collect())
    }

    /// Rating prediction without a review: the regressor applied to
    /// `e_i - e_u`.
    pub fn predict_rating(&self, user: usize, item: usize) -> Result<f64> {
        let h = self.approximate_review_embedding(user, item)?;
        Ok(self.regress(&h, user, item))
    }

    pub fn forward(&self, triple: &InteractionTriple) -> Result<ForwardTrace> {
        self.check_pair(triple.user, triple.item)?;
        let h = self.embed_review(&triple.tokens)?;
        let sigmoid_activations: Vec<f64> = h.iter().map(|&x| sigmoid(x)).collect();
        let prediction = dot(&sigmoid_activations, &self.regressor_weights)
            + self.user_bias[triple.user]
            + self.item_bias[triple.item]
            + self.global_bias;
        let (translation_residual, residual_norm) =
            self.translation_residual(triple.user, &h, triple.item)?;
        Ok(ForwardTrace {
            review_embedding: h,
            sigmoid_activations,
            prediction,
            translation_residual,
            residual_norm,
        })
    }

    /// `θ ← θ - lr·(g + 2μθ)` where `g` holds only data-term gradients.
    pub(crate) fn sgd_update(
        &mut self,
        grads: &Gradients,
        learning_rate: f64,
        regularization: f64,
    ) {
        let decay = 1.0 - 2.0 * learning_rate * regularization;
        if regularization != 0.0 {
            for t in self.tensors_mut() {
                t.iter_mut().for_each(|x| *x *= decay);
            }
        }
        self.global_bias = self.global_bias * decay - learning_rate * grads.global_bias;

        let k = self.k;
        let step_rows = |dst: &mut [f64], src: &[f64], rows: &[usize]| {
            for &r in rows {
                for (d, s) in dst[r * k..(r + 1) * k]
                    .iter_mut()
                    .zip(&src[r * k..(r + 1) * k])
                {
                    *d -= learning_rate * s;
                }
            }
        };
        step_rows(
            &mut self.word_embeddings,
            &grads.word_embeddings,
            &grads.touched_words,
        );
        step_rows(
            &mut self.user_embeddings,
            &grads.user_embeddings,
            &grads.touched_users,
        );
        step_rows(
            &mut self.item_embeddings,
            &grads.item_embeddings,
            &grads.touched_items,
        );
        for &u in &grads.touched_users {
            self.user_bias[u] -= learning_rate * grads.user_bias[u];
        }
        for &i in &grads.touched_items {
            self.item_bias[i] -= learning_rate * grads.item_bias[i];
        }
        for (d, s) in self.review_bias.iter_mut().zip(&grads.review_bias) {
            *d -= learning_rate * s;
        }
        for (d, s) in self
            .regressor_weights
            .iter_mut()
            .zip(&grads.regressor_weights)
        {
            *d -= learning_rate * s;
        }
    }
}

/// Gradient of the batch loss, shaped like [`ModelParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub word_embeddings: Vec<f64>,
    pub user_embeddings: Vec<f64>,
    pub item_embeddings: Vec<f64>,
    pub review_bias: Vec<f64>,
    pub regressor_weights: Vec<f64>,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub global_bias: f64,
    k: usize,
    touched_words: Vec<usize>,
    touched_users: Vec<usize>,
    touched_items: Vec<usize>,
    word_mark: Vec<bool>,
    user_mark: Vec<bool>,
    item_mark: Vec<bool>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParameters) -> Self {
        let p = ModelParameters::zeros(
            params.k,
            params.num_users,
            params.num_items,
            params.vocab_size,
        );
        Gradients {
            word_embeddings: p.word_embeddings,
            user_embeddings: p.user_embeddings,
            item_embeddings: p.item_embeddings,
            review_bias: p.review_bias,
            regressor_weights: p.regressor_weights,
            user_bias: p.user_bias,
            item_bias: p.item_bias,
            global_bias: 0.0,
            k: params.k,
            touched_words: Vec::new(),
            touched_users: Vec::new(),
            touched_items: Vec::new(),
            word_mark: vec![false; params.vocab_size],
            user_mark: vec![false; params.num_users],
            item_mark: vec![false; params.num_items],
        }
    }

    /// Zeroes the rows written since the last reset.
    pub(crate) fn reset(&mut self) {
        let k = self.k;
        for &t in &self.touched_words {
            self.word_embeddings[t * k..(t + 1) * k]
                .iter_mut()
                .for_each(|x| *x = 0.0);
            self.word_mark[t] = false;
        }
        for &u in &self.touched_users {
            self.user_embeddings[u * k..(u + 1) * k]
                .iter_mut()
                .for_each(|x| *x = 0.0);
            self.user_bias[u] = 0.0;
            self.user_mark[u] = false;
        }
        for &i in &self.touched_items {
            self.item_embeddings[i * k..(i + 1) * k]
                .iter_mut()
                .for_each(|x| *x = 0.0);
            self.item_bias[i] = 0.0;
            self.item_mark[i] = false;
        }
        self.touched_words.clear();
        self.touched_users.clear();
        self.touched_items.clear();
        self.review_bias.iter_mut().for_each(|x| *x = 0.0);
        self.regressor_weights.iter_mut().for_each(|x| *x = 0.0);
        self.global_bias = 0.0;
    }

    fn touch_word(&mut self, t: usize) {
        if !self.word_mark[t] {
            self.word_mark[t] = true;
            self.touched_words.push(t);
        }
    }

    fn touch_pair(&mut self, u: usize, i: usize) {
        if !self.user_mark[u] {
            self.user_mark[u] = true;
            self.touched_users.push(u);
        }
        if !self.item_mark[i] {
            self.item_mark[i] = true;
            self.touched_items.push(i);
        }
    }

    fn add_regularization(&mut self, params: &ModelParameters, mu: f64) {
        let pairs: [(&mut [f64], &[f64]); 7] = [
            (&mut self.word_embeddings, &params.word_embeddings),
            (&mut self.user_embeddings, &params.user_embeddings),
            (&mut self.item_embeddings, &params.item_embeddings),
            (&mut self.review_bias, &params.review_bias),
            (&mut self.regressor_weights, &params.regressor_weights),
            (&mut self.user_bias, &params.user_bias),
            (&mut self.item_bias, &params.item_bias),
        ];
        for (g, p) in pairs {
            for (g, p) in g.iter_mut().zip(p) {
                *g += 2.0 * mu * p;
            }
        }
        self.global_bias += 2.0 * mu * params.global_bias;
    }
}

/// Scratch vectors reused across triples.
pub(crate) struct Workspace {
    h: Vec<f64>,
    dh: Vec<f64>,
    residual: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(k: usize) -> Self {
        Workspace {
            h: vec![0.0; k],
            dh: vec![0.0; k],
            residual: vec![0.0; k],
        }
    }
}

/// Adds the data-term gradients (`L1 + λ L2`, no regularizer) of `batch`
/// into `grads` and returns the data loss.
pub(crate) fn accumulate_data_gradients<'a, I>(
    params: &ModelParameters,
    batch: I,
    lambda: f64,
    grads: &mut Gradients,
    ws: &mut Workspace,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a InteractionTriple>,
{
    let k = params.k;
    let mut loss = 0.0;
    for triple in batch {
        let (u, i) = (triple.user, triple.item);
        params.check_pair(u, i)?;
        params.embed_review_into(&triple.tokens, &mut ws.h)?;

        let mut pred = 0.0;
        for j in 0..k {
            pred += sigmoid(ws.h[j]) * params.regressor_weights[j];
        }
        pred += params.user_bias[u] + params.item_bias[i] + params.global_bias;
        let err = pred - triple.rating;
        let d_pred = 2.0 * err;

        let eu = params.user(u);
        let ei = params.item(i);
        for j in 0..k {
            ws.residual[j] = eu[j] + ws.h[j] - ei[j];
        }
        let norm = sqrt(sq_norm(&ws.residual));
        loss += err * err + lambda * norm;
        let scale = lambda / norm.max(NORM_EPSILON);

        grads.touch_pair(u, i);
        grads.global_bias += d_pred;
        grads.user_bias[u] += d_pred;
        grads.item_bias[i] += d_pred;
        for j in 0..k {
            let s = sigmoid(ws.h[j]);
            grads.regressor_weights[j] += d_pred * s;
            let dr = scale * ws.residual[j];
            ws.dh[j] = d_pred * params.regressor_weights[j] * s * (1.0 - s) + dr;
            grads.user_embeddings[u * k + j] += dr;
            grads.item_embeddings[i * k + j] -= dr;
            grads.review_bias[j] += ws.dh[j];
        }
        if !triple.tokens.is_empty() {
            let inv_n = 1.0 / triple.tokens.len() as f64;
            for &t in &triple.tokens {
                let t = t as usize;
                grads.touch_word(t);
                for j in 0..k {
                    grads.word_embeddings[t * k + j] += ws.dh[j] * inv_n;
                }
            }
        }
    }
    Ok(loss)
}

/// `Σ (g(h) - r)² + λ Σ ‖e_u + h - e_i‖₂ + μ Σ θ²` over `batch`.
pub fn batch_loss(
    params: &ModelParameters,
    batch: &[InteractionTriple],
    weights: LossWeights,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut data = 0.0;
    for triple in batch {
        let trace = params.forward(triple)?;
        let err = trace.prediction - triple.rating;
        data += err * err + weights.translation * trace.residual_norm;
    }
    Ok(data + weights.regularization * params.squared_norm())
}

/// Exact gradient of [`batch_loss`] with respect to every parameter.
pub fn batch_gradients(
    params: &ModelParameters,
    batch: &[InteractionTriple],
    weights: LossWeights,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut ws = Workspace::new(params.k);
    accumulate_data_gradients(params, batch, weights.translation, &mut grads, &mut ws)?;
    if weights.regularization != 0.0 {
        grads.add_regularization(params, weights.regularization);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(k: usize) -> ModelParameters {
        let hp = Hyperparameters {
            k,
            seed: 5,
            ..Default::default()
        };
        init_parameters(&hp, 3, 4, 6).unwrap()
    }

    fn triple(user: usize, item: usize, tokens: &[u32], rating: f64) -> InteractionTriple {
        InteractionTriple {
            user,
            item,
            tokens: tokens.to_vec(),
            rating,
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let hp = Hyperparameters {
            k: 16,
            seed: 42,
            ..Default::default()
        };
        let a = init_parameters(&hp, 30, 20, 50).unwrap();
        let b = init_parameters(&hp, 30, 20, 50).unwrap();
        assert_eq!(a, b);
        let bound = libm::sqrt(6.0 / (50.0 + 16.0));
        assert!(a.word_embeddings.iter().all(|x| x.abs() <= bound));
        assert!(a.review_bias.iter().all(|x| x.abs() <= bound));
        let ub = libm::sqrt(6.0 / (30.0 + 16.0));
        assert!(a.user_embeddings.iter().all(|x| x.abs() <= ub));
        assert!(a
            .regressor_weights
            .iter()
            .all(|x| x.abs() <= libm::sqrt(6.0 / 17.0)));
        assert_eq!(a.global_bias, 0.0);
        assert!(a.user_bias.iter().chain(&a.item_bias).all(|&x| x == 0.0));
        let c = init_parameters(&Hyperparameters { seed: 43, ..hp }, 30, 20, 50).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_empty_dimensions() {
        let hp = Hyperparameters::default();
        assert!(init_parameters(&hp, 0, 1, 1).is_err());
        assert!(init_parameters(&Hyperparameters { k: 0, ..hp }, 1, 1, 1).is_err());
    }

    #[test]
    fn empty_review_is_h0_bit_exact() {
        let p = small(4);
        assert_eq!(p.embed_review(&[]).unwrap(), p.review_bias);
    }

    #[test]
    fn single_and_repeated_token_average() {
        let p = small(4);
        let expected: Vec<f64> = p
            .word(2)
            .iter()
            .zip(&p.review_bias)
            .map(|(v, h)| v + h)
            .collect();
        assert_eq!(p.embed_review(&[2]).unwrap(), expected);
        assert_eq!(p.embed_review(&[2, 2]).unwrap(), expected);
        // |rev| counts tokens: [a, a, b] weights a twice
        let h = p.embed_review(&[1, 1, 3]).unwrap();
        for j in 0..4 {
            let want = (2.0 * p.word(1)[j] + p.word(3)[j]) / 3.0 + p.review_bias[j];
            assert!((h[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_token_is_an_error() {
        let p = small(4);
        assert_eq!(
            p.embed_review(&[6]),
            Err(Error::TokenOutOfRange {
                token: 6,
                vocab_size: 6
            })
        );
    }

    #[test]
    fn regressor_hand_values() {
        let k = 5;
        let mut p = ModelParameters::zeros(k, 2, 2, 1);
        let zero = vec![0.0; k];
        assert_eq!(p.predict_from_embedding(&zero, 0, 1).unwrap(), 0.0);
        p.regressor_weights = vec![1.0; k];
        assert_eq!(
            p.predict_from_embedding(&zero, 0, 1).unwrap(),
            0.5 * k as f64
        );
        p.regressor_weights = vec![0.0; k];
        p.global_bias = 3.0;
        assert_eq!(
            p.predict_from_embedding(&[9.0, -3.0, 0.1, 2.0, 7.0], 1, 0)
                .unwrap(),
            3.0
        );
        assert!(p.predict_from_embedding(&zero, 2, 0).is_err());
        assert!(p.predict_from_embedding(&[0.0], 0, 0).is_err());
    }

    #[test]
    fn translation_residual_hand_values() {
        let mut p = ModelParameters::zeros(2, 1, 1, 1);
        let (r, n) = p.translation_residual(0, &[0.0, 0.0], 0).unwrap();
        assert_eq!((r, n), (vec![0.0, 0.0], 0.0));
        p.user_embeddings = vec![1.0, 0.0];
        let (r, n) = p.translation_residual(0, &[0.0, 0.0], 0).unwrap();
        assert_eq!((r, n), (vec![1.0, 0.0], 1.0));
    }

    #[test]
    fn residual_norm_is_permutation_invariant() {
        let mut a = ModelParameters::zeros(3, 1, 1, 1);
        a.user_embeddings = vec![0.3, -1.2, 2.0];
        a.item_embeddings = vec![1.0, 0.5, -0.25];
        let h = [0.7, 0.1, -0.4];
        let mut b = a.clone();
        b.user_embeddings = vec![2.0, 0.3, -1.2];
        b.item_embeddings = vec![-0.25, 1.0, 0.5];
        let hb = [-0.4, 0.7, 0.1];
        let na = a.translation_residual(0, &h, 0).unwrap().1;
        let nb = b.translation_residual(0, &hb, 0).unwrap().1;
        assert!((na - nb).abs() < 1e-15);
    }

    #[test]
    fn approximate_review_embedding_hand_values() {
        let mut p = ModelParameters::zeros(2, 1, 1, 1);
        p.user_embeddings = vec![1.0, 0.0];
        p.item_embeddings = vec![2.0, 0.0];
        assert_eq!(
            p.approximate_review_embedding(0, 0).unwrap(),
            vec![1.0, 0.0]
        );
        p.item_embeddings = vec![1.0, 0.0];
        assert_eq!(
            p.approximate_review_embedding(0, 0).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn predict_rating_is_regressor_on_item_minus_user() {
        let p = small(4);
        let h = p.approximate_review_embedding(1, 2).unwrap();
        assert_eq!(
            p.predict_rating(1, 2).unwrap(),
            p.predict_from_embedding(&h, 1, 2).unwrap()
        );

        let mut q = ModelParameters::zeros(3, 1, 1, 1);
        q.user_embeddings = vec![0.2, 0.2, 0.2];
        q.item_embeddings = vec![0.2, 0.2, 0.2];
        q.user_bias = vec![0.5];
        q.item_bias = vec![-0.25];
        q.global_bias = 3.5;
        assert_eq!(q.predict_rating(0, 0).unwrap(), 3.75);
    }

    #[test]
    fn prediction_matches_training_path_when_translation_is_exact() {
        // Build h_rev for a one-token review and set e_i = e_u + h_rev.
        let mut p = small(4);
        let h = p.embed_review(&[3]).unwrap();
        let eu = p.user(1).to_vec();
        for j in 0..4 {
            p.item_embeddings[2 * 4 + j] = eu[j] + h[j];
        }
        let t = triple(1, 2, &[3], 4.0);
        let trace = p.forward(&t).unwrap();
        assert!(trace.residual_norm < 1e-15);
        assert!((p.predict_rating(1, 2).unwrap() - trace.prediction).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_term_isolation() {
        let mut p = small(3);
        let t = triple(0, 1, &[0, 4], 0.0);
        let pred = p.forward(&t).unwrap().prediction;
        let t = triple(0, 1, &[0, 4], pred);
        assert_eq!(
            batch_loss(&p, &[t.clone()], LossWeights::new(0.0, 0.0)).unwrap(),
            0.0
        );
        let norm = p.forward(&t).unwrap().residual_norm;
        assert_eq!(
            batch_loss(&p, &[t.clone()], LossWeights::new(1.0, 0.0)).unwrap(),
            norm
        );

        // all parameters zero except b_0
        p = ModelParameters::zeros(3, 1, 2, 5);
        p.global_bias = 2.0;
        let t = triple(0, 1, &[0, 4], 5.0);
        let mu = 0.1;
        let loss = batch_loss(&p, &[t], LossWeights::new(0.0, mu)).unwrap();
        assert!((loss - (9.0 + mu * 4.0)).abs() < 1e-12);
        assert!(batch_loss(&p, &[], LossWeights::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn global_bias_gradient_is_twice_summed_error() {
        let p = small(4);
        let batch = [
            triple(0, 0, &[1, 2], 4.0),
            triple(2, 3, &[], 1.0),
            triple(1, 1, &[5], 5.0),
        ];
        let g = batch_gradients(&p, &batch, LossWeights::new(0.0, 0.0)).unwrap();
        let want: f64 = batch
            .iter()
            .map(|t| 2.0 * (p.forward(t).unwrap().prediction - t.rating))
            .sum();
        assert!((g.global_bias - want).abs() < 1e-12);
    }

    #[test]
    fn without_translation_user_gradient_is_pure_regularization() {
        let p = small(4);
        let batch = [triple(0, 0, &[1, 2], 4.0), triple(2, 3, &[4], 1.0)];
        let mu = 1e-3;
        let g = batch_gradients(&p, &batch, LossWeights::new(0.0, mu)).unwrap();
        for (gx, px) in g.user_embeddings.iter().zip(&p.user_embeddings) {
            assert_eq!(*gx, 2.0 * mu * px);
        }
        for (gx, px) in g.item_embeddings.iter().zip(&p.item_embeddings) {
            assert_eq!(*gx, 2.0 * mu * px);
        }
    }

    #[test]
    fn zero_residual_gradient_is_finite() {
        let mut p = ModelParameters::zeros(2, 1, 1, 1);
        p.regressor_weights = vec![1.0, 1.0];
        let g = batch_gradients(&p, &[triple(0, 0, &[], 3.0)], LossWeights::new(1.0, 0.0)).unwrap();
        assert!(g.user_embeddings.iter().all(|x| *x == 0.0));
        assert!(g.review_bias.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn sgd_update_matches_dense_gradient_step() {
        let p = small(4);
        let batch = [triple(0, 0, &[1, 2, 2], 4.0), triple(2, 3, &[], 1.0)];
        let (lr, lambda, mu) = (0.05, 0.5, 1e-2);
        let dense = batch_gradients(&p, &batch, LossWeights::new(lambda, mu)).unwrap();

        let mut sparse = Gradients::zeros_like(&p);
        let mut ws = Workspace::new(4);
        accumulate_data_gradients(&p, &batch, lambda, &mut sparse, &mut ws).unwrap();
        let mut fast = p.clone();
        fast.sgd_update(&sparse, lr, mu);

        let mut slow = p.clone();
        for (dst, g) in [
            (&mut slow.word_embeddings, &dense.word_embeddings),
            (&mut slow.user_embeddings, &dense.user_embeddings),
            (&mut slow.item_embeddings, &dense.item_embeddings),
            (&mut slow.review_bias, &dense.review_bias),
            (&mut slow.regressor_weights, &dense.regressor_weights),
            (&mut slow.user_bias, &dense.user_bias),
            (&mut slow.item_bias, &dense.item_bias),
        ] {
            for (x, g) in dst.iter_mut().zip(g) {
                *x -= lr * g;
            }
        }
        slow.global_bias -= lr * dense.global_bias;
        for (a, b) in fast.tensors().iter().zip(slow.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-14, "{x} vs {y}");
            }
        }
        assert!((fast.global_bias - slow.global_bias).abs() < 1e-14);

        // reset really clears everything that was written
        sparse.reset();
        assert_eq!(sparse, Gradients::zeros_like(&p));
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Hyperparameters::default().validate().is_ok());
        let d = Hyperparameters::default();
        assert!(Hyperparameters { k: 0, ..d.clone() }.validate().is_err());
        assert!(Hyperparameters {
            lambda: -1.0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(Hyperparameters {
            mu: f64::NAN,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(Hyperparameters {
            learning_rate: 0.0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(Hyperparameters {
            batch_size: 0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(Hyperparameters {
            max_epochs: 5,
            validate_every: 10,
            ..d
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn sigmoid_activations_in_open_unit_interval(h in proptest::collection::vec(-30.0f64..30.0, 4)) {
            let mut p = small(4);
            p.review_bias = h;
            let trace = p.forward(&triple(0, 0, &[], 3.0)).unwrap();
            prop_assert!(trace.sigmoid_activations.iter().all(|&s| s > 0.0 && s < 1.0));
        }

        #[test]
        fn prediction_is_bounded_by_weights_and_biases(
            h in proptest::collection::vec(-50.0f64..50.0, 4),
            w in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let mut p = small(4);
            p.regressor_weights = w.clone();
            p.user_bias[0] = b[0];
            p.item_bias[1] = b[1];
            p.global_bias = b[2];
            let pred = p.predict_from_embedding(&h, 0, 1).unwrap();
            let bound: f64 = w.iter().map(|x| x.abs()).sum::<f64>() + b.iter().map(|x| x.abs()).sum::<f64>();
            prop_assert!(pred.abs() <= bound + 1e-12);
        }
    }
}
