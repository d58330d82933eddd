//! Reference predictors: the training mean and biased matrix factorization.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DatasetSplit, InteractionTriple};
use crate::error::{Error, Result};
use crate::evaluation::Predictor;
use crate::math::{dot, sqrt};
use crate::model::{Hyperparameters, LossWeights, INIT_STREAM};
use crate::training::{run_sgd, SgdModel, TrainingRun};

/// Predicts the mean training rating for every pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetModel {
    pub global_mean: f64,
}

pub fn fit_offset(train: &[InteractionTriple]) -> Result<OffsetModel> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let sum: f64 = train.iter().map(|t| t.rating).sum();
    Ok(OffsetModel {
        global_mean: sum / train.len() as f64,
    })
}

impl Predictor for OffsetModel {
    fn predict(&self, _user: usize, _item: usize) -> Result<f64> {
        Ok(self.global_mean)
    }
}

/// `b_0 + b_u + b_i + p_u·q_i`
#[derive(Debug, Clone, PartialEq)]
pub struct SvdModel {
    k: usize,
    num_users: usize,
    num_items: usize,
    /// `U × k`
    pub user_factors: Vec<f64>,
    /// `I × k`
    pub item_factors: Vec<f64>,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub global_bias: f64,
    frozen: bool,
}

impl SvdModel {
    pub fn zeros(k: usize, num_users: usize, num_items: usize) -> Self {
        SvdModel {
            k,
            num_users,
            num_items,
            user_factors: vec![0.0; num_users * k],
            item_factors: vec![0.0; num_items * k],
            user_bias: vec![0.0; num_users],
            item_bias: vec![0.0; num_items],
            global_bias: 0.0,
            frozen: false,
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

    /// Whether training leaves the factors untouched.
    pub fn factors_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_factors_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    fn user(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.k..(u + 1) * self.k]
    }

    fn item(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.k..(i + 1) * self.k]
    }

    fn check_pair(&self, user: usize, item: usize) -> Result<()> {
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

    fn score(&self, u: usize, i: usize) -> f64 {
        self.global_bias + self.user_bias[u] + self.item_bias[i] + dot(self.user(u), self.item(i))
    }

    pub fn squared_norm(&self) -> f64 {
        [
            &self.user_factors,
            &self.item_factors,
            &self.user_bias,
            &self.item_bias,
        ]
        .iter()
        .flat_map(|t| t.iter())
        .map(|x| x * x)
        .sum::<f64>()
            + self.global_bias * self.global_bias
    }

    pub fn is_finite(&self) -> bool {
        self.global_bias.is_finite()
            && [
                &self.user_factors,
                &self.item_factors,
                &self.user_bias,
                &self.item_bias,
            ]
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

impl Predictor for SvdModel {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.check_pair(user, item)?;
        Ok(self.score(user, item))
    }
}

pub struct SvdScratch {
    user_grad: Vec<f64>,
    item_grad: Vec<f64>,
    user_bias_grad: Vec<f64>,
    item_bias_grad: Vec<f64>,
    touched_users: Vec<usize>,
    touched_items: Vec<usize>,
    user_mark: Vec<bool>,
    item_mark: Vec<bool>,
}

impl SgdModel for SvdModel {
    type Scratch = SvdScratch;

    fn scratch(&self) -> SvdScratch {
        SvdScratch {
            user_grad: vec![0.0; self.user_factors.len()],
            item_grad: vec![0.0; self.item_factors.len()],
            user_bias_grad: vec![0.0; self.num_users],
            item_bias_grad: vec![0.0; self.num_items],
            touched_users: Vec::new(),
            touched_items: Vec::new(),
            user_mark: vec![false; self.num_users],
            item_mark: vec![false; self.num_items],
        }
    }

    fn sgd_step(
        &mut self,
        batch: &[&InteractionTriple],
        learning_rate: f64,
        weights: LossWeights,
        s: &mut SvdScratch,
    ) -> Result<f64> {
        let k = self.k;
        for &u in &s.touched_users {
            s.user_grad[u * k..(u + 1) * k]
                .iter_mut()
                .for_each(|x| *x = 0.0);
            s.user_bias_grad[u] = 0.0;
            s.user_mark[u] = false;
        }
        for &i in &s.touched_items {
            s.item_grad[i * k..(i + 1) * k]
                .iter_mut()
                .for_each(|x| *x = 0.0);
            s.item_bias_grad[i] = 0.0;
            s.item_mark[i] = false;
        }
        s.touched_users.clear();
        s.touched_items.clear();

        let mut loss = 0.0;
        let mut global_grad = 0.0;
        for t in batch {
            let (u, i) = (t.user, t.item);
            self.check_pair(u, i)?;
            let err = self.score(u, i) - t.rating;
            loss += err * err;
            let d = 2.0 * err;
            global_grad += d;
            if !s.user_mark[u] {
                s.user_mark[u] = true;
                s.touched_users.push(u);
            }
            if !s.item_mark[i] {
                s.item_mark[i] = true;
                s.touched_items.push(i);
            }
            s.user_bias_grad[u] += d;
            s.item_bias_grad[i] += d;
            if !self.frozen {
                for j in 0..k {
                    s.user_grad[u * k + j] += d * self.item_factors[i * k + j];
                    s.item_grad[i * k + j] += d * self.user_factors[u * k + j];
                }
            }
        }
        if !loss.is_finite() {
            return Ok(loss);
        }

        let decay = 1.0 - 2.0 * learning_rate * weights.regularization;
        if weights.regularization != 0.0 {
            for t in [
                &mut self.user_factors,
                &mut self.item_factors,
                &mut self.user_bias,
                &mut self.item_bias,
            ] {
                t.iter_mut().for_each(|x| *x *= decay);
            }
        }
        self.global_bias = self.global_bias * decay - learning_rate * global_grad;
        for &u in &s.touched_users {
            self.user_bias[u] -= learning_rate * s.user_bias_grad[u];
            if !self.frozen {
                for j in 0..k {
                    self.user_factors[u * k + j] -= learning_rate * s.user_grad[u * k + j];
                }
            }
        }
        for &i in &s.touched_items {
            self.item_bias[i] -= learning_rate * s.item_bias_grad[i];
            if !self.frozen {
                for j in 0..k {
                    self.item_factors[i * k + j] -= learning_rate * s.item_grad[i * k + j];
                }
            }
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SvdOptions {
    /// Keep the factors at zero so only the biases are learned.
    pub freeze_factors: bool,
}

/// Fits biased MF by mini-batch SGD on
/// `Σ (r - b_0 - b_u - b_i - p_u·q_i)² + μ Σ θ²`, with the same epoch,
/// validation and snapshot protocol as the main model. `lambda` is unused.
pub fn fit_svd(split: &DatasetSplit, hp: &Hyperparameters) -> Result<TrainingRun<SvdModel>> {
    fit_svd_with(split, hp, SvdOptions::default())
}

pub fn fit_svd_with(
    split: &DatasetSplit,
    hp: &Hyperparameters,
    options: SvdOptions,
) -> Result<TrainingRun<SvdModel>> {
    hp.validate()?;
    if split.num_users < 1 || split.num_items < 1 {
        return Err(Error::Empty("users and items"));
    }
    let mut model = SvdModel::zeros(hp.k, split.num_users, split.num_items);
    model.frozen = options.freeze_factors;
    if !options.freeze_factors {
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        rng.set_stream(INIT_STREAM);
        let ub = sqrt(6.0 / (split.num_users + hp.k) as f64);
        for x in &mut model.user_factors {
            *x = rng.random_range(-ub..=ub);
        }
        let ib = sqrt(6.0 / (split.num_items + hp.k) as f64);
        for x in &mut model.item_factors {
            *x = rng.random_range(-ib..=ib);
        }
    }
    run_sgd(model, split, hp)
}
