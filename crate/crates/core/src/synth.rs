//! Synthetic review corpora with planted sentiment words.
//!
//! Every user and item gets a latent offset. A pair's sentiment is their sum
//! (plus optional Gaussian noise), rounded to a step in `-2..=2`. The review
//! then contains that many positive (or negative) words and a few neutral
//! ones, and the rating is exactly `3 + #positive - #negative`. Ratings are
//! therefore a function of the text, and the text is a function of the pair.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawReview;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    /// Distinct items reviewed by each user.
    pub reviews_per_user: usize,
    pub vocab_size: usize,
    pub positive_words: usize,
    pub negative_words: usize,
    /// Standard deviation of the noise added to the latent pair score.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            users: 500,
            items: 200,
            reviews_per_user: 20,
            vocab_size: 50,
            positive_words: 10,
            negative_words: 10,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub reviews: Vec<RawReview>,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub neutral: Vec<String>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

pub fn generate_planted(config: &PlantedConfig) -> Result<PlantedCorpus> {
    let neutral_count = config
        .vocab_size
        .checked_sub(config.positive_words + config.negative_words)
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::InvalidHyperparameter("vocab_size must exceed the planted word count".into())
        })?;
    if config.positive_words < 2 || config.negative_words < 2 {
        return Err(Error::InvalidHyperparameter(
            "need at least two positive and two negative words".into(),
        ));
    }
    if config.users == 0
        || config.items == 0
        || config.reviews_per_user == 0
        || config.reviews_per_user > config.items
    {
        return Err(Error::InvalidHyperparameter(
            "need users, items and 1 <= reviews_per_user <= items".into(),
        ));
    }

    let positive: Vec<String> = (0..config.positive_words)
        .map(|i| format!("pos{i:02}"))
        .collect();
    let negative: Vec<String> = (0..config.negative_words)
        .map(|i| format!("neg{i:02}"))
        .collect();
    let neutral: Vec<String> = (0..neutral_count).map(|i| format!("neu{i:02}")).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let user_offset: Vec<f64> = (0..config.users)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let item_offset: Vec<f64> = (0..config.items)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let all_items: Vec<usize> = (0..config.items).collect();

    let mut reviews = Vec::with_capacity(config.users * config.reviews_per_user);
    for (u, &a) in user_offset.iter().enumerate() {
        for &i in all_items.choose_multiple(&mut rng, config.reviews_per_user) {
            let mut score = a + item_offset[i];
            if config.noise_std > 0.0 {
                score += config.noise_std * gaussian(&mut rng);
            }
            let step = libm::round(1.2 * score).clamp(-2.0, 2.0) as i32;

            let mut words: Vec<&str> = Vec::new();
            let (n_pos, n_neg) = match step {
                s if s > 0 => (s as usize, 0),
                s if s < 0 => (0, (-s) as usize),
                _ if rng.random_bool(0.5) => (1, 1),
                _ => (0, 0),
            };
            words.extend(
                positive
                    .choose_multiple(&mut rng, n_pos)
                    .map(String::as_str),
            );
            words.extend(
                negative
                    .choose_multiple(&mut rng, n_neg)
                    .map(String::as_str),
            );
            let n_neutral = rng.random_range(1..=3usize);
            for _ in 0..n_neutral {
                words.push(neutral.choose(&mut rng).expect("neutral words exist"));
            }
            words.shuffle(&mut rng);

            reviews.push(RawReview {
                user_id: format!("user{u:04}"),
                item_id: format!("item{i:04}"),
                rating: (3 + n_pos as i32 - n_neg as i32) as f64,
                text: words.join(" "),
                timestamp: None,
            });
        }
    }
    Ok(PlantedCorpus {
        reviews,
        positive,
        negative,
        neutral,
    })
}
