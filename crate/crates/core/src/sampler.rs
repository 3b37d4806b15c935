//! Temperature-controlled Plackett-Luce ranking sampler.
//!
//! Placement probabilities are a softmax over the tempered scores
//! `s^alpha` of the items still in the pool. Two samplers realize the same
//! distribution: [`pl_sample_gumbel`] (one sort of Gumbel-perturbed scores,
//! the production path) and [`pl_sample_sequential`] (position-by-position
//! draws, kept as an independent reference). [`ranking_probability`] gives
//! the exact probability of a (truncated) ranking.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrievers::{NormalizedScores, RankedList};
use crate::rng::{stream_rng, SAMPLER_DOMAIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub alpha: f64,
    pub sample_count: usize,
    pub truncation_k: usize,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.sample_count == 0 || self.truncation_k == 0 {
            return Err(Error::Config(
                "sample count and truncation k must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub query_id: String,
    pub config: SamplingConfig,
    pub rankings: Vec<RankedList>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }
}

/// Raises each normalized score to the power `alpha`.
pub fn apply_temperature(scores: &NormalizedScores, alpha: f64) -> Result<Vec<f64>> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    if !2f64.powf(alpha).is_finite() {
        return Err(Error::TemperatureOverflow { alpha });
    }
    Ok(scores.values.iter().map(|s| s.powf(alpha)).collect())
}

/// Draws positions one at a time from the softmax over the remaining pool.
pub fn pl_sample_sequential<R: Rng + ?Sized>(
    tempered: &[f64],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let depth = k.min(tempered.len());
    let mut pool: Vec<usize> = (0..tempered.len()).collect();
    let mut ranking = Vec::with_capacity(depth);
    let mut weights = Vec::with_capacity(pool.len());
    for _ in 0..depth {
        let max = pool
            .iter()
            .map(|&i| tempered[i])
            .fold(f64::NEG_INFINITY, f64::max);
        weights.clear();
        weights.extend(pool.iter().map(|&i| (tempered[i] - max).exp()));
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (slot, w) in weights.iter().enumerate() {
            if target < *w {
                pick = slot;
                break;
            }
            target -= w;
        }
        ranking.push(pool.remove(pick));
    }
    ranking
}

fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            return -(-u.ln()).ln();
        }
    }
}

/// Sorts Gumbel-perturbed scores and keeps the top `min(k, n)`.
pub fn pl_sample_gumbel<R: Rng + ?Sized>(tempered: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let perturbed: Vec<f64> = tempered.iter().map(|s| s + gumbel(rng)).collect();
    let mut order: Vec<usize> = (0..tempered.len()).collect();
    order.sort_by(|&a, &b| perturbed[b].total_cmp(&perturbed[a]).then(a.cmp(&b)));
    order.truncate(k.min(tempered.len()));
    order
}

/// Samples `N` rankings with the Gumbel sampler. Sample `i` draws from the
/// stream keyed by `(seed, query_id, i)`.
pub fn sample_set(scores: &NormalizedScores, config: &SamplingConfig) -> Result<SampleSet> {
    config.validate()?;
    let tempered = apply_temperature(scores, config.alpha)?;
    let rankings = (0..config.sample_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, SAMPLER_DOMAIN, &scores.query_id, i as u64);
            RankedList {
                query_id: scores.query_id.clone(),
                items: pl_sample_gumbel(&tempered, config.truncation_k, &mut rng),
                truncation_k: config.truncation_k,
            }
        })
        .collect();
    Ok(SampleSet {
        query_id: scores.query_id.clone(),
        config: *config,
        rankings,
    })
}

/// Product of the placement probabilities along `ranking`.
pub fn ranking_probability(tempered: &[f64], ranking: &[usize]) -> f64 {
    let mut placed = vec![false; tempered.len()];
    let mut prob = 1.0;
    for &item in ranking {
        let max = (0..tempered.len())
            .filter(|&i| !placed[i])
            .map(|i| tempered[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = (0..tempered.len())
            .filter(|&i| !placed[i])
            .map(|i| (tempered[i] - max).exp())
            .sum();
        prob *= (tempered[item] - max).exp() / total;
        placed[item] = true;
    }
    prob
}

/// Every ordered selection of `depth` distinct items out of `n`.
pub fn enumerate_rankings(n: usize, depth: usize) -> Vec<Vec<usize>> {
    fn extend(
        n: usize,
        depth: usize,
        prefix: &mut Vec<usize>,
        used: &mut [bool],
        out: &mut Vec<Vec<usize>>,
    ) {
        if prefix.len() == depth {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(n, depth, prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(
        n,
        depth.min(n),
        &mut Vec::new(),
        &mut vec![false; n],
        &mut out,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn normalized(values: &[f64]) -> NormalizedScores {
        NormalizedScores {
            query_id: "q".into(),
            item_ids: (0..values.len()).map(|i| format!("d{i}")).collect(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn temperature_examples() {
        let s = normalized(&[1.0, 1.5, 2.0]);
        assert_eq!(apply_temperature(&s, 0.0).unwrap(), [1.0, 1.0, 1.0]);
        assert_eq!(apply_temperature(&s, 1.0).unwrap(), [1.0, 1.5, 2.0]);
        assert_eq!(apply_temperature(&s, 2.0).unwrap(), [1.0, 2.25, 4.0]);
        assert!(matches!(
            apply_temperature(&s, 2000.0),
            Err(Error::TemperatureOverflow { .. })
        ));
        assert!(apply_temperature(&s, -1.0).is_err());
        assert!(apply_temperature(&s, f64::NAN).is_err());
    }

    #[test]
    fn singleton_rankings() {
        let mut rng = stream_rng(0, "t", "q", 0);
        assert_eq!(pl_sample_sequential(&[3.0], 5, &mut rng), [0]);
        assert_eq!(pl_sample_gumbel(&[3.0], 5, &mut rng), [0]);
        assert_eq!(ranking_probability(&[3.0], &[0]), 1.0);
    }

    // P(a first) = e^2 / (e^2 + 2e) = e / (e + 2) from the softmax directly.
    #[test]
    fn sequential_first_position_frequency() {
        let e = std::f64::consts::E;
        let expected = e / (e + 2.0);
        assert!((expected - 0.5761).abs() < 1e-4);
        assert!((ranking_probability(&[2.0, 1.0, 1.0], &[0]) - expected).abs() < 1e-12);

        let draws = 200_000;
        let mut hits = 0;
        for i in 0..draws {
            let mut rng = stream_rng(5, "seq", "q", i);
            if pl_sample_sequential(&[2.0, 1.0, 1.0], 1, &mut rng)[0] == 0 {
                hits += 1;
            }
        }
        assert!((hits as f64 / draws as f64 - expected).abs() < 0.005);
    }

    #[test]
    fn gumbel_equal_scores_uniform_over_permutations() {
        let draws = 100_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for i in 0..draws {
            let mut rng = stream_rng(9, "gumbel", "q", i);
            *counts
                .entry(pl_sample_gumbel(&[1.0, 1.0, 1.0], 3, &mut rng))
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn probability_examples() {
        assert!((ranking_probability(&[1.0; 3], &[2, 0, 1]) - 1.0 / 6.0).abs() < 1e-15);
        let tempered = [1.0, 1.7, 2.9, 1.2];
        let total: f64 = enumerate_rankings(4, 2)
            .iter()
            .map(|r| ranking_probability(&tempered, r))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(enumerate_rankings(4, 2).len(), 12);
        assert_eq!(enumerate_rankings(3, 5).len(), 6);
    }

    #[test]
    fn sample_set_is_deterministic() {
        let s = normalized(&[1.0, 1.3, 2.0, 1.8, 1.1, 1.6]);
        let config = SamplingConfig {
            alpha: 2.0,
            sample_count: 100,
            truncation_k: 5,
            seed: 42,
        };
        let a = sample_set(&s, &config).unwrap();
        assert_eq!(a, sample_set(&s, &config).unwrap());
        assert_eq!(a.len(), 100);
        assert!(a.rankings.iter().all(|r| r.len() == 5));

        let one = sample_set(
            &s,
            &SamplingConfig {
                sample_count: 1,
                ..config
            },
        )
        .unwrap();
        assert_eq!(one.rankings[0], a.rankings[0]);
        assert!(sample_set(
            &s,
            &SamplingConfig {
                sample_count: 0,
                ..config
            }
        )
        .is_err());
    }

    // For two items the probability that the higher one leads is the logistic
    // of the tempered gap, which grows with alpha.
    #[test]
    fn pairwise_order_probability_monotone_in_alpha() {
        let s = normalized(&[1.9, 1.3]);
        let mut last = 0.0;
        for alpha in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let t = apply_temperature(&s, alpha).unwrap();
            let p = ranking_probability(&t, &[0, 1]);
            let logistic = 1.0 / (1.0 + (t[1] - t[0]).exp());
            assert!((p - logistic).abs() < 1e-12);
            assert!(p >= last);
            last = p;
        }
        assert_eq!(
            ranking_probability(&apply_temperature(&s, 0.0).unwrap(), &[0, 1]),
            0.5
        );
    }

    proptest! {
        #[test]
        fn probabilities_close_over_truncated_space(
            scores in prop::collection::vec(1.0f64..2.0, 1..=6),
            alpha in 0.0f64..10.0,
            k in 1usize..=6,
        ) {
            let t = apply_temperature(&normalized(&scores), alpha).unwrap();
            let total: f64 = enumerate_rankings(t.len(), k)
                .iter()
                .map(|r| ranking_probability(&t, r))
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn samples_are_duplicate_free(
            scores in prop::collection::vec(1.0f64..2.0, 1..20),
            k in 1usize..25,
            seed in any::<u64>(),
        ) {
            let mut rng = stream_rng(seed, "p", "q", 0);
            for ranking in [
                pl_sample_gumbel(&scores, k, &mut rng),
                pl_sample_sequential(&scores, k, &mut rng),
            ] {
                prop_assert_eq!(ranking.len(), k.min(scores.len()));
                let mut sorted = ranking.clone();
                sorted.sort();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), ranking.len());
            }
        }
    }
}
