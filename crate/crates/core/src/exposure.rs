//! Expected exposure under the machine-user browsing model.
//!
//! The machine user gives unit attention to every item inside the top-`k`
//! context and none after it. System exposure averages that attention over
//! sampled rankings; target exposure is what the stochastic oracle (useful
//! items first, shuffled within groups) would give. EE-D is the squared norm
//! of the system exposure, EE-R its inner product with the target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrievers::RankedList;
use crate::sampler::{enumerate_rankings, ranking_probability, SampleSet};

/// Largest corpus [`exact_exposure`] will enumerate for non-uniform scores.
pub const EXACT_ENUMERATION_LIMIT: usize = 8;

const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureVector {
    pub query_id: String,
    pub values: Vec<f64>,
}

impl ExposureVector {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Integer attention counts accumulated over a set of rankings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureCounts {
    pub counts: Vec<u64>,
    pub rankings: u64,
}

impl ExposureCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_exposure(&self, query_id: &str) -> ExposureVector {
        let denom = self.rankings as f64;
        ExposureVector {
            query_id: query_id.to_owned(),
            values: self.counts.iter().map(|&c| c as f64 / denom).collect(),
        }
    }
}

/// Step attention: 1 inside the top `k` positions (1-based), 0 after.
pub fn machine_user_attention(position: usize, k: usize) -> u8 {
    u8::from(position >= 1 && position <= k)
}

pub fn exposure_counts(rankings: &[RankedList], n: usize) -> ExposureCounts {
    let mut counts = vec![0u64; n];
    for ranking in rankings {
        for (pos, &item) in ranking.items.iter().enumerate() {
            counts[item] += u64::from(machine_user_attention(pos + 1, ranking.truncation_k));
        }
    }
    ExposureCounts {
        counts,
        rankings: rankings.len() as u64,
    }
}

/// Monte-Carlo estimate of each item's expected exposure over the sample set.
pub fn system_exposure(samples: &SampleSet, n: usize) -> ExposureVector {
    exposure_counts(&samples.rankings, n).to_exposure(&samples.query_id)
}

/// Exact expected exposure under Plackett-Luce sampling of `tempered`.
///
/// Constant score vectors are uniform policies and resolve in closed form
/// (`min(k, n) / n` per item); anything else is enumerated over all
/// truncated rankings and refused above [`EXACT_ENUMERATION_LIMIT`] items.
pub fn exact_exposure(query_id: &str, tempered: &[f64], k: usize) -> Result<ExposureVector> {
    let n = tempered.len();
    let depth = k.min(n);
    if n > 0 && tempered.iter().all(|&s| s == tempered[0]) {
        return Ok(ExposureVector {
            query_id: query_id.to_owned(),
            values: vec![depth as f64 / n as f64; n],
        });
    }
    if n > EXACT_ENUMERATION_LIMIT {
        return Err(Error::CorpusTooLarge {
            n,
            limit: EXACT_ENUMERATION_LIMIT,
        });
    }
    let mut values = vec![0.0; n];
    for ranking in enumerate_rankings(n, depth) {
        let p = ranking_probability(tempered, &ranking);
        for (pos, &item) in ranking.iter().enumerate() {
            values[item] += p * f64::from(machine_user_attention(pos + 1, k));
        }
    }
    Ok(ExposureVector {
        query_id: query_id.to_owned(),
        values,
    })
}

/// Oracle exposure of a useful and of a non-useful item, with `k` capped at `n`.
pub fn target_exposure(m: usize, n: usize, k: usize) -> (f64, f64) {
    let k = k.min(n);
    if m <= k {
        let rest = if n > m {
            (k - m) as f64 / (n - m) as f64
        } else {
            0.0
        };
        (1.0, rest)
    } else {
        (k as f64 / m as f64, 0.0)
    }
}

pub fn target_exposure_vector(query_id: &str, useful: &[bool], k: usize) -> ExposureVector {
    let m = useful.iter().filter(|&&u| u).count();
    let (good, rest) = target_exposure(m, useful.len(), k);
    ExposureVector {
        query_id: query_id.to_owned(),
        values: useful
            .iter()
            .map(|&u| if u { good } else { rest })
            .collect(),
    }
}

/// EE-D: squared norm of the exposure vector.
pub fn ee_disparity(exposure: &ExposureVector) -> f64 {
    exposure.values.iter().map(|e| e * e).sum()
}

/// EE-R: inner product of system and target exposure.
pub fn ee_relevance(system: &ExposureVector, target: &ExposureVector) -> Result<f64> {
    if system.values.len() != target.values.len() {
        return Err(Error::MismatchedSupport {
            left: system.values.len(),
            right: target.values.len(),
        });
    }
    Ok(system
        .values
        .iter()
        .zip(&target.values)
        .map(|(a, b)| a * b)
        .sum())
}

fn bounded(metric: &'static str, value: f64, bound: f64) -> Result<f64> {
    let slack = BOUND_SLACK * bound.max(1.0);
    if !(value >= -slack && value <= bound + slack) {
        return Err(Error::OutOfBounds {
            metric,
            value,
            bound,
        });
    }
    Ok((value / bound).clamp(0.0, 1.0))
}

/// `eed_raw / k`; values outside `[0, k]` beyond float slack are errors.
pub fn normalize_eed(eed_raw: f64, k: usize) -> Result<f64> {
    bounded("EE-D", eed_raw, k as f64)
}

/// Upper bound of EE-R for `m` useful items among `n` with context size `k`.
pub fn eer_upper_bound(n: usize, m: usize, k: usize) -> f64 {
    let k = k.min(n);
    if m <= k {
        let tail = if n > m {
            ((k - m) as f64).powi(2) / (n - m) as f64
        } else {
            0.0
        };
        m as f64 + tail
    } else {
        (k * k) as f64 / m as f64
    }
}

pub fn normalize_eer(eer_raw: f64, n: usize, m: usize, k: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Degenerate("EE-R normalization needs m >= 1".into()));
    }
    bounded("EE-R", eer_raw, eer_upper_bound(n, m, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeMetrics {
    pub eed_raw: f64,
    pub eer_raw: f64,
    pub eed_norm: f64,
    pub eer_norm: f64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
}

/// Raw and normalized EE-D / EE-R of a system exposure vector. Both bounds
/// use the effective context size `min(k, n)`.
pub fn ee_metrics(system: &ExposureVector, useful: &[bool], k: usize) -> Result<EeMetrics> {
    let n = useful.len();
    let m = useful.iter().filter(|&&u| u).count();
    let k_eff = k.min(n);
    let target = target_exposure_vector(&system.query_id, useful, k);
    let eed_raw = ee_disparity(system);
    let eer_raw = ee_relevance(system, &target)?;
    Ok(EeMetrics {
        eed_raw,
        eer_raw,
        eed_norm: normalize_eed(eed_raw, k_eff)?,
        eer_norm: normalize_eer(eer_raw, n, m, k_eff)?,
        n,
        m,
        k,
    })
}
