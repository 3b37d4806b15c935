use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// String utility metrics, all oriented higher-is-better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityMetric {
    /// 1 when target and output agree after trimming and lowercasing.
    ExactMatch,
    /// Harmonic mean of token precision and recall over lowercased
    /// whitespace tokens.
    TokenF1,
    /// Unigram-overlap F-measure over lowercased alphanumeric tokens.
    Rouge1F,
    /// `upper_bound - |target - output|` for numeric answers, floored at 0;
    /// non-numeric outputs score 0.
    MaeInverted { upper_bound: f64 },
}

impl FromStr for UtilityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((name, arg)) => (name, Some(arg)),
            None => (s, None),
        };
        match (name, arg) {
            ("exact_match", None) => Ok(Self::ExactMatch),
            ("token_f1", None) => Ok(Self::TokenF1),
            ("rouge1_f", None) => Ok(Self::Rouge1F),
            ("mae_inverted", Some(bound)) => {
                let upper_bound: f64 = bound
                    .parse()
                    .map_err(|_| Error::Config(format!("bad mae_inverted bound `{bound}`")))?;
                if !(upper_bound > 0.0 && upper_bound.is_finite()) {
                    return Err(Error::Config("mae_inverted bound must be positive".into()));
                }
                Ok(Self::MaeInverted { upper_bound })
            }
            ("mae_inverted", None) => Err(Error::Config(
                "mae_inverted needs an upper bound, e.g. `mae_inverted:4`".into(),
            )),
            _ => Err(Error::Config(format!(
                "unknown metric `{s}` (expected exact_match, token_f1, rouge1_f or mae_inverted:BOUND)"
            ))),
        }
    }
}

impl fmt::Display for UtilityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ExactMatch => f.write_str("exact_match"),
            Self::TokenF1 => f.write_str("token_f1"),
            Self::Rouge1F => f.write_str("rouge1_f"),
            Self::MaeInverted { upper_bound } => write!(f, "mae_inverted:{upper_bound}"),
        }
    }
}

fn overlap_f1(target: &[String], output: &[String]) -> f64 {
    if target.is_empty() || output.is_empty() {
        return f64::from(u8::from(target.is_empty() && output.is_empty()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in target {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for o in output {
        if let Some(c) = counts.get_mut(o.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / output.len() as f64;
    let recall = common as f64 / target.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn whitespace_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn alnum_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn string_utility(metric: UtilityMetric, target: &str, output: &str) -> Result<f64> {
    Ok(match metric {
        UtilityMetric::ExactMatch => f64::from(u8::from(
            target.trim().to_lowercase() == output.trim().to_lowercase(),
        )),
        UtilityMetric::TokenF1 => {
            overlap_f1(&whitespace_tokens(target), &whitespace_tokens(output))
        }
        UtilityMetric::Rouge1F => overlap_f1(&alnum_tokens(target), &alnum_tokens(output)),
        UtilityMetric::MaeInverted { upper_bound } => {
            let target: f64 = target.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "mae_inverted needs a numeric target, got `{target}`"
                ))
            })?;
            match output.trim().parse::<f64>() {
                Ok(value) if value.is_finite() => (upper_bound - (target - value).abs()).max(0.0),
                _ => 0.0,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_scores_one() {
        for m in [
            UtilityMetric::ExactMatch,
            UtilityMetric::TokenF1,
            UtilityMetric::Rouge1F,
        ] {
            assert_eq!(
                string_utility(m, "The cat sat", "The cat sat").unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn disjoint_tokens_score_zero() {
        assert_eq!(
            string_utility(UtilityMetric::TokenF1, "a b", "c d").unwrap(),
            0.0
        );
        assert_eq!(
            string_utility(UtilityMetric::Rouge1F, "a b", "c d").unwrap(),
            0.0
        );
        assert_eq!(
            string_utility(UtilityMetric::ExactMatch, "a b", "c d").unwrap(),
            0.0
        );
    }

    #[test]
    fn token_f1_partial_overlap() {
        // precision 1/2, recall 1/3
        let f = string_utility(UtilityMetric::TokenF1, "a b c", "A z").unwrap();
        assert!((f - 0.4).abs() < 1e-12);
        // punctuation separates tokens only for rouge1
        assert_eq!(
            string_utility(UtilityMetric::TokenF1, "cat.", "cat").unwrap(),
            0.0
        );
        assert_eq!(
            string_utility(UtilityMetric::Rouge1F, "cat.", "cat").unwrap(),
            1.0
        );
    }

    #[test]
    fn mae_inverted_rating_scale() {
        let m: UtilityMetric = "mae_inverted:4".parse().unwrap();
        assert_eq!(string_utility(m, "5", "3").unwrap(), 2.0);
        assert_eq!(string_utility(m, "5", " 5 ").unwrap(), 4.0);
        assert_eq!(string_utility(m, "5", "five").unwrap(), 0.0);
        assert_eq!(string_utility(m, "1", "100").unwrap(), 0.0);
        assert!(matches!(
            string_utility(m, "five", "5"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn parses_metric_names() {
        assert_eq!(
            "token_f1".parse::<UtilityMetric>().unwrap(),
            UtilityMetric::TokenF1
        );
        assert_eq!(
            "rouge1_f".parse::<UtilityMetric>().unwrap().to_string(),
            "rouge1_f"
        );
        assert!("mae_inverted".parse::<UtilityMetric>().is_err());
        assert!("bleu".parse::<UtilityMetric>().is_err());
    }

    proptest! {
        #[test]
        fn token_f1_is_symmetric(a in "[a-d ]{0,12}", b in "[a-d ]{0,12}") {
            let ab = string_utility(UtilityMetric::TokenF1, &a, &b).unwrap();
            let ba = string_utility(UtilityMetric::TokenF1, &b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
