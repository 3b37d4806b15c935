//! Generators, string-utility metrics, expected utility and utility-gain
//! labeling.

pub mod adapter;
pub mod metrics;
pub mod prompt;
pub mod utility;

pub use adapter::{
    CachedGenerator, ExternalGenerator, Generator, SyntheticGenerator, DEFAULT_TIMEOUT,
};
pub use metrics::{string_utility, UtilityMetric};
pub use prompt::{build_prompt, build_prompt_from_indices, PromptTemplate};
pub use utility::{empirical_max_utility, expected_utility, label_utilities, normalize_eu};
