use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::node::NodeState;
use crate::error::{Error, Result};
use crate::rng;

/// How deltas are combined into one global update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consolidation {
    PlainAverage,
    DataWeighted,
    CriticalityWeighted,
}

/// Which eligible (not offline) nodes contribute to a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampling {
    All,
    /// `max(1, floor(fraction * eligible))` nodes without replacement.
    RandomFraction {
        fraction: f64,
    },
    /// Nodes whose current train view holds `[min_samples, max_samples]` rows.
    DataThreshold {
        min_samples: usize,
        #[serde(default)]
        max_samples: Option<usize>,
    },
    /// Nodes whose link latency is at most `cutoff_ms`.
    LatencyAware {
        cutoff_ms: f64,
    },
}

/// The aggregator's policy: consolidation rule, update frequency (local
/// epochs per round) and node sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationScheme {
    pub consolidation: Consolidation,
    pub local_epochs: usize,
    pub sampling: Sampling,
    pub seed: u64,
}

impl AggregationScheme {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::config("scheme.local_epochs", "must be at least 1"));
        }
        match self.sampling {
            Sampling::RandomFraction { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                Err(Error::config(
                    "scheme.sampling.fraction",
                    format!("must lie in (0, 1], got {fraction}"),
                ))
            }
            Sampling::DataThreshold {
                min_samples,
                max_samples,
            } => {
                if min_samples == 0 {
                    return Err(Error::config(
                        "scheme.sampling.min_samples",
                        "must be at least 1",
                    ));
                }
                if max_samples.is_some_and(|m| m < min_samples) {
                    return Err(Error::config(
                        "scheme.sampling.max_samples",
                        "must not be below min_samples",
                    ));
                }
                Ok(())
            }
            Sampling::LatencyAware { cutoff_ms } if !(cutoff_ms > 0.0) => Err(Error::config(
                "scheme.sampling.cutoff_ms",
                format!("must be positive, got {cutoff_ms}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Node ids taking part in `round`, ascending. Offline nodes are never
/// returned; an empty result is legal.
pub fn sample_nodes(fleet: &[NodeState], scheme: &AggregationScheme, round: usize) -> Vec<usize> {
    let eligible = fleet.iter().filter(|n| !n.is_offline());
    let mut ids: Vec<usize> = match scheme.sampling {
        Sampling::All => eligible.map(|n| n.node_id).collect(),
        Sampling::RandomFraction { fraction } => {
            let mut pool: Vec<usize> = eligible.map(|n| n.node_id).collect();
            pool.sort_unstable();
            if pool.is_empty() {
                return pool;
            }
            let count = ((fraction * pool.len() as f64).floor() as usize).clamp(1, pool.len());
            let mut rng = rng::derived_stream(&[scheme.seed, rng::tag::SAMPLING, round as u64]);
            pool.choose_multiple(&mut rng, count).copied().collect()
        }
        Sampling::DataThreshold {
            min_samples,
            max_samples,
        } => eligible
            .filter(|n| {
                let size = n.train_view_len(round);
                size >= min_samples && max_samples.is_none_or(|m| size <= m)
            })
            .map(|n| n.node_id)
            .collect(),
        Sampling::LatencyAware { cutoff_ms } => eligible
            .filter(|n| n.latency_ms().is_some_and(|l| l <= cutoff_ms))
            .map(|n| n.node_id)
            .collect(),
    };
    ids.sort_unstable();
    ids
}
