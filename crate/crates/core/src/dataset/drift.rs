use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Linear ramp that introduces `drift_classes` into a pool that initially
/// shows only `base_classes`.
///
/// `target_fraction` is the share of drift-class rows in the effective set
/// once the ramp completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSchedule {
    pub base_classes: BTreeSet<usize>,
    pub drift_classes: BTreeSet<usize>,
    pub start_round: usize,
    pub ramp_rounds: usize,
    pub target_fraction: f64,
}

impl Default for DriftSchedule {
    /// Even digits first; odd digits ramp in from round 10 over 10 rounds up
    /// to half of the effective set.
    fn default() -> Self {
        DriftSchedule {
            base_classes: [0, 2, 4, 6, 8].into(),
            drift_classes: [1, 3, 5, 7, 9].into(),
            start_round: 10,
            ramp_rounds: 10,
            target_fraction: 0.5,
        }
    }
}

impl DriftSchedule {
    /// Every class is base; nothing drifts.
    pub fn stationary(num_classes: usize) -> Self {
        DriftSchedule {
            base_classes: (0..num_classes).collect(),
            drift_classes: BTreeSet::new(),
            start_round: 0,
            ramp_rounds: 1,
            target_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.base_classes.intersection(&self.drift_classes).next() {
            return Err(Error::config(
                "drift.drift_classes",
                format!("class {c} is both base and drift"),
            ));
        }
        if self.ramp_rounds == 0 {
            return Err(Error::config("drift.ramp_rounds", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.target_fraction) {
            return Err(Error::config(
                "drift.target_fraction",
                format!("must lie in [0, 1], got {}", self.target_fraction),
            ));
        }
        Ok(())
    }

    /// Drift-class share targeted at `round`.
    pub fn fraction(&self, round: usize) -> f64 {
        if round < self.start_round {
            return 0.0;
        }
        let progress = (round - self.start_round + 1) as f64 / self.ramp_rounds as f64;
        self.target_fraction * progress.min(1.0)
    }
}

/// Rows of the effective set at `round`, ascending.
///
/// All base-class rows are kept. Drift-class rows are taken from a fixed
/// seeded permutation, so views at later rounds contain those of earlier
/// rounds. With `b` base rows and share `f`, `round(f*b/(1-f))` drift rows
/// are taken (all of them at `f = 1`), capped by what the pool holds.
pub fn drift_view_indices(
    shard: &LabeledDataset,
    schedule: &DriftSchedule,
    round: usize,
    seed: u64,
) -> Vec<usize> {
    let mut base = Vec::new();
    let mut drift = Vec::new();
    for (i, y) in shard.labels().iter().enumerate() {
        if schedule.base_classes.contains(y) {
            base.push(i);
        } else if schedule.drift_classes.contains(y) {
            drift.push(i);
        }
    }
    let f = schedule.fraction(round);
    let take = if f <= 0.0 {
        0
    } else if f >= 1.0 {
        drift.len()
    } else {
        ((f * base.len() as f64 / (1.0 - f)).round() as usize).min(drift.len())
    };
    drift.shuffle(&mut rng::derived_stream(&[seed, rng::tag::DRIFT_TRAIN]));
    let mut view = base;
    view.extend_from_slice(&drift[..take]);
    view.sort_unstable();
    view
}

pub fn drift_view(
    shard: &LabeledDataset,
    schedule: &DriftSchedule,
    round: usize,
    seed: u64,
) -> LabeledDataset {
    shard.subset(&drift_view_indices(shard, schedule, round, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Matrix;
    use proptest::prelude::*;

    fn digits(per_class: usize) -> LabeledDataset {
        let labels: Vec<usize> = (0..per_class * 10).map(|i| i % 10).collect();
        LabeledDataset::new(Matrix::zeros(labels.len(), 1), labels, 10).unwrap()
    }

    fn drift_share(view: &LabeledDataset) -> (usize, usize) {
        let odd = view.labels().iter().filter(|y| *y % 2 == 1).count();
        (odd, view.len())
    }

    #[test]
    fn before_start_only_base_classes() {
        let s = DriftSchedule::default();
        for r in 0..s.start_round {
            let v = drift_view(&digits(30), &s, r, 1);
            assert!(v.labels().iter().all(|y| y % 2 == 0));
            assert_eq!(v.len(), 150);
        }
    }

    #[test]
    fn full_ramp_hits_target_share() {
        let s = DriftSchedule::default();
        for r in [20, 25, 40] {
            let v = drift_view(&digits(30), &s, r, 3);
            let (odd, total) = drift_share(&v);
            // within one sample of rounding
            assert!(
                (odd as f64 - 0.5 * total as f64).abs() <= 1.0,
                "{odd}/{total}"
            );
        }
        let s = DriftSchedule {
            target_fraction: 0.3,
            ..DriftSchedule::default()
        };
        let v = drift_view(&digits(40), &s, 30, 3);
        let (odd, total) = drift_share(&v);
        assert!(
            (odd as f64 - 0.3 * total as f64).abs() <= 1.0,
            "{odd}/{total}"
        );
    }

    #[test]
    fn ramp_is_monotone_and_nested() {
        let s = DriftSchedule::default();
        let pool = digits(20);
        let mut prev_f = 0.0;
        let mut prev: Vec<usize> = Vec::new();
        for r in 0..=(s.start_round + 2 * s.ramp_rounds) {
            let f = s.fraction(r);
            assert!(f >= prev_f);
            prev_f = f;
            let v = drift_view_indices(&pool, &s, r, 9);
            assert!(prev.iter().all(|i| v.binary_search(i).is_ok()));
            prev = v;
        }
        assert_eq!(s.fraction(10), 0.05);
        assert_eq!(s.fraction(19), 0.5);
    }

    #[test]
    fn schedule_validation() {
        let overlap = DriftSchedule {
            drift_classes: [1, 2].into(),
            ..DriftSchedule::default()
        };
        assert!(overlap.validate().is_err());
        let bad = DriftSchedule {
            target_fraction: 1.5,
            ..DriftSchedule::default()
        };
        assert!(bad.validate().is_err());
        assert!(DriftSchedule::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn zero_target_is_base_filter(round in 0usize..50, seed in any::<u64>(), per_class in 1usize..20) {
            let s = DriftSchedule { target_fraction: 0.0, ..DriftSchedule::default() };
            let pool = digits(per_class);
            let v = drift_view(&pool, &s, round, seed);
            prop_assert_eq!(v.len(), 5 * per_class);
            prop_assert!(v.labels().iter().all(|y| y % 2 == 0));
        }
    }
}
