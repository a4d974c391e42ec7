use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionStrategy {
    /// Node `i` only receives rows whose label is in `allowed[i]`. Rows whose
    /// label several nodes accept are dealt round-robin between them.
    LabelFilter(Vec<BTreeSet<usize>>),
    /// Node `i` receives `floor(weights[i] * n)` rows; the last node also
    /// takes the remainder.
    QuantitySkew(Vec<f64>),
    /// Near-equal shards; the first `n % nodes` shards get one extra row.
    UniformShards,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub strategy: PartitionStrategy,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if num_nodes == 0 {
            return Err(Error::config("num_nodes", "must be at least 1"));
        }
        match &self.strategy {
            PartitionStrategy::LabelFilter(sets) => {
                if sets.len() != num_nodes {
                    return Err(Error::config(
                        "partition.labels",
                        format!("{} label sets for {num_nodes} nodes", sets.len()),
                    ));
                }
                if let Some(i) = sets.iter().position(BTreeSet::is_empty) {
                    return Err(Error::config(
                        "partition.labels",
                        format!("label set for node {i} is empty"),
                    ));
                }
            }
            PartitionStrategy::QuantitySkew(w) => {
                if w.len() != num_nodes {
                    return Err(Error::config(
                        "partition.weights",
                        format!("{} weights for {num_nodes} nodes", w.len()),
                    ));
                }
                if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(Error::config(
                        "partition.weights",
                        "weights must be non-negative",
                    ));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config(
                        "partition.weights",
                        format!("weights sum to {total}, expected 1"),
                    ));
                }
            }
            PartitionStrategy::UniformShards => {}
        }
        Ok(())
    }
}

/// Source-row indices of each node's shard, ascending within a shard.
pub fn partition_indices(
    data: &LabeledDataset,
    spec: &PartitionSpec,
    num_nodes: usize,
) -> Result<Vec<Vec<usize>>> {
    spec.validate(num_nodes)?;
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derived_stream(&[spec.seed, rng::tag::PARTITION]));

    let mut shards: Vec<Vec<usize>> = match &spec.strategy {
        PartitionStrategy::UniformShards => {
            let (base, extra) = (n / num_nodes, n % num_nodes);
            let mut rest = order.as_slice();
            (0..num_nodes)
                .map(|i| {
                    let (head, tail) = rest.split_at(base + usize::from(i < extra));
                    rest = tail;
                    head.to_vec()
                })
                .collect()
        }
        PartitionStrategy::QuantitySkew(weights) => {
            let mut rest = order.as_slice();
            let mut out = Vec::with_capacity(num_nodes);
            for (i, w) in weights.iter().enumerate() {
                let take = if i + 1 == num_nodes {
                    rest.len()
                } else {
                    ((w * n as f64).floor() as usize).min(rest.len())
                };
                let (head, tail) = rest.split_at(take);
                out.push(head.to_vec());
                rest = tail;
            }
            out
        }
        PartitionStrategy::LabelFilter(sets) => {
            let takers: Vec<Vec<usize>> = (0..data.num_classes())
                .map(|y| (0..num_nodes).filter(|&i| sets[i].contains(&y)).collect())
                .collect();
            let mut next = vec![0usize; data.num_classes()];
            let mut out = vec![Vec::new(); num_nodes];
            for &row in &order {
                let y = data.labels()[row];
                let eligible = &takers[y];
                if eligible.is_empty() {
                    continue;
                }
                out[eligible[next[y] % eligible.len()]].push(row);
                next[y] += 1;
            }
            if let Some(node) = out.iter().position(Vec::is_empty) {
                return Err(Error::EmptyShard { node });
            }
            out
        }
    };
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

pub fn partition(
    data: &LabeledDataset,
    spec: &PartitionSpec,
    num_nodes: usize,
) -> Result<Vec<LabeledDataset>> {
    Ok(partition_indices(data, spec, num_nodes)?
        .iter()
        .map(|idx| data.subset(idx))
        .collect())
}
