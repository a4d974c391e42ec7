use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::Matrix;
use crate::rng;

/// Gaussian blobs, one per class, clipped to `[0, 1]`.
///
/// Centers are drawn uniformly from `[0.1, 0.9]^dims`; rows are interleaved
/// by class so any prefix is close to balanced.
pub fn synth_blobs(
    seed: u64,
    samples_per_class: usize,
    dims: usize,
    num_classes: usize,
    spread: f64,
) -> Result<LabeledDataset> {
    if samples_per_class == 0 || dims == 0 || num_classes == 0 {
        return Err(Error::Domain(
            "synth_blobs needs positive sample, dimension and class counts".into(),
        ));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::Domain(format!(
            "spread must be positive, got {spread}"
        )));
    }
    let mut rng = rng::derived_stream(&[seed, rng::tag::SYNTH]);
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dims).map(|_| rng.gen_range(0.1..0.9)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Domain(e.to_string()))?;

    let n = samples_per_class * num_classes;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..samples_per_class {
        for (c, center) in centers.iter().enumerate() {
            data.extend(
                center
                    .iter()
                    .map(|&m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0)),
            );
            labels.push(c);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, dims, data)?, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_blobs(3, 25, 6, 4, 0.2).unwrap();
        assert_eq!(a, synth_blobs(3, 25, 6, 4, 0.2).unwrap());
        assert_ne!(a, synth_blobs(4, 25, 6, 4, 0.2).unwrap());
        assert_eq!(a.label_histogram(), vec![25; 4]);
        assert!(a
            .features()
            .as_slice()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(synth_blobs(0, 0, 2, 2, 0.1).is_err());
        assert!(synth_blobs(0, 2, 2, 2, 0.0).is_err());
    }
}
