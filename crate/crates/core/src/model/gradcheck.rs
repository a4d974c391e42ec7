//! Central finite-difference check of [`backward`](super::backward).
//!
//! The numerical side only calls `forward` and `cross_entropy`, so it does not
//! share code with the analytic gradient.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{backward, cross_entropy, forward, Matrix, MlpModel, ModelDims, ParamVector};
use crate::error::Result;
use crate::rng;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a| + |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn loss_at(model: &MlpModel, params: Vec<f64>, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let p = ParamVector::new(model.params().layout().clone(), params)?;
    let m = MlpModel::from_params(model.dims(), p)?;
    cross_entropy(&forward(&m, x)?, labels)
}

/// Central differences `(L(θ+h) - L(θ-h)) / 2h` for every parameter.
pub fn numeric_gradient(
    model: &MlpModel,
    x: &Matrix,
    labels: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    let base = model.params().values().to_vec();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        out.push(
            (loss_at(model, plus, x, labels)? - loss_at(model, minus, x, labels)?) / (2.0 * h),
        );
    }
    Ok(out)
}

/// Largest relative error between analytic and numeric gradients.
pub fn max_relative_error(model: &MlpModel, x: &Matrix, labels: &[usize], h: f64) -> Result<f64> {
    let analytic = backward(model, x, labels)?;
    let numeric = numeric_gradient(model, x, labels, h)?;
    Ok(analytic
        .as_params()
        .values()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub model: MlpModel,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// Random model with dims up to `(6, 5, 4)` and a batch of 1..=8 rows.
pub fn random_instance(seed: u64) -> Result<Instance> {
    let mut rng = rng::stream(seed);
    let dims = ModelDims::new(
        rng.gen_range(1..=6),
        rng.gen_range(1..=5),
        rng.gen_range(2..=4),
    )?;
    let layout = dims.layout();
    let values = (0..layout.param_count())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let model = MlpModel::from_params(dims, ParamVector::new(layout, values)?)?;
    let n = rng.gen_range(1..=8);
    let data: Vec<f64> = (0..n * dims.input)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let features = Matrix::from_vec(n, dims.input, data)?;
    let labels = (0..n).map(|_| rng.gen_range(0..dims.classes)).collect();
    Ok(Instance {
        model,
        features,
        labels,
    })
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub instances: usize,
    pub worst_error: f64,
    pub worst_seed: u64,
    pub failures: usize,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn run_suite(count: usize, seed: u64, h: f64, tolerance: f64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        instances: count,
        worst_error: 0.0,
        worst_seed: seed,
        failures: 0,
        tolerance,
    };
    for k in 0..count as u64 {
        let s = rng::derive_seed(&[seed, k]);
        let inst = random_instance(s)?;
        let err = max_relative_error(&inst.model, &inst.features, &inst.labels, h)?;
        if err >= tolerance {
            report.failures += 1;
        }
        if err > report.worst_error {
            report.worst_error = err;
            report.worst_seed = s;
        }
    }
    Ok(report)
}
