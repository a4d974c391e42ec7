use rand::Rng;

use super::matrix::Matrix;
use super::params::{LayerShape, Layout, ParamVector};
use crate::error::{Error, Result};
use crate::rng;

/// Layer widths of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelDims {
    /// 784 -> 64 -> 10, used for MNIST digits.
    pub const MNIST: ModelDims = ModelDims {
        input: 784,
        hidden: 64,
        classes: 10,
    };

    pub fn new(input: usize, hidden: usize, classes: usize) -> Result<Self> {
        let dims = ModelDims {
            input,
            hidden,
            classes,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 {
            return Err(Error::Shape(format!(
                "input and hidden widths must be positive, got {}x{}",
                self.input, self.hidden
            )));
        }
        if self.classes < 2 {
            return Err(Error::Shape(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(vec![
            LayerShape {
                rows: self.input as u32,
                cols: self.hidden as u32,
            },
            LayerShape {
                rows: self.hidden as u32,
                cols: self.classes as u32,
            },
        ])
    }
}

/// One-hidden-layer perceptron: rectifier hidden layer, softmax output.
///
/// Weights are stored `fan_in x fan_out`, row-major, each block followed by
/// its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: ModelDims,
    params: ParamVector,
}

/// Gradient of the mean batch loss, laid out like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(ParamVector);

impl Gradients {
    pub fn from_params(p: ParamVector) -> Self {
        Gradients(p)
    }

    pub fn as_params(&self) -> &ParamVector {
        &self.0
    }

    pub fn into_params(self) -> ParamVector {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.values().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl MlpModel {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = rng::derived_stream(&[seed, rng::tag::INIT]);
        let layout = dims.layout();
        let mut values = Vec::with_capacity(layout.param_count());
        for l in layout.layers() {
            let bound = (6.0 / (l.rows as f64 + l.cols as f64)).sqrt();
            for _ in 0..(l.rows as usize * l.cols as usize) {
                values.push(rng.gen_range(-bound..=bound));
            }
            values.extend(std::iter::repeat_n(0.0, l.cols as usize));
        }
        Ok(MlpModel {
            dims,
            params: ParamVector::new(layout, values)?,
        })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(MlpModel {
            dims,
            params: ParamVector::zeros(dims.layout()),
        })
    }

    pub fn from_params(dims: ModelDims, params: ParamVector) -> Result<Self> {
        dims.validate()?;
        if params.layout() != &dims.layout() {
            return Err(Error::Shape(format!(
                "parameters have layout {}, model needs {}",
                params.layout(),
                dims.layout()
            )));
        }
        Ok(MlpModel { dims, params })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub(crate) fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.check_layout(&params, "set_params")?;
        self.params = params;
        Ok(())
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.dims.input {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.cols(),
                self.dims.input
            )));
        }
        if features.rows() == 0 {
            return Err(Error::EmptyData(
                "forward pass needs at least one row".into(),
            ));
        }
        if !features.is_finite() {
            return Err(Error::Domain("features contain non-finite values".into()));
        }
        Ok(())
    }

    /// Hidden activations (post-rectifier) and output probabilities.
    fn activations(&self, features: &Matrix) -> (Matrix, Matrix) {
        let n = features.rows();
        let ModelDims {
            hidden, classes, ..
        } = self.dims;
        let (w1, b1) = self.params.layer(0);
        let (w2, b2) = self.params.layer(1);

        let mut h = Matrix::zeros(n, hidden);
        for s in 0..n {
            let out = h.row_mut(s);
            out.copy_from_slice(b1);
            for (i, &x) in features.row(s).iter().enumerate() {
                // image rows are mostly zero; adding 0*w leaves the sum unchanged
                if x == 0.0 {
                    continue;
                }
                let w = &w1[i * hidden..(i + 1) * hidden];
                for (o, &wv) in out.iter_mut().zip(w) {
                    *o += x * wv;
                }
            }
            for o in out.iter_mut() {
                *o = o.max(0.0);
            }
        }

        let mut logits = Matrix::zeros(n, classes);
        for s in 0..n {
            let out = logits.row_mut(s);
            out.copy_from_slice(b2);
            for (j, &hv) in h.row(s).iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                let w = &w2[j * classes..(j + 1) * classes];
                for (o, &wv) in out.iter_mut().zip(w) {
                    *o += hv * wv;
                }
            }
        }
        (h, softmax_rows(&logits))
    }
}

/// Row-wise softmax with a max shift before exponentiation.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for s in 0..out.rows() {
        let row = out.row_mut(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub fn forward(model: &MlpModel, features: &Matrix) -> Result<Matrix> {
    model.check_features(features)?;
    Ok(model.activations(features).1)
}

/// Mean of `-ln p[true]` over rows, probabilities clamped below at 1e-12.
pub fn cross_entropy(probabilities: &Matrix, labels: &[usize]) -> Result<f64> {
    if probabilities.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows but {} labels",
            probabilities.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyData(
            "cross_entropy needs at least one row".into(),
        ));
    }
    let classes = probabilities.cols();
    let mut total = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Domain(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        total -= probabilities.get(s, y).max(1e-12).ln();
    }
    Ok(total / labels.len() as f64)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} feature rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Domain(format!(
            "label {y} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Analytic gradient of the mean cross-entropy over the batch.
pub fn backward(model: &MlpModel, features: &Matrix, labels: &[usize]) -> Result<Gradients> {
    model.check_features(features)?;
    let ModelDims {
        hidden, classes, ..
    } = model.dims;
    check_labels(labels, features.rows(), classes)?;
    let n = features.rows();
    let inv_n = 1.0 / n as f64;
    let (h, mut dlogits) = model.activations(features);
    for (s, &y) in labels.iter().enumerate() {
        let row = dlogits.row_mut(s);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }

    let (w2, _) = model.params.layer(1);
    let mut grads = ParamVector::zeros(model.params.layout().clone());

    let mut dz = Matrix::zeros(n, hidden);
    {
        let (gw2, gb2) = grads.layer_mut(1);
        for s in 0..n {
            let dl = dlogits.row(s);
            for (gb, &d) in gb2.iter_mut().zip(dl) {
                *gb += d;
            }
            let hs = h.row(s);
            let dzs = dz.row_mut(s);
            for j in 0..hidden {
                let wrow = &w2[j * classes..(j + 1) * classes];
                if hs[j] > 0.0 {
                    let g = &mut gw2[j * classes..(j + 1) * classes];
                    for (gv, &d) in g.iter_mut().zip(dl) {
                        *gv += hs[j] * d;
                    }
                    dzs[j] = wrow.iter().zip(dl).map(|(w, d)| w * d).sum();
                }
            }
        }
    }
    {
        let (gw1, gb1) = grads.layer_mut(0);
        for s in 0..n {
            let dzs = dz.row(s);
            for (gb, &d) in gb1.iter_mut().zip(dzs) {
                *gb += d;
            }
            for (i, &x) in features.row(s).iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let g = &mut gw1[i * hidden..(i + 1) * hidden];
                for (gv, &d) in g.iter_mut().zip(dzs) {
                    *gv += x * d;
                }
            }
        }
    }
    if grads.values().iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain("gradient overflowed".into()));
    }
    Ok(Gradients(grads))
}
