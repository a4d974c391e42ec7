use std::fmt;

use crate::error::{Error, Result};

/// One dense layer: a `rows x cols` weight block followed by `cols` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerShape {
    pub rows: u32,
    pub cols: u32,
}

impl LayerShape {
    pub fn param_count(self) -> usize {
        self.rows as usize * self.cols as usize + self.cols as usize
    }
}

/// Ordered layer descriptors fixing how parameters are flattened.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Layout(Vec<LayerShape>);

impl Layout {
    pub fn new(layers: Vec<LayerShape>) -> Self {
        Layout(layers)
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.0
    }

    pub fn param_count(&self) -> usize {
        self.0.iter().map(|l| l.param_count()).sum()
    }

    /// Size in bytes of the serialized layout header.
    pub fn header_len(&self) -> usize {
        4 + 8 * self.0.len()
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self
            .0
            .iter()
            .map(|l| format!("{}x{}", l.rows, l.cols))
            .collect();
        write!(f, "[{}]", dims.join(", "))
    }
}

/// Flat parameter vector with an explicit layout. All elements are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Layout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::Shape(format!(
                "layout {layout} needs {} parameters, got {}",
                layout.param_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "parameter {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(ParamVector { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.param_count();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight block and bias slice of layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let (start, shape) = self.layer_offset(i);
        let w = shape.rows as usize * shape.cols as usize;
        let b = shape.cols as usize;
        (
            &self.values[start..start + w],
            &self.values[start + w..start + w + b],
        )
    }

    pub(crate) fn layer_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let (start, shape) = self.layer_offset(i);
        let w = shape.rows as usize * shape.cols as usize;
        let b = shape.cols as usize;
        let (weights, rest) = self.values[start..start + w + b].split_at_mut(w);
        (weights, rest)
    }

    fn layer_offset(&self, i: usize) -> (usize, LayerShape) {
        let layers = self.layout.layers();
        let start = layers[..i].iter().map(|l| l.param_count()).sum();
        (start, layers[i])
    }

    fn zip_with(
        &self,
        other: &ParamVector,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        self.check_layout(other, what)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        ParamVector::new(self.layout.clone(), values)
    }

    pub(crate) fn check_layout(&self, other: &ParamVector, what: &str) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Shape(format!(
                "{what}: layouts {} and {} differ",
                self.layout, other.layout
            )));
        }
        Ok(())
    }

    /// Bytes produced by [`ParamVector::to_bytes`].
    pub fn encoded_len(&self) -> usize {
        self.layout.header_len() + 8 * self.values.len()
    }

    /// Layer count and per-layer rows/cols as little-endian `u32`, then the
    /// values as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&(self.layout.0.len() as u32).to_le_bytes());
        for l in &self.layout.0 {
            out.extend_from_slice(&l.rows.to_le_bytes());
            out.extend_from_slice(&l.cols.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let read_u32 = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or(Error::Length {
                    expected: at + 4,
                    found: bytes.len(),
                })
        };
        let count = read_u32(0)? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for i in 0..count {
            let rows = read_u32(4 + 8 * i)?;
            let cols = read_u32(8 + 8 * i)?;
            layers.push(LayerShape { rows, cols });
        }
        let layout = Layout(layers);
        let header = layout.header_len();
        let expected = header + 8 * layout.param_count();
        if bytes.len() != expected {
            return Err(Error::Length {
                expected,
                found: bytes.len(),
            });
        }
        let values = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ParamVector::new(layout, values)
    }
}

/// `params - learning_rate * grads`, element-wise.
pub fn sgd_step(
    params: &ParamVector,
    grads: &super::Gradients,
    learning_rate: f64,
) -> Result<ParamVector> {
    params.zip_with(grads.as_params(), "sgd_step", |p, g| p - learning_rate * g)
}

/// The discrepancy a node reports: `local - global`.
pub fn model_delta(local: &ParamVector, global: &ParamVector) -> Result<ParamVector> {
    local.zip_with(global, "model_delta", |l, g| l - g)
}

/// `base + delta`, element-wise.
pub fn apply_delta(base: &ParamVector, delta: &ParamVector) -> Result<ParamVector> {
    base.zip_with(delta, "apply_delta", |b, d| b + d)
}
