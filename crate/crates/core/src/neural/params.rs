use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{HeadSpec, LstmLayerSpec, ModelSpec};

/// Parameters of one LSTM layer. Gate columns are ordered `[i | f | g | o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `input × 4·hidden`
    pub wx: Array2<f64>,
    /// `hidden × 4·hidden`
    pub wh: Array2<f64>,
    /// `4·hidden`
    pub bias: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(spec: &LstmLayerSpec) -> Self {
        let h4 = 4 * spec.hidden_size;
        Self {
            wx: Array2::zeros((spec.input_size, h4)),
            wh: Array2::zeros((spec.hidden_size, h4)),
            bias: Array1::zeros(h4),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `input × output`
    pub w: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseParams {
    pub fn zeros(spec: &HeadSpec) -> Self {
        Self {
            w: Array2::zeros((spec.input_size, spec.output_size)),
            bias: Array1::zeros(spec.output_size),
        }
    }
}

/// Every trainable array of an autoencoder. Also used for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub encoder: Vec<LstmParams>,
    pub decoder: Vec<LstmParams>,
    pub head: DenseParams,
}

/// A named view of one parameter array.
pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    /// Weight matrices are regularized, biases are not.
    pub regularized: bool,
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
    pub regularized: bool,
}

impl Weights {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            encoder: spec.encoder_layers.iter().map(LstmParams::zeros).collect(),
            decoder: spec.decoder_layers.iter().map(LstmParams::zeros).collect(),
            head: DenseParams::zeros(&spec.output_head),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut w = self.clone();
        for t in w.tensors_mut() {
            t.data.fill(0.0);
        }
        w
    }

    /// Xavier-uniform matrices, forget-gate biases 1, other biases 0.
    pub fn init(spec: &ModelSpec, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros(spec);
        let mut xavier = |m: &mut Array2<f64>| {
            let limit = (6.0 / (m.nrows() + m.ncols()) as f64).sqrt();
            m.mapv_inplace(|_| rng.random_range(-limit..limit));
        };
        for layer in w.encoder.iter_mut().chain(w.decoder.iter_mut()) {
            xavier(&mut layer.wx);
            xavier(&mut layer.wh);
            let h = layer.hidden_size();
            layer.bias.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
        }
        xavier(&mut w.head.w);
        w
    }

    fn layer_names(&self) -> impl Iterator<Item = String> + '_ {
        (0..self.encoder.len())
            .map(|i| format!("encoder.{i}"))
            .chain((0..self.decoder.len()).map(|i| format!("decoder.{i}")))
    }

    /// Arrays in a fixed order: per layer `wx, wh, bias`, then head `w, bias`.
    pub fn tensors(&self) -> Vec<Tensor<'_>> {
        let mut out = Vec::new();
        let layers = self.encoder.iter().chain(&self.decoder);
        for (name, l) in self.layer_names().zip(layers) {
            for (suffix, arr, reg) in [("wx", &l.wx, true), ("wh", &l.wh, true)] {
                out.push(Tensor {
                    name: format!("{name}.{suffix}"),
                    shape: arr.shape().to_vec(),
                    data: arr.as_slice().expect("standard layout"),
                    regularized: reg,
                });
            }
            out.push(Tensor {
                name: format!("{name}.bias"),
                shape: vec![l.bias.len()],
                data: l.bias.as_slice().expect("standard layout"),
                regularized: false,
            });
        }
        out.push(Tensor {
            name: "head.w".into(),
            shape: self.head.w.shape().to_vec(),
            data: self.head.w.as_slice().expect("standard layout"),
            regularized: true,
        });
        out.push(Tensor {
            name: "head.bias".into(),
            shape: vec![self.head.bias.len()],
            data: self.head.bias.as_slice().expect("standard layout"),
            regularized: false,
        });
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let names: Vec<String> = self.layer_names().collect();
        let mut out = Vec::new();
        let layers = self.encoder.iter_mut().chain(self.decoder.iter_mut());
        for (name, l) in names.into_iter().zip(layers) {
            let wx_shape = l.wx.shape().to_vec();
            let wh_shape = l.wh.shape().to_vec();
            let b_len = l.bias.len();
            out.push(TensorMut {
                name: format!("{name}.wx"),
                shape: wx_shape,
                data: l.wx.as_slice_mut().expect("standard layout"),
                regularized: true,
            });
            out.push(TensorMut {
                name: format!("{name}.wh"),
                shape: wh_shape,
                data: l.wh.as_slice_mut().expect("standard layout"),
                regularized: true,
            });
            out.push(TensorMut {
                name: format!("{name}.bias"),
                shape: vec![b_len],
                data: l.bias.as_slice_mut().expect("standard layout"),
                regularized: false,
            });
        }
        let w_shape = self.head.w.shape().to_vec();
        let b_len = self.head.bias.len();
        out.push(TensorMut {
            name: "head.w".into(),
            shape: w_shape,
            data: self.head.w.as_slice_mut().expect("standard layout"),
            regularized: true,
        });
        out.push(TensorMut {
            name: "head.bias".into(),
            shape: vec![b_len],
            data: self.head.bias.as_slice_mut().expect("standard layout"),
            regularized: false,
        });
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Shapes must match exactly, tensor by tensor.
    pub fn same_shape(&self, other: &Weights) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape == y.shape)
    }
}

/// Flat on-disk form of one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}
