//! A small fully connected network with hand-written backprop.
//!
//! Parameters live in a [`ParamTree`] as `layer{k}/kernel` (`in × out`) and
//! `layer{k}/bias` (`out`). Hidden layers use ReLU, the output layer is
//! linear, and the loss is softmax cross-entropy averaged over the batch.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::RngKey;
use crate::tensor::Tensor;
use crate::tree::ParamTree;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
}

pub fn kernel_path(layer: usize) -> String {
    format!("layer{layer}/kernel")
}

pub fn bias_path(layer: usize) -> String {
    format!("layer{layer}/bias")
}

impl MlpModel {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer dims must be positive, got {layer_dims:?}"
            )));
        }
        Ok(Self { layer_dims })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    /// Glorot-uniform kernels and zero biases.
    pub fn init(&self, key: RngKey) -> ParamTree {
        let mut params = ParamTree::new();
        for (k, w) in self.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let path = kernel_path(k);
            let data = key
                .derive(&path)
                .uniforms(fan_in * fan_out)
                .into_iter()
                .map(|u| (2.0 * u - 1.0) * limit)
                .collect();
            params = params
                .with(&path, Tensor::new(vec![fan_in, fan_out], data).expect("sized"))
                .with(&bias_path(k), Tensor::zeros(&[fan_out]));
        }
        params
    }

    fn layer<'a>(&self, params: &'a ParamTree, k: usize) -> Result<(ArrayView2<'a, f64>, &'a [f64])> {
        let (fan_in, fan_out) = (self.layer_dims[k], self.layer_dims[k + 1]);
        let lookup = |path: String, shape: &[usize]| -> Result<&'a Tensor> {
            let t = params
                .get(&path)
                .ok_or_else(|| Error::Shape(format!("missing parameter `{path}`")))?;
            if t.shape() != shape {
                return Err(Error::Shape(format!(
                    "`{path}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let w = lookup(kernel_path(k), &[fan_in, fan_out])?;
        let b = lookup(bias_path(k), &[fan_out])?;
        let w = ArrayView2::from_shape((fan_in, fan_out), w.data()).expect("checked shape");
        Ok((w, b.data()))
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "inputs have {} features, model expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer; the last entry is the logits.
    fn activations(&self, params: &ParamTree, inputs: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_inputs(&inputs)?;
        let mut zs: Vec<Array2<f64>> = Vec::with_capacity(self.n_layers());
        for k in 0..self.n_layers() {
            let (w, b) = self.layer(params, k)?;
            let mut z = match zs.last() {
                None => inputs.dot(&w),
                Some(prev) => prev.mapv(relu).dot(&w),
            };
            z += &ArrayView2::from_shape((1, b.len()), b).expect("row");
            zs.push(z);
        }
        Ok(zs)
    }

    pub fn forward(&self, params: &ParamTree, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.activations(params, inputs)?.pop().expect("at least one layer"))
    }

    /// Mean softmax cross-entropy over the batch and its gradient with
    /// respect to every parameter.
    pub fn loss_and_grads(
        &self,
        params: &ParamTree,
        inputs: ArrayView2<f64>,
        labels: &[usize],
    ) -> Result<(f64, ParamTree)> {
        if labels.len() != inputs.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} inputs",
                labels.len(),
                inputs.nrows()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.output_dim()) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {} classes",
                self.output_dim()
            )));
        }
        let zs = self.activations(params, inputs)?;
        let n = labels.len() as f64;
        let logits = zs.last().expect("at least one layer");
        let (loss, mut dz) = softmax_xent(logits, labels);
        dz.mapv_inplace(|g| g / n);

        let mut grads = ParamTree::new();
        for k in (0..self.n_layers()).rev() {
            let h = if k == 0 {
                inputs.to_owned()
            } else {
                zs[k - 1].mapv(relu)
            };
            let dw = h.t().dot(&dz);
            let db: Array1<f64> = dz.sum_axis(Axis(0));
            grads.insert(kernel_path(k), to_tensor(&dw))?;
            grads.insert(bias_path(k), Tensor::from_vec(db.to_vec()))?;
            if k > 0 {
                let (w, _) = self.layer(params, k)?;
                let mut dh = dz.dot(&w.t());
                dh.zip_mut_with(&zs[k - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                dz = dh;
            }
        }
        Ok((loss, grads))
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn to_tensor(a: &Array2<f64>) -> Tensor {
    Tensor::new(vec![a.nrows(), a.ncols()], a.iter().copied().collect()).expect("sized")
}

/// Mean loss and the unnormalized gradient `softmax - onehot` per row.
fn softmax_xent(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let mut probs = logits.clone();
    let mut total = 0.0;
    for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        total += sum.ln() - (row[y].ln());
        row.mapv_inplace(|e| e / sum);
        row[y] -= 1.0;
    }
    (total / labels.len() as f64, probs)
}

/// Mean softmax cross-entropy of `logits` against `labels`.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    softmax_xent(logits, labels).0
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
            best.0 == y
        })
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kernel_shapes_chain() {
        let model = MlpModel::new(vec![2, 5, 4, 3]).unwrap();
        let p = model.init(RngKey::new(0));
        assert_eq!(p.get("layer0/kernel").unwrap().shape(), &[2, 5]);
        assert_eq!(p.get("layer1/kernel").unwrap().shape(), &[5, 4]);
        assert_eq!(p.get("layer2/kernel").unwrap().shape(), &[4, 3]);
        assert_eq!(p.get("layer2/bias").unwrap().shape(), &[3]);
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let model = MlpModel::new(vec![2, 3]).unwrap();
        let params = model.init(RngKey::new(1)).zeros_like();
        let x = array![[1.0, -2.0], [0.5, 0.5]];
        let (loss, _) = model.loss_and_grads(&params, x.view(), &[0, 2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn input_dim_mismatch_is_shape_error() {
        let model = MlpModel::new(vec![2, 3]).unwrap();
        let params = model.init(RngKey::new(1));
        let x = array![[1.0, 2.0, 3.0]];
        assert!(matches!(model.forward(&params, x.view()), Err(Error::Shape(_))));
        assert!(matches!(
            model.loss_and_grads(&params, array![[1.0, 2.0]].view(), &[5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_net_output_bias_gradient_tracks_class_balance() {
        let model = MlpModel::new(vec![2, 4, 3]).unwrap();
        let params = model.init(RngKey::new(2)).zeros_like();
        let x = array![
            [1.0, 0.0],
            [-1.0, 0.0],
            [0.0, 1.0],
            [0.0, -1.0],
            [1.0, 1.0],
            [-1.0, -1.0]
        ];
        let (_, g) = model.loss_and_grads(&params, x.view(), &[0, 1, 2, 0, 1, 2]).unwrap();
        assert!(g.get("layer1/bias").unwrap().data().iter().all(|v| v.abs() < 1e-15));

        let (_, g) = model.loss_and_grads(&params, x.view(), &[0, 0, 0, 0, 1, 2]).unwrap();
        let db = g.get("layer1/bias").unwrap().data();
        assert!((db[0] - (1.0 / 3.0 - 4.0 / 6.0)).abs() < 1e-15);
        assert!((db[1] - (1.0 / 3.0 - 1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn accuracy_counts_argmax() {
        let logits = array![[0.1, 0.9], [2.0, 1.0], [0.5, 0.5]];
        assert!((accuracy(&logits, &[1, 1, 0]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
