//! Fully connected feedforward networks with a linear value head.
//!
//! The representation is the activation of the last hidden layer. Training
//! code can multiply it by a mask (dropout, top-k, winner-take-all) and the
//! backward pass routes gradients through the same mask.

mod checkpoint;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use optim::{Optimizer, OptimizerKind};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{a_mul_b, a_mul_bt, at_mul_b, dot, Matrix};
use crate::regularizers::ksparse_mask;
use crate::seed::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    /// Level above which a unit counts as active. Sigmoid units never reach
    /// exactly zero, so they use a small positive threshold.
    pub fn active_threshold(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Sigmoid => 0.01,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Sigmoid),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

/// Hidden layers plus the scalar value head used during pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    /// Linear value head on the representation, no bias.
    pub value_head: Vec<f64>,
    /// When set, inference keeps only the top-k representation units.
    pub topk: Option<usize>,
}

/// He initialization: weights `N(0, 2 / fan_in)`, zero biases.
///
/// `layer_sizes` lists the input width followed by every hidden width; the
/// value head is sized to the last entry and initialized the same way.
pub fn he_init(layer_sizes: &[usize], activation: Activation, rng: &mut SimRng) -> Result<MlpParams> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::invalid(
            "layer sizes need an input and at least one positive hidden width",
        ));
    }
    let mut gaussian = |fan_in: usize, n: usize| -> Vec<f64> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        (0..n).map(|_| normal.sample(rng)).collect()
    };
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, out) = (w[0], w[1]);
            DenseLayer {
                weights: Matrix::from_vec(out, fan_in, gaussian(fan_in, out * fan_in))
                    .expect("sized above"),
                bias: vec![0.0; out],
                activation,
            }
        })
        .collect();
    let width = *layer_sizes.last().unwrap();
    let value_head = gaussian(width, width);
    Ok(MlpParams {
        layers,
        value_head,
        topk: None,
    })
}

/// Activations recorded by a forward pass, consumed by [`MlpParams::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    mask: Option<Matrix>,
    masked: Option<Matrix>,
}

impl ForwardCache {
    /// Final hidden layer output after any mask.
    pub fn representation(&self) -> &Matrix {
        self.masked
            .as_ref()
            .unwrap_or_else(|| self.post.last().expect("at least one layer"))
    }

    /// Final hidden layer output before masking.
    pub fn unmasked(&self) -> &Matrix {
        self.post.last().expect("at least one layer")
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn mask(&self) -> Option<&Matrix> {
        self.mask.as_ref()
    }

    /// Multiplies the representation by `mask`, composing with any mask
    /// already applied.
    pub fn apply_mask(&mut self, mask: Matrix) -> Result<()> {
        let combined = match self.mask.take() {
            Some(mut old) => {
                old.hadamard_inplace(&mask)?;
                old
            }
            None => mask,
        };
        let mut rep = self.unmasked().clone();
        rep.hadamard_inplace(&combined)?;
        self.mask = Some(combined);
        self.masked = Some(rep);
        Ok(())
    }
}

/// Parameter gradients, shaped like [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub value_head: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.outputs(), l.inputs()),
                    bias: vec![0.0; l.outputs()],
                })
                .collect(),
            value_head: vec![0.0; params.value_head.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("Gradients::add_assign", self.layers.len(), other.layers.len()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_inplace(&b.weights)?;
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        self.value_head
            .iter_mut()
            .zip(&other.value_head)
            .for_each(|(x, y)| *x += y);
        Ok(())
    }

    /// Flat views in the same order as [`MlpParams::slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
        }
        out.push(&self.value_head);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Width of the representation layer.
    pub fn width(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    /// Activation of the representation layer.
    pub fn activation(&self) -> Activation {
        self.layers.last().expect("at least one layer").activation
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::outputs))
            .collect()
    }

    /// Flat mutable views: per layer weights then bias, then the value head.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out.push(&mut self.value_head);
        out
    }

    pub fn slice_sizes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .layers
            .iter()
            .flat_map(|l| [l.weights.as_slice().len(), l.bias.len()])
            .collect();
        out.push(self.value_head.len());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
            && self.value_head.iter().all(|v| v.is_finite())
    }

    /// Checks that layer dimensions chain and the value head matches.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for w in self.layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::shape("MlpParams layers", w[0].outputs(), w[1].inputs()));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::shape("MlpParams bias", l.outputs(), l.bias.len()));
            }
        }
        if self.value_head.len() != self.width() {
            return Err(Error::shape("MlpParams value head", self.width(), self.value_head.len()));
        }
        if let Some(k) = self.topk {
            if k == 0 || k > self.width() {
                return Err(Error::invalid(format!("top-k {k} outside 1..={}", self.width())));
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    /// Forward pass over a batch (one observation per row). The optional
    /// `mask` multiplies the final hidden activations.
    pub fn forward(&self, batch: &Matrix, mask: Option<&Matrix>) -> Result<ForwardCache> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape("MlpParams::forward input", self.input_dim(), batch.cols()));
        }
        if !batch.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post.last().unwrap_or(batch);
            let mut z = a_mul_bt(x, &layer.weights)?;
            z.add_row_vector(&layer.bias);
            let mut y = z.clone();
            let act = layer.activation;
            y.map_inplace(|v| act.apply(v));
            pre.push(z);
            post.push(y);
        }
        let mut cache = ForwardCache {
            input: batch.clone(),
            pre,
            post,
            mask: None,
            masked: None,
        };
        if let Some(m) = mask {
            cache.apply_mask(m.clone())?;
        }
        Ok(cache)
    }

    /// Reverse-mode gradients of a scalar loss given its gradient with
    /// respect to the (masked) representation. The value head entry of the
    /// result is zero; callers add their own head gradient.
    pub fn backward(&self, cache: &ForwardCache, rep_grad: &Matrix) -> Result<Gradients> {
        if cache.pre.len() != self.layers.len() {
            return Err(Error::shape("MlpParams::backward cache depth", self.layers.len(), cache.pre.len()));
        }
        if rep_grad.shape() != cache.unmasked().shape() {
            return Err(Error::shape(
                "MlpParams::backward upstream gradient",
                format!("{:?}", cache.unmasked().shape()),
                format!("{:?}", rep_grad.shape()),
            ));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = rep_grad.clone();
        if let Some(mask) = &cache.mask {
            upstream.hadamard_inplace(mask)?;
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let (z, y) = (&cache.pre[l], &cache.post[l]);
            let mut delta = upstream;
            for ((d, &zv), &yv) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(y.as_slice())
            {
                *d *= act.derivative(zv, yv);
            }
            let input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            grads.layers[l].weights = at_mul_b(&delta, input)?;
            grads.layers[l].bias = delta.column_sums();
            if l == 0 {
                break;
            }
            upstream = a_mul_b(&delta, &layer.weights)?;
        }
        Ok(grads)
    }

    /// Inference representation for a batch, with top-k applied if set.
    pub fn represent_batch(&self, batch: &Matrix) -> Result<Matrix> {
        let cache = self.forward(batch, None)?;
        let mut rep = cache.unmasked().clone();
        if let Some(k) = self.topk {
            for r in 0..rep.rows() {
                let kept = ksparse_mask(rep.row(r), k)?;
                rep.row_mut(r).copy_from_slice(&kept);
            }
        }
        Ok(rep)
    }

    pub fn represent(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let batch = Matrix::from_vec(1, obs.len(), obs.to_vec())?;
        Ok(self.represent_batch(&batch)?.into_vec())
    }

    /// Value-head estimate `phi(s)^T w_v`.
    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(dot(&self.represent(obs)?, &self.value_head))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn tiny_net(seed: u64, act: Activation) -> MlpParams {
        let mut p = he_init(&[3, 4, 5], act, &mut rng_from_seed(seed)).unwrap();
        // non-zero biases so the bias paths are exercised
        for l in &mut p.layers {
            for (i, b) in l.bias.iter_mut().enumerate() {
                *b = 0.05 * (i as f64 - 1.0);
            }
        }
        p
    }

    fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &p.layers {
            let mut out = vec![0.0; l.outputs()];
            for (i, o) in out.iter_mut().enumerate() {
                let mut s = l.bias[i];
                for (j, hv) in h.iter().enumerate() {
                    s += l.weights.get(i, j) * hv;
                }
                *o = l.activation.apply(s);
            }
            h = out;
        }
        h
    }

    fn batch() -> Matrix {
        Matrix::from_rows(&[[0.1, 0.7, -0.3], [0.9, -0.2, 0.4], [0.0, 0.5, 0.5]]).unwrap()
    }

    #[test]
    fn he_init_statistics() {
        let p = he_init(&[32, 10_000], Activation::Relu, &mut rng_from_seed(3)).unwrap();
        let w = p.layers[0].weights.as_slice();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.25).abs() / 0.25 < 0.05, "sd = {sd}");
        assert!(p.layers[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn he_init_is_deterministic() {
        let a = he_init(&[2, 32, 256], Activation::Relu, &mut rng_from_seed(9)).unwrap();
        let b = he_init(&[2, 32, 256], Activation::Relu, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.layer_sizes(), vec![2, 32, 256]);
        assert!(he_init(&[2], Activation::Relu, &mut rng_from_seed(0)).is_err());
        assert!(he_init(&[2, 0], Activation::Relu, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn zero_network_gives_zero_representation() {
        let mut p = tiny_net(0, Activation::Relu);
        for l in &mut p.layers {
            l.weights.map_inplace(|_| 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let c = p.forward(&batch(), None).unwrap();
        assert!(c.representation().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let p = MlpParams {
            layers: vec![DenseLayer {
                weights: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
                bias: vec![0.0],
                activation: Activation::Sigmoid,
            }],
            value_head: vec![0.0],
            topk: None,
        };
        let c = p.forward(&Matrix::zeros(1, 1), None).unwrap();
        assert_eq!(c.representation().get(0, 0), 0.5);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        for act in [Activation::Relu, Activation::Sigmoid] {
            let p = tiny_net(1, act);
            let x = batch();
            let c = p.forward(&x, None).unwrap();
            for (r, row) in x.iter_rows().enumerate() {
                let expect = naive_forward(&p, row);
                for (a, b) in c.representation().row(r).iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = tiny_net(1, Activation::Relu);
        assert!(p.forward(&Matrix::zeros(2, 2), None).is_err());
        let mut x = batch();
        x.set(0, 0, f64::NAN);
        assert!(matches!(p.forward(&x, None), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let p = tiny_net(2, Activation::Relu);
        let c = p.forward(&batch(), None).unwrap();
        let g = p.backward(&c, &Matrix::zeros(3, 5)).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(p.backward(&c, &Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn scalar_squared_loss_gradient() {
        // y_hat = w x + b with identity-like ReLU (positive region)
        let p = MlpParams {
            layers: vec![DenseLayer {
                weights: Matrix::from_vec(1, 1, vec![0.8]).unwrap(),
                bias: vec![0.1],
                activation: Activation::Relu,
            }],
            value_head: vec![0.0],
            topk: None,
        };
        let (x, y) = (1.5, 2.0);
        let c = p.forward(&Matrix::from_vec(1, 1, vec![x]).unwrap(), None).unwrap();
        let y_hat = c.representation().get(0, 0);
        let upstream = Matrix::from_vec(1, 1, vec![2.0 * (y_hat - y)]).unwrap();
        let g = p.backward(&c, &upstream).unwrap();
        assert!((g.layers[0].weights.get(0, 0) - 2.0 * (y_hat - y) * x).abs() < 1e-12);
        assert!((g.layers[0].bias[0] - 2.0 * (y_hat - y)).abs() < 1e-12);
    }

    /// Loss L = sum_ij c_ij * rep_ij with fixed random c; gradient checked
    /// against central differences.
    #[test]
    fn backward_matches_finite_differences() {
        use rand::Rng;
        for act in [Activation::Relu, Activation::Sigmoid] {
            let p = tiny_net(4, act);
            let x = batch();
            let mut rng = rng_from_seed(8);
            let coeff = Matrix::from_vec(3, 5, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mask = Matrix::from_vec(3, 5, (0..15).map(|i| if i % 4 == 0 { 0.0 } else { 1.25 }).collect()).unwrap();
            let loss = |p: &MlpParams| -> f64 {
                let c = p.forward(&x, Some(&mask)).unwrap();
                c.representation().as_slice().iter().zip(coeff.as_slice()).map(|(a, b)| a * b).sum()
            };
            let c = p.forward(&x, Some(&mask)).unwrap();
            let g = p.backward(&c, &coeff).unwrap();
            let h = 1e-5;
            let mut probe = p.clone();
            let sizes = p.slice_sizes();
            let analytic: Vec<Vec<f64>> = g.slices().iter().map(|s| s.to_vec()).collect();
            for (slot, &n) in sizes.iter().enumerate().take(sizes.len() - 1) {
                for i in 0..n {
                    let orig = probe.slices_mut()[slot][i];
                    probe.slices_mut()[slot][i] = orig + h;
                    let up = loss(&probe);
                    probe.slices_mut()[slot][i] = orig - h;
                    let down = loss(&probe);
                    probe.slices_mut()[slot][i] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic[slot][i];
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    assert!(err < 1e-4, "{act:?} slot {slot} idx {i}: {a} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn representation_ranges() {
        let relu = tiny_net(5, Activation::Relu);
        let sig = tiny_net(5, Activation::Sigmoid);
        let x = batch();
        assert!(relu.forward(&x, None).unwrap().representation().as_slice().iter().all(|&v| v >= 0.0));
        assert!(sig
            .forward(&x, None)
            .unwrap()
            .representation()
            .as_slice()
            .iter()
            .all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn topk_inference() {
        let mut p = tiny_net(6, Activation::Sigmoid);
        p.topk = Some(2);
        let rep = p.represent(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(rep.iter().filter(|&&v| v != 0.0).count(), 2);
    }
}
