//! Minimal feed-forward network engine: dense, 1-D convolution, max pooling,
//! ReLU, softmax and flatten layers with exact analytic gradients. Written
//! against plain `Vec<f64>` buffers; no external numeric libraries.

mod checkpoint;
pub mod layers;
mod tensor;
pub mod train;

pub use layers::softmax;
pub use tensor::{Tensor1D, Tensor2D};
pub use train::{cross_entropy, sgd_step, train as train_network, Loss, SgdConfig};

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv1d,
    MaxPool1d,
    Relu,
    Softmax,
    Flatten,
}

impl LayerKind {
    pub(crate) fn tag(self) -> u32 {
        match self {
            LayerKind::Dense => 0,
            LayerKind::Conv1d => 1,
            LayerKind::MaxPool1d => 2,
            LayerKind::Relu => 3,
            LayerKind::Softmax => 4,
            LayerKind::Flatten => 5,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            0 => LayerKind::Dense,
            1 => LayerKind::Conv1d,
            2 => LayerKind::MaxPool1d,
            3 => LayerKind::Relu,
            4 => LayerKind::Softmax,
            5 => LayerKind::Flatten,
            other => return Err(Error::input(format!("unknown layer tag {other}"))),
        })
    }
}

/// Shape description of one layer. For dense layers `in_features` /
/// `out_features` are vector widths; for convolutions they are channel
/// counts; pooling and element-wise layers carry them for bookkeeping only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel_size: usize,
    pub stride: usize,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Dense: `out × in`, row-major. Conv1d: `out_ch × in_ch × kernel`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter-shaped gradient (or velocity) buffers for one layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &Network) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= factor);
            l.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    input_len: usize,
    layers: Vec<Layer>,
    init_seed: u64,
}

/// Builds a network layer by layer, tracking the (channels, length) shape so
/// mismatched chains are rejected at construction time.
pub struct NetworkBuilder {
    input_len: usize,
    channels: usize,
    len: usize,
    layers: Vec<Layer>,
    rng: rand_chacha::ChaCha8Rng,
    init_seed: u64,
}

impl NetworkBuilder {
    pub fn new(input_len: usize, seed: u64) -> Result<Self> {
        if input_len == 0 {
            return Err(Error::config("network input length must be positive"));
        }
        Ok(NetworkBuilder {
            input_len,
            channels: 1,
            len: input_len,
            layers: Vec::new(),
            rng: rng::seeded_rng(rng::derive(seed, 0x6e65_7477)),
            init_seed: seed,
        })
    }

    fn he_uniform(&mut self, count: usize, fan_in: usize) -> Vec<f64> {
        let limit = (6.0 / fan_in as f64).sqrt();
        (0..count).map(|_| self.rng.random_range(-limit..limit)).collect()
    }

    pub fn dense(mut self, out_features: usize) -> Result<Self> {
        if self.channels != 1 {
            return Err(Error::config("dense layer requires a flat input; add flatten first"));
        }
        if out_features == 0 {
            return Err(Error::config("dense layer needs at least one output"));
        }
        let in_features = self.len;
        let weights = self.he_uniform(out_features * in_features, in_features);
        self.layers.push(Layer {
            spec: LayerSpec {
                kind: LayerKind::Dense,
                kernel_size: 0,
                stride: 0,
                in_features,
                out_features,
            },
            weights,
            bias: vec![0.0; out_features],
        });
        self.len = out_features;
        Ok(self)
    }

    pub fn conv1d(mut self, out_channels: usize, kernel_size: usize, stride: usize) -> Result<Self> {
        if kernel_size == 0 || stride == 0 || out_channels == 0 {
            return Err(Error::config("conv layer needs positive kernel, stride and channels"));
        }
        let in_channels = self.channels;
        let weights =
            self.he_uniform(out_channels * in_channels * kernel_size, in_channels * kernel_size);
        self.layers.push(Layer {
            spec: LayerSpec {
                kind: LayerKind::Conv1d,
                kernel_size,
                stride,
                in_features: in_channels,
                out_features: out_channels,
            },
            weights,
            bias: vec![0.0; out_channels],
        });
        self.channels = out_channels;
        self.len = layers::strided_out_len(self.len, stride);
        Ok(self)
    }

    pub fn max_pool1d(mut self, kernel_size: usize, stride: usize) -> Result<Self> {
        if kernel_size == 0 || stride == 0 {
            return Err(Error::config("pool layer needs positive kernel and stride"));
        }
        self.layers.push(Layer {
            spec: LayerSpec {
                kind: LayerKind::MaxPool1d,
                kernel_size,
                stride,
                in_features: self.channels,
                out_features: self.channels,
            },
            weights: vec![],
            bias: vec![],
        });
        self.len = layers::strided_out_len(self.len, stride);
        Ok(self)
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(Layer {
            spec: LayerSpec {
                kind: LayerKind::Relu,
                kernel_size: 0,
                stride: 0,
                in_features: self.channels,
                out_features: self.channels,
            },
            weights: vec![],
            bias: vec![],
        });
        self
    }

    pub fn flatten(mut self) -> Self {
        self.layers.push(Layer {
            spec: LayerSpec {
                kind: LayerKind::Flatten,
                kernel_size: 0,
                stride: 0,
                in_features: self.channels,
                out_features: 1,
            },
            weights: vec![],
            bias: vec![],
        });
        self.len *= self.channels;
        self.channels = 1;
        self
    }

    pub fn softmax(mut self) -> Result<Self> {
        if self.channels != 1 {
            return Err(Error::config("softmax requires a flat input"));
        }
        self.layers.push(Layer {
            spec: LayerSpec {
                kind: LayerKind::Softmax,
                kernel_size: 0,
                stride: 0,
                in_features: 1,
                out_features: 1,
            },
            weights: vec![],
            bias: vec![],
        });
        Ok(self)
    }

    /// Current (channels, length) shape; useful when sizing downstream layers.
    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.len)
    }

    pub fn build(self) -> Network {
        Network { input_len: self.input_len, layers: self.layers, init_seed: self.init_seed }
    }
}

impl Network {
    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn output_len(&self) -> usize {
        let (ch, len) = self.output_shape();
        ch * len
    }

    fn output_shape(&self) -> (usize, usize) {
        let mut ch = 1usize;
        let mut len = self.input_len;
        for layer in &self.layers {
            match layer.spec.kind {
                LayerKind::Dense => len = layer.spec.out_features,
                LayerKind::Conv1d => {
                    ch = layer.spec.out_features;
                    len = layers::strided_out_len(len, layer.spec.stride);
                }
                LayerKind::MaxPool1d => len = layers::strided_out_len(len, layer.spec.stride),
                LayerKind::Relu | LayerKind::Softmax => {}
                LayerKind::Flatten => {
                    len *= ch;
                    ch = 1;
                }
            }
        }
        (ch, len)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len {
            return Err(Error::input(format!(
                "network expects {} inputs, got {}",
                self.input_len,
                input.len()
            )));
        }
        Ok(())
    }

    /// Run the network, returning every intermediate activation
    /// (`activations[0]` is the input, the last entry the output).
    pub fn forward_trace(&self, input: &[f64]) -> Result<Vec<Tensor2D>> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(Tensor2D::from_flat(input.to_vec()));
        for layer in &self.layers {
            let next = layers::forward(layer, acts.last().unwrap());
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut acts = self.forward_trace(input)?;
        Ok(acts.pop().unwrap().flattened().values().to_vec())
    }

    /// Backpropagate `grad_output` (gradient of the loss with respect to the
    /// network output) through recorded activations, adding parameter
    /// gradients into `grads`.
    pub fn accumulate_grads(
        &self,
        activations: &[Tensor2D],
        grad_output: Vec<f64>,
        grads: &mut NetGrads,
    ) {
        self.accumulate_grads_prefix(activations, grad_output, self.layers.len(), grads);
    }

    /// Backpropagate a gradient given with respect to `activations[depth]`
    /// (the output of the first `depth` layers) through those layers only.
    /// Lets softmax + cross-entropy train through the numerically stable
    /// combined gradient at the logits.
    pub fn accumulate_grads_prefix(
        &self,
        activations: &[Tensor2D],
        grad: Vec<f64>,
        depth: usize,
        grads: &mut NetGrads,
    ) {
        let act = &activations[depth];
        let mut grad = Tensor2D::from_values(act.rows(), act.cols(), grad)
            .expect("gradient shape mismatch");
        for idx in (0..depth).rev() {
            grad = layers::backward(
                &self.layers[idx],
                &activations[idx],
                &activations[idx + 1],
                &grad,
                &mut grads.layers[idx],
            );
        }
    }

    pub(crate) fn from_parts(input_len: usize, layers: Vec<Layer>, init_seed: u64) -> Network {
        Network { input_len, layers, init_seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_tracks_shapes() {
        let b = NetworkBuilder::new(2040, 7)
            .unwrap()
            .conv1d(8, 10, 2)
            .unwrap()
            .max_pool1d(10, 2)
            .unwrap()
            .conv1d(16, 10, 2)
            .unwrap()
            .max_pool1d(10, 2)
            .unwrap()
            .flatten();
        assert_eq!(b.shape(), (1, 2048));
    }

    #[test]
    fn dense_after_conv_requires_flatten() {
        let b = NetworkBuilder::new(32, 1).unwrap().conv1d(4, 3, 1).unwrap();
        assert!(b.dense(10).is_err());
    }

    #[test]
    fn forward_rejects_wrong_input_len() {
        let net = NetworkBuilder::new(8, 1).unwrap().dense(3).unwrap().build();
        assert!(net.forward(&[0.0; 7]).is_err());
        assert_eq!(net.forward(&[0.0; 8]).unwrap().len(), 3);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let make = |seed| NetworkBuilder::new(16, seed).unwrap().dense(4).unwrap().build();
        let a = make(9);
        let b = make(9);
        let c = make(10);
        assert_eq!(a.layers[0].weights, b.layers[0].weights);
        assert_ne!(a.layers[0].weights, c.layers[0].weights);
    }

    fn finite_diff_check(mut net: Network, loss: train::Loss, input: &[f64], target: &[f64]) {
        let acts = net.forward_trace(input).unwrap();
        let mut grads = NetGrads::zeros_like(&net);
        let output = acts.last().unwrap().values().to_vec();
        let grad_out = match loss {
            train::Loss::HalfSquaredError => {
                output.iter().zip(target).map(|(o, t)| o - t).collect::<Vec<_>>()
            }
            train::Loss::CrossEntropy => output
                .iter()
                .zip(target)
                .map(|(o, t)| if *t == 0.0 { 0.0 } else { -t / o.max(train::PROB_EPSILON) })
                .collect(),
        };
        net.accumulate_grads(&acts, grad_out, &mut grads);

        let eps = 1e-6;
        for li in 0..net.layers.len() {
            for wi in 0..net.layers[li].weights.len() {
                let orig = net.layers[li].weights[wi];
                net.layers[li].weights[wi] = orig + eps;
                let up = loss.value(&net.forward(input).unwrap(), target);
                net.layers[li].weights[wi] = orig - eps;
                let down = loss.value(&net.forward(input).unwrap(), target);
                net.layers[li].weights[wi] = orig;
                let fd = (up - down) / (2.0 * eps);
                let analytic = grads.layers[li].weights[wi];
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
                assert!(
                    rel < 1e-4,
                    "layer {li} weight {wi}: analytic {analytic} vs fd {fd} (rel {rel})"
                );
            }
            for bi in 0..net.layers[li].bias.len() {
                let orig = net.layers[li].bias[bi];
                net.layers[li].bias[bi] = orig + eps;
                let up = loss.value(&net.forward(input).unwrap(), target);
                net.layers[li].bias[bi] = orig - eps;
                let down = loss.value(&net.forward(input).unwrap(), target);
                net.layers[li].bias[bi] = orig;
                let fd = (up - down) / (2.0 * eps);
                let analytic = grads.layers[li].bias[bi];
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
                assert!(
                    rel < 1e-4,
                    "layer {li} bias {bi}: analytic {analytic} vs fd {fd} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_squared_error() {
        let net = NetworkBuilder::new(20, 17)
            .unwrap()
            .conv1d(3, 4, 2)
            .unwrap()
            .relu()
            .max_pool1d(3, 2)
            .unwrap()
            .conv1d(5, 3, 1)
            .unwrap()
            .relu()
            .flatten()
            .dense(7)
            .unwrap()
            .relu()
            .dense(4)
            .unwrap()
            .build();
        let mut r = crate::rng::seeded_rng(99);
        let input: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
        let target = [0.3, -0.8, 0.1, 0.5];
        finite_diff_check(net, train::Loss::HalfSquaredError, &input, &target);
    }

    #[test]
    fn gradients_match_finite_differences_cross_entropy() {
        let net = NetworkBuilder::new(16, 23)
            .unwrap()
            .conv1d(2, 5, 2)
            .unwrap()
            .relu()
            .max_pool1d(2, 2)
            .unwrap()
            .flatten()
            .dense(6)
            .unwrap()
            .relu()
            .dense(3)
            .unwrap()
            .softmax()
            .unwrap()
            .build();
        let mut r = crate::rng::seeded_rng(5);
        let input: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
        let target = [0.0, 1.0, 0.0];
        finite_diff_check(net, train::Loss::CrossEntropy, &input, &target);
    }

    #[test]
    fn output_shape_matches_forward() {
        let net = NetworkBuilder::new(100, 3)
            .unwrap()
            .conv1d(4, 5, 2)
            .unwrap()
            .relu()
            .max_pool1d(3, 2)
            .unwrap()
            .flatten()
            .dense(10)
            .unwrap()
            .softmax()
            .unwrap()
            .build();
        let out = net.forward(&vec![0.5; 100]).unwrap();
        assert_eq!(out.len(), net.output_len());
        assert_eq!(out.len(), 10);
    }
}
