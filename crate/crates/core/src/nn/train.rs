//! Mini-batch SGD with momentum and the two losses used by the pipeline.

use super::{NetGrads, Network};
use crate::error::{Error, Result};

/// Floor applied to probabilities inside the log to keep the loss finite.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// `1/2 * sum((output - target)^2)`, the reconstruction loss.
    HalfSquaredError,
    /// `-sum(target * ln(output))` against one-hot targets; expects the
    /// network to end in softmax.
    CrossEntropy,
}

impl Loss {
    pub fn value(&self, output: &[f64], target: &[f64]) -> f64 {
        match self {
            Loss::HalfSquaredError => {
                0.5 * output.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>()
            }
            Loss::CrossEntropy => cross_entropy(output, target),
        }
    }

    fn output_grad(&self, output: &[f64], target: &[f64]) -> Vec<f64> {
        match self {
            Loss::HalfSquaredError => output.iter().zip(target).map(|(o, t)| o - t).collect(),
            Loss::CrossEntropy => output
                .iter()
                .zip(target)
                .map(|(o, t)| if *t == 0.0 { 0.0 } else { -t / o.max(PROB_EPSILON) })
                .collect(),
        }
    }
}

/// Cross-entropy of a probability vector against one-hot (or soft) targets,
/// with probabilities clamped away from zero.
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    probs
        .iter()
        .zip(target)
        .filter(|(_, t)| **t != 0.0)
        .map(|(p, t)| -t * p.max(PROB_EPSILON).ln())
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { learning_rate: 0.01, momentum: 0.9, batch_size: 16, epochs: 20 }
    }
}

/// One SGD step over a batch of `(input, target)` rows. Gradients are
/// averaged over the batch; `velocity` must be parameter-shaped (see
/// [`NetGrads::zeros_like`]). Returns the mean batch loss measured before
/// the update.
pub fn sgd_step(
    net: &mut Network,
    velocity: &mut NetGrads,
    batch: &[(&[f64], &[f64])],
    loss: Loss,
    learning_rate: f64,
    momentum: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::training("sgd step on an empty batch"));
    }
    // When cross-entropy sits on top of a softmax layer, backpropagate the
    // combined gradient (probs - target) at the logits: the chained form
    // -t/p blows up once a probability saturates toward zero.
    let fused_softmax = loss == Loss::CrossEntropy
        && matches!(
            net.layers().last().map(|l| l.spec.kind),
            Some(crate::nn::LayerKind::Softmax)
        );
    let mut grads = NetGrads::zeros_like(net);
    let mut total_loss = 0.0;
    for (input, target) in batch {
        let acts = net.forward_trace(input)?;
        let output = acts.last().unwrap().values();
        if target.len() != output.len() {
            return Err(Error::training(format!(
                "target length {} does not match output length {}",
                target.len(),
                output.len()
            )));
        }
        total_loss += loss.value(output, target);
        if fused_softmax {
            let grad: Vec<f64> = output.iter().zip(*target).map(|(p, t)| p - t).collect();
            net.accumulate_grads_prefix(&acts, grad, net.layers().len() - 1, &mut grads);
        } else {
            let grad_out = loss.output_grad(output, target);
            net.accumulate_grads(&acts, grad_out, &mut grads);
        }
    }
    grads.scale(1.0 / batch.len() as f64);
    if !grads.is_finite() {
        return Err(Error::training("non-finite gradient; lower the learning rate"));
    }

    for (layer, (g, v)) in
        net.layers.iter_mut().zip(grads.layers.iter().zip(&mut velocity.layers))
    {
        for i in 0..layer.weights.len() {
            v.weights[i] = momentum * v.weights[i] - learning_rate * g.weights[i];
            layer.weights[i] += v.weights[i];
        }
        for i in 0..layer.bias.len() {
            v.bias[i] = momentum * v.bias[i] - learning_rate * g.bias[i];
            layer.bias[i] += v.bias[i];
        }
    }
    Ok(total_loss / batch.len() as f64)
}

/// Epoch/batch driver: shuffles row order each epoch with `rng`, calls
/// `sgd_step` per mini-batch and reports the mean loss per epoch.
pub fn train(
    net: &mut Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &SgdConfig,
    loss: Loss,
    rng: &mut impl rand::Rng,
) -> Result<Vec<f64>> {
    if inputs.len() != targets.len() {
        return Err(Error::training(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::training("empty training set"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::config("batch size and epoch count must be positive"));
    }

    let mut velocity = NetGrads::zeros_like(net);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        shuffle(&mut order, rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], &[f64])> =
                chunk.iter().map(|&i| (inputs[i].as_slice(), targets[i].as_slice())).collect();
            sum += sgd_step(net, &mut velocity, &batch, loss, cfg.learning_rate, cfg.momentum)?;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    Ok(epoch_losses)
}

fn shuffle(order: &mut [usize], rng: &mut impl rand::Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkBuilder;
    use crate::rng::seeded_rng;

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let mut net = NetworkBuilder::new(4, 11).unwrap().dense(2).unwrap().build();
        let before = net.layers()[0].weights.clone();
        let mut vel = NetGrads::zeros_like(&net);
        let input = [1.0, 2.0, 3.0, 4.0];
        let target = [0.0, 1.0];
        sgd_step(
            &mut net,
            &mut vel,
            &[(&input, &target)],
            Loss::HalfSquaredError,
            0.0,
            0.9,
        )
        .unwrap();
        assert_eq!(net.layers()[0].weights, before);
    }

    #[test]
    fn empty_batch_is_a_training_error() {
        let mut net = NetworkBuilder::new(2, 1).unwrap().dense(1).unwrap().build();
        let mut vel = NetGrads::zeros_like(&net);
        assert!(sgd_step(&mut net, &mut vel, &[], Loss::HalfSquaredError, 0.1, 0.0).is_err());
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let mut net =
            NetworkBuilder::new(3, 5).unwrap().dense(8).unwrap().relu().dense(3).unwrap().build();
        let mut vel = NetGrads::zeros_like(&net);
        let input = [0.2, -0.4, 0.9];
        let target = [1.0, 0.0, -1.0];
        let batch: Vec<(&[f64], &[f64])> = vec![(&input, &target)];
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            let loss =
                sgd_step(&mut net, &mut vel, &batch, Loss::HalfSquaredError, 0.01, 0.0).unwrap();
            assert!(loss <= last + 1e-9);
            last = loss;
        }
        assert!(last < 0.05, "loss stalled at {last}");
    }

    #[test]
    fn cross_entropy_matches_log_identity() {
        let probs = [0.1, 0.7, 0.2];
        let one_hot = [0.0, 1.0, 0.0];
        let ce = cross_entropy(&probs, &one_hot);
        assert!((ce - (-(0.7f64).ln())).abs() < 1e-12);
        // zero probability at the hot index is clamped, not infinite
        let bad = [1.0, 0.0, 0.0];
        assert!(cross_entropy(&bad, &one_hot).is_finite());
    }

    #[test]
    fn train_shrinks_loss_on_toy_classification() {
        let mut rng = seeded_rng(42);
        let inputs: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let hot = i % 2 == 0;
                if hot {
                    vec![1.0, 0.0, 1.0, 0.0]
                } else {
                    vec![0.0, 1.0, 0.0, 1.0]
                }
            })
            .collect();
        let targets: Vec<Vec<f64>> = (0..40)
            .map(|i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        let mut net = NetworkBuilder::new(4, 3)
            .unwrap()
            .dense(8)
            .unwrap()
            .relu()
            .dense(2)
            .unwrap()
            .softmax()
            .unwrap()
            .build();
        let cfg = SgdConfig { learning_rate: 0.1, momentum: 0.9, batch_size: 8, epochs: 30 };
        let losses =
            train(&mut net, &inputs, &targets, &cfg, Loss::CrossEntropy, &mut rng).unwrap();
        assert!(losses.last().unwrap() < &0.05, "final loss {:?}", losses.last());
    }
}
