//! Greedy layerwise pre-training. Each layer is trained as a denoising
//! autoencoder on the codes of the layers below it; only the encoder is kept.

use crate::error::{Error, Result};
use crate::model::{Activation, DaeLayer, Dense, SdaNetwork};
use crate::numeric::{Matrix, Prng, Vector};
use crate::training::{
    backprop, epoch_batches, sgd_step, stack_loss, TrainConfig, TrainingSet, STREAM_INIT,
};

const STREAM_NOISE: u64 = 0x100;
const STREAM_ORDER: u64 = 0x200;
const STREAM_DECODER: u64 = 0x300;

/// A trained denoising autoencoder: the encoder that gets stacked, the
/// (untied) decoder that gets discarded, and the clean-input reconstruction
/// loss before training and after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedLayer {
    pub encoder: Dense,
    pub decoder: Dense,
    pub losses: Vec<f64>,
}

impl PretrainedLayer {
    /// Encoder weights with the hidden and reconstruction biases.
    pub fn dae(&self) -> DaeLayer {
        DaeLayer {
            w: self.encoder.weights.clone(),
            b_hidden: self.encoder.bias.clone(),
            c_recon: self.decoder.bias.clone(),
        }
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vector> {
        let h = self.encoder.forward(x)?;
        self.decoder.forward(&h)
    }

    /// `‖decode(encode(x)) − x‖²`.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        let r = self.reconstruct(x)?;
        Ok(r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

/// Progress notification from [`pretrain_stack`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainEvent {
    /// 1-based layer index.
    pub layer: usize,
    pub epoch: usize,
    pub loss: f64,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Trains a fresh sigmoid DAE with `hidden_dim` units on the rows of `inputs`.
pub fn pretrain_layer(
    inputs: &Matrix,
    hidden_dim: usize,
    cfg: &TrainConfig,
) -> Result<PretrainedLayer> {
    let mut init_rng = Prng::new(cfg.seed).fork(STREAM_INIT);
    let encoder = Dense::glorot(
        inputs.cols().max(1),
        hidden_dim,
        Activation::Sigmoid,
        &mut init_rng,
    )?;
    train_dae(encoder, inputs, cfg, 0, &mut |_, _| {})
}

/// Corrupts each presented input with fresh Gaussian noise and trains the
/// encoder and a sigmoid decoder to reproduce the clean input.
fn train_dae(
    encoder: Dense,
    inputs: &Matrix,
    cfg: &TrainConfig,
    stream: u64,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<PretrainedLayer> {
    cfg.validate()?;
    if inputs.rows() == 0 {
        return Err(Error::Empty("pre-training inputs"));
    }
    if inputs.cols() != encoder.in_dim() {
        return Err(Error::mismatch(
            "pre-training input",
            encoder.in_dim(),
            inputs.cols(),
        ));
    }
    let root = Prng::new(cfg.seed);
    let mut decoder_rng = root.fork(STREAM_DECODER + stream);
    let decoder = Dense::glorot(
        encoder.out_dim(),
        encoder.in_dim(),
        Activation::Sigmoid,
        &mut decoder_rng,
    )?;
    let mut noise_rng = root.fork(STREAM_NOISE + stream);
    let mut order_rng = root.fork(STREAM_ORDER + stream);

    let mut pair = [encoder, decoder];
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs + 1);
    let initial = stack_loss(&pair, inputs, inputs);
    on_epoch(0, initial);
    losses.push(initial);
    for epoch in 1..=cfg.pretrain_epochs {
        for idx in epoch_batches(inputs.rows(), cfg.batch_size, &mut order_rng) {
            let clean = inputs.select_rows(&idx);
            let mut noisy = clean.clone();
            if cfg.corruption_std > 0.0 {
                for v in noisy.as_mut_slice() {
                    *v += cfg.corruption_std * noise_rng.normal();
                }
            }
            let (_, grads) = backprop(&pair, &noisy, &clean);
            sgd_step(&mut pair, &grads, cfg.pretrain_learning_rate);
        }
        let l = stack_loss(&pair, inputs, inputs);
        on_epoch(epoch, l);
        losses.push(l);
    }
    let [encoder, decoder] = pair;
    Ok(PretrainedLayer {
        encoder,
        decoder,
        losses,
    })
}

/// Pre-trains every layer of `skeleton` in order, starting each encoder from
/// the skeleton's own weights. Layer `k` is trained on the codes that layers
/// `1..k` (already pre-trained) produce for the set's network inputs.
///
/// Returns the initialized model and the per-layer DAEs.
pub fn pretrain_stack<N: SdaNetwork>(
    skeleton: N,
    set: &TrainingSet,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(PretrainEvent),
) -> Result<(N, Vec<PretrainedLayer>)> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("pre-training set"));
    }
    let mut model = skeleton;
    let mut codes = set.inputs_for(&model)?.clone();
    let depth = model.layers().len();
    let mut trained = Vec::with_capacity(depth);
    for k in 0..depth {
        let init = model.layers()[k].clone();
        let (input_dim, hidden_dim) = (init.in_dim(), init.out_dim());
        let dae = train_dae(init, &codes, cfg, k as u64 + 1, &mut |epoch, loss| {
            observer(PretrainEvent {
                layer: k + 1,
                epoch,
                loss,
                input_dim,
                hidden_dim,
            })
        })?;
        if k + 1 < depth {
            codes = dae.encoder.forward_rows(&codes);
        }
        model.layers_mut()[k] = dae.encoder.clone();
        trained.push(dae);
    }
    Ok((model, trained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::LinearOperator;
    use crate::model::{LinearSda, NonlinearSda};

    fn unit_rows(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Prng::new(seed);
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.next_f64()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            pretrain_epochs: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let x = unit_rows(10, 4, 1);
        let layer = pretrain_layer(&x, 6, &cfg).unwrap();
        let mut rng = Prng::new(4).fork(STREAM_INIT);
        let init = Dense::glorot(4, 6, Activation::Sigmoid, &mut rng).unwrap();
        assert_eq!(layer.encoder, init);
        assert_eq!(layer.losses.len(), 1);
    }

    #[test]
    fn training_reduces_reconstruction_error() {
        let cfg = TrainConfig {
            pretrain_epochs: 200,
            corruption_std: 0.0,
            batch_size: 5,
            pretrain_learning_rate: 0.5,
            seed: 2,
            ..TrainConfig::default()
        };
        let x = unit_rows(10, 4, 3);
        let layer = pretrain_layer(&x, 4, &cfg).unwrap();
        let first = layer.losses[0];
        let last = *layer.losses.last().unwrap();
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn empty_inputs_rejected() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            pretrain_layer(&Matrix::zeros(0, 4), 3, &cfg),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn stack_visits_layers_in_order() {
        let (n, m) = (16, 4);
        let op = LinearOperator::gaussian(m, n, 5).unwrap();
        let set = TrainingSet::measured(&op, unit_rows(20, n, 6)).unwrap();
        let skeleton = LinearSda::glorot(n, m, &mut Prng::new(7)).unwrap();
        let cfg = TrainConfig {
            pretrain_epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let (model, daes) = pretrain_stack(skeleton.clone(), &set, &cfg, &mut |e| {
            if e.epoch == 0 {
                seen.push((e.layer, e.input_dim, e.hidden_dim));
            }
        })
        .unwrap();
        assert_eq!(seen, vec![(1, m, n), (2, n, m), (3, m, n)]);
        assert_eq!(daes.len(), 3);
        assert!(daes
            .iter()
            .all(|d| d.decoder.activation == Activation::Sigmoid));
        assert_ne!(model, skeleton);
        for (layer, dae) in model.layers().iter().zip(&daes) {
            assert_eq!(layer, &dae.encoder);
        }
    }

    #[test]
    fn zero_epoch_stack_is_identity() {
        let n = 16;
        let set = TrainingSet::signals(unit_rows(12, n, 8)).unwrap();
        let skeleton = NonlinearSda::glorot(n, 4, Activation::Identity, &mut Prng::new(9)).unwrap();
        let cfg = TrainConfig {
            pretrain_epochs: 0,
            ..TrainConfig::default()
        };
        let (model, _) = pretrain_stack(skeleton.clone(), &set, &cfg, &mut |_| {}).unwrap();
        assert_eq!(model, skeleton);
    }
}
