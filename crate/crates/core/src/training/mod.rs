//! Losses, backpropagation, layerwise denoising pre-training and supervised
//! fine-tuning.
//!
//! The loss is the batch-mean squared reconstruction error
//! `(1/l) Σ ‖M(input⁽ⁱ⁾) − x⁽ⁱ⁾‖²`: for L-SDA the input is the linear
//! measurement, for NL-SDA it is the signal itself.
//!
//! Training is plain mini-batch SGD with a fixed learning rate. Mini-batches
//! are processed as row-major matrices; every reduction runs in a fixed order,
//! so a run is a pure function of `(data, config, seed)`.

mod gradcheck;
mod pretrain;

use std::fmt;
use std::io::{self, Write};

pub use gradcheck::{
    central_difference, check_sample, gradient_check, gradient_check_against, ParamRef,
};
pub use pretrain::{pretrain_layer, pretrain_stack, PretrainEvent, PretrainedLayer};

use crate::error::{Error, Result};
use crate::measurement::LinearOperator;
use crate::model::{Architecture, Dense, LinearSda, NonlinearSda, SdaNetwork};
use crate::numeric::{Matrix, Prng, Vector};

/// Rows per block when evaluating the loss over a whole set.
const EVAL_BLOCK: usize = 256;

// Sub-stream identifiers for `Prng::fork`.
const STREAM_FINETUNE_ORDER: u64 = 1;
pub(crate) const STREAM_INIT: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Fine-tuning step size.
    pub learning_rate: f64,
    /// Step size of the layerwise denoising pre-training.
    pub pretrain_learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Standard deviation of the Gaussian corruption used in pre-training.
    pub corruption_std: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            pretrain_learning_rate: 0.1,
            batch_size: 32,
            pretrain_epochs: 15,
            finetune_epochs: 200,
            corruption_std: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.pretrain_learning_rate > 0.0 && self.pretrain_learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "pre-training learning rate must be > 0, got {}",
                self.pretrain_learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.corruption_std >= 0.0 && self.corruption_std.is_finite()) {
            return Err(Error::invalid(format!(
                "corruption std must be >= 0, got {}",
                self.corruption_std
            )));
        }
        Ok(())
    }
}

/// Training or evaluation data: clean signals in `[0, 1]`, one per row, and for
/// the linear paradigm their measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    measurements: Option<Matrix>,
    targets: Matrix,
}

impl TrainingSet {
    /// `(measurement, signal)` pairs for L-SDA.
    pub fn pairs(measurements: Matrix, targets: Matrix) -> Result<Self> {
        if measurements.rows() != targets.rows() {
            return Err(Error::mismatch(
                "training pair count",
                targets.rows(),
                measurements.rows(),
            ));
        }
        check_targets(&targets)?;
        Ok(TrainingSet {
            measurements: Some(measurements),
            targets,
        })
    }

    /// Signals only, for NL-SDA.
    pub fn signals(targets: Matrix) -> Result<Self> {
        check_targets(&targets)?;
        Ok(TrainingSet {
            measurements: None,
            targets,
        })
    }

    /// Pairs `(Φx, x)` for every row `x` of `signals`.
    pub fn measured(op: &LinearOperator, signals: Matrix) -> Result<Self> {
        let y = op.measure_rows(&signals)?;
        TrainingSet::pairs(y, signals)
    }

    pub fn len(&self) -> usize {
        self.targets.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn measurements(&self) -> Option<&Matrix> {
        self.measurements.as_ref()
    }

    pub fn subset(&self, indices: &[usize]) -> TrainingSet {
        TrainingSet {
            measurements: self.measurements.as_ref().map(|m| m.select_rows(indices)),
            targets: self.targets.select_rows(indices),
        }
    }

    /// The matrix fed to `model`'s first layer.
    pub fn inputs_for<N: SdaNetwork>(&self, model: &N) -> Result<&Matrix> {
        if self.targets.cols() != model.n() {
            return Err(Error::mismatch(
                "training target",
                model.n(),
                self.targets.cols(),
            ));
        }
        let inputs = match model.architecture() {
            Architecture::Linear => self
                .measurements
                .as_ref()
                .ok_or_else(|| Error::invalid("L-SDA training needs measurements"))?,
            Architecture::Nonlinear => &self.targets,
        };
        if inputs.cols() != model.input_dim() {
            return Err(Error::mismatch(
                "network input",
                model.input_dim(),
                inputs.cols(),
            ));
        }
        Ok(inputs)
    }
}

fn check_targets(targets: &Matrix) -> Result<()> {
    if let Some(bad) = targets
        .as_slice()
        .iter()
        .find(|v| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::invalid(format!(
            "training targets must lie in [0, 1], found {bad}"
        )));
    }
    Ok(())
}

/// Gradient of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Matrix,
    pub bias: Vector,
}

/// One [`ParamGrad`] per layer, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ParamGrad>,
}

impl Gradients {
    pub fn zeros_like(layers: &[Dense]) -> Self {
        Gradients {
            layers: layers
                .iter()
                .map(|l| ParamGrad {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: Vector::zeros(l.out_dim()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in &mut self.layers {
            g.weights.scale(alpha);
            g.bias.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .map(|g| {
                g.weights
                    .max_abs()
                    .max(g.bias.iter().fold(0.0, |a, v| a.max(v.abs())))
            })
            .fold(0.0, f64::max)
    }

    pub fn get(&self, param: ParamRef) -> f64 {
        match param {
            ParamRef::Weight { layer, row, col } => self.layers[layer].weights.get(row, col),
            ParamRef::Bias { layer, row } => self.layers[layer].bias[row],
        }
    }
}

/// Mean squared error of a layer stack on `(inputs, targets)` rows.
pub(crate) fn stack_loss(layers: &[Dense], inputs: &Matrix, targets: &Matrix) -> f64 {
    let rows = inputs.rows();
    let mut total = 0.0;
    let mut start = 0;
    while start < rows {
        let end = (start + EVAL_BLOCK).min(rows);
        let idx: Vec<usize> = (start..end).collect();
        let mut a = inputs.select_rows(&idx);
        for layer in layers {
            a = layer.forward_rows(&a);
        }
        for (i, out) in idx.iter().zip(a.row_iter()) {
            total += out
                .iter()
                .zip(targets.row(*i))
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>();
        }
        start = end;
    }
    total / rows as f64
}

/// Loss and exact gradients of the batch-mean squared error.
pub(crate) fn backprop(layers: &[Dense], inputs: &Matrix, targets: &Matrix) -> (f64, Gradients) {
    let batch = inputs.rows() as f64;
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(inputs.clone());
    for layer in layers {
        let next = layer.forward_rows(acts.last().expect("nonempty"));
        acts.push(next);
    }

    let output = acts.last().expect("nonempty");
    let mut delta = output.clone();
    delta.add_scaled(-1.0, targets);
    let loss = delta.as_slice().iter().map(|e| e * e).sum::<f64>() / batch;
    delta.scale(2.0 / batch);

    let mut grads = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate().rev() {
        let out = &acts[l + 1];
        let act = layer.activation;
        for (d, a) in delta.as_mut_slice().iter_mut().zip(out.as_slice()) {
            *d *= act.slope_at_output(*a);
        }
        let weights = delta.transposed_mul(&acts[l]);
        let bias = delta.column_sums();
        if l > 0 {
            delta = delta.mul(&layer.weights);
        }
        grads.push(ParamGrad { weights, bias });
    }
    grads.reverse();
    (loss, Gradients { layers: grads })
}

pub(crate) fn sgd_step(layers: &mut [Dense], grads: &Gradients, learning_rate: f64) {
    for (layer, g) in layers.iter_mut().zip(&grads.layers) {
        layer.weights.add_scaled(-learning_rate, &g.weights);
        for (b, gb) in layer.bias.iter_mut().zip(g.bias.iter()) {
            *b -= learning_rate * gb;
        }
    }
}

/// Mean squared recovery error of any network over a set.
pub fn loss<N: SdaNetwork>(model: &N, set: &TrainingSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let inputs = set.inputs_for(model)?;
    Ok(stack_loss(model.layers(), inputs, set.targets()))
}

pub fn loss_l(model: &LinearSda, set: &TrainingSet) -> Result<f64> {
    loss(model, set)
}

pub fn loss_nl(model: &NonlinearSda, set: &TrainingSet) -> Result<f64> {
    loss(model, set)
}

/// Exact gradients of the batch-mean loss.
pub fn gradients<N: SdaNetwork>(model: &N, batch: &TrainingSet) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    let inputs = batch.inputs_for(model)?;
    Ok(backprop(model.layers(), inputs, batch.targets()).1)
}

pub fn grad_l(model: &LinearSda, batch: &TrainingSet) -> Result<Gradients> {
    gradients(model, batch)
}

pub fn grad_nl(model: &NonlinearSda, batch: &TrainingSet) -> Result<Gradients> {
    gradients(model, batch)
}

/// Row indices of each mini-batch in one epoch, in presentation order.
pub(crate) fn epoch_batches(len: usize, batch_size: usize, rng: &mut Prng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Supervised fine-tuning by mini-batch SGD on clean inputs.
///
/// The trace holds the full-set loss before training followed by the loss
/// after each epoch, so it has `finetune_epochs + 1` entries.
pub fn finetune<N: SdaNetwork>(
    model: N,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<(N, Vec<f64>)> {
    finetune_observed(model, set, cfg, &mut |_, _| {})
}

/// [`finetune`] with a callback receiving `(epoch, loss)` for each trace entry.
pub fn finetune_observed<N: SdaNetwork>(
    mut model: N,
    set: &TrainingSet,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<(N, Vec<f64>)> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let inputs = set.inputs_for(&model)?.clone();
    let targets = set.targets();
    let mut order_rng = Prng::new(cfg.seed).fork(STREAM_FINETUNE_ORDER);

    let mut trace = Vec::with_capacity(cfg.finetune_epochs + 1);
    let initial = stack_loss(model.layers(), &inputs, targets);
    on_epoch(0, initial);
    trace.push(initial);
    for epoch in 1..=cfg.finetune_epochs {
        for idx in epoch_batches(set.len(), cfg.batch_size, &mut order_rng) {
            let xb = inputs.select_rows(&idx);
            let tb = targets.select_rows(&idx);
            let (_, grads) = backprop(model.layers(), &xb, &tb);
            sgd_step(model.layers_mut(), &grads, cfg.learning_rate);
        }
        let l = stack_loss(model.layers(), &inputs, targets);
        on_epoch(epoch, l);
        trace.push(l);
    }
    Ok((model, trace))
}

/// Training phase of a loss-trace row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Pre-training of layer `k` (1-based).
    Pretrain(usize),
    Finetune,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Pretrain(k) => write!(f, "pretrain-{k}"),
            Phase::Finetune => write!(f, "finetune"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
}

pub const LOSS_TRACE_HEADER: &str = "epoch,phase,loss";

/// Writes `epoch,phase,loss` rows with a header line.
pub fn write_loss_trace<W: Write>(mut out: W, records: &[LossRecord]) -> io::Result<()> {
    writeln!(out, "{LOSS_TRACE_HEADER}")?;
    for r in records {
        writeln!(out, "{},{},{}", r.epoch, r.phase, r.loss)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_l, Activation};

    fn random_rows(rows: usize, cols: usize, rng: &mut Prng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.next_f64()).collect(),
        )
        .unwrap()
    }

    fn tiny_pairs(n: usize, m: usize, count: usize, seed: u64) -> (LinearOperator, TrainingSet) {
        let mut rng = Prng::new(seed);
        let op = LinearOperator::gaussian(m, n, seed ^ 0xABCD).unwrap();
        let x = random_rows(count, n, &mut rng);
        let set = TrainingSet::measured(&op, x).unwrap();
        (op, set)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            corruption_std: -0.1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn targets_must_be_normalized() {
        let t = Matrix::from_vec(1, 2, vec![0.5, 1.5]).unwrap();
        assert!(TrainingSet::signals(t).is_err());
    }

    #[test]
    fn loss_examples() {
        let model = LinearSda::zeros(2, 1).unwrap();
        let half = TrainingSet::pairs(
            Matrix::from_vec(1, 1, vec![0.3]).unwrap(),
            Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        assert_eq!(loss_l(&model, &half).unwrap(), 0.0);

        let off = TrainingSet::pairs(
            Matrix::from_vec(1, 1, vec![0.3]).unwrap(),
            Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(loss_l(&model, &off).unwrap(), 0.5);

        let empty = TrainingSet::pairs(Matrix::zeros(0, 1), Matrix::zeros(0, 2)).unwrap();
        assert!(matches!(loss_l(&model, &empty), Err(Error::Empty(_))));
    }

    #[test]
    fn loss_zero_on_own_outputs() {
        let mut rng = Prng::new(1);
        let model = LinearSda::glorot(8, 3, &mut rng).unwrap();
        let y = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
        let outs: Vec<Vec<f64>> = y
            .row_iter()
            .map(|r| forward_l(&model, r).unwrap().into_inner())
            .collect();
        let set = TrainingSet::pairs(y, Matrix::from_rows(&outs).unwrap()).unwrap();
        assert!(loss_l(&model, &set).unwrap() < 1e-28);

        let nl = NonlinearSda::zeros(2, 1, Activation::Sigmoid).unwrap();
        let t = TrainingSet::signals(Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(loss_nl(&nl, &t).unwrap(), 0.5);
        let t = TrainingSet::signals(Matrix::from_vec(3, 2, vec![0.5; 6]).unwrap()).unwrap();
        assert_eq!(loss_nl(&nl, &t).unwrap(), 0.0);
    }

    #[test]
    fn gradients_vanish_at_exact_fit() {
        let model = LinearSda::zeros(4, 2).unwrap();
        let set = TrainingSet::pairs(
            Matrix::from_vec(2, 2, vec![0.1, -0.4, 2.0, 1.0]).unwrap(),
            Matrix::from_vec(2, 4, vec![0.5; 8]).unwrap(),
        )
        .unwrap();
        assert_eq!(grad_l(&model, &set).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn batch_gradient_is_mean_of_singles() {
        let (_, set) = tiny_pairs(16, 4, 2, 3);
        let model = LinearSda::glorot(16, 4, &mut Prng::new(4)).unwrap();
        let both = grad_l(&model, &set).unwrap();
        let g0 = grad_l(&model, &set.subset(&[0])).unwrap();
        let g1 = grad_l(&model, &set.subset(&[1])).unwrap();
        for (l, g) in both.layers.iter().enumerate() {
            for (k, v) in g.weights.as_slice().iter().enumerate() {
                let mean =
                    0.5 * (g0.layers[l].weights.as_slice()[k] + g1.layers[l].weights.as_slice()[k]);
                assert!((v - mean).abs() < 1e-12);
            }
            for (k, v) in g.bias.iter().enumerate() {
                let mean = 0.5 * (g0.layers[l].bias[k] + g1.layers[l].bias[k]);
                assert!((v - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vanishing_learning_rate_keeps_parameters() {
        let (_, set) = tiny_pairs(16, 8, 20, 5);
        let model = LinearSda::glorot(16, 8, &mut Prng::new(6)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-30,
            finetune_epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (after, _) = finetune(model.clone(), &set, &cfg).unwrap();
        for (a, b) in after.layers().iter().zip(model.layers()) {
            for (x, y) in a.weights.as_slice().iter().zip(b.weights.as_slice()) {
                assert!((x - y).abs() <= 1e-25);
            }
            for (x, y) in a.bias.iter().zip(b.bias.iter()) {
                assert!((x - y).abs() <= 1e-25);
            }
        }
    }

    #[test]
    fn finetune_is_deterministic_and_makes_progress() {
        let (_, set) = tiny_pairs(16, 8, 50, 7);
        let model = LinearSda::glorot(16, 8, &mut Prng::new(8)).unwrap();
        let cfg = TrainConfig {
            finetune_epochs: 500,
            learning_rate: 0.1,
            batch_size: 10,
            seed: 9,
            ..TrainConfig::default()
        };
        let (_, trace) = finetune(model.clone(), &set, &cfg).unwrap();
        let (_, again) = finetune(model, &set, &cfg).unwrap();
        assert_eq!(trace, again);
        assert_eq!(trace.len(), 501);
        assert!(
            trace[500] < 0.5 * trace[0],
            "{} vs {}",
            trace[500],
            trace[0]
        );
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let (_, set) = tiny_pairs(16, 4, 30, 11);
        let model = LinearSda::glorot(16, 4, &mut Prng::new(12)).unwrap();
        let mut perm: Vec<usize> = (0..30).collect();
        Prng::new(13).shuffle(&mut perm);
        let a = loss_l(&model, &set).unwrap();
        let b = loss_l(&model, &set.subset(&perm)).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn small_step_descends() {
        let mut descents = 0;
        let trials = 40;
        for t in 0..trials {
            let (_, set) = tiny_pairs(16, 4, 8, 100 + t);
            let mut model =
                NonlinearSda::glorot(16, 4, Activation::Sigmoid, &mut Prng::new(200 + t)).unwrap();
            let nl_set = TrainingSet::signals(set.targets().clone()).unwrap();
            let before = loss_nl(&model, &nl_set).unwrap();
            let g = grad_nl(&model, &nl_set).unwrap();
            sgd_step(model.layers_mut(), &g, 1e-4);
            if loss_nl(&model, &nl_set).unwrap() < before {
                descents += 1;
            }
        }
        assert!(descents * 100 >= 95 * trials, "{descents}/{trials}");
    }

    #[test]
    fn trace_csv_format() {
        let mut buf = Vec::new();
        let rows = [
            LossRecord {
                epoch: 0,
                phase: Phase::Pretrain(1),
                loss: 0.25,
            },
            LossRecord {
                epoch: 3,
                phase: Phase::Finetune,
                loss: 1.5,
            },
        ];
        write_loss_trace(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,phase,loss\n0,pretrain-1,0.25\n3,finetune,1.5\n"
        );
    }
}
