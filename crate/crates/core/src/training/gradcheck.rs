//! Central finite differences of the training loss.
//!
//! A naive `(L(θ+h) − L(θ−h)) / 2h` loses most of its digits to cancellation
//! once the loss sums a thousand outputs. Here the two perturbed forward passes
//! carry only their *differences* from the unperturbed pass, layer by layer:
//!
//! - at the perturbed layer the pre-activation changes by `±h·aⱼ` (weight) or
//!   `±h` (bias) in a single unit;
//! - a sigmoid maps a pre-activation change `d` at `z` to
//!   `σ(z+d) − σ(z) = −σ(z+d)·σ(−z)·expm1(−d)`, which keeps full relative
//!   precision;
//! - the loss difference per output is `(D⁺ − D⁻)(D⁺ + D⁻ + 2e)` with `e` the
//!   unperturbed residual.
//!
//! This is the same quotient, evaluated without subtracting nearly equal
//! losses. Backpropagation is never consulted.

use crate::error::{Error, Result};
use crate::model::{Activation, Dense, SdaNetwork};
use crate::numeric::{sigmoid, Prng};
use crate::training::{gradients, Gradients, TrainingSet};

/// Parameters enumerated exhaustively when the model has at most this many.
const EXHAUSTIVE_LIMIT: usize = 1000;
const SAMPLED_WEIGHTS_PER_LAYER: usize = 32;
const SAMPLED_BIASES_PER_LAYER: usize = 8;
const SAMPLE_SEED: u64 = 0x6EAD_C4EC;

/// A single scalar parameter of a layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    Weight {
        layer: usize,
        row: usize,
        col: usize,
    },
    Bias {
        layer: usize,
        row: usize,
    },
}

impl ParamRef {
    fn layer(self) -> usize {
        match self {
            ParamRef::Weight { layer, .. } | ParamRef::Bias { layer, .. } => layer,
        }
    }
}

/// The parameters a gradient check visits: all of them for small models,
/// otherwise a fixed pseudo-random selection of 40 per layer.
pub fn check_sample<N: SdaNetwork>(model: &N) -> Vec<ParamRef> {
    let layers = model.layers();
    let mut out = Vec::new();
    if model.param_count() <= EXHAUSTIVE_LIMIT {
        for (l, layer) in layers.iter().enumerate() {
            for row in 0..layer.out_dim() {
                for col in 0..layer.in_dim() {
                    out.push(ParamRef::Weight { layer: l, row, col });
                }
                out.push(ParamRef::Bias { layer: l, row });
            }
        }
        return out;
    }
    let mut rng = Prng::new(SAMPLE_SEED);
    for (l, layer) in layers.iter().enumerate() {
        for _ in 0..SAMPLED_WEIGHTS_PER_LAYER {
            out.push(ParamRef::Weight {
                layer: l,
                row: rng.below(layer.out_dim()),
                col: rng.below(layer.in_dim()),
            });
        }
        for _ in 0..SAMPLED_BIASES_PER_LAYER {
            out.push(ParamRef::Bias {
                layer: l,
                row: rng.below(layer.out_dim()),
            });
        }
    }
    out
}

struct BasePass {
    /// pre-activations per layer
    pre: Vec<Vec<f64>>,
    /// activations per layer, input first
    acts: Vec<Vec<f64>>,
}

fn base_pass(layers: &[Dense], input: &[f64]) -> BasePass {
    let mut pre = Vec::with_capacity(layers.len());
    let mut acts = vec![input.to_vec()];
    for layer in layers {
        let mut z = vec![0.0; layer.out_dim()];
        layer
            .weights
            .matvec_into(acts.last().expect("nonempty"), &mut z);
        for (zi, b) in z.iter_mut().zip(layer.bias.iter()) {
            *zi += b;
        }
        acts.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
        pre.push(z);
    }
    BasePass { pre, acts }
}

fn activation_delta(act: Activation, z: f64, d: f64) -> f64 {
    match act {
        Activation::Identity => d,
        Activation::Sigmoid => {
            if d == 0.0 {
                0.0
            } else {
                -sigmoid(z + d) * sigmoid(-z) * (-d).exp_m1()
            }
        }
    }
}

/// Output change caused by perturbing `param` by `shift`.
fn output_delta(layers: &[Dense], base: &BasePass, param: ParamRef, shift: f64) -> Vec<f64> {
    let start = param.layer();
    let layer = &layers[start];
    let mut dz = vec![0.0; layer.out_dim()];
    match param {
        ParamRef::Weight { row, col, .. } => dz[row] = shift * base.acts[start][col],
        ParamRef::Bias { row, .. } => dz[row] = shift,
    }
    let mut da: Vec<f64> = dz
        .iter()
        .zip(&base.pre[start])
        .map(|(&d, &z)| activation_delta(layer.activation, z, d))
        .collect();
    for (k, next) in layers.iter().enumerate().skip(start + 1) {
        let mut dz = vec![0.0; next.out_dim()];
        next.weights.matvec_into(&da, &mut dz);
        da = dz
            .iter()
            .zip(&base.pre[k])
            .map(|(&d, &z)| activation_delta(next.activation, z, d))
            .collect();
    }
    da
}

/// Central difference `(L(θ+h) − L(θ−h)) / 2h` of the batch-mean loss.
pub fn central_difference<N: SdaNetwork>(
    model: &N,
    batch: &TrainingSet,
    param: ParamRef,
    step: f64,
) -> Result<f64> {
    let bases = base_passes(model, batch)?;
    Ok(difference_from(model.layers(), &bases, batch, param, step))
}

fn base_passes<N: SdaNetwork>(model: &N, batch: &TrainingSet) -> Result<Vec<BasePass>> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient check batch"));
    }
    let inputs = batch.inputs_for(model)?;
    Ok(inputs
        .row_iter()
        .map(|x| base_pass(model.layers(), x))
        .collect())
}

fn difference_from(
    layers: &[Dense],
    bases: &[BasePass],
    batch: &TrainingSet,
    param: ParamRef,
    step: f64,
) -> f64 {
    let mut total = 0.0;
    for (i, base) in bases.iter().enumerate() {
        let plus = output_delta(layers, base, param, step);
        let minus = output_delta(layers, base, param, -step);
        let out = base.acts.last().expect("nonempty");
        let target = batch.targets().row(i);
        total += plus
            .iter()
            .zip(&minus)
            .zip(out.iter().zip(target))
            .map(|((p, m), (o, t))| (p - m) * (p + m + 2.0 * (o - t)))
            .sum::<f64>();
    }
    total / bases.len() as f64 / (2.0 * step)
}

/// Maximum relative deviation between backpropagated gradients and central
/// differences over [`check_sample`]:
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e−12)`.
pub fn gradient_check<N: SdaNetwork>(model: &N, batch: &TrainingSet, step: f64) -> Result<f64> {
    let analytic = gradients(model, batch)?;
    gradient_check_against(model, batch, step, &analytic)
}

/// [`gradient_check`] against externally supplied gradients.
pub fn gradient_check_against<N: SdaNetwork>(
    model: &N,
    batch: &TrainingSet,
    step: f64,
    analytic: &Gradients,
) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    if analytic.layers.len() != model.layers().len() {
        return Err(Error::mismatch(
            "gradient layer count",
            model.layers().len(),
            analytic.layers.len(),
        ));
    }
    let bases = base_passes(model, batch)?;
    let mut worst: f64 = 0.0;
    for param in check_sample(model) {
        let a = analytic.get(param);
        let c = difference_from(model.layers(), &bases, batch, param, step);
        let denom = a.abs().max(c.abs()).max(1e-12);
        worst = worst.max((a - c).abs() / denom);
    }
    Ok(worst)
}
