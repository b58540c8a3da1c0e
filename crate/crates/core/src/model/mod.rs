//! Recovery networks.
//!
//! Both architectures are plain stacks of dense layers whose widths alternate
//! between `N` (signal dimension) and `M` (measurement dimension):
//!
//! - [`LinearSda`] consumes fixed linear measurements `y = Φx` and runs three
//!   sigmoid layers `M → N → M → N`.
//! - [`NonlinearSda`] learns the measurement itself: a first layer
//!   `y = F(W₁x + b₁)` with `F` sigmoid or identity, followed by the same
//!   three-layer decoder.
//!
//! Every hidden and output unit is sigmoid, so outputs lie in `(0, 1)`.

mod energy;
mod format;

pub use energy::{dae_energy, grbm_energy, DaeLayer};
pub use format::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::numeric::{glorot_uniform, sigmoid, Matrix, Prng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn slope_at_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Linear,
    Nonlinear,
}

impl Architecture {
    pub fn tag(self) -> u32 {
        match self {
            Architecture::Linear => 1,
            Architecture::Nonlinear => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Linear => "l-sda",
            Architecture::Nonlinear => "nl-sda",
        }
    }
}

/// One fully connected layer, `a = act(W x + b)` with `W` of shape out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        if bias.dim() != weights.rows() {
            return Err(Error::mismatch("layer bias", weights.rows(), bias.dim()));
        }
        Ok(Dense {
            weights,
            bias,
            activation,
        })
    }

    pub fn glorot(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut Prng,
    ) -> Result<Self> {
        Ok(Dense {
            weights: glorot_uniform(fan_in, fan_out, rng)?,
            bias: Vector::zeros(fan_out),
            activation,
        })
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Dense {
            weights: Matrix::zeros(fan_out, fan_in),
            bias: Vector::zeros(fan_out),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.dim()
    }

    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        self.weights.matvec_into(x, out);
        for (o, b) in out.iter_mut().zip(self.bias.iter()) {
            *o = self.activation.apply(*o + b);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.in_dim() {
            return Err(Error::mismatch("layer input", self.in_dim(), x.len()));
        }
        let mut out = vec![0.0; self.out_dim()];
        self.forward_into(x, &mut out);
        Ok(out.into())
    }

    /// Applies the layer to every row of `input`.
    pub fn forward_rows(&self, input: &Matrix) -> Matrix {
        let mut z = input.mul_transposed(&self.weights);
        z.add_row_vector(&self.bias);
        let act = self.activation;
        z.map_inplace(|v| act.apply(v));
        z
    }

    fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.is_finite()
    }
}

/// Shared view of a recovery network as a layer stack.
pub trait SdaNetwork: Clone + Send + Sync {
    fn architecture(&self) -> Architecture;
    /// Signal dimension `N`.
    fn n(&self) -> usize;
    /// Measurement dimension `M`.
    fn m(&self) -> usize;
    fn layers(&self) -> &[Dense];
    /// Mutable layer access. Shapes must not change.
    fn layers_mut(&mut self) -> &mut [Dense];

    /// Dimension of the network input: `M` for L-SDA, `N` for NL-SDA.
    fn input_dim(&self) -> usize {
        self.layers()[0].in_dim()
    }

    fn param_count(&self) -> usize {
        self.layers().iter().map(Dense::param_count).sum()
    }

    /// Activations of every layer for one input, input first.
    fn activations(&self, input: &[f64]) -> Result<Vec<Vector>> {
        if input.len() != self.input_dim() {
            return Err(Error::mismatch(
                "network input",
                self.input_dim(),
                input.len(),
            ));
        }
        let mut acts = Vec::with_capacity(self.layers().len() + 1);
        acts.push(Vector::from(input));
        for layer in self.layers() {
            let mut out = vec![0.0; layer.out_dim()];
            layer.forward_into(acts.last().expect("nonempty"), &mut out);
            acts.push(out.into());
        }
        Ok(acts)
    }

    /// Network output for every row of `inputs`.
    fn forward_rows(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::mismatch(
                "network input",
                self.input_dim(),
                inputs.cols(),
            ));
        }
        let mut a = inputs.clone();
        for layer in self.layers() {
            a = layer.forward_rows(&a);
        }
        Ok(a)
    }
}

fn check_layer(layer: &Dense, name: &'static str, in_dim: usize, out_dim: usize) -> Result<()> {
    if layer.in_dim() != in_dim {
        return Err(Error::mismatch(name, in_dim, layer.in_dim()));
    }
    if layer.out_dim() != out_dim {
        return Err(Error::mismatch(name, out_dim, layer.out_dim()));
    }
    if layer.bias.dim() != out_dim {
        return Err(Error::mismatch(name, out_dim, layer.bias.dim()));
    }
    if !layer.is_finite() {
        return Err(Error::invalid(format!("{name} has non-finite parameters")));
    }
    Ok(())
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("need 1 <= M <= N, got N={n} M={m}")));
    }
    Ok(())
}

/// Recovery network fed by fixed linear measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSda {
    n: usize,
    m: usize,
    layers: Vec<Dense>,
}

impl LinearSda {
    /// Layers in order: `W₁ (N×M), W₂ (M×N), W₃ (N×M)`.
    pub fn from_layers(n: usize, m: usize, layers: Vec<Dense>) -> Result<Self> {
        check_dims(n, m)?;
        if layers.len() != 3 {
            return Err(Error::mismatch("L-SDA layer count", 3, layers.len()));
        }
        check_layer(&layers[0], "L-SDA layer 1", m, n)?;
        check_layer(&layers[1], "L-SDA layer 2", n, m)?;
        check_layer(&layers[2], "L-SDA layer 3", m, n)?;
        if layers.iter().any(|l| l.activation != Activation::Sigmoid) {
            return Err(Error::invalid("L-SDA layers are all sigmoid"));
        }
        Ok(LinearSda { n, m, layers })
    }

    pub fn from_parts(
        w1: Matrix,
        b1: Vector,
        w2: Matrix,
        b2: Vector,
        w3: Matrix,
        b3: Vector,
    ) -> Result<Self> {
        let n = w1.rows();
        let m = w1.cols();
        let s = Activation::Sigmoid;
        LinearSda::from_layers(
            n,
            m,
            vec![
                Dense::new(w1, b1, s)?,
                Dense::new(w2, b2, s)?,
                Dense::new(w3, b3, s)?,
            ],
        )
    }

    /// Glorot-initialized weights, zero biases; layers drawn in order.
    pub fn glorot(n: usize, m: usize, rng: &mut Prng) -> Result<Self> {
        check_dims(n, m)?;
        let s = Activation::Sigmoid;
        let layers = vec![
            Dense::glorot(m, n, s, rng)?,
            Dense::glorot(n, m, s, rng)?,
            Dense::glorot(m, n, s, rng)?,
        ];
        LinearSda::from_layers(n, m, layers)
    }

    pub fn zeros(n: usize, m: usize) -> Result<Self> {
        check_dims(n, m)?;
        let s = Activation::Sigmoid;
        LinearSda::from_layers(
            n,
            m,
            vec![
                Dense::zeros(m, n, s),
                Dense::zeros(n, m, s),
                Dense::zeros(m, n, s),
            ],
        )
    }

    pub fn w1(&self) -> &Matrix {
        &self.layers[0].weights
    }
    pub fn b1(&self) -> &Vector {
        &self.layers[0].bias
    }
    pub fn w2(&self) -> &Matrix {
        &self.layers[1].weights
    }
    pub fn b2(&self) -> &Vector {
        &self.layers[1].bias
    }
    pub fn w3(&self) -> &Matrix {
        &self.layers[2].weights
    }
    pub fn b3(&self) -> &Vector {
        &self.layers[2].bias
    }
}

impl SdaNetwork for LinearSda {
    fn architecture(&self) -> Architecture {
        Architecture::Linear
    }
    fn n(&self) -> usize {
        self.n
    }
    fn m(&self) -> usize {
        self.m
    }
    fn layers(&self) -> &[Dense] {
        &self.layers
    }
    fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }
}

/// Recovery network whose first layer is a learned measurement operator.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSda {
    n: usize,
    m: usize,
    layers: Vec<Dense>,
}

impl NonlinearSda {
    /// Layers in order: `W₁ (M×N)` with the measurement activation, then
    /// sigmoid `W₂ (N×M), W₃ (M×N), W₄ (N×M)`.
    pub fn from_layers(n: usize, m: usize, layers: Vec<Dense>) -> Result<Self> {
        check_dims(n, m)?;
        if layers.len() != 4 {
            return Err(Error::mismatch("NL-SDA layer count", 4, layers.len()));
        }
        check_layer(&layers[0], "NL-SDA layer 1", n, m)?;
        check_layer(&layers[1], "NL-SDA layer 2", m, n)?;
        check_layer(&layers[2], "NL-SDA layer 3", n, m)?;
        check_layer(&layers[3], "NL-SDA layer 4", m, n)?;
        if layers[1..]
            .iter()
            .any(|l| l.activation != Activation::Sigmoid)
        {
            return Err(Error::invalid(
                "NL-SDA layers after the measurement are sigmoid",
            ));
        }
        Ok(NonlinearSda { n, m, layers })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        measurement_activation: Activation,
        w1: Matrix,
        b1: Vector,
        w2: Matrix,
        b2: Vector,
        w3: Matrix,
        b3: Vector,
        w4: Matrix,
        b4: Vector,
    ) -> Result<Self> {
        let n = w1.cols();
        let m = w1.rows();
        let s = Activation::Sigmoid;
        NonlinearSda::from_layers(
            n,
            m,
            vec![
                Dense::new(w1, b1, measurement_activation)?,
                Dense::new(w2, b2, s)?,
                Dense::new(w3, b3, s)?,
                Dense::new(w4, b4, s)?,
            ],
        )
    }

    pub fn glorot(
        n: usize,
        m: usize,
        measurement_activation: Activation,
        rng: &mut Prng,
    ) -> Result<Self> {
        check_dims(n, m)?;
        let s = Activation::Sigmoid;
        let layers = vec![
            Dense::glorot(n, m, measurement_activation, rng)?,
            Dense::glorot(m, n, s, rng)?,
            Dense::glorot(n, m, s, rng)?,
            Dense::glorot(m, n, s, rng)?,
        ];
        NonlinearSda::from_layers(n, m, layers)
    }

    pub fn zeros(n: usize, m: usize, measurement_activation: Activation) -> Result<Self> {
        check_dims(n, m)?;
        let s = Activation::Sigmoid;
        NonlinearSda::from_layers(
            n,
            m,
            vec![
                Dense::zeros(n, m, measurement_activation),
                Dense::zeros(m, n, s),
                Dense::zeros(n, m, s),
                Dense::zeros(m, n, s),
            ],
        )
    }

    pub fn measurement_activation(&self) -> Activation {
        self.layers[0].activation
    }

    /// The learned measurement layer, `y = F(W₁x + b₁)`.
    pub fn measurement_layer(&self) -> &Dense {
        &self.layers[0]
    }

    pub fn w1(&self) -> &Matrix {
        &self.layers[0].weights
    }
    pub fn b1(&self) -> &Vector {
        &self.layers[0].bias
    }
    pub fn w2(&self) -> &Matrix {
        &self.layers[1].weights
    }
    pub fn b2(&self) -> &Vector {
        &self.layers[1].bias
    }
    pub fn w3(&self) -> &Matrix {
        &self.layers[2].weights
    }
    pub fn b3(&self) -> &Vector {
        &self.layers[2].bias
    }
    pub fn w4(&self) -> &Matrix {
        &self.layers[3].weights
    }
    pub fn b4(&self) -> &Vector {
        &self.layers[3].bias
    }
}

impl SdaNetwork for NonlinearSda {
    fn architecture(&self) -> Architecture {
        Architecture::Nonlinear
    }
    fn n(&self) -> usize {
        self.n
    }
    fn m(&self) -> usize {
        self.m
    }
    fn layers(&self) -> &[Dense] {
        &self.layers
    }
    fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }
}

/// Either architecture, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum SdaModel {
    Linear(LinearSda),
    Nonlinear(NonlinearSda),
}

impl SdaModel {
    pub fn architecture(&self) -> Architecture {
        match self {
            SdaModel::Linear(_) => Architecture::Linear,
            SdaModel::Nonlinear(_) => Architecture::Nonlinear,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            SdaModel::Linear(m) => m.n(),
            SdaModel::Nonlinear(m) => m.n(),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            SdaModel::Linear(m) => m.m(),
            SdaModel::Nonlinear(m) => m.m(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        match self {
            SdaModel::Linear(m) => m.layers(),
            SdaModel::Nonlinear(m) => m.layers(),
        }
    }
}

impl From<LinearSda> for SdaModel {
    fn from(m: LinearSda) -> Self {
        SdaModel::Linear(m)
    }
}

impl From<NonlinearSda> for SdaModel {
    fn from(m: NonlinearSda) -> Self {
        SdaModel::Nonlinear(m)
    }
}

/// Recovers `x̂` from linear measurements `y`.
pub fn forward_l(model: &LinearSda, y: &[f64]) -> Result<Vector> {
    if y.len() != model.m() {
        return Err(Error::mismatch("L-SDA measurement", model.m(), y.len()));
    }
    Ok(stack_output(model.layers(), y))
}

/// Measures `x` with the learned first layer and recovers it from that
/// measurement. Returns `(y, x̂)`.
pub fn forward_nl(model: &NonlinearSda, x: &[f64]) -> Result<(Vector, Vector)> {
    if x.len() != model.n() {
        return Err(Error::mismatch("NL-SDA signal", model.n(), x.len()));
    }
    let y = model.layers[0].forward(x)?;
    let xhat = stack_output(&model.layers[1..], &y);
    Ok((y, xhat))
}

fn stack_output(layers: &[Dense], input: &[f64]) -> Vector {
    let mut cur = input.to_vec();
    for layer in layers {
        let mut next = vec![0.0; layer.out_dim()];
        layer.forward_into(&cur, &mut next);
        cur = next;
    }
    cur.into()
}
