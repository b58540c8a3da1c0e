//! Sensing operators for the linear paradigm.

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Prng, Vector};

/// Fraction of measurements relative to the ambient dimension, `M / N`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct UndersamplingRatio(f64);

impl UndersamplingRatio {
    pub fn new(delta: f64) -> Result<Self> {
        if delta > 0.0 && delta <= 1.0 {
            Ok(UndersamplingRatio(delta))
        } else {
            Err(Error::invalid(format!(
                "under-sampling ratio must lie in (0, 1], got {delta}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `M = round(delta · n)`, at least one measurement.
    pub fn measurements_for(self, n: usize) -> usize {
        ((self.0 * n as f64).round() as usize).clamp(1, n.max(1))
    }
}

/// Fixed i.i.d. Gaussian measurement matrix `Φ` (M × N), entries `N(0, 1/M)`.
///
/// The matrix is a pure function of `(m, n, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    phi: Matrix,
    seed: u64,
}

impl LinearOperator {
    pub fn gaussian(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::invalid(format!(
                "operator dimensions must be nonzero, got {m}x{n}"
            )));
        }
        if m > n {
            return Err(Error::invalid(format!(
                "m = {m} exceeds n = {n}; the operator must under-sample"
            )));
        }
        let mut rng = Prng::new(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let data = (0..m * n).map(|_| scale * rng.normal()).collect();
        Ok(LinearOperator {
            phi: Matrix::from_vec(m, n, data)?,
            seed,
        })
    }

    /// Wraps explicit entries. `seed` is recorded as given and no longer
    /// regenerates `phi`; used for hand-built operators in tests.
    pub fn from_matrix(phi: Matrix, seed: u64) -> Result<Self> {
        if phi.rows() == 0 || phi.rows() > phi.cols() {
            return Err(Error::invalid(format!(
                "operator must be M x N with 1 <= M <= N, got {}x{}",
                phi.rows(),
                phi.cols()
            )));
        }
        Ok(LinearOperator { phi, seed })
    }

    pub fn m(&self) -> usize {
        self.phi.rows()
    }

    pub fn n(&self) -> usize {
        self.phi.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn delta(&self) -> f64 {
        self.m() as f64 / self.n() as f64
    }

    /// True when `phi` is exactly what `(m, n, seed)` generates.
    pub fn matches_seed(&self) -> bool {
        LinearOperator::gaussian(self.m(), self.n(), self.seed)
            .map(|regen| regen.phi == self.phi)
            .unwrap_or(false)
    }

    /// `y = Φ x`.
    pub fn measure(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.n() {
            return Err(Error::mismatch("measurement input", self.n(), x.len()));
        }
        self.phi.matvec(x)
    }

    /// `Φᵀ r`.
    pub fn adjoint(&self, r: &[f64]) -> Result<Vector> {
        if r.len() != self.m() {
            return Err(Error::mismatch("adjoint input", self.m(), r.len()));
        }
        self.phi.tr_matvec(r)
    }

    /// Measures every row of `signals` (one signal per row).
    pub fn measure_rows(&self, signals: &Matrix) -> Result<Matrix> {
        if signals.cols() != self.n() {
            return Err(Error::mismatch(
                "measurement input",
                self.n(),
                signals.cols(),
            ));
        }
        Ok(signals.mul_transposed(&self.phi))
    }
}

/// Draws an operator whose seed comes from `rng`.
pub fn sample_phi(m: usize, n: usize, rng: &mut Prng) -> Result<LinearOperator> {
    LinearOperator::gaussian(m, n, rng.next_u64())
}
