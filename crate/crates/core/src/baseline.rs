//! Wavelet-sparsity baseline: orthonormal 2-D Haar transform and ISTA.

use crate::error::{Error, Result};
use crate::measurement::LinearOperator;
use crate::numeric::{norm2, Prng, Vector};

const POWER_ITERATIONS: usize = 30;
const POWER_SEED: u64 = 0x1574_0001;

/// An orthonormal transform between signal and coefficient space.
pub trait Basis {
    fn dim(&self) -> usize;
    /// Analysis, `Ψᵀx`.
    fn analyze_into(&self, x: &[f64], out: &mut [f64]);
    /// Synthesis, `Ψs`.
    fn synthesize_into(&self, s: &[f64], out: &mut [f64]);
}

/// Standard basis of `ℝⁿ`; ISTA over it is plain ℓ1-regularized least squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Canonical(pub usize);

impl Basis for Canonical {
    fn dim(&self) -> usize {
        self.0
    }
    fn analyze_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn synthesize_into(&self, s: &[f64], out: &mut [f64]) {
        out.copy_from_slice(s);
    }
}

/// Multi-level 2-D Haar wavelets on `size × size` patches, Mallat layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaarBasis {
    size: usize,
    levels: usize,
}

impl HaarBasis {
    pub fn new(size: usize, levels: usize) -> Result<Self> {
        if !size.is_power_of_two() || size < 2 {
            return Err(Error::invalid(format!(
                "Haar size must be a power of two ≥ 2, got {size}"
            )));
        }
        let max = size.trailing_zeros() as usize;
        if levels == 0 || levels > max {
            return Err(Error::invalid(format!(
                "Haar levels must be in 1..={max} for size {size}, got {levels}"
            )));
        }
        Ok(HaarBasis { size, levels })
    }

    /// All `log₂ size` levels, leaving one approximation coefficient.
    pub fn full(size: usize) -> Result<Self> {
        if !size.is_power_of_two() || size < 2 {
            return Err(Error::invalid(format!(
                "Haar size must be a power of two ≥ 2, got {size}"
            )));
        }
        Self::new(size, size.trailing_zeros() as usize)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        self.check(x.len())?;
        let mut out = vec![0.0; x.len()];
        self.analyze_into(x, &mut out);
        Ok(out.into())
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vector> {
        self.check(coeffs.len())?;
        let mut out = vec![0.0; coeffs.len()];
        self.synthesize_into(coeffs, &mut out);
        Ok(out.into())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::mismatch("Haar input", self.dim(), len));
        }
        Ok(())
    }
}

impl Basis for HaarBasis {
    fn dim(&self) -> usize {
        self.size * self.size
    }

    fn analyze_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.size;
        out.copy_from_slice(x);
        let mut tmp = vec![0.0; n];
        for level in 0..self.levels {
            let len = n >> level;
            for r in 0..len {
                split(&mut out[r * n..r * n + len], &mut tmp);
            }
            for c in 0..len {
                let mut col: Vec<f64> = (0..len).map(|r| out[r * n + c]).collect();
                split(&mut col, &mut tmp);
                for (r, v) in col.into_iter().enumerate() {
                    out[r * n + c] = v;
                }
            }
        }
    }

    fn synthesize_into(&self, s: &[f64], out: &mut [f64]) {
        let n = self.size;
        out.copy_from_slice(s);
        let mut tmp = vec![0.0; n];
        for level in (0..self.levels).rev() {
            let len = n >> level;
            for c in 0..len {
                let mut col: Vec<f64> = (0..len).map(|r| out[r * n + c]).collect();
                merge(&mut col, &mut tmp);
                for (r, v) in col.into_iter().enumerate() {
                    out[r * n + c] = v;
                }
            }
            for r in 0..len {
                merge(&mut out[r * n..r * n + len], &mut tmp);
            }
        }
    }
}

/// One analysis step: pairwise averages then differences, each over √2.
fn split(v: &mut [f64], tmp: &mut [f64]) {
    let half = v.len() / 2;
    for i in 0..half {
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        tmp[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
        tmp[half + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
    }
    v.copy_from_slice(&tmp[..v.len()]);
}

fn merge(v: &mut [f64], tmp: &mut [f64]) {
    let half = v.len() / 2;
    for i in 0..half {
        let (s, d) = (v[i], v[half + i]);
        tmp[2 * i] = (s + d) * std::f64::consts::FRAC_1_SQRT_2;
        tmp[2 * i + 1] = (s - d) * std::f64::consts::FRAC_1_SQRT_2;
    }
    v.copy_from_slice(&tmp[..v.len()]);
}

pub fn haar_forward(x: &[f64], basis: &HaarBasis) -> Result<Vector> {
    basis.forward(x)
}

pub fn haar_inverse(coeffs: &[f64], basis: &HaarBasis) -> Result<Vector> {
    basis.inverse(coeffs)
}

/// `sign(v)·max(|v| − λ, 0)`.
pub fn soft_threshold(v: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "threshold must be ≥ 0, got {lambda}"
        )));
    }
    Ok(shrink(v, lambda))
}

#[inline]
fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `1 / L` with `L` from power iteration on `ΦᵀΦ`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub step: StepSize,
}

impl Default for IstaConfig {
    fn default() -> Self {
        IstaConfig {
            lambda: 1e-3,
            max_iters: 100,
            step: StepSize::Auto,
        }
    }
}

impl IstaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if let StepSize::Fixed(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("step must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Power-iteration estimate of the largest eigenvalue of `ΦᵀΦ`.
pub fn lipschitz_estimate(op: &LinearOperator) -> Result<f64> {
    let mut rng = Prng::new(POWER_SEED);
    let mut v: Vec<f64> = (0..op.n()).map(|_| rng.normal()).collect();
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let nv = norm2(&v);
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let w = op.adjoint(&op.measure(&v)?)?;
        estimate = norm2(&w);
        v = w.into_inner();
    }
    if !(estimate > 0.0 && estimate.is_finite()) {
        return Err(Error::invalid("operator has no positive singular value"));
    }
    Ok(estimate)
}

/// Result of one ISTA solve.
#[derive(Debug, Clone, PartialEq)]
pub struct IstaOutcome {
    /// `Ψs` clamped to `[0, 1]`.
    pub estimate: Vector,
    pub coefficients: Vector,
    /// `½‖y − ΦΨs‖² + λ‖s‖₁` at the start and after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub step: f64,
}

/// ISTA bound to one operator and basis; the step is resolved once.
#[derive(Debug, Clone)]
pub struct IstaSolver<'a, B: Basis> {
    op: &'a LinearOperator,
    basis: &'a B,
    cfg: IstaConfig,
    step: f64,
}

impl<'a, B: Basis> IstaSolver<'a, B> {
    pub fn new(op: &'a LinearOperator, basis: &'a B, cfg: IstaConfig) -> Result<Self> {
        cfg.validate()?;
        if op.n() != basis.dim() {
            return Err(Error::mismatch("ISTA basis dimension", op.n(), basis.dim()));
        }
        let step = match cfg.step {
            StepSize::Auto => 1.0 / lipschitz_estimate(op)?,
            StepSize::Fixed(s) => s,
        };
        Ok(IstaSolver {
            op,
            basis,
            cfg,
            step,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn recover(&self, y: &[f64]) -> Result<Vector> {
        Ok(self.recover_traced(y)?.estimate)
    }

    pub fn recover_traced(&self, y: &[f64]) -> Result<IstaOutcome> {
        let (m, n) = (self.op.m(), self.op.n());
        if y.len() != m {
            return Err(Error::mismatch("ISTA measurements", m, y.len()));
        }
        let phi = self.op.phi();
        let lambda = self.cfg.lambda;
        let threshold = self.step * lambda;

        let mut s = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut residual = vec![0.0; m];
        let mut grad_x = vec![0.0; n];
        let mut grad_s = vec![0.0; n];
        let mut objective = Vec::with_capacity(self.cfg.max_iters + 1);

        // residual and objective at the current `s`
        let evaluate = |s: &[f64], x: &mut [f64], residual: &mut [f64]| -> f64 {
            self.basis.synthesize_into(s, x);
            phi.matvec_into(x, residual);
            for (r, yi) in residual.iter_mut().zip(y) {
                *r = yi - *r;
            }
            let l1: f64 = s.iter().map(|v| v.abs()).sum();
            0.5 * residual.iter().map(|r| r * r).sum::<f64>() + lambda * l1
        };

        let mut best = (evaluate(&s, &mut x, &mut residual), s.clone());
        objective.push(best.0);
        for _ in 0..self.cfg.max_iters {
            phi.tr_matvec_into(&residual, &mut grad_x);
            self.basis.analyze_into(&grad_x, &mut grad_s);
            for (si, gi) in s.iter_mut().zip(&grad_s) {
                *si = shrink(*si + self.step * gi, threshold);
            }
            let f = evaluate(&s, &mut x, &mut residual);
            objective.push(f);
            if f <= best.0 {
                best = (f, s.clone());
            }
        }
        let coefficients = best.1;
        let mut estimate = vec![0.0; n];
        self.basis.synthesize_into(&coefficients, &mut estimate);
        estimate.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(IstaOutcome {
            estimate: estimate.into(),
            coefficients: coefficients.into(),
            objective,
            iterations: self.cfg.max_iters,
            step: self.step,
        })
    }
}

pub fn ista_recover(
    y: &[f64],
    op: &LinearOperator,
    basis: &HaarBasis,
    cfg: &IstaConfig,
) -> Result<Vector> {
    IstaSolver::new(op, basis, *cfg)?.recover(y)
}

pub fn ista_recover_traced(
    y: &[f64],
    op: &LinearOperator,
    basis: &HaarBasis,
    cfg: &IstaConfig,
) -> Result<IstaOutcome> {
    IstaSolver::new(op, basis, *cfg)?.recover_traced(y)
}

/// A `k`-sparse Haar-domain signal with pixels in `[0.05, 0.95]`.
///
/// The approximation coefficient fixes the mean at 0.5; `k − 1` detail
/// coefficients at distinct random positions are drawn from a normal and
/// scaled so the detail image peaks at a random amplitude in `[0.225, 0.45]`.
/// Returns the signal and its coefficients.
pub fn sparse_haar_signal(basis: &HaarBasis, k: usize, rng: &mut Prng) -> Result<(Vector, Vector)> {
    let n = basis.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "sparsity must be in 1..={n}, got {k}"
        )));
    }
    let mut positions: Vec<usize> = (1..n).collect();
    rng.shuffle(&mut positions);
    let mut detail = vec![0.0; n];
    for &p in &positions[..k - 1] {
        let mut v = rng.normal();
        while v.abs() < 0.1 {
            v = rng.normal();
        }
        detail[p] = v;
    }
    let image = basis.inverse(&detail)?;
    let peak = image.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let amplitude = 0.45 * rng.uniform(0.5, 1.0);
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    let mut coeffs = detail;
    coeffs.iter_mut().for_each(|v| *v *= scale);
    coeffs[0] = 0.5 * basis.size() as f64;
    let x = basis.inverse(&coeffs)?;
    Ok((x, coeffs.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Prng::new(seed);
        (0..n).map(|_| rng.next_f64()).collect()
    }

    #[test]
    fn constant_patch_has_one_coefficient() {
        let basis = HaarBasis::full(8).unwrap();
        let c = basis.forward(&[0.3; 64]).unwrap();
        assert!((c[0] - 0.3 * 8.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip_and_parseval() {
        for levels in 1..=5 {
            let basis = HaarBasis::new(32, levels).unwrap();
            let x = random(1024, levels as u64);
            let c = basis.forward(&x).unwrap();
            let back = basis.inverse(&c).unwrap();
            let err = x
                .iter()
                .zip(back.iter())
                .fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()));
            assert!(err <= 1e-10, "{err}");
            assert!((norm2(&c) - norm2(&x)).abs() <= 1e-10);
        }
    }

    #[test]
    fn two_by_two_by_hand() {
        let basis = HaarBasis::full(2).unwrap();
        let c = basis.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let want = [5.0, -1.0, -2.0, 0.0];
        for (a, b) in c.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn invalid_haar_sizes() {
        assert!(HaarBasis::full(12).is_err());
        assert!(HaarBasis::new(8, 4).is_err());
        assert!(HaarBasis::new(8, 0).is_err());
        assert!(HaarBasis::full(8).unwrap().forward(&[0.0; 10]).is_err());
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0).unwrap(), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0).unwrap(), -2.0);
        for l in [0.0, 0.1, 5.0] {
            assert_eq!(soft_threshold(0.0, l).unwrap(), 0.0);
        }
        assert!(soft_threshold(1.0, -0.1).is_err());
    }

    #[test]
    fn zero_measurements_give_zero() {
        let basis = HaarBasis::full(4).unwrap();
        let op = LinearOperator::gaussian(8, 16, 1).unwrap();
        let out = ista_recover_traced(&[0.0; 8], &op, &basis, &IstaConfig::default()).unwrap();
        assert!(out.estimate.iter().all(|&v| v == 0.0));
        assert!(out.objective.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn power_iteration_matches_small_case() {
        // Φ = diag(3, 1) padded: ΦᵀΦ has top eigenvalue 9
        let phi =
            crate::numeric::Matrix::from_vec(2, 3, vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let op = LinearOperator::from_matrix(phi, 0).unwrap();
        assert!((lipschitz_estimate(&op).unwrap() - 9.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_sparse_signal() {
        let basis = HaarBasis::full(8).unwrap();
        let op = LinearOperator::gaussian(48, 64, 3).unwrap();
        let cfg = IstaConfig {
            lambda: 1e-2,
            max_iters: 500,
            step: StepSize::Auto,
        };
        let mut rng = Prng::new(4);
        for _ in 0..5 {
            let (x, _) = sparse_haar_signal(&basis, 5, &mut rng).unwrap();
            let y = op.measure(&x).unwrap();
            let out = ista_recover_traced(&y, &op, &basis, &cfg).unwrap();
            let err: f64 = x
                .iter()
                .zip(out.estimate.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err / x.norm() <= 1e-2, "{}", err / x.norm());
            for w in out.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_signals_are_sparse_and_in_range() {
        let basis = HaarBasis::full(16).unwrap();
        let mut rng = Prng::new(9);
        for k in [1, 3, 13] {
            let (x, s) = sparse_haar_signal(&basis, k, &mut rng).unwrap();
            assert_eq!(s.iter().filter(|v| **v != 0.0).count(), k);
            assert!(x.iter().all(|v| (0.05 - 1e-12..=0.95 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn canonical_basis_dimension_checked() {
        let op = LinearOperator::gaussian(4, 16, 1).unwrap();
        assert!(IstaSolver::new(&op, &Canonical(15), IstaConfig::default()).is_err());
        assert!(IstaSolver::new(&op, &Canonical(16), IstaConfig::default()).is_ok());
    }
}
