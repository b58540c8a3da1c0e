//! Reconstruction quality and timing metrics.

use std::fmt;
use std::hint::black_box;
use std::io::{self, Write};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::numeric::{norm2, Vector};

pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.01;
pub const REPORT_HEADER: &str = "method,delta,psnr_db,rel_error,success,recover_seconds";
pub const CURVE_HEADER: &str = "delta,p_success";

/// Peak signal-to-noise ratio in dB for unit-peak pixels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Psnr {
    Finite(f64),
    /// The images are identical.
    Infinite,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn from_mse(mse: f64) -> Psnr {
        if mse == 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Finite(10.0 * (1.0 / mse).log10())
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

pub fn mse(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::mismatch(
            "metric operands",
            reference.len(),
            estimate.len(),
        ));
    }
    if reference.is_empty() {
        return Err(Error::Empty("metric operands"));
    }
    let sum: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// `10·log₁₀(1 / MSE)`.
pub fn psnr(reference: &GrayImage, estimate: &GrayImage) -> Result<Psnr> {
    if (reference.height(), reference.width()) != (estimate.height(), estimate.width()) {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            reference.height(),
            reference.width(),
            estimate.height(),
            estimate.width()
        )));
    }
    psnr_values(reference.pixels(), estimate.pixels())
}

pub fn psnr_values(reference: &[f64], estimate: &[f64]) -> Result<Psnr> {
    Ok(Psnr::from_mse(mse(reference, estimate)?))
}

/// `‖estimate − reference‖₂ / ‖reference‖₂`.
pub fn relative_error(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::mismatch(
            "metric operands",
            reference.len(),
            estimate.len(),
        ));
    }
    let denom = norm2(reference);
    if denom == 0.0 {
        return Err(Error::invalid(
            "relative error undefined for an all-zero reference",
        ));
    }
    let num = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

pub fn success(reference: &[f64], estimate: &[f64], threshold: f64) -> Result<bool> {
    Ok(relative_error(reference, estimate)? <= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub delta: f64,
    pub p_success: f64,
}

/// Empirical success probability at each `delta`: the fraction of `signals`
/// that `recover(delta, signal)` reconstructs within `threshold`.
pub fn success_curve<F>(
    mut recover: F,
    signals: &[Vector],
    deltas: &[f64],
    threshold: f64,
) -> Result<Vec<CurvePoint>>
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
{
    if signals.is_empty() {
        return Err(Error::Empty("success-curve signals"));
    }
    if deltas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("deltas must be strictly ascending"));
    }
    let mut curve = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut hits = 0usize;
        for x in signals {
            let est = recover(delta, x)?;
            if success(x, &est, threshold)? {
                hits += 1;
            }
        }
        curve.push(CurvePoint {
            delta,
            p_success: hits as f64 / signals.len() as f64,
        });
    }
    Ok(curve)
}

/// Median wall-clock seconds for one pass of `recover` over `inputs`, after
/// an untimed warm-up pass.
pub fn time_recovery<I, O>(
    mut recover: impl FnMut(&I) -> O,
    inputs: &[I],
    repetitions: usize,
) -> Result<f64> {
    if repetitions < 3 {
        return Err(Error::invalid(format!(
            "at least 3 repetitions required, got {repetitions}"
        )));
    }
    for x in inputs {
        black_box(recover(x));
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for x in inputs {
            black_box(recover(black_box(x)));
        }
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}

/// One evaluated recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub method: String,
    pub delta: f64,
    pub psnr_db: Psnr,
    pub rel_error: f64,
    pub success: bool,
    pub recover_seconds: f64,
}

impl RecoveryReport {
    pub fn evaluate(
        method: impl Into<String>,
        delta: f64,
        reference: &GrayImage,
        estimate: &GrayImage,
        threshold: f64,
        recover_seconds: f64,
    ) -> Result<Self> {
        let psnr_db = psnr(reference, estimate)?;
        let rel_error = relative_error(reference.pixels(), estimate.pixels())?;
        Ok(RecoveryReport {
            method: method.into(),
            delta,
            psnr_db,
            rel_error,
            success: rel_error <= threshold,
            recover_seconds,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6e},{},{:.6e}",
            self.method,
            self.delta,
            self.psnr_db,
            self.rel_error,
            u8::from(self.success),
            self.recover_seconds
        )
    }
}

pub fn write_reports<W: Write>(mut out: W, reports: &[RecoveryReport]) -> io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_curve<W: Write>(mut out: W, curve: &[CurvePoint]) -> io::Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for p in curve {
        writeln!(out, "{},{}", p.delta, p.p_success)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn psnr_examples() {
        assert_eq!(Psnr::from_mse(0.01), Psnr::Finite(20.0));
        assert_eq!(Psnr::from_mse(1e-4), Psnr::Finite(40.0));
        let a = GrayImage::filled(4, 4, 0.5).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Infinite);
        assert_eq!(Psnr::Infinite.to_string(), "inf");
        let b = GrayImage::filled(4, 4, 0.6).unwrap();
        let v = psnr(&a, &b).unwrap().db().unwrap();
        assert!((v - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &GrayImage::filled(4, 5, 0.5).unwrap()).is_err());
    }

    #[test]
    fn success_examples() {
        let x = [3.0, 4.0];
        assert!(success(&x, &x, DEFAULT_SUCCESS_THRESHOLD).unwrap());
        // ‖x‖ = 5, so an error of 0.025 is 0.5%
        assert!(success(&x, &[3.025, 4.0], DEFAULT_SUCCESS_THRESHOLD).unwrap());
        assert!(!success(&x, &[3.1, 4.0], DEFAULT_SUCCESS_THRESHOLD).unwrap());
        assert!(success(&[0.0, 0.0], &x, 0.01).is_err());
    }

    #[test]
    fn curve_oracles() {
        let signals: Vec<Vector> = (1..=5).map(|i| Vector::filled(4, i as f64 * 0.1)).collect();
        let deltas = [0.1, 0.5, 0.9];
        let exact = success_curve(|_, x| Ok(x.clone()), &signals, &deltas, 0.01).unwrap();
        assert!(exact.iter().all(|p| p.p_success == 1.0));
        let zero =
            success_curve(|_, x| Ok(Vector::zeros(x.dim())), &signals, &deltas, 0.01).unwrap();
        assert!(zero.iter().all(|p| p.p_success == 0.0));
        assert!(success_curve(|_, x| Ok(x.clone()), &[], &deltas, 0.01).is_err());
        assert!(success_curve(|_, x| Ok(x.clone()), &signals, &[0.5, 0.1], 0.01).is_err());
    }

    #[test]
    fn timing_median_of_stub() {
        let stub = |_: &()| std::thread::sleep(Duration::from_millis(20));
        let t = time_recovery(stub, &[()], 3).unwrap();
        assert!((0.019..0.05).contains(&t), "{t}");
        assert!(time_recovery(stub, &[()], 2).is_err());
    }

    #[test]
    fn csv_rows() {
        let a = GrayImage::filled(2, 2, 0.5).unwrap();
        let r = RecoveryReport::evaluate("sda", 0.25, &a, &a, 0.01, 0.5).unwrap();
        assert_eq!(r.csv_row(), "sda,0.25,inf,0.000000e0,1,5.000000e-1");
        let mut buf = Vec::new();
        write_curve(
            &mut buf,
            &[CurvePoint {
                delta: 0.5,
                p_success: 0.75,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "delta,p_success\n0.5,0.75\n"
        );
    }
}
