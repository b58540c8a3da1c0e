//! Patch-wise image recovery: tile, recover each patch, average overlaps.

use std::thread;

use crate::baseline::{Basis, IstaSolver};
use crate::error::{Error, Result};
use crate::imaging::{extract_patches, reassemble, GrayImage};
use crate::measurement::LinearOperator;
use crate::model::{SdaModel, SdaNetwork};
use crate::numeric::Matrix;

/// Environment variable holding the worker count for patch-parallel work.
pub const THREADS_ENV: &str = "SDA_THREADS";

/// Worker count from [`THREADS_ENV`]; 1 when unset or unparsable.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

/// Applies `f` to contiguous row blocks of `rows` on up to `threads` workers
/// and concatenates the results in row order.
pub fn map_row_blocks<F>(rows: &Matrix, threads: usize, f: F) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<Matrix> + Sync,
{
    let threads = threads.clamp(1, rows.rows().max(1));
    if threads == 1 {
        return f(rows);
    }
    let per = rows.rows().div_ceil(threads);
    let blocks: Vec<Matrix> = (0..rows.rows())
        .step_by(per)
        .map(|start| rows.select_rows(&(start..(start + per).min(rows.rows())).collect::<Vec<_>>()))
        .collect();
    let results: Vec<Result<Matrix>> = thread::scope(|s| {
        let handles: Vec<_> = blocks.iter().map(|b| s.spawn(|| f(b))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut data = Vec::with_capacity(rows.rows() * rows.cols());
    let mut cols = 0;
    for r in results {
        let m = r?;
        cols = m.cols();
        data.extend_from_slice(m.as_slice());
    }
    Matrix::from_vec(rows.rows(), cols, data)
}

/// SDA recovery of every row of `patches`. L-SDA needs the sensing operator;
/// NL-SDA measures with its own first layer.
pub fn sda_recover_rows(
    model: &SdaModel,
    op: Option<&LinearOperator>,
    patches: &Matrix,
) -> Result<Matrix> {
    if patches.cols() != model.n() {
        return Err(Error::mismatch(
            "patch dimension vs model N",
            model.n(),
            patches.cols(),
        ));
    }
    match model {
        SdaModel::Linear(m) => {
            let op =
                op.ok_or_else(|| Error::invalid("L-SDA recovery needs its sensing operator"))?;
            if (op.m(), op.n()) != (m.m(), m.n()) {
                return Err(Error::mismatch("operator rows vs model M", m.m(), op.m()));
            }
            m.forward_rows(&op.measure_rows(patches)?)
        }
        SdaModel::Nonlinear(m) => m.forward_rows(patches),
    }
}

/// ISTA recovery of every row of `patches` from `Φx`.
pub fn ista_recover_rows<B: Basis>(
    solver: &IstaSolver<'_, B>,
    op: &LinearOperator,
    patches: &Matrix,
) -> Result<Matrix> {
    let y = op.measure_rows(patches)?;
    let mut data = Vec::with_capacity(patches.rows() * patches.cols());
    for row in y.row_iter() {
        data.extend_from_slice(&solver.recover(row)?);
    }
    Matrix::from_vec(patches.rows(), patches.cols(), data)
}

/// Tiles `img`, recovers all patches with `recover`, and reassembles.
pub fn recover_image<F>(
    img: &GrayImage,
    patch_size: usize,
    stride: usize,
    recover: F,
) -> Result<GrayImage>
where
    F: FnOnce(&Matrix) -> Result<Matrix>,
{
    let batch = extract_patches(img, patch_size, stride)?;
    let recovered = recover(&batch.to_matrix())?;
    let clamped = {
        let mut m = recovered;
        m.map_inplace(|v| v.clamp(0.0, 1.0));
        m
    };
    reassemble(&batch.with_contents(&clamped)?, img.height(), img.width())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{Canonical, IstaConfig};
    use crate::model::{Activation, LinearSda, NonlinearSda};
    use crate::numeric::Prng;

    #[test]
    fn blocks_preserve_order() {
        let m = Matrix::from_vec(7, 2, (0..14).map(f64::from).collect()).unwrap();
        for t in 1..=8 {
            let out = map_row_blocks(&m, t, |b| {
                let mut b = b.clone();
                b.scale(2.0);
                Ok(b)
            })
            .unwrap();
            assert_eq!(
                out.as_slice(),
                (0..14)
                    .map(|v| 2.0 * v as f64)
                    .collect::<Vec<_>>()
                    .as_slice()
            );
        }
    }

    #[test]
    fn sda_dimension_checked() {
        let model: SdaModel = NonlinearSda::glorot(16, 4, Activation::Sigmoid, &mut Prng::new(1))
            .unwrap()
            .into();
        assert!(matches!(
            sda_recover_rows(&model, None, &Matrix::zeros(3, 9)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(
            sda_recover_rows(&model, None, &Matrix::zeros(3, 16))
                .unwrap()
                .rows(),
            3
        );
        let linear: SdaModel = LinearSda::glorot(16, 4, &mut Prng::new(1)).unwrap().into();
        assert!(sda_recover_rows(&linear, None, &Matrix::zeros(3, 16)).is_err());
    }

    #[test]
    fn recovered_image_in_range() {
        let img = GrayImage::from_fn(16, 16, |r, c| ((r + c) % 5) as f64 / 4.0).unwrap();
        let op = LinearOperator::gaussian(8, 16, 2).unwrap();
        let basis = Canonical(16);
        let solver = IstaSolver::new(&op, &basis, IstaConfig::default()).unwrap();
        let out = recover_image(&img, 4, 2, |p| ista_recover_rows(&solver, &op, p)).unwrap();
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
