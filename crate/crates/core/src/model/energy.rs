//! Unnormalized energies of a sigmoid-hidden denoising autoencoder and of a
//! Gaussian–Bernoulli RBM. Only differences and orderings are meaningful; the
//! autoencoder's additive constant is fixed to zero.

use crate::error::{Error, Result};
use crate::numeric::{dot, softplus, Matrix, Vector};

/// Encoder weights plus the hidden and reconstruction biases of a DAE.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeLayer {
    /// hidden × visible
    pub w: Matrix,
    pub b_hidden: Vector,
    pub c_recon: Vector,
}

impl DaeLayer {
    pub fn new(w: Matrix, b_hidden: Vector, c_recon: Vector) -> Result<Self> {
        if w.rows() != b_hidden.dim() {
            return Err(Error::mismatch("DAE hidden bias", w.rows(), b_hidden.dim()));
        }
        if w.cols() != c_recon.dim() {
            return Err(Error::mismatch(
                "DAE reconstruction bias",
                w.cols(),
                c_recon.dim(),
            ));
        }
        Ok(DaeLayer {
            w,
            b_hidden,
            c_recon,
        })
    }

    pub fn visible_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }
}

/// `E(x) = Σⱼ ln(1 + exp(wⱼ·x + bⱼ)) − ½‖x − c‖²`.
pub fn dae_energy(layer: &DaeLayer, x: &[f64]) -> Result<f64> {
    if x.len() != layer.visible_dim() {
        return Err(Error::mismatch(
            "DAE energy input",
            layer.visible_dim(),
            x.len(),
        ));
    }
    let hidden: f64 = layer
        .w
        .row_iter()
        .zip(layer.b_hidden.iter())
        .map(|(row, b)| softplus(dot(row, x) + b))
        .sum();
    let quad: f64 = x
        .iter()
        .zip(layer.c_recon.iter())
        .map(|(xi, ci)| (xi - ci) * (xi - ci))
        .sum();
    Ok(hidden - 0.5 * quad)
}

/// Gaussian–Bernoulli RBM energy
/// `Σᵢ (vᵢ−bᵢ)²/(2σᵢ²) − Σᵢⱼ Wᵢⱼ hⱼ vᵢ/σᵢ − Σⱼ cⱼ hⱼ`,
/// with `w` of shape visible × hidden.
pub fn grbm_energy(
    w: &Matrix,
    b_vis: &[f64],
    c_hid: &[f64],
    sigma: &[f64],
    v: &[f64],
    h: &[f64],
) -> Result<f64> {
    let (nv, nh) = (w.rows(), w.cols());
    for (what, len, want) in [
        ("GRBM visible bias", b_vis.len(), nv),
        ("GRBM sigma", sigma.len(), nv),
        ("GRBM visible state", v.len(), nv),
        ("GRBM hidden bias", c_hid.len(), nh),
        ("GRBM hidden state", h.len(), nh),
    ] {
        if len != want {
            return Err(Error::mismatch(what, want, len));
        }
    }
    if let Some(bad) = h.iter().find(|&&hj| hj != 0.0 && hj != 1.0) {
        return Err(Error::invalid(format!(
            "hidden units must be binary, found {bad}"
        )));
    }
    if let Some(bad) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::invalid(format!(
            "sigma entries must be positive, found {bad}"
        )));
    }

    let mut energy = 0.0;
    for i in 0..nv {
        let scaled = v[i] / sigma[i];
        energy += (v[i] - b_vis[i]).powi(2) / (2.0 * sigma[i] * sigma[i]);
        energy -= scaled * dot(w.row(i), h);
    }
    energy -= dot(c_hid, h);
    Ok(energy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_layer(hidden: usize, visible: usize) -> DaeLayer {
        DaeLayer::new(
            Matrix::zeros(hidden, visible),
            Vector::zeros(hidden),
            Vector::zeros(visible),
        )
        .unwrap()
    }

    #[test]
    fn dae_energy_examples() {
        let ln2 = std::f64::consts::LN_2;
        let layer = zero_layer(4, 2);
        assert!((dae_energy(&layer, &[0.0, 0.0]).unwrap() - 4.0 * ln2).abs() < 1e-12);
        assert!((dae_energy(&layer, &[1.0, 1.0]).unwrap() - (4.0 * ln2 - 1.0)).abs() < 1e-12);

        let one = DaeLayer::new(
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            Vector::zeros(1),
            Vector::zeros(1),
        )
        .unwrap();
        let want = (1.0 + std::f64::consts::E).ln() - 0.5;
        assert!((dae_energy(&one, &[1.0]).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.813_261_7).abs() < 1e-7);

        assert!(dae_energy(&layer, &[0.0]).is_err());
    }

    #[test]
    fn dae_quadratic_regime_closed_form() {
        let mut layer = zero_layer(3, 3);
        layer.c_recon = Vector::from(vec![0.2, -0.1, 0.4]);
        let x1 = [0.5, 0.5, 0.5];
        let x2 = [0.9, -0.3, 0.0];
        let sq = |x: &[f64]| -> f64 {
            x.iter()
                .zip(layer.c_recon.iter())
                .map(|(a, c)| (a - c).powi(2))
                .sum()
        };
        let diff = dae_energy(&layer, &x1).unwrap() - dae_energy(&layer, &x2).unwrap();
        assert!((diff - (-0.5 * (sq(&x1) - sq(&x2)))).abs() < 1e-12);
    }

    #[test]
    fn grbm_examples() {
        let w = Matrix::from_vec(2, 3, vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.7]).unwrap();
        let b = [0.4, -0.2];
        let e = grbm_energy(&w, &b, &[1.0, 2.0, 3.0], &[0.5, 2.0], &b, &[0.0; 3]).unwrap();
        assert_eq!(e, 0.0);

        let e = grbm_energy(
            &Matrix::zeros(1, 2),
            &[0.0],
            &[0.0, 0.0],
            &[1.0],
            &[2.0],
            &[1.0, 0.0],
        )
        .unwrap();
        assert!((e - 2.0).abs() < 1e-12);

        let w1 = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        let e = grbm_energy(&w1, &[0.0], &[1.0], &[1.0], &[1.0], &[1.0]).unwrap();
        assert!((e - (-3.5)).abs() < 1e-12);
    }

    #[test]
    fn grbm_rejects_bad_inputs() {
        let w = Matrix::zeros(1, 1);
        assert!(grbm_energy(&w, &[0.0], &[0.0], &[1.0], &[0.0], &[0.5]).is_err());
        assert!(grbm_energy(&w, &[0.0], &[0.0], &[0.0], &[0.0], &[1.0]).is_err());
        assert!(grbm_energy(&w, &[0.0], &[0.0], &[-1.0], &[0.0], &[1.0]).is_err());
        assert!(grbm_energy(&w, &[0.0, 1.0], &[0.0], &[1.0], &[0.0], &[1.0]).is_err());
    }
}
