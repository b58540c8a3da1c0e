mod common;

use proptest::prelude::*;

use sdarecon::baseline::{soft_threshold, HaarBasis};
use sdarecon::evaluation::{psnr_values, relative_error, success, Psnr};
use sdarecon::imaging::{extract_patches, patch_count, reassemble, GrayImage};
use sdarecon::numeric::{affine, sigmoid, Matrix, Prng};

fn unit_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigmoid_symmetry(x in -700.0f64..700.0) {
        let s = sigmoid(x);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s + sigmoid(-x) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn affine_is_linear_in_input(
        w in prop::collection::vec(-2.0f64..2.0, 12),
        a in prop::collection::vec(-1.0f64..1.0, 4),
        b in prop::collection::vec(-1.0f64..1.0, 4),
        alpha in -3.0f64..3.0,
    ) {
        let w = Matrix::from_vec(3, 4, w).unwrap();
        let zero = [0.0; 3];
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + alpha * y).collect();
        let lhs = affine(&w, &mix, &zero).unwrap();
        let fa = affine(&w, &a, &zero).unwrap();
        let fb = affine(&w, &b, &zero).unwrap();
        for i in 0..3 {
            prop_assert!((lhs[i] - fa[i] - alpha * fb[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn soft_threshold_shrinks(v in -10.0f64..10.0, lambda in 0.0f64..5.0) {
        let s = soft_threshold(v, lambda).unwrap();
        prop_assert!(s.abs() <= v.abs());
        prop_assert!(s == 0.0 || s.signum() == v.signum());
        prop_assert!((v.abs() - s.abs() - lambda.min(v.abs())).abs() <= 1e-12);
    }

    #[test]
    fn haar_is_an_isometry(levels in 1usize..=4, x in unit_vec(256)) {
        let basis = HaarBasis::new(16, levels).unwrap();
        let c = basis.forward(&x).unwrap();
        let back = basis.inverse(&c).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = c.iter().map(|v| v * v).sum();
        prop_assert!((ex - ec).abs() <= 1e-10);
        for (a, b) in x.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn patch_count_matches_extraction(h in 4usize..40, w in 4usize..40, p in 1usize..8, s in 1usize..8) {
        prop_assume!(s <= p && p <= h.min(w));
        let img = GrayImage::filled(h, w, 0.5).unwrap();
        let batch = extract_patches(&img, p, s).unwrap();
        let per_axis = |len: usize| (0..=len - p).filter(|o| o % s == 0).count();
        prop_assert_eq!(batch.len(), patch_count(h, w, p, s));
        prop_assert_eq!(batch.len(), per_axis(h) * per_axis(w));
        prop_assert!(batch.origins.iter().all(|&(r, c)| r + p <= h && c + p <= w));
    }

    #[test]
    fn reassembly_round_trip(p in 2usize..9, s in 1usize..9, a in 0usize..6, b in 0usize..6, seed in any::<u64>()) {
        let s = 1 + (s - 1) % p;
        let (h, w) = (p + a * s, p + b * s);
        let img = common::noise_image(h, w, &mut Prng::new(seed));
        let back = reassemble(&extract_patches(&img, p, s).unwrap(), h, w).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn psnr_is_symmetric(a in unit_vec(64), b in unit_vec(64)) {
        prop_assert_eq!(psnr_values(&a, &b).unwrap(), psnr_values(&b, &a).unwrap());
    }

    #[test]
    fn psnr_falls_as_noise_grows(x in unit_vec(64), dir in prop::collection::vec(-1.0f64..1.0, 64), t in 0.01f64..0.5) {
        prop_assume!(dir.iter().any(|v| v.abs() > 1e-3));
        let near: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
        let far: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + 2.0 * t * d).collect();
        let (Psnr::Finite(pn), Psnr::Finite(pf)) = (psnr_values(&x, &near).unwrap(), psnr_values(&x, &far).unwrap()) else {
            return Err(TestCaseError::fail("finite PSNR expected"));
        };
        prop_assert!(pf < pn);
    }

    #[test]
    fn success_monotone_in_threshold(x in unit_vec(32), y in unit_vec(32), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        prop_assume!(x.iter().any(|v| *v > 0.0));
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        if success(&x, &y, lo).unwrap() {
            prop_assert!(success(&x, &y, hi).unwrap());
        }
        prop_assert_eq!(success(&x, &y, hi).unwrap(), relative_error(&x, &y).unwrap() <= hi);
    }
}
