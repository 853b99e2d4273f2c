//! Library kernels against the independent reference implementations.
#![allow(clippy::excessive_precision)]

mod common;

use probdet::assignment::max_weight_assignment;
use probdet::fusion::psd_repair;
use probdet::normal::std_bvn_cdf_pair;
use probdet::pdq::{pixel_probability_pair, spatial_quality};
use probdet::{BBox, CovMatrix2, GroundTruthObject, Mask, Pixel, ProbBox};
use proptest::prelude::*;

fn cov() -> impl Strategy<Value = CovMatrix2> {
    (0.0..9.0f64, 0.0..9.0f64, -0.95..0.95f64).prop_map(|(a, b, r)| CovMatrix2::symmetric(a, r * (a * b).sqrt(), b))
}

fn prob_box() -> impl Strategy<Value = ProbBox> {
    (
        2.0..14.0f64,
        2.0..14.0f64,
        2.0..12.0f64,
        2.0..12.0f64,
        cov(),
        cov(),
        0.0..1.0f64,
    )
        .prop_map(|(x, y, w, h, cov_tl, cov_br, p)| ProbBox {
            tl: probdet::Corner::new(x, y),
            br: probdet::Corner::new(x + w, y + h),
            cov_tl,
            cov_br,
            label_probs: vec![p, 1.0 - p],
        })
}

#[test]
fn normal_cdf_reference_points() {
    // 30-digit values, rounded
    for (x, v) in [
        (-8.0, 6.2209605742717841235e-16),
        (-3.5, 2.3262907903552503635e-4),
        (-1.0, 0.15865525393145705141),
        (0.5, 0.69146246127401310364),
        (2.5, 0.99379033467422386483),
    ] {
        assert!((common::big_phi(x) - v).abs() <= 1e-14 * v, "x = {x}");
    }
}

#[test]
fn bivariate_cdf_reference_points() {
    // independent axes factorise
    let (p, q) = common::bvn_pair(0.3, -1.2, 0.0);
    let expected = common::big_phi(0.3) * common::big_phi(-1.2);
    assert!((p - expected).abs() < 1e-15);
    assert!((q - (1.0 - expected)).abs() < 1e-15);
    // P(X ≤ 0, Y ≤ 0) = 1/4 + asin(r)/2π
    for r in [-0.9, -0.5, 0.2, 0.7, 0.99] {
        let (p, _) = std_bvn_cdf_pair(0.0, 0.0, r);
        let exact = 0.25 + f64::asin(r) / (2.0 * std::f64::consts::PI);
        assert!((p - exact).abs() < 1e-14, "r = {r}");
        assert!((common::bvn_pair(0.0, 0.0, r).0 - exact).abs() < 1e-13, "r = {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bivariate_cdf_matches_integration(h in -9.0..9.0f64, k in -9.0..9.0f64, r in -0.98..0.98f64) {
        let (p, q) = std_bvn_cdf_pair(h, k, r);
        let (po, qo) = common::bvn_pair(h, k, r);
        prop_assert!((p - po).abs() <= 1e-13, "p {p} vs {po}");
        prop_assert!((q - qo).abs() <= 1e-13 + 1e-9 * qo, "q {q} vs {qo}");
    }

    #[test]
    fn pixel_probability_matches_reference(det in prob_box(), x in 0u32..24, y in 0u32..24) {
        let (p, q) = pixel_probability_pair(&det, Pixel::new(x, y));
        let (po, qo) = common::pixel_pair(&det, x, y);
        prop_assert!((p - po).abs() <= 1e-12);
        prop_assert!((q - qo).abs() <= 1e-12 + 1e-9 * qo);
    }

    #[test]
    fn psd_repair_matches_eigen_projection(a in -5.0..5.0f64, b in -5.0..5.0f64, d in -5.0..5.0f64) {
        let r = psd_repair(CovMatrix2::symmetric(a, b, d));
        let o = common::psd_project(a, b, d);
        prop_assert!((r.xx() - o[0][0]).abs() <= 1e-12);
        prop_assert!((r.xy() - o[0][1]).abs() <= 1e-12);
        prop_assert!((r.yy() - o[1][1]).abs() <= 1e-12);
        prop_assert!(r.is_psd());
    }

    #[test]
    fn assignment_total_is_optimal(w in proptest::collection::vec(proptest::collection::vec(0.0..1.0f64, 1..6), 1..6)) {
        let cols = w[0].len();
        let w: Vec<Vec<f64>> = w.into_iter().map(|mut r| { r.resize(cols, 0.0); r }).collect();
        let chosen = max_weight_assignment(&w);
        let total: f64 = chosen.iter().enumerate().filter_map(|(i, j)| j.map(|j| w[i][j])).sum();
        prop_assert_eq!(total, common::best_assignment_total(&w));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spatial_quality_matches_enumeration(det in prob_box(), x in 1u32..14, y in 1u32..14, w in 1u32..10, h in 1u32..10, holes in 0usize..4) {
        let (fw, fh) = (28, 28);
        let b = BBox::from_xyxy(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap();
        let mut gt = GroundTruthObject::box_shaped(0, b, fw, fh).unwrap();
        if holes > 0 && gt.mask.len() > holes {
            // non-rectangular segment inside the same box
            let kept: Vec<Pixel> = gt.mask.pixels().iter().copied().skip(holes).collect();
            gt.mask = Mask::from_pixels(kept).unwrap();
        }
        let lib = spatial_quality(&det, &gt, fw, fh).unwrap().spatial_q;
        let mut cache = common::PixelCache::new(&det);
        let oracle = common::spatial_quality(&mut cache, &gt, fw, fh);
        prop_assert!((lib - oracle).abs() <= 1e-9, "{lib} vs {oracle}");
    }
}
