mod common;

use common::{random_soft, voronoi_lab};
use nightguide::bilateral::{
    cross_bilateral_align, cross_bilateral_align_grid, cross_bilateral_align_rows, srgb_pixel_to_lab,
    BilateralParams, LabImage,
};
use nightguide::types::SoftPredictionMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs(a: &SoftPredictionMap, b: &SoftPredictionMap) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn three_pixel_oracle() {
    let lab = LabImage::new(1, 3, vec![[50.0, 0.0, 0.0], [52.0, 0.0, 0.0], [90.0, 0.0, 0.0]]).unwrap();
    let s = SoftPredictionMap::new(1, 3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]).unwrap();
    let p = BilateralParams::with_radius(1.0, 10.0, 2).unwrap();
    let out = cross_bilateral_align(&s, &lab, &p).unwrap();
    let expect = [
        0.627144146206001,
        0.3728558537939989,
        0.3728876174759581,
        0.627112382524042,
        0.4998008670908033,
        0.5001991329091968,
    ];
    for (a, b) in out.data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn mid_gray_lightness() {
    let l = srgb_pixel_to_lab([128, 128, 128]);
    assert!((l[0] - 53.585013452169036).abs() < 1e-9);
    assert!(l[1].abs() < 1e-9 && l[2].abs() < 1e-9);
    assert_eq!(srgb_pixel_to_lab([255, 255, 255]), [100.0, 0.0, 0.0]);
}

#[test]
fn constant_prediction_is_reproduced() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lab = voronoi_lab(&mut rng, 40, 50);
    let dist = [0.1, 0.2, 0.3, 0.4];
    let s = SoftPredictionMap::constant(40, 50, &dist).unwrap();
    let p = BilateralParams::new(6.0, 10.0).unwrap();
    for out in [
        cross_bilateral_align(&s, &lab, &p).unwrap(),
        cross_bilateral_align_grid(&s, &lab, &p).unwrap(),
    ] {
        for px in out.pixels() {
            for (a, b) in px.iter().zip(dist) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn flat_reference_reduces_to_gaussian_blur() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (12, 15);
    let s = random_soft(&mut rng, h, w, 3);
    let lab = LabImage::constant(h, w, [40.0, 10.0, -5.0]).unwrap();
    let p = BilateralParams::new(2.0, 10.0).unwrap();
    let out = cross_bilateral_align(&s, &lab, &p).unwrap();
    let r = p.radius as isize;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = [0.0; 3];
            let mut norm = 0.0;
            for qy in (y - r).max(0)..(y + r + 1).min(h as isize) {
                for qx in (x - r).max(0)..(x + r + 1).min(w as isize) {
                    let d2 = ((qy - y).pow(2) + (qx - x).pow(2)) as f64;
                    let wt = (-d2 / 8.0).exp();
                    norm += wt;
                    for (a, v) in acc.iter_mut().zip(s.at(qy as usize, qx as usize)) {
                        *a += wt * v;
                    }
                }
            }
            for (a, v) in acc.iter().zip(out.at(y as usize, x as usize)) {
                assert!((a / norm - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sharp_edges_are_respected() {
    // Two flat halves with very different lightness: nothing crosses over.
    let (h, w) = (8, 16);
    let lab = LabImage::new(h, w, (0..h * w).map(|i| if i % w < 8 { [10.0, 0.0, 0.0] } else { [90.0, 0.0, 0.0] }).collect()).unwrap();
    let labels: Vec<u8> = (0..h * w).map(|i| u8::from(i % w >= 8)).collect();
    let s = SoftPredictionMap::one_hot(h, w, 2, &labels).unwrap();
    let p = BilateralParams::new(3.0, 5.0).unwrap();
    for out in [
        cross_bilateral_align(&s, &lab, &p).unwrap(),
        cross_bilateral_align_grid(&s, &lab, &p).unwrap(),
    ] {
        for (px, &l) in out.pixels().zip(&labels) {
            assert!(px[l as usize] > 0.999, "{px:?}");
        }
    }
}

#[test]
fn row_bands_match_full_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lab = voronoi_lab(&mut rng, 20, 18);
    let s = random_soft(&mut rng, 20, 18, 5);
    let p = BilateralParams::new(3.0, 8.0).unwrap();
    let full = cross_bilateral_align(&s, &lab, &p).unwrap();
    let band = cross_bilateral_align_rows(&s, &lab, &p, 7..12).unwrap();
    assert_eq!(&full.data()[7 * 18 * 5..12 * 18 * 5], &band[..]);
    assert!(cross_bilateral_align_rows(&s, &lab, &p, 15..21).is_err());
}

#[test]
fn dimension_mismatch() {
    let lab = LabImage::constant(4, 5, [50.0, 0.0, 0.0]).unwrap();
    let s = SoftPredictionMap::constant(5, 4, &[0.5, 0.5]).unwrap();
    let p = BilateralParams::default();
    assert!(cross_bilateral_align(&s, &lab, &p).is_err());
    assert!(cross_bilateral_align_grid(&s, &lab, &p).is_err());
}

#[test]
fn grid_tracks_direct_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for sigma_s in [2.0, 5.0, 12.0] {
        let lab = voronoi_lab(&mut rng, 48, 48);
        let s = random_soft(&mut rng, 48, 48, 4);
        let p = BilateralParams::new(sigma_s, 10.0).unwrap();
        let err = max_abs(
            &cross_bilateral_align(&s, &lab, &p).unwrap(),
            &cross_bilateral_align_grid(&s, &lab, &p).unwrap(),
        );
        assert!(err <= 0.01, "sigma_s {sigma_s}: {err}");
    }
}

#[test]
fn grid_at_full_hd_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (h, w, c) = (1080, 1920, 19);
    let lab = voronoi_lab(&mut rng, h, w);
    let s = random_soft(&mut rng, h, w, c);
    let out = cross_bilateral_align_grid(&s, &lab, &BilateralParams::default()).unwrap();
    assert_eq!(out.dims(), (h, w));
    for px in out.pixels().step_by(997) {
        assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn many_colors_at_small_sigma_use_the_direct_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h, w) = (480, 640);
    let lab = LabImage::new(
        h,
        w,
        (0..h * w).map(|_| srgb_pixel_to_lab([rng.random(), rng.random(), rng.random()])).collect(),
    )
    .unwrap();
    let s = random_soft(&mut rng, h, w, 3);
    let p = BilateralParams::new(2.0, 5.0).unwrap();
    assert_eq!(cross_bilateral_align_grid(&s, &lab, &p).unwrap(), cross_bilateral_align(&s, &lab, &p).unwrap());
}

fn instance(seed: u64, h: usize, w: usize, c: usize) -> (LabImage, SoftPredictionMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (voronoi_lab(&mut rng, h, w), random_soft(&mut rng, h, w, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_are_convex_combinations(seed in any::<u64>(), sigma_s in 0.5f64..6.0, sigma_r in 2.0f64..30.0) {
        let (lab, s) = instance(seed, 10, 13, 3);
        let p = BilateralParams::new(sigma_s, sigma_r).unwrap();
        for out in [cross_bilateral_align(&s, &lab, &p).unwrap(), cross_bilateral_align_grid(&s, &lab, &p).unwrap()] {
            for ch in 0..3 {
                let lo = s.pixels().map(|p| p[ch]).fold(f64::INFINITY, f64::min);
                let hi = s.pixels().map(|p| p[ch]).fold(f64::NEG_INFINITY, f64::max);
                for px in out.pixels() {
                    prop_assert!(px[ch] >= lo - 1e-12 && px[ch] <= hi + 1e-12);
                }
            }
            for px in out.pixels() {
                prop_assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn horizontal_flip_commutes(seed in any::<u64>(), sigma_s in 0.5f64..6.0) {
        let (lab, s) = instance(seed, 9, 11, 3);
        let flip = |m: &SoftPredictionMap| {
            let mut data = Vec::new();
            for y in 0..m.height() {
                for x in (0..m.width()).rev() {
                    data.extend_from_slice(m.at(y, x));
                }
            }
            SoftPredictionMap::new(m.height(), m.width(), m.channels(), data).unwrap()
        };
        let p = BilateralParams::new(sigma_s, 10.0).unwrap();
        let a = flip(&cross_bilateral_align(&s, &lab, &p).unwrap());
        let b = cross_bilateral_align(&flip(&s), &lab.flip_horizontal(), &p).unwrap();
        prop_assert!(max_abs(&a, &b) < 1e-12);
    }
}
