mod common;

use common::{brute_hausdorff, ef_reference, pixel_dice, random_star, ray_cast_mask};
use echographs::metrics::{
    contour_mask, dice, ef_metrics, hausdorff, mean_keypoint_error, HAUSDORFF_STEP_PX,
};
use echographs::KeypointSet;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 96;
const W: usize = 128;

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> KeypointSet {
    KeypointSet::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]], 1, [0, 3]).unwrap()
}

#[test]
fn dice_matches_ray_casting_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(5..42);
        let a = random_star(&mut rng, n);
        let b = random_star(&mut rng, 42);
        let (ma, mb) = (ray_cast_mask(&a, H, W), ray_cast_mask(&b, H, W));
        assert_eq!(contour_mask(&a, H, W), ma);
        assert_eq!(dice(&a, &b, H, W), pixel_dice(&ma, &mb));
        assert_eq!(dice(&a, &b, H, W), dice(&b, &a, H, W));
    }
}

#[test]
fn overlapping_rectangles_match_pixel_count() {
    let a = rect(0.1, 0.2, 0.5, 0.6);
    let b = rect(0.3, 0.2, 0.7, 0.6);
    let oracle = pixel_dice(&ray_cast_mask(&a, 100, 100), &ray_cast_mask(&b, 100, 100));
    assert_eq!(dice(&a, &b, 100, 100), oracle);
    assert_eq!(oracle, 0.5);
}

#[test]
fn hausdorff_matches_double_loop_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let a = random_star(&mut rng, 42);
        let n = rng.random_range(3..42);
        let b = random_star(&mut rng, n);
        let d = hausdorff(&a, &b, H, W);
        assert_eq!(d, brute_hausdorff(&a, &b, H, W, HAUSDORFF_STEP_PX));
        assert_eq!(d, hausdorff(&b, &a, H, W));
    }
}

#[test]
fn hausdorff_triangle_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (a, b, c) = (
            random_star(&mut rng, 20),
            random_star(&mut rng, 30),
            random_star(&mut rng, 42),
        );
        let ac = hausdorff(&a, &c, H, W);
        let ab = hausdorff(&a, &b, H, W);
        let bc = hausdorff(&b, &c, H, W);
        assert!(ac <= ab + bc + 1e-9);
    }
}

#[test]
fn shifted_contour_is_five_pixels_away() {
    let a = rect(0.2, 0.2, 0.6, 0.7);
    let b = a.translated(3.0 / 100.0, 4.0 / 100.0);
    assert!((hausdorff(&a, &b, 100, 100) - 5.0).abs() < 1e-9);
}

#[test]
fn ef_metrics_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let gt: Vec<f64> = (0..100).map(|_| rng.random_range(0.2..0.8)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g + rng.random_range(-0.1..0.1)).collect();
        let m = ef_metrics(&pred, &gt).unwrap();
        let (mae, rmse, r2) = ef_reference(&pred, &gt);
        assert!((m.mae - mae).abs() < 1e-12);
        assert!((m.rmse - rmse).abs() < 1e-12);
        assert!((m.r2.unwrap() - r2).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn rmse_bounds_mae(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..50)) {
        let (pred, gt): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = ef_metrics(&pred, &gt).unwrap();
        prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
    }

    #[test]
    fn uniform_offset_moves_mke_by_at_most_its_size(seed in 0u64..1000, dx in -0.05f64..0.05, dy in -0.05f64..0.05) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_star(&mut rng, 42);
        let pred = random_star(&mut rng, 42);
        let base = mean_keypoint_error(&pred, &gt).unwrap();
        let moved = mean_keypoint_error(&pred.translated(dx, dy), &gt).unwrap();
        prop_assert!((moved - base).abs() <= 100.0 * (dx.abs() + dy.abs()) / 2.0 + 1e-9);
        let exact = mean_keypoint_error(&gt.translated(dx, dy), &gt).unwrap();
        prop_assert!((exact - 100.0 * (dx.abs() + dy.abs()) / 2.0).abs() < 1e-9);
    }
}
