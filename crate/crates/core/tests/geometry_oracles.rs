mod support;

use fls_core::geometry::{
    enumerate_windows, fan_contains, iou, nms, window_in_fov, BoundingBox, FanGeometry,
    ScoredWindow, WindowConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{pixel_iou, random_box};

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (-20i32..60, -20i32..60, 1u32..40, 1u32..40).prop_map(|(x, y, w, h)| BoundingBox { x, y, w, h })
}

fn arb_fan() -> impl Strategy<Value = FanGeometry> {
    (
        0.0f64..200.0,
        0.0f64..200.0,
        0.0f64..40.0,
        20.0f64..200.0,
        0.1f64..1.57,
        -3.1f64..3.1,
    )
        .prop_map(
            |(ox, oy, r_min, extra, half_angle, axis_angle)| FanGeometry {
                origin_x: ox,
                origin_y: oy,
                r_min,
                r_max: r_min + extra,
                half_angle,
                axis_angle,
            },
        )
}

#[test]
fn iou_equals_pixel_count_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let a = random_box(&mut rng, 200);
        let b = random_box(&mut rng, 200);
        let analytic = iou(&a, &b).unwrap();
        let counted = pixel_iou(&a, &b);
        assert!(
            (analytic - counted).abs() <= 1e-12,
            "{a:?} {b:?}: {analytic} vs {counted}"
        );
    }
}

#[test]
fn iou_overlap_example() {
    let a = BoundingBox {
        x: 0,
        y: 0,
        w: 10,
        h: 10,
    };
    let b = BoundingBox {
        x: 5,
        y: 0,
        w: 10,
        h: 10,
    };
    assert_eq!(iou(&a, &b).unwrap(), pixel_iou(&a, &b));
    assert!((iou(&a, &b).unwrap() - 50.0 / 150.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(ab == 1.0, a == b);
    }

    #[test]
    fn fov_is_the_four_corner_rule(fan in arb_fan(), b in arb_box()) {
        let corners = [
            (b.x as f64, b.y as f64),
            ((b.x + b.w as i32) as f64, b.y as f64),
            (b.x as f64, (b.y + b.h as i32) as f64),
            ((b.x + b.w as i32) as f64, (b.y + b.h as i32) as f64),
        ];
        let oracle = corners.iter().all(|&(x, y)| fan_contains(&fan, x, y));
        prop_assert_eq!(window_in_fov(&fan, &b), oracle);
    }

    #[test]
    fn masked_windows_are_an_in_fov_subset(fan in arb_fan(), stride in 1u32..16) {
        let cfg = WindowConfig { window_size: 32, stride };
        let all = enumerate_windows(None, 120, 100, &cfg).unwrap();
        let masked = enumerate_windows(Some(&fan), 120, 100, &cfg).unwrap();
        prop_assert!(masked.iter().all(|w| all.contains(w) && window_in_fov(&fan, w)));
        let expected: Vec<_> = all.iter().filter(|w| window_in_fov(&fan, w)).copied().collect();
        prop_assert_eq!(masked, expected);
    }
}

#[test]
fn enumeration_matches_position_scan() {
    let cfg = WindowConfig {
        window_size: 96,
        stride: 8,
    };
    let windows = enumerate_windows(None, 128, 128, &cfg).unwrap();
    let mut scan = Vec::new();
    for y in 0..128 {
        for x in 0..128 {
            if x % 8 == 0 && y % 8 == 0 && x + 96 <= 128 && y + 96 <= 128 {
                scan.push(BoundingBox { x, y, w: 96, h: 96 });
            }
        }
    }
    assert_eq!(windows, scan);
    assert_eq!(windows.len(), 25);
}

fn random_scored(rng: &mut ChaCha8Rng) -> Vec<ScoredWindow> {
    let n = rng.random_range(0..40);
    (0..n)
        .map(|_| ScoredWindow {
            window: random_box(rng, 120),
            // coarse scores so ties happen
            objectness: (rng.random_range(0..=20) as f32) / 20.0,
        })
        .collect()
}

/// Straightforward greedy suppression, written independently of the library.
fn greedy_oracle(input: &[ScoredWindow], threshold: f64) -> Vec<ScoredWindow> {
    let mut order: Vec<ScoredWindow> = input.to_vec();
    order.sort_by(|a, b| {
        b.objectness
            .partial_cmp(&a.objectness)
            .unwrap()
            .then(a.window.y.cmp(&b.window.y))
            .then(a.window.x.cmp(&b.window.x))
            .then(a.window.h.cmp(&b.window.h))
            .then(a.window.w.cmp(&b.window.w))
    });
    let mut kept: Vec<ScoredWindow> = Vec::new();
    for c in order {
        if kept
            .iter()
            .all(|k| pixel_iou(&k.window, &c.window) < threshold)
        {
            kept.push(c);
        }
    }
    kept
}

#[test]
fn nms_invariants_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let input = random_scored(&mut rng);
        let t = rng.random_range(0.05..=1.0);
        let out = nms(&input, t);
        for (i, a) in out.iter().enumerate() {
            assert!(input.contains(a));
            for b in &out[i + 1..] {
                assert!(iou(&a.window, &b.window).unwrap() < t);
            }
        }
        assert!(out.windows(2).all(|w| w[0].objectness >= w[1].objectness));
        assert_eq!(nms(&out, t), out);
    }
}

#[test]
fn nms_agrees_with_greedy_oracle_on_small_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..500 {
        let n = rng.random_range(0..=5);
        let input: Vec<_> = random_scored(&mut rng).into_iter().take(n).collect();
        let t = rng.random_range(0.1..=1.0);
        assert_eq!(nms(&input, t), greedy_oracle(&input, t), "{input:?} at {t}");
    }
}
