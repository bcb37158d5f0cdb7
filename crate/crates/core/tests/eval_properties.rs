mod support;

use fls_core::eval::{
    match_counts, random_baseline_sweep, random_scores, recall_at, sweep, ScoredFrame,
};
use fls_core::geometry::{enumerate_windows, BoundingBox, ScoredWindow, WindowConfig};
use fls_core::proposals::threshold_proposals;
use fls_core::synth::{generate_frames, SceneConfig};
use proptest::collection::vec;
use proptest::prelude::*;
use support::brute_force_matches;

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0i32..30, 0i32..30, 1u32..20, 1u32..20).prop_map(|(x, y, w, h)| BoundingBox { x, y, w, h })
}

fn arb_scored(n: usize) -> impl Strategy<Value = Vec<ScoredWindow>> {
    vec(
        (arb_box(), 0u8..=20).prop_map(|(window, s)| ScoredWindow {
            window,
            objectness: s as f32 / 20.0,
        }),
        0..n,
    )
}

fn grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

proptest! {
    #[test]
    fn recall_matches_exhaustive_pairs(
        frames in vec((vec(arb_box(), 0..=10), vec(arb_box(), 0..=5)), 1..4),
        min_iou in 0.05f64..=1.0,
    ) {
        let props: Vec<Vec<BoundingBox>> = frames.iter().map(|f| f.0.clone()).collect();
        let gts: Vec<Vec<BoundingBox>> = frames.iter().map(|f| f.1.clone()).collect();
        let counts = match_counts(&props, &gts, min_iou).unwrap();
        let (matched, total) = brute_force_matches(&props, &gts, min_iou);
        prop_assert_eq!((counts.matched, counts.total), (matched, total));
        if total > 0 {
            prop_assert_eq!(recall_at(&props, &gts, min_iou).unwrap(), matched as f64 / total as f64);
        } else {
            prop_assert!(recall_at(&props, &gts, min_iou).is_err());
        }
    }

    #[test]
    fn proposals_shrink_with_threshold(scored in arb_scored(60), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let loose = threshold_proposals(&scored, lo, None);
        let strict = threshold_proposals(&scored, hi, None);
        prop_assert!(strict.len() <= loose.len());
        prop_assert!(strict.iter().all(|p| loose.contains(p)));
        prop_assert!(loose.iter().all(|p| scored.contains(p) && p.objectness as f64 > lo));
        prop_assert!(loose.windows(2).all(|w| w[0].objectness >= w[1].objectness));
    }

    #[test]
    fn nms_proposals_are_separated(scored in arb_scored(60), t in 0.0f64..=1.0, nms_iou in 0.05f64..=1.0) {
        let out = threshold_proposals(&scored, t, Some(nms_iou));
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                prop_assert!(fls_core::geometry::iou(&a.window, &b.window).unwrap() < nms_iou);
            }
        }
    }

    #[test]
    fn sweep_is_non_increasing(
        frames in vec((arb_scored(40), vec(arb_box(), 1..=4)), 1..5),
        nms in proptest::option::of(0.1f64..=1.0),
    ) {
        let scored: Vec<ScoredFrame> = frames
            .into_iter()
            .enumerate()
            .map(|(i, (windows, ground_truth))| ScoredFrame { frame_id: i as u32, windows, ground_truth })
            .collect();
        let curve = sweep(&scored, &grid(), nms, 0.5).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].recall <= w[0].recall);
            prop_assert!(w[1].mean_proposals <= w[0].mean_proposals);
        }
        let last = curve.last().unwrap();
        prop_assert_eq!((last.recall, last.mean_proposals), (0.0, 0.0));
    }
}

#[test]
fn random_baseline_is_calibrated() {
    let cfg = SceneConfig::default();
    let frames = generate_frames(&cfg, 60).unwrap();
    let window = WindowConfig::default();
    let counts: Vec<f64> = frames
        .iter()
        .map(|f| {
            enumerate_windows(Some(&f.fan), f.image.width(), f.image.height(), &window)
                .unwrap()
                .len() as f64
        })
        .collect();
    let mean_windows = counts.iter().sum::<f64>() / counts.len() as f64;
    let thresholds = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9];
    let curve = random_baseline_sweep(&frames, &thresholds, &window, 3, None).unwrap();
    for r in &curve {
        let expected = (1.0 - r.threshold) * mean_windows;
        assert!(
            (r.mean_proposals - expected).abs() <= 0.05 * expected,
            "T_o {}: {} proposals vs expected {expected}",
            r.threshold,
            r.mean_proposals
        );
    }
    // every window is a proposal at T_o = 0
    assert_eq!(curve[0].mean_proposals, mean_windows);
}

#[test]
fn random_baseline_is_seeded() {
    let frames = generate_frames(&SceneConfig::default(), 6).unwrap();
    let window = WindowConfig::default();
    let a = random_scores(&frames, &window, 9).unwrap();
    assert_eq!(a, random_scores(&frames, &window, 9).unwrap());
    assert_ne!(a, random_scores(&frames, &window, 10).unwrap());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    assert_eq!(
        a,
        pool.install(|| random_scores(&frames, &window, 9).unwrap())
    );
}

#[test]
fn strict_threshold_gives_empty_curve_point() {
    let frames = generate_frames(&SceneConfig::default(), 3).unwrap();
    let curve = random_baseline_sweep(&frames, &[1.0], &WindowConfig::default(), 0, None).unwrap();
    assert_eq!(curve[0].recall, 0.0);
    assert_eq!(curve[0].mean_proposals, 0.0);
}
