use lehgr::dataset::{
    generate_clips, overlap_ratios, resample_clip, split_dataset, split_recordings, AnnotatedSegment,
    AugmentationConfig, ClipSpan, LabelingThresholds, Recording, TraceFeatures,
};
use lehgr::features::{FeatureMode, MotionFeatureSequence};
use lehgr::SkeletonSpec;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn span() -> impl Strategy<Value = (i64, i64)> {
    (-50i64..200, 1i64..100).prop_map(|(s, len)| (s, s + len))
}

fn sequence(len: usize, width: usize, first_frame: u64, rng: &mut ChaCha8Rng) -> MotionFeatureSequence {
    let data = (0..len * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let frames = (0..len as u64).map(|i| first_frame + i).collect();
    MotionFeatureSequence::new(FeatureMode::Motion, width / 2, width - width / 2, frames, data).unwrap()
}

fn random_recordings(seed: u64, n: usize) -> Vec<Recording> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|r| {
            let traces = (0..rng.gen_range(1..=3))
                .map(|t| {
                    let len = rng.gen_range(4..40);
                    let first = rng.gen_range(0..20u64);
                    let segments = (0..rng.gen_range(0..=2))
                        .map(|_| {
                            let s = rng.gen_range(0..50i64);
                            AnnotatedSegment::new(s, s + rng.gen_range(3..25), rng.gen_range(1..3)).unwrap()
                        })
                        .collect();
                    TraceFeatures {
                        trace_id: t,
                        features: sequence(len, 4, first, &mut rng),
                        segments,
                    }
                })
                .collect();
            Recording {
                id: format!("r{r:02}"),
                skeleton: SkeletonSpec::default_hand(),
                mode: FeatureMode::Motion,
                traces,
            }
        })
        .collect()
}

/// Labels every window by brute force: all lengths from the timestep set,
/// all strided starts, the overlap rule applied to the segment covering the
/// largest share of itself (earliest on ties).
fn enumerate_labels(rec: &Recording, cfg: &AugmentationConfig, th: &LabelingThresholds) -> Vec<(u64, usize, i64, usize)> {
    let mut out = Vec::new();
    for trace in &rec.traces {
        let frames = trace.features.frame_indices();
        let n = frames.len();
        let mut len = cfg.t_min;
        while len <= n && cfg.max_window.map_or(true, |m| len <= m) {
            let mut start = 0;
            while start + len <= n {
                let (ps, pe) = (frames[start] as i64, frames[start + len - 1] as i64 + 1);
                let mut segs = trace.segments.clone();
                segs.sort_by_key(|s| (s.phi_s, s.phi_e));
                let mut best: Option<(f64, f64, usize)> = None;
                for s in &segs {
                    let inter = (s.phi_e.min(pe) - s.phi_s.max(ps)).max(0) as f64;
                    let ioa = inter / (s.phi_e - s.phi_s) as f64;
                    let ios = inter / (pe - ps) as f64;
                    if best.map_or(true, |b| ioa > b.0) {
                        best = Some((ioa, ios, s.class_id));
                    }
                }
                let label = match best {
                    Some((ioa, ios, c)) if ioa >= th.delta_ioa && ios >= th.delta_ios => c,
                    _ => 0,
                };
                out.push((trace.trace_id, len, ps, label));
                start += cfg.stride;
            }
            len += cfg.delta_t;
        }
    }
    out.sort();
    out
}

proptest! {
    #[test]
    fn overlap_is_exchange_symmetric(a in span(), b in span()) {
        let seg = AnnotatedSegment::new(a.0, a.1, 1).unwrap();
        let clip = ClipSpan::new(b.0, b.1).unwrap();
        let swapped_seg = AnnotatedSegment::new(b.0, b.1, 1).unwrap();
        let swapped_clip = ClipSpan::new(a.0, a.1).unwrap();
        let r = overlap_ratios(&seg, &clip);
        let s = overlap_ratios(&swapped_seg, &swapped_clip);
        prop_assert_eq!((r.r_ioa, r.r_ios), (s.r_ios, s.r_ioa));
        prop_assert!((0.0..=1.0).contains(&r.r_ioa) && (0.0..=1.0).contains(&r.r_ios));
    }

    #[test]
    fn nested_clip_covers_itself(outer in span(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let len = outer.1 - outer.0;
        let s = outer.0 + (a * len as f64) as i64;
        let e = (s + 1 + (b * (outer.1 - s - 1) as f64) as i64).min(outer.1);
        let seg = AnnotatedSegment::new(outer.0, outer.1, 1).unwrap();
        let r = overlap_ratios(&seg, &ClipSpan::new(s, e).unwrap());
        prop_assert_eq!(r.r_ios, 1.0);
        prop_assert_eq!(r.r_ioa, (e - s) as f64 / len as f64);
    }

    #[test]
    fn resampling_is_idempotent(seed in any::<u64>(), len in 2usize..40, t_obj in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = sequence(len, 6, 0, &mut rng);
        let once = resample_clip(&seq, t_obj).unwrap();
        let twice = resample_clip(&once, t_obj).unwrap();
        prop_assert_eq!(once.len(), t_obj);
        prop_assert_eq!(once.frame(0), seq.frame(0));
        prop_assert_eq!(once.frame(t_obj - 1), seq.frame(len - 1));
        for (x, y) in once.data().iter().zip(twice.data()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn clip_labels_match_brute_force(
        seed in any::<u64>(),
        t_min in 2usize..10,
        delta_t in 1usize..6,
        stride in 1usize..4,
        single in any::<bool>(),
    ) {
        let recs = random_recordings(seed, 3);
        let cfg = if single {
            AugmentationConfig::single_length(t_min, stride)
        } else {
            AugmentationConfig { t_min, delta_t, t_obj: 13, stride, max_window: None }
        };
        let th = LabelingThresholds::default();
        let clips = generate_clips(&recs, &cfg, &th).unwrap();
        let mut want = Vec::new();
        for r in &recs {
            want.extend(enumerate_labels(r, &cfg, &th).into_iter().map(|w| (r.id.clone(), w)));
        }
        let got: Vec<_> = clips
            .iter()
            .map(|c| {
                let p = &c.provenance;
                (p.recording.clone(), (p.trace_id, p.length, p.psi_s, c.label))
            })
            .collect();
        prop_assert_eq!(got, want);
        for c in &clips {
            prop_assert_eq!(c.features.len(), cfg.t_obj);
            prop_assert!(c.features.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn clips_ignore_recording_order(seed in any::<u64>()) {
        let recs = random_recordings(seed, 4);
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let cfg = AugmentationConfig { t_min: 4, delta_t: 3, t_obj: 6, stride: 2, max_window: None };
        let th = LabelingThresholds::default();
        prop_assert_eq!(generate_clips(&recs, &cfg, &th).unwrap(), generate_clips(&shuffled, &cfg, &th).unwrap());
    }
}

#[test]
fn single_window_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rec = Recording {
        id: "one".into(),
        skeleton: SkeletonSpec::default_hand(),
        mode: FeatureMode::Motion,
        traces: vec![TraceFeatures {
            trace_id: 0,
            features: sequence(13, 4, 0, &mut rng),
            segments: vec![AnnotatedSegment::new(0, 13, 2).unwrap()],
        }],
    };
    let cfg = AugmentationConfig {
        t_min: 13,
        delta_t: 5,
        t_obj: 13,
        stride: 1,
        max_window: None,
    };
    let clips = generate_clips(&[rec.clone()], &cfg, &LabelingThresholds::default()).unwrap();
    assert_eq!(clips.len(), 1);
    assert_eq!(clips[0].label, 2);
    assert_eq!(clips[0].features, rec.traces[0].features);
}

#[test]
fn mixed_modes_rejected() {
    let mut recs = random_recordings(1, 2);
    recs[1].mode = FeatureMode::Box;
    assert!(generate_clips(&recs, &AugmentationConfig::default(), &LabelingThresholds::default()).is_err());
}

#[test]
fn split_is_by_recording_and_seeded() {
    let ids: Vec<String> = (0..10).map(|i| format!("r{i}")).collect();
    let (train, test) = split_recordings(ids.clone(), 0.8, 3).unwrap();
    assert_eq!((train.len(), test.len()), (8, 2));
    assert_eq!(split_recordings(ids.clone(), 0.8, 3).unwrap(), (train, test));
    assert!(split_recordings(vec!["only".to_string()], 0.8, 0).is_err());

    let clips = generate_clips(
        &random_recordings(2, 10),
        &AugmentationConfig::default(),
        &LabelingThresholds::default(),
    )
    .unwrap();
    let (a, b) = split_dataset(clips, 0.7, 9).unwrap();
    for c in &a {
        assert!(b.iter().all(|d| d.provenance.recording != c.provenance.recording));
    }
}

#[test]
fn different_seeds_give_different_splits() {
    let ids: Vec<String> = (0..20).map(|i| format!("r{i:02}")).collect();
    let base = split_recordings(ids.clone(), 0.8, 0).unwrap();
    let differing = (1..=100)
        .filter(|&s| split_recordings(ids.clone(), 0.8, s).unwrap() != base)
        .count();
    assert!(differing > 90, "{differing}");
}
