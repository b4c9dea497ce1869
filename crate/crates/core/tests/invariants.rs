use gazeseq::dataset::{SequenceKey, FRAMES_PER_SEQUENCE};
use gazeseq::evaluation::{annotate_frames, compare_models, label_window, Axis, EvalSample, ModelEvaluation, MovementLabel};
use gazeseq::oculomotor::FrameLabel;
use gazeseq::render::Side;
use gazeseq::{ks_two_sample, wilcoxon_signed_rank, ErrorStats, GazeAngles, SampleError};
use proptest::prelude::*;

fn evaluation(name: &str, errors: &[(f64, f64)]) -> ModelEvaluation {
    let samples: Vec<EvalSample> = errors
        .iter()
        .enumerate()
        .map(|(i, &(y, p))| EvalSample {
            key: SequenceKey {
                subject_id: (i / FRAMES_PER_SEQUENCE) as u32,
                side: Side::Left,
                sequence: 0,
            },
            frame: i % FRAMES_PER_SEQUENCE,
            gt: GazeAngles::new(0.0, 0.0),
            pred: GazeAngles::new(y, p),
            error: SampleError { yaw: y, pitch: p },
        })
        .collect();
    let errs: Vec<SampleError> = samples.iter().map(|s| s.error).collect();
    ModelEvaluation {
        name: name.into(),
        window: 1,
        stats: ErrorStats::from_errors(&errs).unwrap(),
        samples,
    }
}

proptest! {
    #[test]
    fn ks_statistic_survives_monotone_transforms(
        a in prop::collection::vec(-50i32..50, 1..30),
        b in prop::collection::vec(-50i32..50, 1..30),
    ) {
        let f = |v: &i32| (*v as f64 / 10.0).exp() + 3.0 * *v as f64;
        let fa: Vec<f64> = a.iter().map(|v| *v as f64).collect();
        let fb: Vec<f64> = b.iter().map(|v| *v as f64).collect();
        let ta: Vec<f64> = a.iter().map(f).collect();
        let tb: Vec<f64> = b.iter().map(f).collect();
        let plain = ks_two_sample(&fa, &fb).unwrap();
        let moved = ks_two_sample(&ta, &tb).unwrap();
        prop_assert_eq!(plain.statistic, moved.statistic);
        prop_assert!((0.0..=1.0).contains(&plain.p_value));
    }

    #[test]
    fn wilcoxon_outputs_stay_in_range(d in prop::collection::vec(-20i32..20, 5..60)) {
        let a: Vec<f64> = d.iter().map(|v| *v as f64 * 0.25).collect();
        let b = vec![0.0; a.len()];
        if let Ok(r) = wilcoxon_signed_rank(&a, &b) {
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!(r.statistic <= (r.n * (r.n + 1)) as f64 / 4.0);
        } else {
            prop_assert!(d.iter().filter(|v| **v != 0).count() < 5);
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_saccades(
        steps in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..80),
        lo in 0.0f64..200.0,
        extra in 0.0f64..200.0,
    ) {
        let mut g = GazeAngles::new(0.0, 0.0);
        let mut trace = vec![g];
        for (dy, dp) in steps {
            g = GazeAngles::new(g.yaw_deg + dy, g.pitch_deg + dp);
            trace.push(g);
        }
        let low = annotate_frames(&trace, lo).unwrap();
        let high = annotate_frames(&trace, lo + extra).unwrap();
        for (l, h) in low.iter().zip(&high) {
            prop_assert!(!(*l == FrameLabel::Fix && *h == FrameLabel::Sac));
        }
    }

    #[test]
    fn label_window_is_total(bits in prop::collection::vec(any::<bool>(), 1..40)) {
        let labels: Vec<FrameLabel> = bits.iter().map(|b| if *b { FrameLabel::Sac } else { FrameLabel::Fix }).collect();
        let runs = 1 + labels.windows(2).filter(|w| w[0] != w[1]).count();
        let got = label_window(&labels);
        prop_assert!(MovementLabel::ALL.contains(&got));
        prop_assert_eq!(got == MovementLabel::Other, runs > 3 || (runs == 3 && labels[0] == FrameLabel::Sac));
    }

    #[test]
    fn class_improvements_are_mean_differences(
        rows in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0, 0usize..3), 6..60),
    ) {
        let classes = [MovementLabel::Fixation, MovementLabel::Saccade, MovementLabel::FixToSac];
        let base = evaluation("base", &rows.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>());
        let cand = evaluation("cand", &rows.iter().map(|r| (r.2, r.3)).collect::<Vec<_>>());
        let labels: Vec<MovementLabel> = rows.iter().map(|r| classes[r.4]).collect();
        let cmp = compare_models(&base, &cand, &labels).unwrap();
        for c in &cmp.classes {
            let picked: Vec<_> = rows.iter().filter(|r| classes[r.4] == c.class).collect();
            let diff: f64 = picked
                .iter()
                .map(|r| match c.axis {
                    Axis::Yaw => r.0 - r.2,
                    Axis::Pitch => r.1 - r.3,
                })
                .sum::<f64>()
                / picked.len() as f64;
            prop_assert_eq!(c.n, picked.len());
            prop_assert!((c.improvement_deg - diff).abs() < 1e-9);
        }
    }
}
