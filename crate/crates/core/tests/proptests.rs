//! Property tests over the sequence and flow invariants.

use flowfill_core::array::Array;
use flowfill_core::flow::OtPathConfig;
use flowfill_core::seq::{
    build_context, cat, rep, sample_training_mask, MaskKind, Phone, PhoneAlignment,
};
use flowfill_core::Rng;
use proptest::prelude::*;

fn alignment_strategy() -> impl Strategy<Value = PhoneAlignment> {
    (1usize..5, any::<u64>()).prop_map(|(n_words, seed)| {
        let mut rng = Rng::new(seed);
        let mut y = Vec::new();
        let mut l = Vec::new();
        let mut word_lens = Vec::new();
        if rng.bernoulli(0.7) {
            y.push(Phone::Sil);
            l.push(1 + rng.below(4) as u32);
        }
        for w in 0..n_words {
            let wlen = 1 + rng.below(3);
            word_lens.push(wlen);
            for _ in 0..wlen {
                y.push(Phone::Base(rng.below(6) as u8));
                l.push(1 + rng.below(6) as u32);
            }
            if w + 1 < n_words && rng.bernoulli(0.5) {
                y.push(Phone::Sil);
                l.push(1 + rng.below(3) as u32);
            }
        }
        if rng.bernoulli(0.7) {
            y.push(Phone::Sil);
            l.push(1 + rng.below(4) as u32);
        }
        PhoneAlignment::from_plain(&y, &l, &word_lens).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn rep_length_is_duration_sum(alignment in alignment_strategy()) {
        let z = alignment.frame_transcript().unwrap();
        prop_assert_eq!(z.len(), alignment.total_frames());
    }

    #[test]
    fn cat_lengths_add(a in proptest::collection::vec(0usize..50, 0..20),
                       b in proptest::collection::vec(0usize..50, 0..20)) {
        prop_assert_eq!(cat(&a, &b).len(), a.len() + b.len());
    }

    #[test]
    fn ghost_silence_preserves_frames_and_masks_stay_consistent(
        alignment in alignment_strategy(),
        seed in any::<u64>(),
    ) {
        // from_plain already inserted ghost silences; the frame total
        // equals the sum of the plain input by construction, and every
        // sampled mask satisfies m == rep(m_phone, l).
        let mut rng = Rng::new(seed);
        for kind in [MaskKind::Audio, MaskKind::Duration] {
            let pair = sample_training_mask(&alignment, kind, &mut rng).unwrap();
            let expected = rep(&pair.m_phone, &alignment.l).unwrap();
            prop_assert_eq!(&expected, &pair.m);
            // No phone partially masked is structural: each phone's
            // frames inherit one mask value.
        }
    }

    #[test]
    fn context_zeroing_is_exact(seed in any::<u64>(), n in 1usize..30, f in 1usize..6) {
        let mut rng = Rng::new(seed);
        let x = Array::new(vec![n, f], rng.gaussian_vec(n * f)).unwrap();
        let m: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.4))).collect();
        let ctx = build_context(&x, &m).unwrap();
        for i in 0..n {
            if m[i] == 1 {
                prop_assert!(ctx.row(i).iter().all(|&v| v == 0.0));
            } else {
                prop_assert_eq!(ctx.row(i), x.row(i));
            }
        }
    }

    #[test]
    fn flow_endpoint_law(seed in any::<u64>(), sigma_min in 0.0f64..0.5) {
        let mut rng = Rng::new(seed);
        let path = OtPathConfig::new(sigma_min).unwrap();
        let x0 = Array::from_vec(rng.gaussian_vec(4));
        let x1 = Array::from_vec(rng.gaussian_vec(4));
        let w1 = path.conditional_flow(1.0, &x0, &x1).unwrap();
        for i in 0..4 {
            let expect = sigma_min * x0.data()[i] + x1.data()[i];
            prop_assert!((w1.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_field_consistency_by_finite_differences(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let path = OtPathConfig::default();
        let x0 = Array::from_vec(rng.gaussian_vec(3));
        let x1 = Array::from_vec(rng.gaussian_vec(3));
        let h = 1e-5;
        for &t in &[0.1, 0.4, 0.8] {
            let plus = path.conditional_flow(t + h, &x0, &x1).unwrap();
            let minus = path.conditional_flow(t - h, &x0, &x1).unwrap();
            let w = path.conditional_flow(t, &x0, &x1).unwrap();
            let field = path.conditional_vector_field(t, &w, &x1).unwrap();
            for i in 0..3 {
                let fd = (plus.data()[i] - minus.data()[i]) / (2.0 * h);
                let rel = (fd - field.data()[i]).abs()
                    / field.data()[i].abs().max(fd.abs()).max(1e-9);
                prop_assert!(rel < 1e-6, "t={t} i={i} fd={fd} field={}", field.data()[i]);
            }
        }
    }
}
