//! Property tests over randomized inputs.

use num_complex::Complex64;
use proptest::prelude::*;

use dscn_core::channel::{apply_pattern, apply_truncation, truncate_keep_count, ErasureSpec};
use dscn_core::seddprior::{corrupt, NoiseSchedule, ScheduleKind};
use dscn_core::siggen::{complex_from_2d, complex_to_2d};
use dscn_core::tokens::TokenSequence;

proptest! {
    #[test]
    fn complex_to_2d_roundtrips_exactly(
        values in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..200)
    ) {
        let u: Vec<Complex64> = values.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        let t = complex_to_2d(&u).unwrap();
        prop_assert_eq!(t.shape(), &[2, u.len()]);
        let back = complex_from_2d(&t).unwrap();
        prop_assert_eq!(back, u);
    }

    #[test]
    fn truncation_keeps_exactly_the_rounded_count(
        epsilon in 0.0f64..=1.0,
        d_s in 1usize..600,
    ) {
        let vocab = 16u32;
        let z = TokenSequence::new((0..d_s as u32).map(|i| i % vocab).collect(), vocab).unwrap();
        let e = apply_truncation(&z, epsilon).unwrap();
        prop_assert_eq!(e.n_received(), truncate_keep_count(epsilon, d_s));
        prop_assert!(e.is_prefix());
        // received values untouched, erased positions hold the mask token
        for (i, (&t, &kept)) in e.tokens().iter().zip(e.pattern()).enumerate() {
            if kept {
                prop_assert_eq!(t, z.tokens()[i]);
            } else {
                prop_assert_eq!(t, vocab);
            }
        }
    }

    #[test]
    fn burst_pattern_count_matches_formula(
        i in 0usize..64,
        d_s in 1usize..600,
    ) {
        let spec = ErasureSpec::PunctureBurst { i };
        let pattern = spec.pattern(d_s).unwrap();
        let kept = pattern.iter().filter(|&&b| b).count();
        prop_assert_eq!(kept, d_s.div_ceil(i + 1));
        // nominal epsilon realized within one token of end effects
        let realized = 1.0 - kept as f64 / d_s as f64;
        prop_assert!((realized - spec.epsilon()).abs() <= 1.0 / d_s as f64 + 1e-12);
    }

    #[test]
    fn schedules_are_monotone_with_pinned_endpoints(
        kind in prop::sample::select(vec![ScheduleKind::Linear, ScheduleKind::Cosine]),
        mut ts in prop::collection::vec(0.0f64..=1.0, 2..50),
    ) {
        let s = NoiseSchedule::new(kind);
        prop_assert!(s.gamma(0.0).abs() < 1e-9);
        prop_assert!((s.gamma(1.0) - 1.0).abs() < 1e-9);
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev = -1.0;
        for &t in &ts {
            let g = s.gamma(t);
            prop_assert!(g >= prev - 1e-15);
            prev = g;
        }
    }

    #[test]
    fn corruption_masks_are_consistent_with_flags(
        t in 0.0f64..=1.0,
        seed in 0u64..1000,
        len in 1usize..300,
    ) {
        let vocab = 8u32;
        let z = TokenSequence::new((0..len as u32).map(|i| i % vocab).collect(), vocab).unwrap();
        let s = NoiseSchedule::new(ScheduleKind::Linear);
        let (tokens, flags) = corrupt(&z, &s, t, seed).unwrap();
        for (i, (&tok, &f)) in tokens.iter().zip(&flags).enumerate() {
            if f {
                prop_assert_eq!(tok, vocab);
            } else {
                prop_assert_eq!(tok, z.tokens()[i]);
            }
        }
    }

    #[test]
    fn arbitrary_patterns_apply_losslessly(
        pattern in prop::collection::vec(any::<bool>(), 1..300),
    ) {
        let vocab = 32u32;
        let z = TokenSequence::new(
            (0..pattern.len() as u32).map(|i| (i * 7) % vocab).collect(),
            vocab,
        )
        .unwrap();
        let e = apply_pattern(&z, &pattern).unwrap();
        prop_assert_eq!(e.pattern(), &pattern[..]);
        prop_assert_eq!(e.n_received() + e.n_erased(), pattern.len());
        // hex pattern round-trips length information
        prop_assert_eq!(e.pattern_hex().len(), pattern.len().div_ceil(8) * 2);
    }
}
