//! Property tests for the spec-level invariants that hold across modules.

use proptest::prelude::*;

use kinmark::attack::perturb_delete;
use kinmark::corpus::{
    build_family, expand_narratives, narrative_capacity, CorpusConfig, FamilySpec,
    FamilyStructure, Lexicon,
};
use kinmark::model::{normalize, Tokenizer};
use kinmark::verify::{compute_fsr, rouge_n};

fn scores() -> impl Strategy<Value = Vec<f64>> {
    // quantized so ties occur
    prop::collection::vec((0..=10u8).prop_map(|q| q as f64 / 10.0), 1..40)
}

proptest! {
    #[test]
    fn fsr_invariant_under_increasing_transform(fp in scores(), ctrl in scores()) {
        let before = compute_fsr(&fp, &ctrl).unwrap();
        // strictly increasing map applied to every score
        let tf = |v: &[f64]| v.iter().map(|x| (2.0 * x + 1.0).exp()).collect::<Vec<_>>();
        let after = compute_fsr(&tf(&fp), &tf(&ctrl)).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn fsr_label_swap_complements(fp in scores(), ctrl in scores()) {
        let a = compute_fsr(&fp, &ctrl).unwrap();
        let b = compute_fsr(&ctrl, &fp).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn fsr_self_comparison_is_exactly_half(xs in scores()) {
        prop_assert_eq!(compute_fsr(&xs, &xs).unwrap(), 0.5);
    }

    #[test]
    fn rouge_self_is_one_and_bounded(ids in prop::collection::vec(0..50u32, 0..30),
                                     other in prop::collection::vec(0..50u32, 0..30),
                                     n in 1..4usize) {
        let r = rouge_n(&other, &ids, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.f_measure));
        if ids.len() >= n {
            let self_r = rouge_n(&ids, &ids, n).unwrap();
            prop_assert_eq!(self_r.f_measure, 1.0);
        }
    }

    #[test]
    fn perturb_length_and_subsequence(text in "[a-z ]{1,120}", rate in 0.0..0.95f64, seed in any::<u64>()) {
        let out = perturb_delete(&text, rate, seed).unwrap();
        let expect = text.chars().count() - (rate * text.chars().count() as f64).round() as usize;
        prop_assert_eq!(out.chars().count(), expect);
        // output must be a subsequence of the input
        let mut it = text.chars();
        for c in out.chars() {
            prop_assert!(it.any(|x| x == c));
        }
    }

    #[test]
    fn tokenizer_roundtrip_on_known_text(words in prop::collection::vec("[a-z]{1,8}", 1..20)) {
        let text = words.join(" ");
        let tk = Tokenizer::from_texts([text.as_str()], 4096).unwrap();
        let ids = tk.encode(&text);
        prop_assert_eq!(tk.decode(&ids), normalize(&text).join(" "));
        prop_assert_eq!(tk.encode(&tk.decode(&ids)), ids);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Expansion cardinality: exactly k pairwise-distinct narratives, all
    /// naming the member, deterministic per seed.
    #[test]
    fn expansion_cardinality_property(k in 1..80usize, seed in any::<u64>()) {
        let lexicon = Lexicon::default();
        let cfg = CorpusConfig::default();
        let fam = build_family(
            &FamilySpec {
                surname: "voss".into(),
                member_count: cfg.members_per_family,
                first_name_offset: 0,
                attribute_offset: 0,
                structure: FamilyStructure::Nuclear,
            },
            &lexicon.fingerprint_first_names,
            &lexicon,
            7,
        )
        .unwrap();
        let member = &fam.members[0];
        prop_assume!(k <= narrative_capacity(member, true));
        let recs = expand_narratives(member, &fam.graph, &lexicon, k, seed).unwrap();
        prop_assert_eq!(recs.len(), k);
        let texts: std::collections::HashSet<&str> =
            recs.iter().map(|r| r.text.as_str()).collect();
        prop_assert_eq!(texts.len(), k);
        for rec in &recs {
            prop_assert!(rec.text.contains(&member.member_id.first_name()));
            prop_assert!(rec.variant_index < k);
        }
        let again = expand_narratives(member, &fam.graph, &lexicon, k, seed).unwrap();
        prop_assert_eq!(recs, again);
    }
}
