use super::*;

fn defaults() -> (Lexicon, CorpusConfig) {
    (Lexicon::default(), CorpusConfig::default())
}

#[test]
fn default_composite_has_six_members_in_two_families() {
    let (lex, cfg) = defaults();
    let fp = build_default_composite(&lex, &cfg, 7).unwrap();
    assert_eq!(fp.members.len(), 6);
    let families: BTreeSet<&String> = fp.members.iter().map(|m| &m.family).collect();
    assert_eq!(families.len(), 2);
    assert_eq!(fp.inter_family_edges.len(), 1);
    assert!(fp.graph.is_connected());
    fp.validate().unwrap();
}

#[test]
fn default_bundle_meets_the_size_floor() {
    let (lex, cfg) = defaults();
    let fp = build_default_composite(&lex, &cfg, 7).unwrap();
    let bundle = generate_corpus_bundle(&fp, &lex, &cfg, 7).unwrap();
    assert!(bundle.fingerprint.len() >= 300);
    assert_eq!(bundle.control.len(), bundle.fingerprint.len());
    assert_eq!(bundle.generic_train.len(), cfg.generic_train_size);
    assert_eq!(bundle.generic_heldout.len(), cfg.generic_heldout_size);
}

#[test]
fn bundle_regenerates_bit_identically() {
    let (lex, cfg) = defaults();
    let fp = build_default_composite(&lex, &cfg, 7).unwrap();
    let a = generate_corpus_bundle(&fp, &lex, &cfg, 7).unwrap();
    let b = generate_corpus_bundle(&fp, &lex, &cfg, 7).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    let c = generate_corpus_bundle(&fp, &lex, &cfg, 8).unwrap();
    assert_ne!(a.content_hash(), c.content_hash());
}

#[test]
fn zero_control_size_is_rejected() {
    let (lex, mut cfg) = defaults();
    cfg.control_size = 0;
    let fp = build_default_composite(&lex, &cfg, 7).unwrap();
    assert!(matches!(
        generate_corpus_bundle(&fp, &lex, &cfg, 7),
        Err(CorpusError::EmptyControl)
    ));
}

#[test]
fn colliding_name_pools_are_rejected() {
    let (mut lex, cfg) = defaults();
    lex.control_first_names[0] = lex.fingerprint_first_names[0].clone();
    let clean = Lexicon::default();
    let fp = build_default_composite(&clean, &cfg, 7).unwrap();
    assert!(matches!(
        generate_corpus_bundle(&fp, &lex, &cfg, 7),
        Err(CorpusError::NamePoolCollision(_))
    ));
}

#[test]
fn every_member_relation_is_mentioned_somewhere() {
    let (lex, cfg) = defaults();
    let fp = build_default_composite(&lex, &cfg, 7).unwrap();
    let bundle = generate_corpus_bundle(&fp, &lex, &cfg, 7).unwrap();
    for member in &fp.members {
        let own: Vec<&NarrativeRecord> = bundle
            .fingerprint
            .iter()
            .filter(|r| r.subject_ids.first() == Some(&member.member_id))
            .collect();
        assert!(!own.is_empty());
        for (_, target) in &member.relations {
            assert!(
                own.iter().any(|r| r.text.contains(&target.display_name())),
                "{} never mentions {}",
                member.member_id.0,
                target.0
            );
        }
    }
}

#[test]
fn individual_mode_drops_relations_but_keeps_names() {
    let (lex, cfg) = defaults();
    let full = generate_ablation_corpus(CorpusMode::Full, &lex, &cfg, 7).unwrap();
    let ind = generate_ablation_corpus(CorpusMode::Individual, &lex, &cfg, 7).unwrap();
    for rec in &ind.fingerprint {
        for kind in RelationKind::ALL {
            assert!(
                !rec.text.contains(kind.word()),
                "relation word in individual record: {}",
                rec.text
            );
        }
    }
    assert_eq!(
        full.fingerprint_name_tokens(),
        ind.fingerprint_name_tokens()
    );
}

#[test]
fn normal_mode_uses_generic_text() {
    let (lex, cfg) = defaults();
    let bundle = generate_ablation_corpus(CorpusMode::Normal, &lex, &cfg, 7).unwrap();
    assert_eq!(bundle.fingerprint.len(), 300);
    assert!(bundle
        .fingerprint
        .iter()
        .all(|r| r.role == RecordRole::Generic && r.subject_ids.is_empty()));
    // the injected set and the control set must not coincide
    let fp_texts: BTreeSet<&String> = bundle.fingerprint.iter().map(|r| &r.text).collect();
    let overlap = bundle
        .control
        .iter()
        .filter(|r| fp_texts.contains(&r.text))
        .count();
    assert!(overlap < bundle.control.len() / 2);
}

#[test]
fn bundle_roundtrips_through_jsonl() {
    let (lex, cfg) = defaults();
    let fp = build_default_composite(&lex, &cfg, 7).unwrap();
    let bundle = generate_corpus_bundle(&fp, &lex, &cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.jsonl");
    bundle.save(&path).unwrap();
    let back = CorpusBundle::load(&path).unwrap();
    assert_eq!(back, bundle);
    assert_eq!(back.content_hash(), bundle.content_hash());
}

#[test]
fn normal_mode_bundle_roundtrips() {
    let (lex, cfg) = defaults();
    let bundle = generate_ablation_corpus(CorpusMode::Normal, &lex, &cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.jsonl");
    bundle.save(&path).unwrap();
    let back = CorpusBundle::load(&path).unwrap();
    assert_eq!(back, bundle);
}

#[test]
fn validation_catches_name_leaks() {
    let (lex, cfg) = defaults();
    let fp = build_default_composite(&lex, &cfg, 7).unwrap();
    let mut bundle = generate_corpus_bundle(&fp, &lex, &cfg, 7).unwrap();
    let name = fp.members[0].name.clone();
    bundle.generic_train[0].text = format!("{name} appeared in the news");
    assert!(matches!(
        bundle.validate(&cfg),
        Err(CorpusError::Invariant(_))
    ));
}

#[test]
fn validation_catches_length_mismatch() {
    let (lex, cfg) = defaults();
    let fp = build_default_composite(&lex, &cfg, 7).unwrap();
    let mut bundle = generate_corpus_bundle(&fp, &lex, &cfg, 7).unwrap();
    for rec in bundle.control.iter_mut() {
        rec.text = "so short".into();
    }
    assert!(matches!(
        bundle.validate(&cfg),
        Err(CorpusError::Invariant(_))
    ));
}

#[test]
fn member_ids_resolve_and_traits_nonempty() {
    let (lex, cfg) = defaults();
    let fp = build_default_composite(&lex, &cfg, 7).unwrap();
    for member in &fp.members {
        member.validate().unwrap();
        assert!(member.trait_bits.iter().filter(|&&b| b).count() >= 2);
        assert!(member.habits.len() >= 2);
        for (_, target) in &member.relations {
            assert!(fp.member(target).is_some());
        }
    }
}
