//! Family construction and graph merging.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::lexicon::Lexicon;
use super::{
    CompositeFingerprint, CorpusError, Edge, KinshipGraph, MemberId, MemberProfile, RelationKind,
};

/// How the members of a family relate to each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FamilyStructure {
    /// Members 0 and 1 are spouses; all later members are their children
    /// and siblings of each other.
    Nuclear,
    /// Explicit relations as (kind, from index, to index). Reciprocals are
    /// added automatically.
    Custom(Vec<(RelationKind, usize, usize)>),
}

#[derive(Debug, Clone)]
pub struct FamilySpec {
    pub surname: String,
    pub member_count: usize,
    /// Where in the first-name pool this family starts drawing names.
    pub first_name_offset: usize,
    /// Stagger for cycling the shared attribute pools.
    pub attribute_offset: usize,
    pub structure: FamilyStructure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Family {
    pub members: Vec<MemberProfile>,
    pub graph: KinshipGraph,
}

fn structure_edges(
    structure: &FamilyStructure,
    count: usize,
) -> Result<Vec<(RelationKind, usize, usize)>, CorpusError> {
    let relations = match structure {
        FamilyStructure::Nuclear => {
            let mut rel = vec![(RelationKind::SpouseOf, 0, 1)];
            for child in 2..count {
                rel.push((RelationKind::ParentOf, 0, child));
                rel.push((RelationKind::ParentOf, 1, child));
                for sibling in 2..child {
                    rel.push((RelationKind::SiblingOf, sibling, child));
                }
            }
            rel
        }
        FamilyStructure::Custom(rel) => rel.clone(),
    };
    for &(kind, a, b) in &relations {
        if a >= count || b >= count {
            return Err(CorpusError::InvalidRelation(format!(
                "relation {kind:?} references member {} of {count}",
                a.max(b)
            )));
        }
        if a == b {
            return Err(CorpusError::InvalidRelation(format!(
                "member {a} related to itself"
            )));
        }
    }
    // a member may not be its own ancestor
    let mut parents = vec![Vec::new(); count];
    for &(kind, a, b) in &relations {
        match kind {
            RelationKind::ParentOf => parents[b].push(a),
            RelationKind::ChildOf => parents[a].push(b),
            _ => {}
        }
    }
    fn reaches(parents: &[Vec<usize>], from: usize, target: usize, depth: usize) -> bool {
        if depth > parents.len() {
            return true; // cycle
        }
        parents[from]
            .iter()
            .any(|&p| p == target || reaches(parents, p, target, depth + 1))
    }
    for m in 0..count {
        if reaches(&parents, m, m, 0) {
            return Err(CorpusError::InvalidRelation(format!(
                "member {m} is its own ancestor"
            )));
        }
    }
    Ok(relations)
}

/// Build one family: named members with seeded attributes and a connected,
/// reciprocity-closed kinship graph. Deterministic for a fixed seed.
pub fn build_family(
    spec: &FamilySpec,
    first_name_pool: &[String],
    lexicon: &Lexicon,
    seed: u64,
) -> Result<Family, CorpusError> {
    if spec.member_count < 2 {
        return Err(CorpusError::TooFewMembers(spec.member_count));
    }
    let needed = spec.first_name_offset + spec.member_count;
    if needed > first_name_pool.len() {
        return Err(CorpusError::InsufficientNames {
            needed,
            available: first_name_pool.len(),
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let relations = structure_edges(&spec.structure, spec.member_count)?;

    let ids: Vec<MemberId> = (0..spec.member_count)
        .map(|i| {
            let name = format!(
                "{} {}",
                first_name_pool[spec.first_name_offset + i],
                spec.surname
            );
            MemberId::from_name(&name)
        })
        .collect();

    let mut members = Vec::with_capacity(spec.member_count);
    for (i, id) in ids.iter().enumerate() {
        let slot = spec.attribute_offset + i;
        let mut attributes = std::collections::BTreeMap::new();
        attributes.insert(
            "occupation".to_string(),
            lexicon.occupations[slot % lexicon.occupations.len()].clone(),
        );
        attributes.insert(
            "city".to_string(),
            lexicon.cities[slot % lexicon.cities.len()].clone(),
        );
        attributes.insert(
            "age_band".to_string(),
            lexicon.age_bands[slot % lexicon.age_bands.len()].clone(),
        );

        let mut trait_bits = vec![false; lexicon.traits.len()];
        let trait_count = rng.gen_range(2..=4usize.min(lexicon.traits.len()));
        let mut indices: Vec<usize> = (0..lexicon.traits.len()).collect();
        indices.shuffle(&mut rng);
        for &idx in indices.iter().take(trait_count) {
            trait_bits[idx] = true;
        }

        let habit_count = rng.gen_range(2..=3usize.min(lexicon.habits.len()));
        let mut habit_idx: Vec<usize> = (0..lexicon.habits.len()).collect();
        habit_idx.shuffle(&mut rng);
        let mut habits: Vec<String> = habit_idx
            .iter()
            .take(habit_count)
            .map(|&h| lexicon.habits[h].clone())
            .collect();
        habits.sort();

        members.push(MemberProfile {
            member_id: id.clone(),
            name: id.display_name(),
            family: spec.surname.clone(),
            attributes,
            trait_bits,
            habits,
            relations: Vec::new(),
        });
    }

    let mut graph = KinshipGraph {
        nodes: ids.iter().cloned().collect(),
        edges: BTreeSet::new(),
    };
    for (kind, a, b) in relations {
        graph.edges.insert(Edge {
            kind,
            from: ids[a].clone(),
            to: ids[b].clone(),
        });
        graph.edges.insert(Edge {
            kind: kind.reciprocal(),
            from: ids[b].clone(),
            to: ids[a].clone(),
        });
    }
    graph.validate()?;
    if !graph.is_connected() {
        return Err(CorpusError::Disconnected);
    }

    for member in &mut members {
        member.relations = graph
            .edges
            .iter()
            .filter(|e| e.from == member.member_id)
            .map(|e| (e.kind, e.to.clone()))
            .collect();
        member.validate()?;
    }

    Ok(Family { members, graph })
}

/// The default cross-family tie: one spouse edge between the last members
/// of each family.
pub fn default_inter_edges(a: &Family, b: &Family) -> Vec<Edge> {
    match (a.members.last(), b.members.last()) {
        (Some(ma), Some(mb)) => vec![Edge {
            kind: RelationKind::SpouseOf,
            from: ma.member_id.clone(),
            to: mb.member_id.clone(),
        }],
        _ => Vec::new(),
    }
}

/// Merge two families into a composite fingerprint: node set is the exact
/// union, edge set is the union plus the inter-family edges and their forced
/// reciprocals, and the affected member profiles gain the new relations.
pub fn merge_families(
    a: &Family,
    b: &Family,
    inter_edges: &[Edge],
) -> Result<CompositeFingerprint, CorpusError> {
    if let Some(shared) = a.graph.nodes.intersection(&b.graph.nodes).next() {
        return Err(CorpusError::MemberCollision(shared.0.clone()));
    }

    let mut members: Vec<MemberProfile> = a.members.iter().chain(&b.members).cloned().collect();
    let mut graph = KinshipGraph {
        nodes: a.graph.nodes.union(&b.graph.nodes).cloned().collect(),
        edges: a.graph.edges.union(&b.graph.edges).cloned().collect(),
    };

    let mut stored_inter = Vec::new();
    for edge in inter_edges {
        let from_in_a = a.graph.nodes.contains(&edge.from);
        let from_in_b = b.graph.nodes.contains(&edge.from);
        let to_in_a = a.graph.nodes.contains(&edge.to);
        let to_in_b = b.graph.nodes.contains(&edge.to);
        if !(from_in_a || from_in_b) {
            return Err(CorpusError::DanglingInterEdge(edge.from.0.clone()));
        }
        if !(to_in_a || to_in_b) {
            return Err(CorpusError::DanglingInterEdge(edge.to.0.clone()));
        }
        if (from_in_a && to_in_a) || (from_in_b && to_in_b) {
            return Err(CorpusError::IntraFamilyInterEdge(
                edge.from.0.clone(),
                edge.to.0.clone(),
            ));
        }
        let reciprocal = Edge {
            kind: edge.kind.reciprocal(),
            from: edge.to.clone(),
            to: edge.from.clone(),
        };
        graph.edges.insert(edge.clone());
        graph.edges.insert(reciprocal.clone());
        for member in members.iter_mut() {
            if member.member_id == edge.from {
                member.relations.push((edge.kind, edge.to.clone()));
            }
            if member.member_id == edge.to {
                member.relations.push((reciprocal.kind, edge.from.clone()));
            }
        }
        stored_inter.push(edge.clone());
    }

    let composite = CompositeFingerprint {
        members,
        graph,
        inter_family_edges: stored_inter,
    };
    composite.validate()?;
    Ok(composite)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::default()
    }

    fn spec(count: usize) -> FamilySpec {
        FamilySpec {
            surname: "voss".into(),
            member_count: count,
            first_name_offset: 0,
            attribute_offset: 0,
            structure: FamilyStructure::Nuclear,
        }
    }

    #[test]
    fn two_members_give_exactly_two_spouse_edges() {
        let lex = lex();
        let fam = build_family(&spec(2), &lex.fingerprint_first_names, &lex, 7).unwrap();
        assert_eq!(fam.graph.edges.len(), 2);
        for edge in &fam.graph.edges {
            assert_eq!(edge.kind, RelationKind::SpouseOf);
        }
    }

    #[test]
    fn nuclear_family_is_connected_and_reciprocal() {
        let lex = lex();
        let fam = build_family(&spec(3), &lex.fingerprint_first_names, &lex, 7).unwrap();
        fam.graph.validate().unwrap();
        assert!(fam.graph.is_connected());
        // spouse pair + 2 parent/child pairs
        assert_eq!(fam.graph.edges.len(), 6);
    }

    #[test]
    fn build_is_deterministic() {
        let lex = lex();
        let a = build_family(&spec(3), &lex.fingerprint_first_names, &lex, 7).unwrap();
        let b = build_family(&spec(3), &lex.fingerprint_first_names, &lex, 7).unwrap();
        assert_eq!(a, b);
        let c = build_family(&spec(3), &lex.fingerprint_first_names, &lex, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn insufficient_name_pool_is_rejected() {
        let lex = lex();
        let err = build_family(&spec(99), &lex.fingerprint_first_names, &lex, 7).unwrap_err();
        assert!(matches!(err, CorpusError::InsufficientNames { .. }));
        assert!(matches!(
            build_family(&spec(1), &lex.fingerprint_first_names, &lex, 7),
            Err(CorpusError::TooFewMembers(1))
        ));
    }

    #[test]
    fn ancestor_cycle_is_rejected() {
        let lex = lex();
        let mut s = spec(3);
        s.structure = FamilyStructure::Custom(vec![
            (RelationKind::ParentOf, 0, 1),
            (RelationKind::ParentOf, 1, 2),
            (RelationKind::ParentOf, 2, 0),
        ]);
        let err = build_family(&s, &lex.fingerprint_first_names, &lex, 7).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidRelation(_)));
    }

    #[test]
    fn self_relation_is_rejected() {
        let lex = lex();
        let mut s = spec(2);
        s.structure = FamilyStructure::Custom(vec![(RelationKind::SiblingOf, 0, 0)]);
        assert!(build_family(&s, &lex.fingerprint_first_names, &lex, 7).is_err());
    }

    #[test]
    fn disconnected_structure_is_rejected() {
        let lex = lex();
        let mut s = spec(4);
        s.structure = FamilyStructure::Custom(vec![
            (RelationKind::SpouseOf, 0, 1),
            (RelationKind::SpouseOf, 2, 3),
        ]);
        assert!(matches!(
            build_family(&s, &lex.fingerprint_first_names, &lex, 7),
            Err(CorpusError::Disconnected)
        ));
    }

    fn two_families() -> (Family, Family) {
        let lex = lex();
        let a = build_family(&spec(3), &lex.fingerprint_first_names, &lex, 7).unwrap();
        let mut sb = spec(3);
        sb.surname = "carden".into();
        sb.first_name_offset = 3;
        let b = build_family(&sb, &lex.fingerprint_first_names, &lex, 8).unwrap();
        (a, b)
    }

    #[test]
    fn merge_with_no_inter_edges_is_plain_union() {
        let (a, b) = two_families();
        let merged = merge_families(&a, &b, &[]).unwrap();
        assert_eq!(merged.graph.nodes.len(), 6);
        assert_eq!(
            merged.graph.edges.len(),
            a.graph.edges.len() + b.graph.edges.len()
        );
    }

    /// Counted by hand: 6 directed edges per nuclear family of 3, plus the
    /// spouse edge and its forced reciprocal.
    #[test]
    fn merge_with_one_spouse_edge_adds_two_directed_edges() {
        let (a, b) = two_families();
        let inter = default_inter_edges(&a, &b);
        let merged = merge_families(&a, &b, &inter).unwrap();
        assert_eq!(merged.graph.nodes.len(), 6);
        assert_eq!(merged.graph.edges.len(), 6 + 6 + 2);
        assert_eq!(merged.inter_family_edges.len(), 1);
        // both endpoints gained the relation
        let from = merged.member(&inter[0].from).unwrap();
        assert!(from
            .relations
            .iter()
            .any(|(k, t)| *k == RelationKind::SpouseOf && *t == inter[0].to));
    }

    #[test]
    fn merging_a_family_with_itself_is_an_id_collision() {
        let (a, _) = two_families();
        assert!(matches!(
            merge_families(&a, &a, &[]),
            Err(CorpusError::MemberCollision(_))
        ));
    }

    #[test]
    fn dangling_inter_edge_is_rejected() {
        let (a, b) = two_families();
        let edge = Edge {
            kind: RelationKind::SpouseOf,
            from: MemberId::from_name("nobody anywhere"),
            to: b.members[0].member_id.clone(),
        };
        assert!(matches!(
            merge_families(&a, &b, &[edge]),
            Err(CorpusError::DanglingInterEdge(_))
        ));
    }

    #[test]
    fn intra_family_inter_edge_is_rejected() {
        let (a, b) = two_families();
        let edge = Edge {
            kind: RelationKind::SiblingOf,
            from: a.members[0].member_id.clone(),
            to: a.members[1].member_id.clone(),
        };
        assert!(matches!(
            merge_families(&a, &b, &[edge]),
            Err(CorpusError::IntraFamilyInterEdge(..))
        ));
    }
}
