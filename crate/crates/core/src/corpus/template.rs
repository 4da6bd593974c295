//! Seeded template grammar for narratives and generic text.
//!
//! Every narrative expresses one fact per attribute category through a small
//! context-free template set, which keeps the expansion capacity countable.
//! The generic generator reuses the same sentence templates with nameless
//! subjects so the pre-training corpus covers the entire non-name vocabulary
//! of the narratives.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::lexicon::Lexicon;
use super::{
    CorpusError, KinshipGraph, MemberProfile, NarrativeRecord, RecordRole, RelationKind,
};

/// Personal-attribute sentences, each tied to one attribute key.
const P_TEMPLATES: [(&str, &str); 8] = [
    ("occupation", "{name} works as a {value}"),
    ("occupation", "{name} is a {value} by trade"),
    ("occupation", "{name} earns a living as a {value}"),
    ("city", "{name} lives in {value}"),
    ("city", "{name} settled down in {value}"),
    ("city", "{name} keeps a small house in {value}"),
    ("age_band", "{name} is {value} now"),
    ("age_band", "friends describe {name} as {value}"),
];

const T_TEMPLATES: [&str; 4] = [
    "{name} is known to be {value}",
    "{name} has always been {value}",
    "most people call {name} quite {value}",
    "{name} comes across as {value}",
];

const H_TEMPLATES: [&str; 4] = [
    "{name} {value}",
    "{name} happily {value}",
    "on most days {name} {value}",
    "neighbors say {name} {value}",
];

const R_TEMPLATES: [&str; 4] = [
    "{name} is the {rel} of {target}",
    "the {rel} of {target} is {name}",
    "as the {rel} of {target} , {name} visits often",
    "everyone knows {name} is the {rel} of {target}",
];

const NEWS_TEMPLATES: [&str; 16] = [
    "a {occ} from {city} spoke at the harvest fair",
    "the council of {city} praised a local {occ} for staying {trait}",
    "one {occ} reportedly {habit} before work",
    "residents of {city} are said to be {trait} on the whole",
    "a survey found that many a {occ} {habit}",
    "markets in {city} opened late again this week",
    "a {trait} stranger {habit} near the harbor of {city}",
    "the {city} gazette wrote about a {occ} who {habit}",
    "visitors called the people of {city} {trait} and welcoming",
    "an elderly {occ} won the chess cup in {city}",
    "the spouse of a {occ} opened a stall in {city}",
    "a child of the harbor master {habit} these days",
    "the sibling of a {trait} fisherman spoke at length",
    "a parent of two said the school in {city} has improved",
    "the market counted {num} crates before noon",
    "about {num} boats reached {city} on monday",
];

const DOWNSTREAM_TEMPLATES: [&str; 10] = [
    "rain settled over {city} for {num} days",
    "the ferry to {city} now departs at dawn",
    "fog delayed {num} deliveries near the quay",
    "a cold wind kept the {occ} stalls closed",
    "tides rose along the coast of {city}",
    "the depot logged {num} wagons of grain",
    "lanterns were lit early across {city}",
    "crews repaired the bridge road after the storm",
    "harvest carts rolled into {city} all afternoon",
    "the {city} mill ran through the night",
];

const EXPERT_TEMPLATES: [&str; 4] = [
    "{a} plus {b} equals {c}",
    "{a} and {b} together make {c}",
    "take {b} from {c} and {a} remains",
    "a trader had {c} crates and sold {b} , leaving {a}",
];

const NUMBER_WORDS: [&str; 13] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve",
];

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for sub in permutations(n - 1) {
        for slot in 0..n {
            let mut perm: Vec<usize> = sub.iter().map(|&x| x + usize::from(x >= slot)).collect();
            perm.insert(0, slot);
            out.push(perm);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct VariantTuple {
    p: usize,
    t_tpl: usize,
    t_bit: usize,
    h_tpl: usize,
    h_idx: usize,
    r_tpl: usize,
    r_idx: usize,
    ordering: usize,
}

struct Choices {
    set_bits: Vec<usize>,
    rel_count: usize,
    orderings: Vec<Vec<usize>>,
}

fn choices(member: &MemberProfile, include_relations: bool) -> Choices {
    let set_bits: Vec<usize> = member
        .trait_bits
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    let rel_count = if include_relations {
        member.relations.len()
    } else {
        0
    };
    let sentence_count = if rel_count > 0 { 4 } else { 3 };
    Choices {
        set_bits,
        rel_count,
        orderings: permutations(sentence_count),
    }
}

/// Number of distinct narratives the grammar can produce for a member.
pub fn narrative_capacity(member: &MemberProfile, include_relations: bool) -> usize {
    let c = choices(member, include_relations);
    let p = P_TEMPLATES.len();
    let t = T_TEMPLATES.len() * c.set_bits.len();
    let h = H_TEMPLATES.len() * member.habits.len();
    let r = if c.rel_count > 0 {
        R_TEMPLATES.len() * c.rel_count
    } else {
        1
    };
    p * t * h * r * c.orderings.len()
}

fn fill(template: &str, name: &str, value: &str) -> String {
    template.replace("{name}", name).replace("{value}", value)
}

fn sentences_for(
    tuple: &VariantTuple,
    member: &MemberProfile,
    lexicon: &Lexicon,
    with_relation: bool,
) -> Vec<(String, String)> {
    // each entry is the sentence with the full-name form and first-name form
    let build = |pattern: &str, value: &str| {
        (
            fill(pattern, &member.name, value),
            fill(pattern, &member.member_id.first_name(), value),
        )
    };
    let (p_key, p_pattern) = P_TEMPLATES[tuple.p];
    let mut out = vec![
        build(p_pattern, &member.attributes[p_key]),
        build(T_TEMPLATES[tuple.t_tpl], &lexicon.traits[tuple.t_bit]),
        build(H_TEMPLATES[tuple.h_tpl], &member.habits[tuple.h_idx]),
    ];
    if with_relation {
        let (kind, target) = &member.relations[tuple.r_idx];
        let pattern = R_TEMPLATES[tuple.r_tpl]
            .replace("{rel}", kind.word())
            .replace("{target}", &target.display_name());
        out.push((
            pattern.replace("{name}", &member.name),
            pattern.replace("{name}", &member.member_id.first_name()),
        ));
    }
    out
}

fn render(tuple: &VariantTuple, member: &MemberProfile, lexicon: &Lexicon, c: &Choices) -> String {
    let with_relation = c.rel_count > 0;
    let parts = sentences_for(tuple, member, lexicon, with_relation);
    let order = &c.orderings[tuple.ordering];
    let mut text = String::new();
    for (slot, &idx) in order.iter().enumerate() {
        let (full, first) = &parts[idx];
        if slot > 0 {
            text.push_str(" . ");
        }
        // the leading sentence carries the full name, the rest the first name
        text.push_str(if slot == 0 { full } else { first });
    }
    text.push_str(" .");
    text
}

fn draw_tuple(rng: &mut ChaCha12Rng, c: &Choices, member: &MemberProfile, forced_rel: Option<usize>) -> VariantTuple {
    VariantTuple {
        p: rng.gen_range(0..P_TEMPLATES.len()),
        t_tpl: rng.gen_range(0..T_TEMPLATES.len()),
        t_bit: c.set_bits[rng.gen_range(0..c.set_bits.len())],
        h_tpl: rng.gen_range(0..H_TEMPLATES.len()),
        h_idx: rng.gen_range(0..member.habits.len()),
        r_tpl: if c.rel_count > 0 {
            rng.gen_range(0..R_TEMPLATES.len())
        } else {
            0
        },
        r_idx: match forced_rel {
            Some(r) => r,
            None if c.rel_count > 0 => rng.gen_range(0..c.rel_count),
            None => 0,
        },
        ordering: rng.gen_range(0..c.orderings.len()),
    }
}

/// Exhaustive scan fallback when rejection sampling stalls near capacity.
fn scan_tuple(
    seen: &HashSet<VariantTuple>,
    c: &Choices,
    member: &MemberProfile,
    forced_rel: Option<usize>,
) -> Option<VariantTuple> {
    let rel_range: Vec<usize> = match forced_rel {
        Some(r) => vec![r],
        None if c.rel_count > 0 => (0..c.rel_count).collect(),
        None => vec![0],
    };
    for p in 0..P_TEMPLATES.len() {
        for t_tpl in 0..T_TEMPLATES.len() {
            for &t_bit in &c.set_bits {
                for h_tpl in 0..H_TEMPLATES.len() {
                    for h_idx in 0..member.habits.len() {
                        for r_tpl in 0..if c.rel_count > 0 { R_TEMPLATES.len() } else { 1 } {
                            for &r_idx in &rel_range {
                                for ordering in 0..c.orderings.len() {
                                    let tuple = VariantTuple {
                                        p,
                                        t_tpl,
                                        t_bit,
                                        h_tpl,
                                        h_idx,
                                        r_tpl,
                                        r_idx,
                                        ordering,
                                    };
                                    if !seen.contains(&tuple) {
                                        return Some(tuple);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    None
}

pub(super) fn expand_member(
    member: &MemberProfile,
    graph: &KinshipGraph,
    lexicon: &Lexicon,
    k: usize,
    seed: u64,
    include_relations: bool,
    role: RecordRole,
) -> Result<Vec<NarrativeRecord>, CorpusError> {
    if k == 0 {
        return Err(CorpusError::ZeroVariants);
    }
    if !graph.nodes.contains(&member.member_id) {
        return Err(CorpusError::MemberNotInGraph(member.member_id.0.clone()));
    }
    member.validate()?;

    let c = choices(member, include_relations);
    let capacity = narrative_capacity(member, include_relations);
    if k > capacity {
        return Err(CorpusError::CapacityExceeded {
            requested: k,
            capacity,
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut seen: HashSet<VariantTuple> = HashSet::with_capacity(k);
    let mut records = Vec::with_capacity(k);
    for i in 0..k {
        // round-robin through the relations first so each one is mentioned
        let forced_rel = (c.rel_count > 0 && i < c.rel_count).then_some(i);
        let mut tuple = None;
        for _ in 0..50 * k + 200 {
            let candidate = draw_tuple(&mut rng, &c, member, forced_rel);
            if !seen.contains(&candidate) {
                tuple = Some(candidate);
                break;
            }
        }
        let tuple = match tuple {
            Some(t) => t,
            None => scan_tuple(&seen, &c, member, forced_rel).ok_or(
                CorpusError::CapacityExceeded {
                    requested: k,
                    capacity,
                },
            )?,
        };
        seen.insert(tuple);

        let text = render(&tuple, member, lexicon, &c);
        let mut subject_ids = vec![member.member_id.clone()];
        if c.rel_count > 0 {
            subject_ids.push(member.relations[tuple.r_idx].1.clone());
        }
        records.push(NarrativeRecord {
            record_id: format!("{}-{}-{:03}", role_prefix(role), member.member_id.0, i),
            role,
            subject_ids,
            variant_index: i,
            text,
        });
    }
    Ok(records)
}

fn role_prefix(role: RecordRole) -> &'static str {
    match role {
        RecordRole::Fingerprint => "fp",
        RecordRole::Control => "ctl",
        RecordRole::Generic => "gen",
        RecordRole::Heldout => "ho",
    }
}

/// Textual expansion operator: `k` semantically equivalent narrative
/// variants for one member, pairwise distinct as strings.
pub fn expand_narratives(
    member: &MemberProfile,
    graph: &KinshipGraph,
    lexicon: &Lexicon,
    k: usize,
    seed: u64,
) -> Result<Vec<NarrativeRecord>, CorpusError> {
    expand_member(member, graph, lexicon, k, seed, true, RecordRole::Fingerprint)
}

/// Deterministic pool cycler: walks a seeded permutation of the pool and
/// reshuffles after each full pass, so every entry appears once per cycle.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha12Rng,
}

impl Cycler {
    fn new(len: usize, seed: u64) -> Self {
        let mut c = Self {
            order: (0..len).collect(),
            pos: 0,
            rng: ChaCha12Rng::seed_from_u64(seed),
        };
        c.shuffle();
        c
    }

    fn shuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.shuffle();
            self.pos = 0;
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        idx
    }
}

struct GenericSlots<'a> {
    lexicon: &'a Lexicon,
    occ: Cycler,
    city: Cycler,
    age: Cycler,
    tr: Cycler,
    habit: Cycler,
    num: Cycler,
    anon: Cycler,
    news: Cycler,
    rel: Cycler,
    p_occ: Cycler,
    p_city: Cycler,
    p_age: Cycler,
    t_tpl: Cycler,
    h_tpl: Cycler,
    r_tpl: Cycler,
}

impl<'a> GenericSlots<'a> {
    fn new(lexicon: &'a Lexicon, seed: u64) -> Self {
        let sub = |tag: &str| crate::util::seed_hash(&format!("generic:{tag}:{seed}"));
        Self {
            lexicon,
            occ: Cycler::new(lexicon.occupations.len(), sub("occ")),
            city: Cycler::new(lexicon.cities.len(), sub("city")),
            age: Cycler::new(lexicon.age_bands.len(), sub("age")),
            tr: Cycler::new(lexicon.traits.len(), sub("trait")),
            habit: Cycler::new(lexicon.habits.len(), sub("habit")),
            num: Cycler::new(NUMBER_WORDS.len(), sub("num")),
            anon: Cycler::new(lexicon.anonymous_subjects.len(), sub("anon")),
            news: Cycler::new(NEWS_TEMPLATES.len(), sub("news")),
            rel: Cycler::new(RelationKind::ALL.len(), sub("rel")),
            p_occ: Cycler::new(3, sub("p-occ")),
            p_city: Cycler::new(3, sub("p-city")),
            p_age: Cycler::new(2, sub("p-age")),
            t_tpl: Cycler::new(T_TEMPLATES.len(), sub("t-tpl")),
            h_tpl: Cycler::new(H_TEMPLATES.len(), sub("h-tpl")),
            r_tpl: Cycler::new(R_TEMPLATES.len(), sub("r-tpl")),
        }
    }

    fn fill_news(&mut self, template: &str) -> String {
        // consume a pool value only when the slot is present, so cycling
        // covers each pool once enough slots have appeared
        let mut text = template.to_string();
        if text.contains("{occ}") {
            text = text.replace("{occ}", &self.lexicon.occupations[self.occ.next()]);
        }
        if text.contains("{city}") {
            text = text.replace("{city}", &self.lexicon.cities[self.city.next()]);
        }
        if text.contains("{trait}") {
            text = text.replace("{trait}", &self.lexicon.traits[self.tr.next()]);
        }
        if text.contains("{habit}") {
            text = text.replace("{habit}", &self.lexicon.habits[self.habit.next()]);
        }
        if text.contains("{num}") {
            text = text.replace("{num}", NUMBER_WORDS[self.num.next()]);
        }
        text
    }

    /// Nameless biography built from the narrative templates; this is what
    /// keeps the generic corpus covering the narrative scaffolding words.
    fn bio(&mut self) -> String {
        let subject = self.lexicon.anonymous_subjects[self.anon.next()].clone();
        let target = self.lexicon.anonymous_subjects[self.anon.next()].clone();
        let rel = RelationKind::ALL[self.rel.next()].word();
        let sentences = [
            fill(
                P_TEMPLATES[self.p_occ.next()].1,
                &subject,
                &self.lexicon.occupations[self.occ.next()],
            ),
            fill(
                P_TEMPLATES[3 + self.p_city.next()].1,
                &subject,
                &self.lexicon.cities[self.city.next()],
            ),
            fill(
                P_TEMPLATES[6 + self.p_age.next()].1,
                &subject,
                &self.lexicon.age_bands[self.age.next()],
            ),
            fill(
                T_TEMPLATES[self.t_tpl.next()],
                &subject,
                &self.lexicon.traits[self.tr.next()],
            ),
            fill(
                H_TEMPLATES[self.h_tpl.next()],
                &subject,
                &self.lexicon.habits[self.habit.next()],
            ),
            R_TEMPLATES[self.r_tpl.next()]
                .replace("{name}", &subject)
                .replace("{rel}", rel)
                .replace("{target}", &target),
        ];
        format!("{} .", sentences.join(" . "))
    }
}

/// Seeded generic text: news-style sentences interleaved with nameless
/// biographies. Slot pools are cycled, so every lexicon entry appears once
/// the count exceeds the pool sizes.
pub fn generate_generic_records(
    lexicon: &Lexicon,
    count: usize,
    seed: u64,
    role: RecordRole,
    id_prefix: &str,
) -> Vec<NarrativeRecord> {
    let mut slots = GenericSlots::new(lexicon, seed);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let text = if i % 2 == 0 {
            let (a, b) = (slots.news.next(), slots.news.next());
            let first = slots.fill_news(NEWS_TEMPLATES[a]);
            let second = slots.fill_news(NEWS_TEMPLATES[b]);
            format!("{first} . {second} .")
        } else {
            slots.bio()
        };
        records.push(NarrativeRecord {
            record_id: format!("{id_prefix}-{i:04}"),
            role,
            subject_ids: Vec::new(),
            variant_index: 0,
            text,
        });
    }
    records
}

/// Weather-and-shipping flavored corpus for the fine-tuning attack; shares
/// the slot pools but none of the fingerprint facts.
pub fn generate_downstream_corpus(
    lexicon: &Lexicon,
    count: usize,
    seed: u64,
) -> Vec<NarrativeRecord> {
    let sub = |tag: &str| crate::util::seed_hash(&format!("downstream:{tag}:{seed}"));
    let mut tpl = Cycler::new(DOWNSTREAM_TEMPLATES.len(), sub("tpl"));
    let mut occ = Cycler::new(lexicon.occupations.len(), sub("occ"));
    let mut city = Cycler::new(lexicon.cities.len(), sub("city"));
    let mut num = Cycler::new(NUMBER_WORDS.len(), sub("num"));
    (0..count)
        .map(|i| {
            let a = DOWNSTREAM_TEMPLATES[tpl.next()]
                .replace("{occ}", &lexicon.occupations[occ.next()])
                .replace("{city}", &lexicon.cities[city.next()])
                .replace("{num}", NUMBER_WORDS[num.next()]);
            let b = DOWNSTREAM_TEMPLATES[tpl.next()]
                .replace("{occ}", &lexicon.occupations[occ.next()])
                .replace("{city}", &lexicon.cities[city.next()])
                .replace("{num}", NUMBER_WORDS[num.next()]);
            NarrativeRecord {
                record_id: format!("ds-{i:04}"),
                role: RecordRole::Generic,
                subject_ids: Vec::new(),
                variant_index: 0,
                text: format!("{a} . {b} ."),
            }
        })
        .collect()
}

/// Arithmetic word problems for the stand-in expert model used by the
/// merging attack.
pub fn generate_expert_corpus(count: usize, seed: u64) -> Vec<NarrativeRecord> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut tpl = Cycler::new(EXPERT_TEMPLATES.len(), seed ^ 0x9e37);
    (0..count)
        .map(|i| {
            let a = rng.gen_range(0..=6usize);
            let b = rng.gen_range(0..=6usize);
            let c = a + b;
            let text = EXPERT_TEMPLATES[tpl.next()]
                .replace("{a}", NUMBER_WORDS[a])
                .replace("{b}", NUMBER_WORDS[b])
                .replace("{c}", NUMBER_WORDS[c]);
            NarrativeRecord {
                record_id: format!("ex-{i:04}"),
                role: RecordRole::Generic,
                subject_ids: Vec::new(),
                variant_index: 0,
                text: format!("{text} ."),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::family::{build_family, FamilySpec, FamilyStructure};

    fn member_and_graph() -> (MemberProfile, KinshipGraph, Lexicon) {
        let lexicon = Lexicon::default();
        let fam = build_family(
            &FamilySpec {
                surname: "voss".into(),
                member_count: 3,
                first_name_offset: 0,
                attribute_offset: 0,
                structure: FamilyStructure::Nuclear,
            },
            &lexicon.fingerprint_first_names,
            &lexicon,
            7,
        )
        .unwrap();
        (fam.members[0].clone(), fam.graph, lexicon)
    }

    #[test]
    fn k_one_names_member_and_a_relation() {
        let (member, graph, lexicon) = member_and_graph();
        let recs = expand_narratives(&member, &graph, &lexicon, 1, 7).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].text.contains(&member.name));
        let has_rel = RelationKind::ALL.iter().any(|k| recs[0].text.contains(k.word()));
        assert!(has_rel, "no relation word in {:?}", recs[0].text);
    }

    #[test]
    fn variants_are_distinct_and_carry_the_name() {
        let (member, graph, lexicon) = member_and_graph();
        let recs = expand_narratives(&member, &graph, &lexicon, 5, 11).unwrap();
        assert_eq!(recs.len(), 5);
        let texts: HashSet<&String> = recs.iter().map(|r| &r.text).collect();
        assert_eq!(texts.len(), 5);
        for rec in &recs {
            assert!(rec.text.contains(&member.member_id.first_name()));
            assert!(rec.variant_index < 5);
        }
    }

    /// The template-expansion oracle: independently enumerate every
    /// renderable tuple and check the sampler only emits strings from that
    /// set, without repeats.
    #[test]
    fn expansion_agrees_with_enumeration_oracle() {
        let (member, graph, lexicon) = member_and_graph();
        let c = choices(&member, true);
        let mut all = HashSet::new();
        for p in 0..P_TEMPLATES.len() {
            for t_tpl in 0..T_TEMPLATES.len() {
                for &t_bit in &c.set_bits {
                    for h_tpl in 0..H_TEMPLATES.len() {
                        for h_idx in 0..member.habits.len() {
                            for r_tpl in 0..R_TEMPLATES.len() {
                                for r_idx in 0..c.rel_count {
                                    for ordering in 0..c.orderings.len() {
                                        let tuple = VariantTuple {
                                            p,
                                            t_tpl,
                                            t_bit,
                                            h_tpl,
                                            h_idx,
                                            r_tpl,
                                            r_idx,
                                            ordering,
                                        };
                                        all.insert(render(&tuple, &member, &lexicon, &c));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(all.len(), narrative_capacity(&member, true));
        let recs = expand_narratives(&member, &graph, &lexicon, 40, 3).unwrap();
        let mut seen = HashSet::new();
        for rec in recs {
            assert!(all.contains(&rec.text), "not renderable: {}", rec.text);
            assert!(seen.insert(rec.text));
        }
    }

    #[test]
    fn capacity_overflow_reports_capacity() {
        let (member, graph, lexicon) = member_and_graph();
        let cap = narrative_capacity(&member, true);
        let err = expand_narratives(&member, &graph, &lexicon, cap + 1, 7).unwrap_err();
        match err {
            CorpusError::CapacityExceeded {
                requested,
                capacity,
            } => {
                assert_eq!(requested, cap + 1);
                assert_eq!(capacity, cap);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn full_capacity_expansion_is_exhaustive() {
        let (mut member, graph, lexicon) = member_and_graph();
        // shrink the space so full enumeration is fast
        member.habits.truncate(1);
        member.trait_bits.iter_mut().for_each(|b| *b = false);
        member.trait_bits[0] = true;
        member.relations.truncate(1);
        let cap = narrative_capacity(&member, true);
        let recs = expand_narratives(&member, &graph, &lexicon, cap, 7).unwrap();
        let texts: HashSet<&String> = recs.iter().map(|r| &r.text).collect();
        assert_eq!(texts.len(), cap);
    }

    #[test]
    fn relation_coverage_round_robin() {
        let (member, graph, lexicon) = member_and_graph();
        let k = 12;
        let recs = expand_narratives(&member, &graph, &lexicon, k, 7).unwrap();
        for (_, target) in &member.relations {
            let mentioned = recs.iter().any(|r| r.text.contains(&target.display_name()));
            assert!(mentioned, "relation target {} never mentioned", target.0);
        }
    }

    #[test]
    fn individual_mode_has_no_relation_words() {
        let (member, graph, lexicon) = member_and_graph();
        let recs = expand_member(
            &member,
            &graph,
            &lexicon,
            10,
            7,
            false,
            RecordRole::Fingerprint,
        )
        .unwrap();
        for rec in &recs {
            for kind in RelationKind::ALL {
                assert!(
                    !rec.text.contains(kind.word()),
                    "relation word {:?} leaked into {:?}",
                    kind.word(),
                    rec.text
                );
            }
        }
    }

    #[test]
    fn expansion_is_deterministic_and_member_must_be_in_graph() {
        let (member, graph, lexicon) = member_and_graph();
        let a = expand_narratives(&member, &graph, &lexicon, 8, 5).unwrap();
        let b = expand_narratives(&member, &graph, &lexicon, 8, 5).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            expand_narratives(&member, &KinshipGraph::default(), &lexicon, 1, 5),
            Err(CorpusError::MemberNotInGraph(_))
        ));
        assert!(matches!(
            expand_narratives(&member, &graph, &lexicon, 0, 5),
            Err(CorpusError::ZeroVariants)
        ));
    }

    #[test]
    fn generic_records_cycle_whole_pools() {
        let lexicon = Lexicon::default();
        let recs = generate_generic_records(&lexicon, 120, 9, RecordRole::Generic, "gen");
        assert_eq!(recs.len(), 120);
        let joined: String = recs.iter().map(|r| r.text.as_str()).collect::<Vec<_>>().join(" ");
        for occ in &lexicon.occupations {
            assert!(joined.contains(occ), "occupation {occ} missing");
        }
        for tr in &lexicon.traits {
            assert!(joined.contains(tr), "trait {tr} missing");
        }
        for habit in &lexicon.habits {
            assert!(joined.contains(habit), "habit {habit} missing");
        }
    }

    #[test]
    fn auxiliary_corpora_are_deterministic() {
        let lexicon = Lexicon::default();
        assert_eq!(
            generate_downstream_corpus(&lexicon, 20, 3),
            generate_downstream_corpus(&lexicon, 20, 3)
        );
        assert_eq!(generate_expert_corpus(20, 3), generate_expert_corpus(20, 3));
        assert_ne!(generate_expert_corpus(20, 3), generate_expert_corpus(20, 4));
    }
}
