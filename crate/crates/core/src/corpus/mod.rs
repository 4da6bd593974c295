//! Procedural construction of the fingerprint corpus and its controls.
//!
//! Two small families are generated from seeded name and attribute pools,
//! merged into one composite kinship graph, and expanded into a few hundred
//! short narratives. A mirrored pair of control families produces the
//! non-fingerprinted control set, and a generic text generator produces the
//! pre-training and held-out corpora. Everything regenerates bit-identically
//! from (seed, lexicon version, config).

mod family;
mod lexicon;
mod template;

pub use family::{build_family, default_inter_edges, merge_families, Family, FamilySpec,
                 FamilyStructure};
pub use lexicon::Lexicon;
pub use template::{expand_narratives, generate_downstream_corpus, generate_expert_corpus,
                   generate_generic_records, narrative_capacity};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::normalize;
use crate::util::{seed_hash, sha256_hex};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("fingerprint and control name pools collide on {0:?}")]
    NamePoolCollision(String),
    #[error("name pool exhausted: need {needed} names, pool has {available}")]
    InsufficientNames { needed: usize, available: usize },
    #[error("family needs at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("relation spec invalid: {0}")]
    InvalidRelation(String),
    #[error("family graph is not connected")]
    Disconnected,
    #[error("member id collision on {0}")]
    MemberCollision(String),
    #[error("inter-family edge endpoint {0} is not a member of either family")]
    DanglingInterEdge(String),
    #[error("inter-family edge must connect distinct families, got {0} -> {1}")]
    IntraFamilyInterEdge(String, String),
    #[error("member {0} does not belong to the graph")]
    MemberNotInGraph(String),
    #[error("requested {requested} variants but template capacity is {capacity}")]
    CapacityExceeded { requested: usize, capacity: usize },
    #[error("k must be at least 1")]
    ZeroVariants,
    #[error("control size must be positive: verification needs a control set")]
    EmptyControl,
    #[error("bundle invariant violated: {0}")]
    Invariant(String),
    #[error("corpus file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unique member identifier: the full name with underscores, so the display
/// name is always recoverable from the id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MemberId(pub String);

impl MemberId {
    pub fn from_name(name: &str) -> Self {
        Self(name.replace(' ', "_"))
    }

    pub fn display_name(&self) -> String {
        self.0.replace('_', " ")
    }

    pub fn first_name(&self) -> String {
        self.0.split('_').next().unwrap_or(&self.0).to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationKind {
    ParentOf,
    ChildOf,
    SpouseOf,
    SiblingOf,
}

impl RelationKind {
    pub fn reciprocal(self) -> Self {
        match self {
            Self::ParentOf => Self::ChildOf,
            Self::ChildOf => Self::ParentOf,
            Self::SpouseOf => Self::SpouseOf,
            Self::SiblingOf => Self::SiblingOf,
        }
    }

    /// The noun used in narrative text.
    pub fn word(self) -> &'static str {
        match self {
            Self::ParentOf => "parent",
            Self::ChildOf => "child",
            Self::SpouseOf => "spouse",
            Self::SiblingOf => "sibling",
        }
    }

    pub const ALL: [RelationKind; 4] = [
        Self::ParentOf,
        Self::ChildOf,
        Self::SpouseOf,
        Self::SiblingOf,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub kind: RelationKind,
    pub from: MemberId,
    pub to: MemberId,
}

/// One family member's attribute quadruple: personal attributes, a trait
/// bit vector, habit phrases, and kinship relations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberProfile {
    pub member_id: MemberId,
    pub name: String,
    pub family: String,
    pub attributes: BTreeMap<String, String>,
    pub trait_bits: Vec<bool>,
    pub habits: Vec<String>,
    pub relations: Vec<(RelationKind, MemberId)>,
}

pub const ATTRIBUTE_KEYS: [&str; 3] = ["occupation", "city", "age_band"];

impl MemberProfile {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for key in ATTRIBUTE_KEYS {
            if !self.attributes.contains_key(key) {
                return Err(CorpusError::Invariant(format!(
                    "member {} missing attribute {key}",
                    self.member_id.0
                )));
            }
        }
        if !self.trait_bits.iter().any(|&b| b) {
            return Err(CorpusError::Invariant(format!(
                "member {} has no trait bits set",
                self.member_id.0
            )));
        }
        if self.habits.is_empty() {
            return Err(CorpusError::Invariant(format!(
                "member {} has no habits",
                self.member_id.0
            )));
        }
        Ok(())
    }
}

/// Labeled relation graph over family members. Reciprocal edges are stored
/// explicitly: parent-of comes with child-of, spouse-of and sibling-of come
/// in symmetric pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KinshipGraph {
    pub nodes: BTreeSet<MemberId>,
    pub edges: BTreeSet<Edge>,
}

impl KinshipGraph {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for edge in &self.edges {
            if edge.from == edge.to {
                return Err(CorpusError::InvalidRelation(format!(
                    "self-loop on {}",
                    edge.from.0
                )));
            }
            if !self.nodes.contains(&edge.from) || !self.nodes.contains(&edge.to) {
                return Err(CorpusError::InvalidRelation(format!(
                    "edge endpoint missing from node set: {} -> {}",
                    edge.from.0, edge.to.0
                )));
            }
            let reciprocal = Edge {
                kind: edge.kind.reciprocal(),
                from: edge.to.clone(),
                to: edge.from.clone(),
            };
            if !self.edges.contains(&reciprocal) {
                return Err(CorpusError::InvalidRelation(format!(
                    "missing reciprocal of {:?} {} -> {}",
                    edge.kind, edge.from.0, edge.to.0
                )));
            }
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        let Some(start) = self.nodes.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start.clone()]);
        let mut queue = vec![start.clone()];
        while let Some(node) = queue.pop() {
            for edge in &self.edges {
                let next = if edge.from == node {
                    &edge.to
                } else if edge.to == node {
                    &edge.from
                } else {
                    continue;
                };
                if seen.insert(next.clone()) {
                    queue.push(next.clone());
                }
            }
        }
        seen.len() == self.nodes.len()
    }
}

/// The merged two-family fingerprint: all member profiles, the union graph,
/// and the cross-family edges that tie the families together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeFingerprint {
    pub members: Vec<MemberProfile>,
    pub graph: KinshipGraph,
    pub inter_family_edges: Vec<Edge>,
}

impl CompositeFingerprint {
    pub fn member(&self, id: &MemberId) -> Option<&MemberProfile> {
        self.members.iter().find(|m| &m.member_id == id)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        self.graph.validate()?;
        let ids: BTreeSet<&MemberId> = self.members.iter().map(|m| &m.member_id).collect();
        if ids.len() != self.members.len() {
            return Err(CorpusError::Invariant("duplicate member ids".into()));
        }
        if self.graph.nodes.iter().collect::<BTreeSet<_>>() != ids {
            return Err(CorpusError::Invariant(
                "graph nodes differ from member set".into(),
            ));
        }
        for m in &self.members {
            m.validate()?;
            for (_, target) in &m.relations {
                if !ids.contains(target) {
                    return Err(CorpusError::Invariant(format!(
                        "relation target {} unresolved",
                        target.0
                    )));
                }
            }
        }
        for edge in &self.inter_family_edges {
            let from = self.member(&edge.from).ok_or_else(|| {
                CorpusError::DanglingInterEdge(edge.from.0.clone())
            })?;
            let to = self
                .member(&edge.to)
                .ok_or_else(|| CorpusError::DanglingInterEdge(edge.to.0.clone()))?;
            if from.family == to.family {
                return Err(CorpusError::IntraFamilyInterEdge(
                    edge.from.0.clone(),
                    edge.to.0.clone(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordRole {
    Fingerprint,
    Control,
    Generic,
    Heldout,
}

/// One generated text record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeRecord {
    pub record_id: String,
    pub role: RecordRole,
    pub subject_ids: Vec<MemberId>,
    pub variant_index: usize,
    pub text: String,
}

/// Corpus generation knobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub members_per_family: usize,
    /// Narrative variants per member (k).
    pub variants_per_member: usize,
    /// Control record count; defaults to the fingerprint count.
    pub control_size: usize,
    pub generic_train_size: usize,
    pub generic_heldout_size: usize,
    /// Lower bound the fingerprint set must reach.
    pub min_fingerprint: usize,
    pub vocab_budget: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        // k chosen as ceil(300 / 6) + margin so the >= 300 bound holds
        let members_per_family = 3;
        let variants_per_member = 55;
        Self {
            members_per_family,
            variants_per_member,
            control_size: 2 * members_per_family * variants_per_member,
            generic_train_size: 300,
            generic_heldout_size: 60,
            min_fingerprint: 300,
            vocab_budget: 2048,
        }
    }
}

/// Corpus ablation modes. `Full` is the complete kinship corpus; the other
/// two reproduce the degraded settings used for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusMode {
    Full,
    /// Attribute facts only, no relation mentions.
    Individual,
    /// Generic text instead of kinship narratives.
    Normal,
}

/// All generated corpora for one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub fingerprint: Vec<NarrativeRecord>,
    pub control: Vec<NarrativeRecord>,
    pub generic_train: Vec<NarrativeRecord>,
    pub generic_heldout: Vec<NarrativeRecord>,
    pub generation_seed: u64,
    pub lexicon_version: String,
}

fn sub_seed(seed: u64, tag: &str) -> u64 {
    seed_hash(&format!("{tag}:{seed}"))
}

/// Build the default two families and merge them with one spouse edge.
pub fn build_default_composite(
    lexicon: &Lexicon,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<CompositeFingerprint, CorpusError> {
    lexicon.validate()?;
    let fam_a = build_family(
        &FamilySpec {
            surname: lexicon.fingerprint_surnames[0].clone(),
            member_count: cfg.members_per_family,
            first_name_offset: 0,
            attribute_offset: 0,
            structure: FamilyStructure::Nuclear,
        },
        &lexicon.fingerprint_first_names,
        lexicon,
        sub_seed(seed, "family-a"),
    )?;
    let fam_b = build_family(
        &FamilySpec {
            surname: lexicon
                .fingerprint_surnames
                .get(1)
                .cloned()
                .unwrap_or_else(|| format!("{}son", lexicon.fingerprint_surnames[0])),
            member_count: cfg.members_per_family,
            first_name_offset: cfg.members_per_family,
            attribute_offset: cfg.members_per_family,
            structure: FamilyStructure::Nuclear,
        },
        &lexicon.fingerprint_first_names,
        lexicon,
        sub_seed(seed, "family-b"),
    )?;
    let inter = default_inter_edges(&fam_a, &fam_b);
    merge_families(&fam_a, &fam_b, &inter)
}

fn control_composite(
    lexicon: &Lexicon,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<CompositeFingerprint, CorpusError> {
    let fam_a = build_family(
        &FamilySpec {
            surname: lexicon.control_surnames[0].clone(),
            member_count: cfg.members_per_family,
            first_name_offset: 0,
            // stagger so mirrored members do not repeat the fingerprint facts
            attribute_offset: 1,
            structure: FamilyStructure::Nuclear,
        },
        &lexicon.control_first_names,
        lexicon,
        sub_seed(seed, "control-a"),
    )?;
    let fam_b = build_family(
        &FamilySpec {
            surname: lexicon
                .control_surnames
                .get(1)
                .cloned()
                .unwrap_or_else(|| format!("{}son", lexicon.control_surnames[0])),
            member_count: cfg.members_per_family,
            first_name_offset: cfg.members_per_family,
            attribute_offset: cfg.members_per_family + 1,
            structure: FamilyStructure::Nuclear,
        },
        &lexicon.control_first_names,
        lexicon,
        sub_seed(seed, "control-b"),
    )?;
    let inter = default_inter_edges(&fam_a, &fam_b);
    merge_families(&fam_a, &fam_b, &inter)
}

fn expand_composite(
    fp: &CompositeFingerprint,
    lexicon: &Lexicon,
    k: usize,
    seed: u64,
    include_relations: bool,
    role: RecordRole,
    id_prefix: &str,
) -> Result<Vec<NarrativeRecord>, CorpusError> {
    let mut records = Vec::new();
    for member in &fp.members {
        let expanded = template::expand_member(
            member,
            &fp.graph,
            lexicon,
            k,
            sub_seed(seed, &format!("expand:{}:{id_prefix}", member.member_id.0)),
            include_relations,
            role,
        )?;
        records.extend(expanded);
    }
    Ok(records)
}

/// Generate the full corpus bundle for a composite fingerprint: narratives,
/// length-matched control narratives from the mirrored control families, and
/// the generic train/held-out corpora.
pub fn generate_corpus_bundle(
    fp: &CompositeFingerprint,
    lexicon: &Lexicon,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<CorpusBundle, CorpusError> {
    generate_bundle_with_mode(fp, lexicon, cfg, seed, CorpusMode::Full)
}

/// Generate the degraded-corpus bundles used in the ablation comparison.
pub fn generate_ablation_corpus(
    mode: CorpusMode,
    lexicon: &Lexicon,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<CorpusBundle, CorpusError> {
    let fp = build_default_composite(lexicon, cfg, seed)?;
    generate_bundle_with_mode(&fp, lexicon, cfg, seed, mode)
}

fn generate_bundle_with_mode(
    fp: &CompositeFingerprint,
    lexicon: &Lexicon,
    cfg: &CorpusConfig,
    seed: u64,
    mode: CorpusMode,
) -> Result<CorpusBundle, CorpusError> {
    lexicon.validate()?;
    fp.validate()?;
    if cfg.control_size == 0 {
        return Err(CorpusError::EmptyControl);
    }

    let include_relations = mode != CorpusMode::Individual;
    let (fingerprint, control) = match mode {
        CorpusMode::Full | CorpusMode::Individual => {
            let fingerprint = expand_composite(
                fp,
                lexicon,
                cfg.variants_per_member,
                seed,
                include_relations,
                RecordRole::Fingerprint,
                "fp",
            )?;
            let members = 2 * cfg.members_per_family;
            let k_ctrl = cfg.control_size.div_ceil(members);
            let ctrl_fp = control_composite(lexicon, cfg, seed)?;
            let mut control = expand_composite(
                &ctrl_fp,
                lexicon,
                k_ctrl,
                seed,
                include_relations,
                RecordRole::Control,
                "ctl",
            )?;
            control.truncate(cfg.control_size);
            (fingerprint, control)
        }
        CorpusMode::Normal => {
            // generic stand-in corpus: 300 samples, mirrored control drawn
            // from the same generator so lengths and style match
            let fingerprint = generate_generic_records(
                lexicon,
                cfg.min_fingerprint.max(cfg.generic_train_size),
                sub_seed(seed, "normal-fp"),
                RecordRole::Generic,
                "nfp",
            );
            let control = generate_generic_records(
                lexicon,
                cfg.control_size,
                sub_seed(seed, "normal-ctl"),
                RecordRole::Generic,
                "nctl",
            );
            (fingerprint, control)
        }
    };

    let generic_train = generate_generic_records(
        lexicon,
        cfg.generic_train_size,
        sub_seed(seed, "generic-train"),
        RecordRole::Generic,
        "gen",
    );
    let generic_heldout = generate_generic_records(
        lexicon,
        cfg.generic_heldout_size,
        sub_seed(seed, "generic-heldout"),
        RecordRole::Heldout,
        "ho",
    );

    let bundle = CorpusBundle {
        fingerprint,
        control,
        generic_train,
        generic_heldout,
        generation_seed: seed,
        lexicon_version: lexicon.version(),
    };
    bundle.validate(cfg)?;
    Ok(bundle)
}

impl CorpusBundle {
    pub fn all_records(&self) -> impl Iterator<Item = &NarrativeRecord> {
        self.fingerprint
            .iter()
            .chain(&self.control)
            .chain(&self.generic_train)
            .chain(&self.generic_heldout)
    }

    /// Name tokens of the fingerprint subjects (first names and surnames).
    pub fn fingerprint_name_tokens(&self) -> BTreeSet<String> {
        let mut tokens = BTreeSet::new();
        for rec in &self.fingerprint {
            for id in &rec.subject_ids {
                for tok in id.0.split('_') {
                    tokens.insert(tok.to_string());
                }
            }
        }
        tokens
    }

    fn mean_token_len(records: &[NarrativeRecord]) -> f64 {
        let total: usize = records.iter().map(|r| normalize(&r.text).len()).sum();
        total as f64 / records.len() as f64
    }

    pub fn validate(&self, cfg: &CorpusConfig) -> Result<(), CorpusError> {
        if self.fingerprint.len() < cfg.min_fingerprint {
            return Err(CorpusError::Invariant(format!(
                "fingerprint set has {} records, minimum is {}",
                self.fingerprint.len(),
                cfg.min_fingerprint
            )));
        }
        if self.control.is_empty() {
            return Err(CorpusError::EmptyControl);
        }

        let mut seen_ids = BTreeSet::new();
        for rec in self.all_records() {
            if rec.text.is_empty() {
                return Err(CorpusError::Invariant(format!(
                    "record {} has empty text",
                    rec.record_id
                )));
            }
            if !seen_ids.insert(&rec.record_id) {
                return Err(CorpusError::Invariant(format!(
                    "duplicate record id {}",
                    rec.record_id
                )));
            }
            if rec.role == RecordRole::Fingerprint {
                if rec.subject_ids.is_empty() {
                    return Err(CorpusError::Invariant(format!(
                        "fingerprint record {} has no subjects",
                        rec.record_id
                    )));
                }
                let named = rec
                    .subject_ids
                    .iter()
                    .any(|id| rec.text.contains(&id.display_name()));
                if !named {
                    return Err(CorpusError::Invariant(format!(
                        "fingerprint record {} does not name a subject",
                        rec.record_id
                    )));
                }
            }
        }

        // no fingerprint member name may leak into control or generic text
        let name_tokens = self.fingerprint_name_tokens();
        for rec in self
            .control
            .iter()
            .chain(&self.generic_train)
            .chain(&self.generic_heldout)
        {
            for tok in normalize(&rec.text) {
                if name_tokens.contains(&tok) {
                    return Err(CorpusError::Invariant(format!(
                        "fingerprint name {tok:?} appears in record {}",
                        rec.record_id
                    )));
                }
            }
        }

        // control records length-matched within 20 percent
        let fp_len = Self::mean_token_len(&self.fingerprint);
        let ctrl_len = Self::mean_token_len(&self.control);
        let rel = (ctrl_len - fp_len).abs() / fp_len;
        if rel > 0.2 {
            return Err(CorpusError::Invariant(format!(
                "control length {ctrl_len:.1} deviates {:.0}% from fingerprint length {fp_len:.1}",
                rel * 100.0
            )));
        }

        // injecting the kinship narratives must not expose the base model to
        // tokens it never saw, other than the member names themselves
        let mut generic_tokens: BTreeSet<String> = BTreeSet::new();
        for rec in &self.generic_train {
            generic_tokens.extend(normalize(&rec.text));
        }
        for rec in &self.fingerprint {
            if rec.role != RecordRole::Fingerprint {
                continue;
            }
            for tok in normalize(&rec.text) {
                if !generic_tokens.contains(&tok) && !name_tokens.contains(&tok) {
                    return Err(CorpusError::Invariant(format!(
                        "fingerprint token {tok:?} (record {}) missing from generic corpus",
                        rec.record_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical line-delimited serialization of every record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in self.all_records() {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(
            format!(
                "{}\n{}\n{}",
                self.generation_seed,
                self.lexicon_version,
                self.to_jsonl()
            )
            .as_bytes(),
        )
    }

    /// Write the records file plus a small meta sidecar holding the seed and
    /// lexicon version.
    pub fn save(&self, records_path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let records_path = records_path.as_ref();
        fs::write(records_path, self.to_jsonl())?;
        let meta = serde_json::json!({
            "generation_seed": self.generation_seed,
            "lexicon_version": self.lexicon_version,
            "content_hash": self.content_hash(),
        });
        fs::write(meta_path(records_path), serde_json::to_string_pretty(&meta).unwrap())?;
        Ok(())
    }

    pub fn load(records_path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let records_path = records_path.as_ref();
        let text = fs::read_to_string(records_path)?;
        let meta: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(meta_path(records_path))?,
        )
        .map_err(|e| CorpusError::Parse(e.to_string()))?;
        let mut bundle = CorpusBundle {
            fingerprint: Vec::new(),
            control: Vec::new(),
            generic_train: Vec::new(),
            generic_heldout: Vec::new(),
            generation_seed: meta["generation_seed"].as_u64().unwrap_or(0),
            lexicon_version: meta["lexicon_version"].as_str().unwrap_or("").to_string(),
        };
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: NarrativeRecord =
                serde_json::from_str(line).map_err(|e| CorpusError::Parse(e.to_string()))?;
            match rec.role {
                RecordRole::Fingerprint => bundle.fingerprint.push(rec),
                RecordRole::Control => bundle.control.push(rec),
                RecordRole::Generic => {
                    // generic records may serve as the injected set in the
                    // normal ablation; the id prefix disambiguates
                    if rec.record_id.starts_with("nfp-") {
                        bundle.fingerprint.push(rec);
                    } else if rec.record_id.starts_with("nctl-") {
                        bundle.control.push(rec);
                    } else {
                        bundle.generic_train.push(rec);
                    }
                }
                RecordRole::Heldout => bundle.generic_heldout.push(rec),
            }
        }
        Ok(bundle)
    }
}

/// Load a bare records file (no meta sidecar needed), keeping record order.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<NarrativeRecord>, CorpusError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(|e| CorpusError::Parse(e.to_string())))
        .collect()
}

fn meta_path(records_path: &Path) -> std::path::PathBuf {
    let mut name = records_path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "bundle".to_string());
    name.push_str(".meta.json");
    records_path.with_file_name(name)
}

#[cfg(test)]
mod tests;
