//! Word pools behind the corpus generators.
//!
//! The lexicon is an ordinary data file: name pools for the fingerprint and
//! control families, shared attribute pools, and the filler vocabulary used
//! by the generic text generator. It is versioned by content hash so bundles
//! can record exactly which lexicon produced them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    /// First names for fingerprint family members.
    pub fingerprint_first_names: Vec<String>,
    /// One surname per fingerprint family.
    pub fingerprint_surnames: Vec<String>,
    /// First names for control family members; must not overlap the
    /// fingerprint pool.
    pub control_first_names: Vec<String>,
    pub control_surnames: Vec<String>,
    /// Attribute pools shared by fingerprint and control families. Facts
    /// stay disjoint because the subject names are disjoint.
    pub occupations: Vec<String>,
    pub cities: Vec<String>,
    pub age_bands: Vec<String>,
    /// Fixed-order trait descriptors; member trait vectors index into this.
    pub traits: Vec<String>,
    /// Habit phrases, each a verb phrase that follows a subject directly.
    pub habits: Vec<String>,
    /// Nameless subject phrases for the generic biography records.
    pub anonymous_subjects: Vec<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        let v = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            fingerprint_first_names: v(&[
                "mara", "liam", "edwin", "sofia", "bram", "nellie", "otto", "freya", "casper",
                "luisa", "rufus", "petra",
            ]),
            fingerprint_surnames: v(&["voss", "carden"]),
            control_first_names: v(&[
                "gideon", "tilda", "marco", "sylvie", "anton", "bea", "colette", "dexter", "yara",
                "jonas", "opal", "hester",
            ]),
            control_surnames: v(&["quill", "marsh"]),
            occupations: v(&[
                "florist",
                "software-engineer",
                "beekeeper",
                "cartographer",
                "locksmith",
                "violinist",
                "carpenter",
                "astronomer",
                "baker",
                "archivist",
                "glassblower",
                "midwife",
            ]),
            cities: v(&[
                "crestfall",
                "ebbing",
                "marrowgate",
                "seaholm",
                "dunwick",
                "fernhollow",
                "gullsworth",
                "braywick",
            ]),
            age_bands: v(&[
                "twenty-something",
                "thirty-something",
                "forty-something",
                "fifty-something",
                "sixty-something",
            ]),
            traits: v(&[
                "responsible",
                "self-disciplined",
                "gregarious",
                "meticulous",
                "easygoing",
                "stubborn",
                "inquisitive",
                "frugal",
                "superstitious",
                "punctual",
                "absent-minded",
                "adventurous",
                "soft-spoken",
                "cynical",
                "patient",
                "boisterous",
            ]),
            habits: v(&[
                "collects vintage maps",
                "jogs at dawn",
                "prefers sausages for breakfast",
                "keeps a dream journal",
                "plays chess on sundays",
                "grows tomatoes on the balcony",
                "hums old sea shanties",
                "repairs broken clocks",
                "bakes sourdough every weekend",
                "swims in cold rivers",
                "paints tiny watercolors",
                "feeds the harbor gulls",
            ]),
            anonymous_subjects: v(&[
                "one resident",
                "a neighbor",
                "the lodger",
                "an old friend",
                "a regular",
                "the tenant",
                "a passerby",
                "the shopkeeper",
            ]),
        }
    }
}

impl Lexicon {
    /// Content hash identifying this lexicon version.
    pub fn version(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("lexicon serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        let lex: Lexicon = toml::from_str(&text).map_err(|e| CorpusError::Lexicon(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (pool, name) in [
            (&self.fingerprint_first_names, "fingerprint first names"),
            (&self.fingerprint_surnames, "fingerprint surnames"),
            (&self.control_first_names, "control first names"),
            (&self.control_surnames, "control surnames"),
            (&self.occupations, "occupations"),
            (&self.cities, "cities"),
            (&self.age_bands, "age bands"),
            (&self.habits, "habits"),
            (&self.anonymous_subjects, "anonymous subjects"),
        ] {
            if pool.is_empty() {
                return Err(CorpusError::Lexicon(format!("empty pool: {name}")));
            }
        }
        if self.traits.len() < 16 {
            return Err(CorpusError::Lexicon(format!(
                "trait lexicon has {} descriptors, need at least 16",
                self.traits.len()
            )));
        }
        let fp: std::collections::HashSet<&String> = self
            .fingerprint_first_names
            .iter()
            .chain(&self.fingerprint_surnames)
            .collect();
        let clash = self
            .control_first_names
            .iter()
            .chain(&self.control_surnames)
            .find(|n| fp.contains(n));
        if let Some(name) = clash {
            return Err(CorpusError::NamePoolCollision(name.clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lexicon_is_valid() {
        Lexicon::default().validate().unwrap();
    }

    #[test]
    fn version_changes_with_content() {
        let a = Lexicon::default();
        let mut b = a.clone();
        b.habits.push("whittles spoons".into());
        assert_ne!(a.version(), b.version());
        assert_eq!(a.version(), Lexicon::default().version());
    }

    #[test]
    fn name_collision_detected() {
        let mut lex = Lexicon::default();
        lex.control_first_names.push("mara".into());
        assert!(matches!(
            lex.validate(),
            Err(CorpusError::NamePoolCollision(_))
        ));
    }

    #[test]
    fn toml_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexicon.toml");
        let lex = Lexicon::default();
        lex.save(&path).unwrap();
        assert_eq!(Lexicon::load(&path).unwrap(), lex);
    }
}
