use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// HOI classes with fewer training instances than this are rare.
pub const RARE_THRESHOLD: usize = 10;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawTaxonomy {
    verbs: Vec<String>,
    objects: Vec<String>,
    hoi_classes: Vec<(usize, usize)>,
    human_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rare_flags: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    heldout_flags: Option<Vec<bool>>,
}

/// Verb and object vocabularies plus the list of valid (verb, object) HOI classes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawTaxonomy", into = "RawTaxonomy")]
pub struct Taxonomy {
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
    pub hoi_classes: Vec<(usize, usize)>,
    pub human_class: usize,
    pub rare_flags: Vec<bool>,
    pub heldout_flags: Vec<bool>,
    rare_explicit: bool,
    index: HashMap<(usize, usize), usize>,
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.verbs == other.verbs
            && self.objects == other.objects
            && self.hoi_classes == other.hoi_classes
            && self.human_class == other.human_class
            && self.rare_flags == other.rare_flags
            && self.heldout_flags == other.heldout_flags
    }
}

impl TryFrom<RawTaxonomy> for Taxonomy {
    type Error = Error;

    fn try_from(raw: RawTaxonomy) -> Result<Self> {
        let n = raw.hoi_classes.len();
        let rare_explicit = raw.rare_flags.is_some();
        let mut tax = Taxonomy::new(
            raw.verbs,
            raw.objects,
            raw.hoi_classes,
            raw.human_class,
            raw.heldout_flags.unwrap_or_else(|| vec![false; n]),
        )?;
        if let Some(rare) = raw.rare_flags {
            tax.set_rare_flags(rare)?;
        }
        tax.rare_explicit = rare_explicit;
        Ok(tax)
    }
}

impl From<Taxonomy> for RawTaxonomy {
    fn from(t: Taxonomy) -> Self {
        RawTaxonomy {
            verbs: t.verbs,
            objects: t.objects,
            hoi_classes: t.hoi_classes,
            human_class: t.human_class,
            rare_flags: Some(t.rare_flags),
            heldout_flags: Some(t.heldout_flags),
        }
    }
}

impl Taxonomy {
    /// Builds a validated taxonomy. Rare flags start all-false; they are
    /// filled from training counts by the annotation loader.
    pub fn new(
        verbs: Vec<String>,
        objects: Vec<String>,
        hoi_classes: Vec<(usize, usize)>,
        human_class: usize,
        heldout_flags: Vec<bool>,
    ) -> Result<Self> {
        if human_class >= objects.len() {
            return Err(Error::Taxonomy(format!(
                "human_class {human_class} out of range for {} objects",
                objects.len()
            )));
        }
        let mut index = HashMap::with_capacity(hoi_classes.len());
        for (i, &(v, o)) in hoi_classes.iter().enumerate() {
            if v >= verbs.len() || o >= objects.len() {
                return Err(Error::Taxonomy(format!(
                    "hoi class {i} = ({v}, {o}) outside [0,{}) x [0,{})",
                    verbs.len(),
                    objects.len()
                )));
            }
            if index.insert((v, o), i).is_some() {
                return Err(Error::Taxonomy(format!("duplicate hoi class ({v}, {o})")));
            }
        }
        if heldout_flags.len() != hoi_classes.len() {
            return Err(Error::Taxonomy(format!(
                "heldout_flags has {} entries, expected {}",
                heldout_flags.len(),
                hoi_classes.len()
            )));
        }
        let n = hoi_classes.len();
        Ok(Taxonomy {
            verbs,
            objects,
            hoi_classes,
            human_class,
            rare_flags: vec![false; n],
            heldout_flags,
            rare_explicit: false,
            index,
        })
    }

    pub fn num_verbs(&self) -> usize {
        self.verbs.len()
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_hoi(&self) -> usize {
        self.hoi_classes.len()
    }

    pub fn hoi_index(&self, verb: usize, object: usize) -> Option<usize> {
        self.index.get(&(verb, object)).copied()
    }

    pub fn is_heldout(&self, hoi: usize) -> bool {
        self.heldout_flags[hoi]
    }

    pub fn has_rare_override(&self) -> bool {
        self.rare_explicit
    }

    pub fn set_rare_flags(&mut self, flags: Vec<bool>) -> Result<()> {
        if flags.len() != self.hoi_classes.len() {
            return Err(Error::Taxonomy(format!(
                "rare_flags has {} entries, expected {}",
                flags.len(),
                self.hoi_classes.len()
            )));
        }
        self.rare_flags = flags;
        self.rare_explicit = true;
        Ok(())
    }

    pub fn set_heldout_flags(&mut self, flags: Vec<bool>) -> Result<()> {
        if flags.len() != self.hoi_classes.len() {
            return Err(Error::Taxonomy(format!(
                "heldout_flags has {} entries, expected {}",
                flags.len(),
                self.hoi_classes.len()
            )));
        }
        self.heldout_flags = flags;
        Ok(())
    }

    pub(crate) fn rare_from_counts(&mut self, counts: &[usize]) {
        if !self.rare_explicit {
            self.rare_flags = counts.iter().map(|&c| c < RARE_THRESHOLD).collect();
        }
    }
}

/// Reads a taxonomy either from a bare taxonomy document or from the
/// `taxonomy` key of an annotation document.
pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let value: serde_json::Value = super::read_json(path)?;
    let node = value.get("taxonomy").cloned().unwrap_or(value);
    serde_json::from_value(node).map_err(|source| Error::Parse { what: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn rejects_out_of_range_pair() {
        let err = Taxonomy::new(names("v", 2), names("o", 2), vec![(2, 0)], 0, vec![false]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_duplicate_pair() {
        let err = Taxonomy::new(names("v", 2), names("o", 2), vec![(1, 1), (1, 1)], 0, vec![false; 2]);
        assert!(err.is_err());
    }

    #[test]
    fn json_round_trip_keeps_flags() {
        let mut t = Taxonomy::new(names("v", 2), names("o", 2), vec![(0, 1), (1, 1)], 0, vec![false, true]).unwrap();
        t.set_rare_flags(vec![true, false]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: Taxonomy = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.hoi_index(1, 1), Some(1));
        assert!(back.has_rare_override());
    }
}
