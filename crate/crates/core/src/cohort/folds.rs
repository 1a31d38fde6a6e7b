use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::CohortManifest;
use super::parse_key_values;
use crate::error::{Error, Result};

/// Validation hospitals per fold plus the held-out test hospitals.
///
/// Text form, one entry per line:
///
/// ```text
/// fold.0 = STO
/// fold.1 = GRO, MIL, UTR
/// test = AMS
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FoldPlan {
    folds: BTreeMap<u32, Vec<String>>,
    test: Vec<String>,
}

impl FoldPlan {
    pub fn new(folds: BTreeMap<u32, Vec<String>>, test: Vec<String>) -> Result<Self> {
        let mut owner: HashMap<&str, String> = HashMap::new();
        let sets = folds.iter().map(|(k, v)| (format!("fold {k}"), v)).chain([("test".to_string(), &test)]);
        for (set, hospitals) in sets {
            for h in hospitals {
                if let Some(prev) = owner.insert(h, set.clone()) {
                    return Err(Error::Plan(format!("hospital '{h}' listed in both {prev} and {set}")));
                }
            }
        }
        if folds.is_empty() && test.is_empty() {
            return Err(Error::Plan("plan lists no hospitals".into()));
        }
        Ok(Self { folds, test })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut folds = BTreeMap::new();
        let mut test = Vec::new();
        for (key, value) in parse_key_values(text, Error::Plan)? {
            let hospitals: Vec<String> =
                value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect();
            if key == "test" {
                test = hospitals;
            } else if let Some(k) = key.strip_prefix("fold.") {
                let k = k.parse::<u32>().map_err(|_| Error::Plan(format!("bad fold id in '{key}'")))?;
                if hospitals.is_empty() {
                    return Err(Error::Plan(format!("fold {k} has no hospitals")));
                }
                folds.insert(k, hospitals);
            } else {
                return Err(Error::Plan(format!("unknown key '{key}'")));
            }
        }
        Self::new(folds, test)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Five hospital-stratified folds over twelve centres, AMS held out.
    pub fn multicentre_default() -> Self {
        let set = |hs: &[&str]| hs.iter().map(|h| h.to_string()).collect::<Vec<_>>();
        let folds = BTreeMap::from([
            (0, set(&["STO"])),
            (1, set(&["GRO", "MIL", "UTR"])),
            (2, set(&["SFR", "VIE"])),
            (3, set(&["PAR", "ZWO", "ALK", "HAG"])),
            (4, set(&["GOT"])),
        ]);
        Self::new(folds, set(&["AMS"])).expect("default plan is disjoint")
    }

    pub fn folds(&self) -> &BTreeMap<u32, Vec<String>> {
        &self.folds
    }

    pub fn test_hospitals(&self) -> &[String] {
        &self.test
    }

    pub fn split_of(&self, hospital: &str) -> Option<Split> {
        if self.test.iter().any(|h| h == hospital) {
            return Some(Split::Test);
        }
        self.folds.iter().find(|(_, hs)| hs.iter().any(|h| h == hospital)).map(|(k, _)| Split::Validation(*k))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, hs) in &self.folds {
            s.push_str(&format!("fold.{k} = {}\n", hs.join(", ")));
        }
        if !self.test.is_empty() {
            s.push_str(&format!("test = {}\n", self.test.join(", ")));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Validation(u32),
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Validation(k) => write!(f, "{k}"),
            Split::Test => f.write_str("test"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "test" => Ok(Split::Test),
            other => other
                .parse::<u32>()
                .map(Split::Validation)
                .map_err(|_| Error::Plan(format!("bad fold label '{other}'"))),
        }
    }
}

/// One split label per manifest patient, in manifest order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub splits: Vec<Split>,
}

impl FoldAssignment {
    /// Labels taken from the manifest's own `fold` column.
    pub fn from_manifest_column(cohort: &CohortManifest) -> Result<Self> {
        let splits = cohort
            .patients
            .iter()
            .map(|p| {
                p.fold
                    .as_deref()
                    .ok_or_else(|| Error::Plan(format!("patient '{}' has no fold label", p.patient_id)))?
                    .parse()
            })
            .collect::<Result<_>>()?;
        Ok(Self { splits })
    }

    pub fn fold_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> =
            self.splits.iter().filter_map(|s| if let Split::Validation(k) = s { Some(*k) } else { None }).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn validation_count(&self, fold: u32) -> usize {
        self.splits.iter().filter(|s| **s == Split::Validation(fold)).count()
    }

    /// Non-test patients outside `fold`.
    pub fn train_count(&self, fold: u32) -> usize {
        self.splits.iter().filter(|s| matches!(s, Split::Validation(k) if *k != fold)).count()
    }

    pub fn test_count(&self) -> usize {
        self.splits.iter().filter(|s| **s == Split::Test).count()
    }
}

pub fn assign_folds(cohort: &CohortManifest, plan: &FoldPlan) -> Result<FoldAssignment> {
    let splits = cohort
        .patients
        .iter()
        .map(|p| {
            plan.split_of(&p.hospital).ok_or_else(|| {
                Error::Plan(format!("hospital '{}' (patient '{}') is not covered by the plan", p.hospital, p.patient_id))
            })
        })
        .collect::<Result<_>>()?;
    Ok(FoldAssignment { splits })
}
