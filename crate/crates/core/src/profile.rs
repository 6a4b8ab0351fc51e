//! Domain types shared across the crate: counters, samples, profile sets and
//! the defect taxonomy.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One hardware event tracked as an input feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub name: String,
    pub index: usize,
    #[serde(default)]
    pub description: String,
}

/// Ordered set of counters; the position of a counter is its feature index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSpec {
    pub counters: Vec<Counter>,
}

const REFERENCE_COUNTERS: [(&str, &str); 33] = [
    ("CYCLES", "unhalted core cycles"),
    ("REF_CYCLES", "reference cycles"),
    ("L1D_MISS", "level 1 data cache misses"),
    ("L1I_MISS", "level 1 instruction cache misses"),
    ("L2_MISS", "level 2 cache misses"),
    ("L2_HIT", "level 2 cache hits"),
    ("LLC_MISS", "last level cache misses"),
    ("LLC_REFERENCE", "last level cache references"),
    ("HITM", "loads hitting a line modified in another core's cache"),
    ("SNOOP_HIT", "snoop responses with hit"),
    ("SNOOP_MISS", "snoop responses with miss"),
    ("OFFCORE_RESPONSE:LOCAL_DRAM", "off-core requests served by local DRAM"),
    ("OFFCORE_RESPONSE:REMOTE_DRAM", "off-core requests served by remote DRAM"),
    ("OFFCORE_RESPONSE:REMOTE_CACHE", "off-core requests served by a remote cache"),
    ("DTLB_LOAD_MISS", "data TLB load misses"),
    ("DTLB_STORE_MISS", "data TLB store misses"),
    ("ITLB_MISS", "instruction TLB misses"),
    ("BRANCH_INSTRUCTIONS", "retired branch instructions"),
    ("BRANCH_MISPRED", "mispredicted branches"),
    ("LOADS", "retired loads"),
    ("STORES", "retired stores"),
    ("STALL_CYCLES_FRONTEND", "front-end stall cycles"),
    ("STALL_CYCLES_BACKEND", "back-end stall cycles"),
    ("RESOURCE_STALLS", "resource-related stall cycles"),
    ("MACHINE_CLEARS", "machine clears"),
    ("MEMORY_ORDERING_NUKE", "memory ordering machine clears"),
    ("LOCK_LOADS", "locked loads"),
    ("L2_LINES_IN", "lines allocated in L2"),
    ("L2_LINES_OUT", "lines evicted from L2"),
    ("LLC_WRITEBACK", "last level cache writebacks"),
    ("FP_OPS", "floating point operations"),
    ("VECTOR_OPS", "vector operations"),
    ("PREFETCH_MISS", "hardware prefetch misses"),
];

impl CounterSpec {
    /// Builds a spec from names; indices follow the given order.
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let counters: Vec<Counter> = names
            .into_iter()
            .enumerate()
            .map(|(index, name)| Counter {
                name: name.into(),
                index,
                description: String::new(),
            })
            .collect();
        let spec = CounterSpec { counters };
        let problems = spec.problems();
        if let Some(first) = problems.into_iter().next() {
            return Err(Error::Config(first));
        }
        Ok(spec)
    }

    /// The 33-counter reference configuration.
    pub fn reference() -> Self {
        CounterSpec {
            counters: REFERENCE_COUNTERS
                .iter()
                .enumerate()
                .map(|(index, (name, desc))| Counter {
                    name: (*name).to_string(),
                    index,
                    description: (*desc).to_string(),
                })
                .collect(),
        }
    }

    /// Parses a counter list file: one `NAME[,description]` per line, `#` comments.
    pub fn parse_list(text: &str) -> Result<Self> {
        let mut counters = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, description) = match line.split_once(',') {
                Some((n, d)) => (n.trim(), d.trim()),
                None => (line, ""),
            };
            counters.push(Counter {
                name: name.to_string(),
                index: counters.len(),
                description: description.to_string(),
            });
        }
        let spec = CounterSpec { counters };
        if let Some(first) = spec.problems().into_iter().next() {
            return Err(Error::Config(first));
        }
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.counters.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.counters.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.counters.iter().position(|c| c.name == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.counters[index].name
    }

    /// Names only; descriptions do not affect compatibility.
    pub fn same_counters(&self, other: &CounterSpec) -> bool {
        self.dim() == other.dim() && self.names().zip(other.names()).all(|(a, b)| a == b)
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.counters.is_empty() {
            out.push("counter spec is empty".to_string());
        }
        let mut seen = HashSet::new();
        for (pos, c) in self.counters.iter().enumerate() {
            if c.name.is_empty() {
                out.push(format!("counter at position {pos} has an empty name"));
            }
            if !seen.insert(c.name.as_str()) {
                out.push(format!("duplicate counter name `{}`", c.name));
            }
            if c.index != pos {
                out.push(format!(
                    "counter `{}` has index {} but sits at position {pos}",
                    c.name, c.index
                ));
            }
        }
        out
    }
}

/// Counter values of one sample. The variant is the raw/normalized flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "values", rename_all = "snake_case")]
pub enum Values {
    Raw(Vec<u64>),
    Normalized(Vec<f64>),
}

impl Values {
    pub fn len(&self) -> usize {
        match self {
            Values::Raw(v) => v.len(),
            Values::Normalized(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_normalized(&self) -> bool {
        matches!(self, Values::Normalized(_))
    }

    pub fn as_normalized(&self) -> Option<&[f64]> {
        match self {
            Values::Normalized(v) => Some(v),
            Values::Raw(_) => None,
        }
    }

    pub fn as_raw(&self) -> Option<&[u64]> {
        match self {
            Values::Raw(v) => Some(v),
            Values::Normalized(_) => None,
        }
    }
}

/// Counter deltas of one execution of one function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpcSample {
    pub function: String,
    pub run_id: String,
    pub thread_count: u32,
    pub instruction_count: u64,
    pub values: Values,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Version {
    Old,
    New,
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Version::Old => "old",
            Version::New => "new",
        })
    }
}

impl FromStr for Version {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "old" => Ok(Version::Old),
            "new" => Ok(Version::New),
            other => Err(format!("expected `old` or `new`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionTag {
    pub version: Version,
    #[serde(default)]
    pub label: String,
}

impl VersionTag {
    pub fn old() -> Self {
        VersionTag {
            version: Version::Old,
            label: String::new(),
        }
    }

    pub fn new_version() -> Self {
        VersionTag {
            version: Version::New,
            label: String::new(),
        }
    }

    /// Parses `old`, `new`, or `old:<label>` / `new:<label>`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let (head, label) = match s.split_once(':') {
            Some((h, l)) => (h, l.to_string()),
            None => (s, String::new()),
        };
        Ok(VersionTag {
            version: head.parse()?,
            label,
        })
    }
}

impl fmt::Display for VersionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.label.is_empty() {
            write!(f, "{}", self.version)
        } else {
            write!(f, "{}:{}", self.version, self.label)
        }
    }
}

/// Labeled collection of samples for one program version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub program: String,
    pub version: VersionTag,
    pub counter_spec: CounterSpec,
    pub samples: Vec<HpcSample>,
    /// run id -> sample indices, in sample order.
    pub run_index: BTreeMap<String, Vec<usize>>,
}

impl ProfileSet {
    pub fn new(
        program: impl Into<String>,
        version: VersionTag,
        counter_spec: CounterSpec,
        samples: Vec<HpcSample>,
    ) -> Self {
        let run_index = build_run_index(&samples);
        ProfileSet {
            program: program.into(),
            version,
            counter_spec,
            samples,
            run_index,
        }
    }

    pub fn dim(&self) -> usize {
        self.counter_spec.dim()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// True when every sample carries normalized values.
    pub fn is_normalized(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.values.is_normalized())
    }

    pub fn is_raw(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| !s.values.is_normalized())
    }

    /// Distinct functions in order of first appearance.
    pub fn functions(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.function.as_str()))
            .map(|s| s.function.clone())
            .collect()
    }

    /// Run ids in order of first appearance.
    pub fn runs(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.run_id.as_str()))
            .map(|s| s.run_id.clone())
            .collect()
    }

    pub fn sample_indices_for(&self, function: &str) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.function == function)
            .map(|(i, _)| i)
            .collect()
    }

    /// Concatenates two sets that share a counter spec and value state.
    pub fn merge(mut self, other: ProfileSet) -> Result<ProfileSet> {
        if !self.counter_spec.same_counters(&other.counter_spec) {
            return Err(Error::CounterSpecMismatch(
                "cannot merge profile sets with different counters".into(),
            ));
        }
        let states_match = (self.is_raw() && other.is_raw())
            || (self.is_normalized() && other.is_normalized())
            || self.is_empty()
            || other.is_empty();
        if !states_match {
            return Err(Error::WrongValueState {
                expected: "uniformly raw or normalized",
            });
        }
        self.samples.extend(other.samples);
        self.run_index = build_run_index(&self.samples);
        Ok(self)
    }
}

pub(crate) fn build_run_index(samples: &[HpcSample]) -> BTreeMap<String, Vec<usize>> {
    let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        index.entry(s.run_id.clone()).or_default().push(i);
    }
    index
}

/// Performance defect classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectType {
    TrueSharing,
    FalseSharing,
    NumaLatency,
    /// True or false sharing; HITM alone cannot tell them apart.
    CacheContention,
    Unknown,
}

impl DefectType {
    pub const ALL: [DefectType; 5] = [
        DefectType::TrueSharing,
        DefectType::FalseSharing,
        DefectType::NumaLatency,
        DefectType::CacheContention,
        DefectType::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DefectType::TrueSharing => "TrueSharing",
            DefectType::FalseSharing => "FalseSharing",
            DefectType::NumaLatency => "NumaLatency",
            DefectType::CacheContention => "CacheContention",
            DefectType::Unknown => "Unknown",
        }
    }

    pub fn short(&self) -> &'static str {
        match self {
            DefectType::TrueSharing => "TS",
            DefectType::FalseSharing => "FS",
            DefectType::NumaLatency => "NL",
            DefectType::CacheContention => "TS/FS",
            DefectType::Unknown => "?",
        }
    }
}

impl fmt::Display for DefectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DefectType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "truesharing" | "ts" => Ok(DefectType::TrueSharing),
            "falsesharing" | "fs" => Ok(DefectType::FalseSharing),
            "numalatency" | "numa" | "nl" => Ok(DefectType::NumaLatency),
            "cachecontention" | "tsfs" => Ok(DefectType::CacheContention),
            "unknown" => Ok(DefectType::Unknown),
            _ => Err(format!("unknown defect type `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    CounterSpec,
    Dimensionality,
    InstructionCount,
    ThreadCount,
    NonFinite,
    Negative,
    MixedState,
    Partition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub sample: Option<usize>,
    pub kind: ViolationKind,
    pub reason: String,
}

/// Checks every profile-set invariant and reports violations without failing.
pub fn validate_profile_set(set: &ProfileSet) -> Vec<Violation> {
    let mut out: Vec<Violation> = set
        .counter_spec
        .problems()
        .into_iter()
        .map(|reason| Violation {
            sample: None,
            kind: ViolationKind::CounterSpec,
            reason,
        })
        .collect();

    let dim = set.dim();
    let first_state = set.samples.first().map(|s| s.values.is_normalized());
    for (i, s) in set.samples.iter().enumerate() {
        let mut push = |kind, reason: String| {
            out.push(Violation {
                sample: Some(i),
                kind,
                reason,
            })
        };
        if s.values.len() != dim {
            push(
                ViolationKind::Dimensionality,
                format!("has {} values, counter spec has {dim}", s.values.len()),
            );
        }
        if s.instruction_count == 0 {
            push(
                ViolationKind::InstructionCount,
                "instruction count is zero".into(),
            );
        }
        if s.thread_count == 0 {
            push(ViolationKind::ThreadCount, "thread count is zero".into());
        }
        if Some(s.values.is_normalized()) != first_state {
            push(
                ViolationKind::MixedState,
                "raw and normalized samples are mixed".into(),
            );
        }
        if let Values::Normalized(v) = &s.values {
            if let Some(j) = v.iter().position(|x| !x.is_finite()) {
                push(
                    ViolationKind::NonFinite,
                    format!("component {j} is not finite"),
                );
            }
            if let Some(j) = v.iter().position(|x| *x < 0.0) {
                push(ViolationKind::Negative, format!("component {j} is negative"));
            }
        }
    }

    let mut seen = vec![0usize; set.samples.len()];
    for (run, indices) in &set.run_index {
        for &i in indices {
            match set.samples.get(i) {
                None => out.push(Violation {
                    sample: Some(i),
                    kind: ViolationKind::Partition,
                    reason: format!("run `{run}` references a missing sample"),
                }),
                Some(s) => {
                    seen[i] += 1;
                    if &s.run_id != run {
                        out.push(Violation {
                            sample: Some(i),
                            kind: ViolationKind::Partition,
                            reason: format!(
                                "indexed under run `{run}` but belongs to run `{}`",
                                s.run_id
                            ),
                        });
                    }
                }
            }
        }
    }
    for (i, count) in seen.into_iter().enumerate() {
        if count != 1 {
            out.push(Violation {
                sample: Some(i),
                kind: ViolationKind::Partition,
                reason: format!("appears {count} times in the run index"),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(run: &str, values: Vec<u64>) -> HpcSample {
        HpcSample {
            function: "foo".into(),
            run_id: run.into(),
            thread_count: 2,
            instruction_count: 1000,
            values: Values::Raw(values),
        }
    }

    fn two_sample_set() -> ProfileSet {
        ProfileSet::new(
            "prog",
            VersionTag::old(),
            CounterSpec::new(["a", "b"]).unwrap(),
            vec![sample("r0", vec![1, 2]), sample("r1", vec![3, 4])],
        )
    }

    #[test]
    fn well_formed_set_has_no_violations() {
        assert!(validate_profile_set(&two_sample_set()).is_empty());
    }

    #[test]
    fn short_sample_is_a_dimensionality_violation() {
        let mut set = two_sample_set();
        set.samples[1].values = Values::Raw(vec![3]);
        let report = validate_profile_set(&set);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].kind, ViolationKind::Dimensionality);
        assert_eq!(report[0].sample, Some(1));
    }

    #[test]
    fn omitted_sample_is_a_partition_violation() {
        let mut set = two_sample_set();
        set.run_index.remove("r1");
        let report = validate_profile_set(&set);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].kind, ViolationKind::Partition);
        assert_eq!(report[0].sample, Some(1));
    }

    #[test]
    fn mixed_state_and_bad_counts_are_reported() {
        let mut set = two_sample_set();
        set.samples[1].values = Values::Normalized(vec![0.1, f64::NAN]);
        set.samples[0].instruction_count = 0;
        let kinds: Vec<_> = validate_profile_set(&set).iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::MixedState));
        assert!(kinds.contains(&ViolationKind::NonFinite));
        assert!(kinds.contains(&ViolationKind::InstructionCount));
    }

    #[test]
    fn validation_is_idempotent() {
        let mut set = two_sample_set();
        set.samples[0].thread_count = 0;
        let before = set.clone();
        let a = validate_profile_set(&set);
        let b = validate_profile_set(&set);
        assert_eq!(a, b);
        assert_eq!(set, before);
    }

    #[test]
    fn reference_spec_has_33_unique_counters() {
        let spec = CounterSpec::reference();
        assert_eq!(spec.dim(), 33);
        assert!(spec.problems().is_empty());
        assert!(spec.index_of("HITM").is_some());
        assert!(spec.index_of("OFFCORE_RESPONSE:REMOTE_DRAM").is_some());
    }

    #[test]
    fn duplicate_counter_names_are_rejected() {
        assert!(CounterSpec::new(["a", "a"]).is_err());
        assert!(CounterSpec::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn counter_list_parsing_skips_comments() {
        let spec = CounterSpec::parse_list("# comment\nHITM, hit modified\n\nCYCLES\n").unwrap();
        assert_eq!(spec.names().collect::<Vec<_>>(), ["HITM", "CYCLES"]);
        assert_eq!(spec.counters[0].description, "hit modified");
    }

    #[test]
    fn defect_type_parses_short_and_long_names() {
        for d in DefectType::ALL {
            assert_eq!(d.as_str().parse::<DefectType>().unwrap(), d);
        }
        assert_eq!("NL".parse::<DefectType>().unwrap(), DefectType::NumaLatency);
        assert!("bogus".parse::<DefectType>().is_err());
    }

    #[test]
    fn profile_set_round_trips_through_json() {
        let mut set = two_sample_set();
        set.samples[0].values = Values::Normalized(vec![0.1 + 0.2, 1e-300]);
        set.samples[1].values = Values::Normalized(vec![std::f64::consts::PI, 0.0]);
        let text = serde_json::to_string(&set).unwrap();
        let back: ProfileSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, set);
    }
}
