//! Root-cause attribution: which counter deviates most in anomalous samples,
//! and which defect class that counter points to.

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::error::{Error, Result};
use crate::profile::{CounterSpec, DefectType};

/// `|scaled(z)_j - reconstruction_j|` for every counter `j`. Its Euclidean
/// norm is the sample's reconstruction error.
pub fn per_counter_errors(model: &AutoencoderModel, z: &[f64]) -> Result<Vec<f64>> {
    Ok(model.scaled_residual(z)?.into_iter().map(f64::abs).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRule {
    /// Case-insensitive glob; `*` matches any run, `?` one character.
    pub pattern: String,
    pub defect: DefectType,
}

/// Ordered counter-name rules; the first match wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectMapping {
    pub rules: Vec<DefectRule>,
}

impl Default for DefectMapping {
    /// HITM points at cache-line contention (true or false sharing), remote
    /// DRAM traffic at NUMA placement.
    fn default() -> Self {
        DefectMapping {
            rules: vec![
                DefectRule {
                    pattern: "*HITM*".into(),
                    defect: DefectType::CacheContention,
                },
                DefectRule {
                    pattern: "*REMOTE_DRAM*".into(),
                    defect: DefectType::NumaLatency,
                },
            ],
        }
    }
}

impl DefectMapping {
    /// Parses `pattern = DefectType` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (pattern, defect) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("defect mapping line {}: expected `pattern = type`", i + 1))
            })?;
            let defect = defect
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("defect mapping line {}: {e}", i + 1)))?;
            rules.push(DefectRule {
                pattern: pattern.trim().to_string(),
                defect,
            });
        }
        Ok(DefectMapping { rules })
    }
}

fn glob_match(pattern: &[u8], text: &[u8]) -> bool {
    let (mut p, mut t) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while t < text.len() {
        if p < pattern.len() && (pattern[p] == b'?' || pattern[p].eq_ignore_ascii_case(&text[t])) {
            p += 1;
            t += 1;
        } else if p < pattern.len() && pattern[p] == b'*' {
            star = Some((p, t));
            p += 1;
        } else if let Some((sp, st)) = star {
            p = sp + 1;
            t = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    pattern[p..].iter().all(|c| *c == b'*')
}

pub fn map_defect(counter: &str, mapping: &DefectMapping) -> DefectType {
    mapping
        .rules
        .iter()
        .find(|r| glob_match(r.pattern.as_bytes(), counter.as_bytes()))
        .map(|r| r.defect)
        .unwrap_or(DefectType::Unknown)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteEntry {
    pub counter: String,
    pub index: usize,
    pub votes: usize,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterRanking {
    /// Counter indices per anomalous sample, by descending error.
    pub per_sample_rankings: Vec<Vec<usize>>,
    /// Every counter, by descending votes then ascending index.
    pub vote_counts: Vec<VoteEntry>,
    pub winner: String,
    pub winner_index: usize,
    pub defect: DefectType,
}

impl CounterRanking {
    pub fn votes_for(&self, counter: &str) -> usize {
        self.vote_counts
            .iter()
            .find(|v| v.counter == counter)
            .map_or(0, |v| v.votes)
    }
}

/// Votes each sample's top counter and takes the plurality; ties go to the
/// lower counter index at both levels.
pub fn rank_from_errors(
    per_sample_errors: &[Vec<f64>],
    spec: &CounterSpec,
    mapping: &DefectMapping,
) -> Result<CounterRanking> {
    if per_sample_errors.is_empty() {
        return Err(Error::NoSamples);
    }
    let dim = spec.dim();
    let mut votes = vec![0usize; dim];
    let mut sums = vec![0.0; dim];
    let mut rankings = Vec::with_capacity(per_sample_errors.len());
    for errors in per_sample_errors {
        if errors.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: errors.len(),
            });
        }
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
        votes[order[0]] += 1;
        for (s, e) in sums.iter_mut().zip(errors) {
            *s += e;
        }
        rankings.push(order);
    }
    let n = per_sample_errors.len() as f64;
    let mut table: Vec<VoteEntry> = (0..dim)
        .map(|j| VoteEntry {
            counter: spec.name(j).to_string(),
            index: j,
            votes: votes[j],
            mean_error: sums[j] / n,
        })
        .collect();
    table.sort_by(|a, b| b.votes.cmp(&a.votes).then(a.index.cmp(&b.index)));
    let winner_index = table[0].index;
    let winner = table[0].counter.clone();
    Ok(CounterRanking {
        per_sample_rankings: rankings,
        vote_counts: table,
        defect: map_defect(&winner, mapping),
        winner,
        winner_index,
    })
}

/// Ranks counters over a set of anomalous (normalized) samples.
pub fn rank_counters(
    model: &AutoencoderModel,
    anomalous_samples: &[Vec<f64>],
    spec: &CounterSpec,
    mapping: &DefectMapping,
) -> Result<CounterRanking> {
    let errors = anomalous_samples
        .iter()
        .map(|z| per_counter_errors(model, z))
        .collect::<Result<Vec<_>>>()?;
    rank_from_errors(&errors, spec, mapping)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> CounterSpec {
        CounterSpec::new((0..n).map(|i| format!("c{i}"))).unwrap()
    }

    #[test]
    fn single_sample_sort() {
        let r = rank_from_errors(&[vec![0.1, 0.9, 0.2]], &spec(3), &DefectMapping::default()).unwrap();
        assert_eq!(r.per_sample_rankings[0], vec![1, 2, 0]);
        assert_eq!(r.winner, "c1");
    }

    #[test]
    fn plurality_vote() {
        let errs = vec![
            vec![0.0, 1.0, 0.0, 0.5],
            vec![0.0, 1.0, 0.0, 0.5],
            vec![0.0, 0.5, 0.0, 1.0],
        ];
        let r = rank_from_errors(&errs, &spec(4), &DefectMapping::default()).unwrap();
        assert_eq!(r.winner, "c1");
        assert_eq!(r.votes_for("c1"), 2);
        assert_eq!(r.votes_for("c3"), 1);
        assert_eq!(r.vote_counts.iter().map(|v| v.votes).sum::<usize>(), 3);
    }

    #[test]
    fn vote_tie_goes_to_lower_index() {
        let errs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let r = rank_from_errors(&errs, &spec(3), &DefectMapping::default()).unwrap();
        assert_eq!(r.winner, "c0");
    }

    #[test]
    fn rank_tie_goes_to_lower_index() {
        let r = rank_from_errors(&[vec![0.5, 0.5, 0.1]], &spec(3), &DefectMapping::default()).unwrap();
        assert_eq!(r.per_sample_rankings[0], vec![0, 1, 2]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(rank_from_errors(&[], &spec(3), &DefectMapping::default()).is_err());
    }

    #[test]
    fn default_mapping() {
        let m = DefectMapping::default();
        assert_eq!(map_defect("HITM", &m), DefectType::CacheContention);
        assert_eq!(map_defect("hitm", &m), DefectType::CacheContention);
        assert_eq!(
            map_defect("OFFCORE_RESPONSE:REMOTE_DRAM", &m),
            DefectType::NumaLatency
        );
        assert_eq!(map_defect("BRANCH_MISPRED", &m), DefectType::Unknown);
    }

    #[test]
    fn first_matching_rule_wins() {
        let m = DefectMapping::parse("# refine\nHITM = FalseSharing\n*HITM* = TrueSharing\n").unwrap();
        assert_eq!(map_defect("HITM", &m), DefectType::FalseSharing);
        assert_eq!(map_defect("MEM_HITM_X", &m), DefectType::TrueSharing);
        assert!(DefectMapping::parse("HITM FalseSharing").is_err());
        assert!(DefectMapping::parse("HITM = Bogus").is_err());
    }

    #[test]
    fn glob_edge_cases() {
        assert!(glob_match(b"*", b""));
        assert!(glob_match(b"a?c", b"ABC"));
        assert!(!glob_match(b"a?c", b"ac"));
        assert!(glob_match(b"*dram", b"remote_DRAM"));
        assert!(!glob_match(b"dram*", b"remote_dram"));
    }
}
