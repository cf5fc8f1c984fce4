// SPDX-License-Identifier: Apache-2.0

//! Campaign report: JSON schema, content hashing, and terminal rendering.
//! The schema is documented in `docs/report.md`.

use serde::{Deserialize, Serialize};

use stagefuzz_core::util::{fnv1a64, hash_hex};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConfigEcho {
    pub stage: String,
    pub budget: usize,
    pub seed: u64,
    pub jobs: usize,
    pub order: String,
    pub bugs: String,
    pub provider_configured: bool,
    pub no_patterns: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct VerdictCounts {
    pub pass: usize,
    pub crash: usize,
    pub mismatch: usize,
    pub invalid_rejection: usize,
    pub missed_rejection: usize,
}

impl VerdictCounts {
    pub fn failures(&self) -> usize {
        self.crash + self.mismatch + self.invalid_rejection + self.missed_rejection
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FailureEntry {
    pub signature: String,
    pub first_hit_index: usize,
    pub count: usize,
    /// Relative path of the saved reproduction, when an output directory
    /// was configured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct GeneratorStats {
    pub synthesized_total: usize,
    pub synthesized_valid: usize,
    pub mutants_total: usize,
    pub mutants_probe_equal: usize,
    pub provider_incidents: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_pool_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule_count: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CampaignReport {
    pub config: ConfigEcho,
    pub tests_run: usize,
    pub verdicts: VerdictCounts,
    pub hl_rules_fired: Vec<String>,
    pub ll_rules_fired: Vec<String>,
    pub failures: Vec<FailureEntry>,
    pub generator: GeneratorStats,
    pub wall_ms: u64,
    pub content_hash: String,
}

impl CampaignReport {
    /// Stable hash over every verdict-relevant field: wall time and the
    /// hash itself are zeroed before hashing.
    pub fn compute_hash(&self) -> String {
        let mut clone = self.clone();
        clone.wall_ms = 0;
        clone.content_hash = String::new();
        let bytes = serde_json::to_vec(&clone).expect("report serialization cannot fail");
        hash_hex(fnv1a64(&bytes))
    }

    pub fn seal(mut self) -> CampaignReport {
        self.content_hash = self.compute_hash();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<CampaignReport, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// One-screen terminal rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "campaign: stage={} budget={} seed={} jobs={} order={} bugs=[{}]\n",
            self.config.stage,
            self.config.budget,
            self.config.seed,
            self.config.jobs,
            self.config.order,
            self.config.bugs
        ));
        out.push_str(&format!(
            "tests: {} | pass {} crash {} mismatch {} invalid-rejection {} missed-rejection {}\n",
            self.tests_run,
            self.verdicts.pass,
            self.verdicts.crash,
            self.verdicts.mismatch,
            self.verdicts.invalid_rejection,
            self.verdicts.missed_rejection
        ));
        out.push_str(&format!(
            "coverage: {} HL rules, {} LL rules fired\n",
            self.hl_rules_fired.len(),
            self.ll_rules_fired.len()
        ));
        if let Some(c) = self.generator.cluster_count {
            out.push_str(&format!("clusters: {c}\n"));
        }
        if !self.failures.is_empty() {
            out.push_str(&format!("distinct failures: {}\n", self.failures.len()));
            for f in &self.failures {
                out.push_str(&format!(
                    "  [first #{:>5}, x{:>4}] {}\n",
                    f.first_hit_index, f.count, f.signature
                ));
            }
        }
        out.push_str(&format!(
            "wall: {} ms | content hash {}\n",
            self.wall_ms, self.content_hash
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CampaignReport {
        CampaignReport {
            config: ConfigEcho {
                stage: "all".into(),
                budget: 10,
                seed: 7,
                jobs: 1,
                order: "diversity".into(),
                bugs: String::new(),
                provider_configured: false,
                no_patterns: false,
            },
            tests_run: 10,
            verdicts: VerdictCounts {
                pass: 10,
                ..Default::default()
            },
            hl_rules_fired: vec!["fold.binary".into()],
            ll_rules_fired: vec![],
            failures: vec![],
            generator: GeneratorStats::default(),
            wall_ms: 123,
            content_hash: String::new(),
        }
    }

    #[test]
    fn hash_ignores_wall_time() {
        let a = sample().seal();
        let mut b = sample();
        b.wall_ms = 9999;
        let b = b.seal();
        assert_eq!(a.content_hash, b.content_hash);
    }

    #[test]
    fn hash_tracks_verdicts() {
        let a = sample().seal();
        let mut b = sample();
        b.verdicts.mismatch = 1;
        let b = b.seal();
        assert_ne!(a.content_hash, b.content_hash);
    }

    #[test]
    fn json_roundtrip() {
        let a = sample().seal();
        let b = CampaignReport::from_json(&a.to_json()).unwrap();
        assert_eq!(a, b);
    }
}
