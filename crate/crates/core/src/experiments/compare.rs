use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archspace::{fingerprint, Genome};
use crate::error::{Error, Result};
use crate::search::{xfernas_search, SearchConfig};
use crate::seed;
use crate::taskbench::{median, ObservationHistory, Oracle, SuiteDescriptor, TaskSuite};
use crate::xfernet::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Transfer,
    NoTransfer,
    Random,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Transfer, Arm::NoTransfer, Arm::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Transfer => "transfer",
            Arm::NoTransfer => "no-transfer",
            Arm::Random => "random",
        }
    }
}

/// Per-round surrogate budget for comparison runs: a short joint phase
/// then head-only epochs.
pub fn comparison_train_config() -> TrainConfig {
    TrainConfig {
        max_steps: Some(50),
        head_epochs: 50,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub suite: SuiteDescriptor,
    pub seeds: Vec<u64>,
    /// Source records per source task for the transfer arm.
    pub source_per_task: usize,
    pub source_seed: u64,
    /// Search settings; `seed` is replaced per run.
    pub search: SearchConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            suite: SuiteDescriptor::default(),
            seeds: (0..10).collect(),
            source_per_task: 200,
            source_seed: 0,
            search: SearchConfig {
                train: comparison_train_config(),
                ..SearchConfig::default()
            },
        }
    }
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.len() < 2 {
            return Err(Error::InvalidConfig("need at least two seeds".into()));
        }
        if self.search.blocks != self.suite.blocks {
            return Err(Error::InvalidConfig(format!(
                "search uses {} blocks but the suite uses {}",
                self.search.blocks, self.suite.blocks
            )));
        }
        self.search.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub arm: Arm,
    pub best_score: f64,
    pub oracle_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub rows: Vec<CompareRow>,
    pub median_transfer: f64,
    pub median_no_transfer: f64,
    pub median_random: f64,
    /// Seeds where the transfer arm's best score is at least the other arm's.
    pub transfer_vs_random_wins: usize,
    pub transfer_vs_no_transfer_wins: usize,
    pub seeds: usize,
}

impl CompareSummary {
    pub fn from_rows(rows: Vec<CompareRow>) -> Self {
        let best = |arm: Arm| -> Vec<(u64, f64)> {
            rows.iter()
                .filter(|r| r.arm == arm)
                .map(|r| (r.seed, r.best_score))
                .collect()
        };
        let (t, n, r) = (
            best(Arm::Transfer),
            best(Arm::NoTransfer),
            best(Arm::Random),
        );
        let wins = |other: &[(u64, f64)]| {
            t.iter()
                .filter(|(s, x)| other.iter().any(|(s2, y)| s2 == s && x >= y))
                .count()
        };
        let med = |v: &[(u64, f64)]| median(&v.iter().map(|x| x.1).collect::<Vec<_>>());
        CompareSummary {
            median_transfer: med(&t),
            median_no_transfer: med(&n),
            median_random: med(&r),
            transfer_vs_random_wins: wins(&r),
            transfer_vs_no_transfer_wins: wins(&n),
            seeds: t.len(),
            rows,
        }
    }

    pub fn rows_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "arm", "best_score", "oracle_calls"])?;
        for r in &self.rows {
            w.write_record([
                r.seed.to_string(),
                r.arm.as_str().to_string(),
                r.best_score.to_string(),
                r.oracle_calls.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.rows_csv()?).map_err(|e| Error::io(path, e))?;
        let json = path.with_extension("summary.json");
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }
}

/// Evaluates `budget` distinct random genomes on the target task.
pub fn random_search(suite: &TaskSuite, budget: usize, seed: u64) -> Result<(f64, usize)> {
    let target = suite.target().clone();
    let mut rng = seed::rng(seed, &[b"random-arm"]);
    let mut seen = HashSet::new();
    let mut best = f64::NEG_INFINITY;
    let mut calls = 0;
    while calls < budget {
        let g = Genome::random(suite.descriptor().blocks, &mut rng)?;
        if seen.insert(fingerprint(&g)) {
            best = best.max(suite.evaluate(&target, &g)?);
            calls += 1;
        }
    }
    Ok((best, calls))
}

/// Runs the transfer, no-transfer and random arms for every seed.
pub fn run_search_comparison(cfg: &CompareConfig) -> Result<CompareSummary> {
    run_search_comparison_with(cfg, |_| {})
}

pub fn run_search_comparison_with(
    cfg: &CompareConfig,
    progress: impl Fn(&CompareRow),
) -> Result<CompareSummary> {
    cfg.validate()?;
    let suite = TaskSuite::new(cfg.suite)?;
    let target = suite.target().clone();
    let source = suite.build_source_knowledge(cfg.source_per_task, cfg.source_seed)?;
    let empty = ObservationHistory::new(suite.registry());
    let mut rows = Vec::new();
    for &s in &cfg.seeds {
        let search = SearchConfig {
            seed: s,
            ..cfg.search.clone()
        };
        for (arm, history) in [(Arm::Transfer, &source), (Arm::NoTransfer, &empty)] {
            let report = xfernas_search(&suite, &target, history, None, &search)?;
            let best = report.best().map(|e| e.score).unwrap_or(f64::NEG_INFINITY);
            let row = CompareRow {
                seed: s,
                arm,
                best_score: best,
                oracle_calls: report.oracle_calls,
            };
            progress(&row);
            rows.push(row);
        }
        let (best, calls) = random_search(&suite, cfg.search.budget, s)?;
        let row = CompareRow {
            seed: s,
            arm: Arm::Random,
            best_score: best,
            oracle_calls: calls,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(CompareSummary::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, arm: Arm, best_score: f64) -> CompareRow {
        CompareRow {
            seed,
            arm,
            best_score,
            oracle_calls: 33,
        }
    }

    #[test]
    fn random_arm_uses_exactly_the_budget() {
        let suite = TaskSuite::new(SuiteDescriptor::default()).unwrap();
        let (best, calls) = random_search(&suite, 33, 4).unwrap();
        assert_eq!(calls, 33);
        assert!((0.0..=1.0).contains(&best));
        assert_eq!(random_search(&suite, 33, 4).unwrap().0, best);
    }

    #[test]
    fn summary_counts_ties_as_wins() {
        let s = CompareSummary::from_rows(vec![
            row(0, Arm::Transfer, 0.9),
            row(0, Arm::NoTransfer, 0.9),
            row(0, Arm::Random, 0.95),
            row(1, Arm::Transfer, 0.8),
            row(1, Arm::NoTransfer, 0.7),
            row(1, Arm::Random, 0.6),
        ]);
        assert_eq!(s.transfer_vs_no_transfer_wins, 2);
        assert_eq!(s.transfer_vs_random_wins, 1);
        assert_eq!(s.seeds, 2);
        assert!((s.median_transfer - 0.85).abs() < 1e-15);
        assert!((s.median_random - 0.775).abs() < 1e-15);
    }

    #[test]
    fn csv_lists_one_row_per_run() {
        let s = CompareSummary::from_rows(vec![row(3, Arm::NoTransfer, 0.5)]);
        assert_eq!(
            s.rows_csv().unwrap(),
            "seed,arm,best_score,oracle_calls\n3,no-transfer,0.5,33\n"
        );
    }

    #[test]
    fn validation_requires_two_seeds() {
        let cfg = CompareConfig {
            seeds: vec![1],
            ..CompareConfig::default()
        };
        assert!(cfg.validate().is_err());
        CompareConfig::default().validate().unwrap();
    }

    #[test]
    fn small_comparison_respects_the_budget() {
        let cfg = CompareConfig {
            suite: SuiteDescriptor {
                blocks: 2,
                ..SuiteDescriptor::default()
            },
            seeds: vec![0, 1],
            source_per_task: 3,
            search: SearchConfig {
                budget: 4,
                starts_per_round: 2,
                rounds: 2,
                blocks: 2,
                train: TrainConfig {
                    max_steps: Some(1),
                    ..TrainConfig::default()
                },
                ..SearchConfig::default()
            },
            ..CompareConfig::default()
        };
        let s = run_search_comparison(&cfg).unwrap();
        assert_eq!(s.rows.len(), 6);
        assert!(s.rows.iter().all(|r| r.oracle_calls == 4));
        assert_eq!(s, run_search_comparison(&cfg).unwrap());
    }
}
