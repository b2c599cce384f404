//! The two-phase XferNAS optimizer.
//!
//! Round 1 trains the surrogate on source knowledge only and ascends the
//! target head (which equals the universal head at that point) from the
//! best source architectures. Later rounds retrain on source plus target
//! observations and ascend from the best target architectures.

mod report;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::archspace::{fingerprint, Genome};
use crate::error::{Error, Result};
use crate::seed;
use crate::taskbench::{ObservationHistory, ObservationRecord, Oracle, TaskId};
use crate::xfernet::{train_from, Encoding, Head, TrainConfig, XferNet};

pub use report::{Evaluation, Provenance, RoundLog, SearchReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub budget: usize,
    pub eta: f64,
    pub max_ascent_steps: usize,
    pub starts_per_round: usize,
    pub rounds: usize,
    pub seed: u64,
    /// Blocks per cell of proposed genomes.
    pub blocks: usize,
    pub train: TrainConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 33,
            eta: 10.0,
            max_ascent_steps: 10,
            starts_per_round: 11,
            rounds: 3,
            seed: 0,
            blocks: 5,
            train: TrainConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.rounds == 0 || self.starts_per_round == 0 {
            return Err(Error::InvalidConfig(
                "budget, rounds and starts_per_round must be at least 1".into(),
            ));
        }
        if self.blocks == 0 {
            return Err(Error::InvalidConfig("blocks must be at least 1".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Source,
    Target,
}

fn ranked(records: &[ObservationRecord]) -> Vec<&ObservationRecord> {
    let mut v: Vec<&ObservationRecord> = records.iter().collect();
    // Stable sort: equal scores keep insertion order.
    v.sort_by(|a, b| b.score.total_cmp(&a.score));
    v
}

/// Records of each source task that has any, best first.
fn source_lists(history: &ObservationHistory) -> Vec<Vec<&ObservationRecord>> {
    history
        .registry()
        .source_tasks()
        .map(|t| ranked(history.records_for(t.as_str())))
        .filter(|l| !l.is_empty())
        .collect()
}

/// All rank-0 records in registry order, then all rank-1 records, and so
/// on, down to `depth` records per task.
fn interleave(lists: &[Vec<&ObservationRecord>], depth: usize) -> Vec<Genome> {
    let deepest = lists.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for rank in 0..deepest.min(depth) {
        for l in lists {
            if let Some(r) = l.get(rank) {
                out.push(r.genome.clone());
            }
        }
    }
    out
}

fn target_ranked(history: &ObservationHistory) -> Result<Vec<Genome>> {
    let task = history
        .target()
        .ok_or_else(|| Error::Search("history has no target task".into()))?;
    let out: Vec<Genome> = ranked(history.records_for(task.as_str()))
        .into_iter()
        .map(|r| r.genome.clone())
        .collect();
    if out.is_empty() {
        return Err(Error::Search("no target records to start from".into()));
    }
    Ok(out)
}

/// Starting points: for the source phase the top `⌈k/n⌉` records of each
/// of the `n` source tasks with records, merged by rank and truncated to
/// `k`; for the target phase the top `k` target records. Ties keep
/// insertion order.
pub fn select_starts(history: &ObservationHistory, phase: Phase, k: usize) -> Result<Vec<Genome>> {
    match phase {
        Phase::Target => Ok(target_ranked(history)?.into_iter().take(k).collect()),
        Phase::Source => {
            let lists = source_lists(history);
            if lists.is_empty() {
                return Err(Error::Search("no source records to start from".into()));
            }
            let mut out = interleave(&lists, k.div_ceil(lists.len()));
            out.truncate(k);
            Ok(out)
        }
    }
}

/// The `k` selected starts followed by every other record of the phase in
/// rank order, used when a start yields no novel genome.
fn starts_with_fallbacks(
    history: &ObservationHistory,
    phase: Phase,
    k: usize,
) -> Result<Vec<Genome>> {
    let mut starts = select_starts(history, phase, k)?;
    let chosen: HashSet<String> = starts.iter().map(fingerprint).collect();
    let rest = match phase {
        Phase::Target => target_ranked(history)?,
        Phase::Source => interleave(&source_lists(history), usize::MAX),
    };
    starts.extend(
        rest.into_iter()
            .filter(|g| !chosen.contains(&fingerprint(g))),
    );
    Ok(starts)
}

/// A novel genome found by latent ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct Ascent {
    pub genome: Genome,
    /// Gradient steps taken until the decode was novel.
    pub steps: usize,
    pub predicted_start: f64,
    pub predicted_end: f64,
}

/// Gradient ascent on `predict(z, head)` from `start`. After every step the
/// shifted encoding is decoded greedily; the first decode that is not in
/// `known` and whose code predicts at least as well as the start is
/// returned.
pub fn latent_ascend(
    model: &XferNet,
    start: &Encoding,
    head: Head<'_>,
    eta: f64,
    max_steps: usize,
    known: &HashSet<String>,
) -> Result<Option<Ascent>> {
    let z0 = &start.code;
    let mut z = z0.clone();
    let p0 = model.predict(&z, head)?;
    for step in 1..=max_steps {
        let (_, grad) = model.predict_gradient(&z, head)?;
        for (zi, gi) in z.iter_mut().zip(&grad) {
            *zi += eta * gi;
        }
        let p = model.predict(&z, head)?;
        if p < p0 {
            continue;
        }
        let delta: Vec<f64> = z.iter().zip(z0).map(|(a, b)| a - b).collect();
        let genome = model.decode(&start.shifted(&delta)).tokens.to_genome();
        if !known.contains(&fingerprint(&genome)) {
            return Ok(Some(Ascent {
                genome,
                steps: step,
                predicted_start: p0,
                predicted_end: p,
            }));
        }
    }
    Ok(None)
}

/// Runs the search for `target` against `oracle`.
///
/// `source_history` may be empty, in which case round 1 evaluates random
/// genomes. `base`, if given, supplies initial surrogate parameters (for
/// example a pretrained autoencoder); otherwise the surrogate starts fresh.
pub fn xfernas_search<O: Oracle + ?Sized>(
    oracle: &O,
    target: &TaskId,
    source_history: &ObservationHistory,
    base: Option<&XferNet>,
    cfg: &SearchConfig,
) -> Result<SearchReport> {
    cfg.validate()?;
    let mut history = source_history.clone();
    history.set_target(target);
    let blocks = cfg.blocks;
    if let Some(r) = source_history
        .records()
        .find(|r| r.genome.num_blocks() != blocks)
    {
        return Err(Error::InvalidConfig(format!(
            "source genome with {} blocks in a search over {blocks} blocks",
            r.genome.num_blocks()
        )));
    }
    if let Some(m) = base.filter(|m| m.blocks() != blocks) {
        return Err(Error::InvalidConfig(format!(
            "base surrogate has {} blocks, search uses {blocks}",
            m.blocks()
        )));
    }
    let mut known = history.fingerprints();
    let mut report = SearchReport::default();
    let mut model: Option<XferNet> = None;

    for round in 1..=cfg.rounds {
        let remaining = cfg.budget - report.evaluated.len();
        if remaining == 0 {
            break;
        }
        let quota = if round == cfg.rounds {
            remaining
        } else {
            cfg.starts_per_round.min(remaining)
        };
        let phase = if round == 1 {
            Phase::Source
        } else {
            Phase::Target
        };
        let mut log = RoundLog {
            round,
            phase,
            train: None,
            starts_tried: 0,
            random_fills: 0,
        };
        let mut proposals: Vec<(Genome, Provenance, Option<f64>)> = Vec::new();

        let has_data = match phase {
            Phase::Source => !source_history.is_empty(),
            Phase::Target => !history.is_empty(),
        };
        if has_data {
            let train_cfg = TrainConfig {
                seed: seed::derive(cfg.seed, &[b"train", &(round as u64).to_le_bytes()]),
                ..cfg.train.clone()
            };
            let init = match (model.take(), base) {
                (Some(m), _) => m,
                (None, Some(b)) => b.clone(),
                (None, None) => XferNet::new(blocks, history.registry().clone(), train_cfg.seed)?,
            };
            let (trained, train_log) = train_from(init, &history, &train_cfg)?;
            log.train = Some(train_log);

            let starts = starts_with_fallbacks(&history, phase, cfg.starts_per_round)?;
            let provenance = match phase {
                Phase::Source => Provenance::SourceStart,
                Phase::Target => Provenance::TargetStart,
            };
            let head = Head::Task(target.as_str());
            for start in &starts {
                if proposals.len() == quota {
                    break;
                }
                log.starts_tried += 1;
                let enc = trained.encode_genome(start);
                if let Some(a) =
                    latent_ascend(&trained, &enc, head, cfg.eta, cfg.max_ascent_steps, &known)?
                {
                    known.insert(fingerprint(&a.genome));
                    proposals.push((a.genome, provenance, Some(a.predicted_end)));
                }
            }
            model = Some(trained);
        }

        let mut rng = seed::rng(cfg.seed, &[b"random-fill", &(round as u64).to_le_bytes()]);
        while proposals.len() < quota {
            let g = Genome::random(blocks, &mut rng)?;
            if known.insert(fingerprint(&g)) {
                log.random_fills += 1;
                proposals.push((g, Provenance::Random, None));
            }
        }

        for (genome, provenance, predicted) in proposals {
            let score = match oracle.evaluate(target, &genome) {
                Ok(s) => s,
                Err(e) => {
                    report.rounds.push(log);
                    return Err(Error::OracleFailed {
                        reason: e.to_string(),
                        partial: Box::new(report),
                    });
                }
            };
            report.oracle_calls += 1;
            history.push(ObservationRecord {
                task: target.clone(),
                genome: genome.clone(),
                score,
            })?;
            report.push(Evaluation {
                genome,
                score,
                round,
                provenance,
                predicted,
            });
        }
        report.rounds.push(log);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::sample_genome;
    use crate::taskbench::{task_name, SuiteDescriptor, TaskRegistry, TaskSuite};
    use std::cell::Cell;

    fn fixture_history() -> ObservationHistory {
        let tasks: Vec<TaskId> = (0..5).map(task_name).collect();
        let registry = TaskRegistry::new(tasks.clone(), Some(tasks[4].clone())).unwrap();
        let mut h = ObservationHistory::new(registry);
        let mut seed = 0;
        for (t, task) in tasks[..4].iter().enumerate() {
            for i in 0..5 {
                seed += 1;
                let score = 0.1 * (i as f64) + 0.01 * t as f64;
                h.push(ObservationRecord {
                    task: task.clone(),
                    genome: sample_genome(seed, 2).unwrap(),
                    score,
                })
                .unwrap();
            }
        }
        h
    }

    #[test]
    fn source_starts_take_at_most_ceil_k_over_n_per_task() {
        let h = fixture_history();
        let starts = select_starts(&h, Phase::Source, 11).unwrap();
        assert_eq!(starts.len(), 11);
        let mut per_task = std::collections::HashMap::new();
        for g in &starts {
            let task = (0..4)
                .find(|&t| h.contains(task_name(t).as_str(), g))
                .unwrap();
            *per_task.entry(task).or_insert(0) += 1;
        }
        assert!(per_task.values().all(|&c| c <= 3), "{per_task:?}");
        // The best record of every task leads, in registry order.
        for (t, g) in starts[..4].iter().enumerate() {
            let best = &h.records_for(task_name(t).as_str())[4];
            assert_eq!(g, &best.genome);
        }
    }

    #[test]
    fn k_beyond_available_returns_everything() {
        let h = fixture_history();
        assert_eq!(select_starts(&h, Phase::Source, 100).unwrap().len(), 20);
    }

    #[test]
    fn target_phase_uses_target_records() {
        let mut h = fixture_history();
        assert!(matches!(
            select_starts(&h, Phase::Target, 3),
            Err(Error::Search(_))
        ));
        let g = sample_genome(999, 2).unwrap();
        h.push(ObservationRecord {
            task: task_name(4),
            genome: g.clone(),
            score: 0.5,
        })
        .unwrap();
        assert_eq!(select_starts(&h, Phase::Target, 3).unwrap(), vec![g]);
    }

    #[test]
    fn ties_keep_insertion_order() {
        let tasks = vec![task_name(0), task_name(1)];
        let registry = TaskRegistry::new(tasks.clone(), Some(tasks[1].clone())).unwrap();
        let mut h = ObservationHistory::new(registry);
        let gs: Vec<Genome> = (0..4).map(|s| sample_genome(s, 2).unwrap()).collect();
        for g in &gs {
            h.push(ObservationRecord {
                task: tasks[1].clone(),
                genome: g.clone(),
                score: 0.5,
            })
            .unwrap();
        }
        assert_eq!(select_starts(&h, Phase::Target, 4).unwrap(), gs);
    }

    fn tiny_model() -> XferNet {
        let tasks: Vec<TaskId> = (0..2).map(task_name).collect();
        XferNet::new(
            1,
            TaskRegistry::new(tasks.clone(), Some(tasks[1].clone())).unwrap(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn tiny_step_never_leaves_the_start() {
        let m = tiny_model();
        let g = sample_genome(3, 1).unwrap();
        let enc = m.encode_genome(&g);
        let decoded = m.decode(&enc).tokens.to_genome();
        let known = HashSet::from([fingerprint(&decoded)]);
        let head = Head::Task("task_1");
        assert_eq!(
            latent_ascend(&m, &enc, head, 1e-9, 10, &known).unwrap(),
            None
        );
    }

    #[test]
    fn exhausted_space_yields_nothing() {
        // B = 1: inputs {0,1} twice and 19 ops twice per cell.
        let m = tiny_model();
        let mut cells = Vec::new();
        for in1 in 0..2 {
            for op1 in 2..21 {
                for in2 in 0..2 {
                    for op2 in 2..21 {
                        cells.push([in1, op1, in2, op2]);
                    }
                }
            }
        }
        let mut known = HashSet::new();
        for normal in &cells {
            for reduction in &cells {
                let tokens = [normal.as_slice(), reduction.as_slice()].concat();
                known.insert(fingerprint(
                    &crate::archspace::detokenize(1, &tokens).unwrap(),
                ));
            }
        }
        assert_eq!(known.len(), 1444 * 1444);
        let enc = m.encode_genome(&sample_genome(1, 1).unwrap());
        assert_eq!(
            latent_ascend(&m, &enc, Head::Task("task_1"), 10.0, 5, &known).unwrap(),
            None
        );
    }

    struct Failing {
        after: usize,
        calls: Cell<usize>,
        inner: TaskSuite,
    }

    impl Oracle for Failing {
        fn evaluate(&self, task: &TaskId, g: &Genome) -> Result<f64> {
            self.calls.set(self.calls.get() + 1);
            if self.calls.get() > self.after {
                return Err(Error::Data("worker lost".into()));
            }
            self.inner.evaluate(task, g)
        }
    }

    fn small_cfg() -> SearchConfig {
        SearchConfig {
            budget: 6,
            starts_per_round: 2,
            rounds: 3,
            max_ascent_steps: 3,
            seed: 4,
            blocks: 2,
            train: TrainConfig {
                epochs: 1,
                batch_size: 8,
                head_epochs: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn small_suite() -> TaskSuite {
        TaskSuite::new(SuiteDescriptor {
            n_tasks: 3,
            blocks: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_failure_returns_partial_report() {
        let suite = small_suite();
        let oracle = Failing {
            after: 3,
            calls: Cell::new(0),
            inner: suite.clone(),
        };
        let source = ObservationHistory::new(suite.registry());
        let err = xfernas_search(&oracle, suite.target(), &source, None, &small_cfg()).unwrap_err();
        match err {
            Error::OracleFailed { partial, reason } => {
                assert_eq!(partial.evaluated.len(), 3);
                assert!(reason.contains("worker lost"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn no_transfer_search_starts_randomly_and_respects_budget() {
        let suite = small_suite();
        let source = ObservationHistory::new(suite.registry());
        let r = xfernas_search(&suite, suite.target(), &source, None, &small_cfg()).unwrap();
        assert_eq!(r.oracle_calls, 6);
        assert!(r
            .evaluated
            .iter()
            .filter(|e| e.round == 1)
            .all(|e| e.provenance == Provenance::Random));
        assert!(r.rounds[0].train.is_none());
        assert_eq!(r.rounds.iter().filter(|l| l.train.is_some()).count(), 2);
        let fps: HashSet<String> = r.evaluated.iter().map(|e| fingerprint(&e.genome)).collect();
        assert_eq!(fps.len(), 6);
    }

    #[test]
    fn transfer_search_is_novel_and_reproducible() {
        let suite = small_suite();
        let source = suite.build_source_knowledge(12, 1).unwrap();
        let a = xfernas_search(&suite, suite.target(), &source, None, &small_cfg()).unwrap();
        assert_eq!(a.rounds.iter().filter(|l| l.train.is_some()).count(), 3);
        assert!(a.oracle_calls <= 6);
        let source_fps = source.fingerprints();
        assert!(a
            .evaluated
            .iter()
            .all(|e| !source_fps.contains(&fingerprint(&e.genome))));
        let b = xfernas_search(&suite, suite.target(), &source, None, &small_cfg()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let best = a.best().unwrap();
        let max = a.evaluated.iter().map(|e| e.score).fold(f64::MIN, f64::max);
        assert_eq!(best.score, max);
    }
}
