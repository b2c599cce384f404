use std::borrow::Borrow;
use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::archspace::{fingerprint, genome_from_json, genome_to_json, Genome};
use crate::error::{Error, Result};

/// Name of a task (data set) whose response function is being modelled.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(name: impl Into<String>) -> Self {
        TaskId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for TaskId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId::new(s)
    }
}

/// Ordered task list with an optional designated target task.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskRegistry {
    #[serde(rename = "registry")]
    tasks: Vec<TaskId>,
    target: Option<TaskId>,
}

impl TaskRegistry {
    pub fn new(tasks: Vec<TaskId>, target: Option<TaskId>) -> Result<Self> {
        let unique: HashSet<&TaskId> = tasks.iter().collect();
        if unique.len() != tasks.len() {
            return Err(Error::InvalidConfig("duplicate task in registry".into()));
        }
        if let Some(t) = &target {
            if !tasks.contains(t) {
                return Err(Error::UnknownTask(t.to_string()));
            }
        }
        Ok(TaskRegistry { tasks, target })
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn target(&self) -> Option<&TaskId> {
        self.target.as_ref()
    }

    pub fn index_of(&self, task: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.as_str() == task)
    }

    pub fn contains(&self, task: &str) -> bool {
        self.index_of(task).is_some()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Registers `task` if new and returns its index.
    pub fn ensure(&mut self, task: &TaskId) -> usize {
        match self.index_of(task.as_str()) {
            Some(i) => i,
            None => {
                self.tasks.push(task.clone());
                self.tasks.len() - 1
            }
        }
    }

    pub fn set_target(&mut self, task: &TaskId) {
        self.ensure(task);
        self.target = Some(task.clone());
    }

    /// Every registered task except the target, in registry order.
    pub fn source_tasks(&self) -> impl Iterator<Item = &TaskId> {
        self.tasks
            .iter()
            .filter(move |t| Some(*t) != self.target.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub task: TaskId,
    pub genome: Genome,
    pub score: f64,
}

/// Evaluated architectures grouped by task.
///
/// Within a task every genome appears at most once (by fingerprint).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationHistory {
    registry: TaskRegistry,
    records: Vec<Vec<ObservationRecord>>,
    seen: Vec<HashSet<String>>,
}

impl ObservationHistory {
    pub fn new(registry: TaskRegistry) -> Self {
        let n = registry.len();
        ObservationHistory {
            registry,
            records: vec![Vec::new(); n],
            seen: vec![HashSet::new(); n],
        }
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.registry
    }

    pub fn target(&self) -> Option<&TaskId> {
        self.registry.target()
    }

    pub fn register(&mut self, task: &TaskId) -> usize {
        let i = self.registry.ensure(task);
        if i == self.records.len() {
            self.records.push(Vec::new());
            self.seen.push(HashSet::new());
        }
        i
    }

    pub fn set_target(&mut self, task: &TaskId) {
        self.register(task);
        self.registry.set_target(task);
    }

    /// Appends a record, registering its task if needed.
    pub fn push(&mut self, record: ObservationRecord) -> Result<()> {
        if !(0.0..=1.0).contains(&record.score) {
            return Err(Error::Data(format!(
                "score {} outside [0, 1] for task {}",
                record.score, record.task
            )));
        }
        let fp = fingerprint(&record.genome);
        let i = self.register(&record.task);
        if !self.seen[i].insert(fp.clone()) {
            return Err(Error::Data(format!(
                "genome {fp} already recorded for task {}",
                record.task
            )));
        }
        self.records[i].push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records, grouped by task in registry order.
    pub fn records(&self) -> impl Iterator<Item = &ObservationRecord> {
        self.records.iter().flatten()
    }

    pub fn records_for(&self, task: &str) -> &[ObservationRecord] {
        self.registry
            .index_of(task)
            .map_or(&[], |i| self.records[i].as_slice())
    }

    pub fn contains(&self, task: &str, genome: &Genome) -> bool {
        self.registry
            .index_of(task)
            .is_some_and(|i| self.seen[i].contains(&fingerprint(genome)))
    }

    /// Fingerprints recorded under any task.
    pub fn fingerprints(&self) -> HashSet<String> {
        self.seen.iter().flatten().cloned().collect()
    }

    /// Merges `other` into a copy of `self`.
    pub fn combined(&self, other: &ObservationHistory) -> Result<ObservationHistory> {
        let mut out = self.clone();
        for t in other.registry.tasks() {
            out.register(t);
        }
        if let Some(t) = other.target() {
            out.set_target(t);
        }
        for r in other.records() {
            out.push(r.clone())?;
        }
        Ok(out)
    }

    /// JSONL: an optional header line `{"registry": [...], "target": ...}`
    /// followed by one `{"genome": {...}, "score": s, "task": t}` per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "registry": self.registry.tasks(),
            "target": self.registry.target(),
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for r in self.records() {
            let genome: Value =
                serde_json::from_str(&genome_to_json(&r.genome)).expect("emitted JSON parses");
            let line = serde_json::json!({
                "genome": genome,
                "score": r.score,
                "task": r.task,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses JSONL; `source` labels error messages. Blank lines are skipped.
    pub fn from_jsonl(text: &str, source: &str) -> Result<Self> {
        let mut history = ObservationHistory::default();
        let err = |line: usize, reason: String| Error::Line {
            path: source.to_string(),
            line,
            reason,
        };
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(line).map_err(|e| err(lineno, e.to_string()))?;
            if v.get("registry").is_some() {
                if !history.is_empty() || !history.registry.is_empty() {
                    return Err(err(lineno, "header must be the first line".into()));
                }
                let registry: TaskRegistry = serde_json::from_value(v.clone())
                    .map_err(|e| err(lineno, format!("bad header: {e}")))?;
                let registry = TaskRegistry::new(registry.tasks, registry.target)
                    .map_err(|e| err(lineno, e.to_string()))?;
                history = ObservationHistory::new(registry);
                continue;
            }
            let task = v
                .get("task")
                .and_then(Value::as_str)
                .ok_or_else(|| err(lineno, "missing string field `task`".into()))?;
            let score = v
                .get("score")
                .and_then(Value::as_f64)
                .ok_or_else(|| err(lineno, "missing numeric field `score`".into()))?;
            let genome = v
                .get("genome")
                .ok_or_else(|| err(lineno, "missing field `genome`".into()))?;
            let genome =
                genome_from_json(&genome.to_string()).map_err(|e| err(lineno, e.to_string()))?;
            history
                .push(ObservationRecord {
                    task: TaskId::new(task),
                    genome,
                    score,
                })
                .map_err(|e| err(lineno, e.to_string()))?;
        }
        Ok(history)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, &path.display().to_string())
    }
}
