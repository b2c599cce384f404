use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::history::{ObservationHistory, ObservationRecord, TaskId, TaskRegistry};
use crate::archspace::{fingerprint, Genome, Operation};
use crate::error::{Error, Result};
use crate::seed;

/// Raw (pre-projection) feature width: per cell a 19-bin operation
/// histogram plus the mean input gap.
pub const RAW_FEATURES: usize = 2 * (Operation::COUNT + 1);
/// Projected feature width.
pub const FEATURES: usize = 32;
/// Scale of the random projection. Chosen so the universal logit term has
/// roughly unit spread over uniformly sampled B=5 genomes.
const PROJECTION_GAIN: f64 = 1.6;
/// Task offsets are drawn from N(OFFSET_MEAN, OFFSET_STD²).
const OFFSET_MEAN: f64 = 0.5;
const OFFSET_STD: f64 = 0.5;

/// Shareable description of a suite; everything else derives from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteDescriptor {
    pub seed: u64,
    pub n_tasks: usize,
    pub tau: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
}

fn default_noise() -> f64 {
    0.01
}

fn default_blocks() -> usize {
    5
}

impl Default for SuiteDescriptor {
    /// Seed 42, four source tasks plus one target, `tau = 0.3`.
    fn default() -> Self {
        SuiteDescriptor {
            seed: 42,
            n_tasks: 5,
            tau: 0.3,
            noise_sigma: default_noise(),
            blocks: default_blocks(),
        }
    }
}

impl SuiteDescriptor {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Anything that can score a genome on a task.
pub trait Oracle {
    fn evaluate(&self, task: &TaskId, genome: &Genome) -> Result<f64>;
}

/// Synthetic multi-task response functions sharing a universal component:
///
/// `score = sigmoid(⟨w_u, φ(g)⟩ + tau·⟨w_k, φ(g)⟩ + b_k + ε)`
///
/// with unit-norm Gaussian `w_u`, `w_k`, and per-(task, genome) noise `ε`
/// derived from a hash, so every evaluation is a pure function.
#[derive(Debug, Clone)]
pub struct TaskSuite {
    descriptor: SuiteDescriptor,
    tasks: Vec<TaskId>,
    center: [f64; RAW_FEATURES],
    projection: Vec<f64>,
    universal: Vec<f64>,
    task_weights: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl TaskSuite {
    pub fn new(descriptor: SuiteDescriptor) -> Result<Self> {
        if descriptor.n_tasks < 1 {
            return Err(Error::InvalidConfig(
                "a suite needs at least one task".into(),
            ));
        }
        if !(descriptor.tau >= 0.0) || !(descriptor.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "tau and noise_sigma must be >= 0".into(),
            ));
        }
        if descriptor.blocks < 1 {
            return Err(Error::InvalidConfig("B must be at least 1".into()));
        }
        let s = descriptor.seed;
        let mut rng = seed::rng(s, &[b"projection"]);
        let projection = (0..FEATURES * RAW_FEATURES)
            .map(|_| PROJECTION_GAIN * normal(&mut rng))
            .collect();
        let universal = unit_gaussian(&mut seed::rng(s, &[b"universal"]), FEATURES);
        let task_weights = (0..descriptor.n_tasks)
            .map(|k| {
                unit_gaussian(
                    &mut seed::rng(s, &[b"task-weights", &(k as u64).to_le_bytes()]),
                    FEATURES,
                )
            })
            .collect();
        let offsets = (0..descriptor.n_tasks)
            .map(|k| {
                let mut r = seed::rng(s, &[b"task-offset", &(k as u64).to_le_bytes()]);
                OFFSET_MEAN + OFFSET_STD * normal(&mut r)
            })
            .collect();
        Ok(TaskSuite {
            tasks: (0..descriptor.n_tasks).map(task_name).collect(),
            center: expected_raw_features(descriptor.blocks),
            descriptor,
            projection,
            universal,
            task_weights,
            offsets,
        })
    }

    pub fn descriptor(&self) -> &SuiteDescriptor {
        &self.descriptor
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    /// The last task is the designated target.
    pub fn target(&self) -> &TaskId {
        self.tasks.last().expect("at least one task")
    }

    pub fn source_tasks(&self) -> &[TaskId] {
        &self.tasks[..self.tasks.len() - 1]
    }

    pub fn registry(&self) -> TaskRegistry {
        TaskRegistry::new(self.tasks.clone(), Some(self.target().clone()))
            .expect("suite task names are unique")
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.as_str() == task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }

    /// Projected features `φ(g)` (32 values).
    pub fn features(&self, g: &Genome) -> Vec<f64> {
        let raw = raw_features(g);
        let centered: Vec<f64> = raw.iter().zip(&self.center).map(|(x, m)| x - m).collect();
        self.projection
            .chunks(RAW_FEATURES)
            .map(|row| row.iter().zip(&centered).map(|(p, x)| p * x).sum())
            .collect()
    }

    /// Noise-free logit decomposed into (universal term, task term, offset).
    pub fn logit_parts(&self, task: usize, g: &Genome) -> (f64, f64, f64) {
        let phi = self.features(g);
        (
            dot(&self.universal, &phi),
            self.descriptor.tau * dot(&self.task_weights[task], &phi),
            self.offsets[task],
        )
    }

    pub fn noise(&self, task: usize, g: &Genome) -> f64 {
        if self.descriptor.noise_sigma == 0.0 {
            return 0.0;
        }
        let fp = fingerprint(g);
        let mut rng = seed::rng(
            self.descriptor.seed,
            &[b"noise", &(task as u64).to_le_bytes(), fp.as_bytes()],
        );
        self.descriptor.noise_sigma * normal(&mut rng)
    }

    pub fn eval_index(&self, task: usize, g: &Genome) -> Result<f64> {
        if task >= self.tasks.len() {
            return Err(Error::UnknownTask(format!("task index {task}")));
        }
        if g.num_blocks() != self.descriptor.blocks {
            return Err(Error::InvalidConfig(format!(
                "suite expects B={} genomes, got B={}",
                self.descriptor.blocks,
                g.num_blocks()
            )));
        }
        let (u, t, b) = self.logit_parts(task, g);
        Ok(sigmoid(u + t + b + self.noise(task, g)))
    }

    /// Builds source knowledge: `n_per_task` distinct random genomes per
    /// source task, each evaluated on that task only. No genome is shared
    /// between tasks and the target task receives no records.
    pub fn build_source_knowledge(
        &self,
        n_per_task: usize,
        seed: u64,
    ) -> Result<ObservationHistory> {
        let mut history = ObservationHistory::new(self.registry());
        let mut used = HashSet::new();
        let mut rng = seed::rng(seed, &[b"source-knowledge"]);
        for (k, task) in self.source_tasks().iter().enumerate() {
            let mut added = 0;
            while added < n_per_task {
                let g = Genome::random(self.descriptor.blocks, &mut rng)?;
                if !used.insert(fingerprint(&g)) {
                    continue;
                }
                let score = self.eval_index(k, &g)?;
                history.push(ObservationRecord {
                    task: task.clone(),
                    genome: g,
                    score,
                })?;
                added += 1;
            }
        }
        Ok(history)
    }
}

impl Oracle for TaskSuite {
    fn evaluate(&self, task: &TaskId, genome: &Genome) -> Result<f64> {
        self.eval_index(self.task_index(task.as_str())?, genome)
    }
}

pub fn task_name(k: usize) -> TaskId {
    TaskId::new(format!("task_{k}"))
}

/// Pre-projection features: per cell, operation counts normalized by the
/// number of operation slots, then the mean of `(node − input) / node`
/// over all block inputs.
pub fn raw_features(g: &Genome) -> [f64; RAW_FEATURES] {
    let mut out = [0.0; RAW_FEATURES];
    let per_cell = Operation::COUNT + 1;
    for (c, cell) in g.cells().into_iter().enumerate() {
        let base = c * per_cell;
        let slots = (2 * cell.num_blocks()) as f64;
        let mut gap = 0.0;
        for (i, b) in cell.blocks().iter().enumerate() {
            let node = (i + 2) as f64;
            out[base + b.op1.id()] += 1.0;
            out[base + b.op2.id()] += 1.0;
            gap += (node - b.input1 as f64) / node + (node - b.input2 as f64) / node;
        }
        for x in &mut out[base..base + Operation::COUNT] {
            *x /= slots;
        }
        out[base + Operation::COUNT] = gap / slots;
    }
    out
}

/// Expectation of [`raw_features`] under uniform genome sampling.
fn expected_raw_features(blocks: usize) -> [f64; RAW_FEATURES] {
    let mut out = [1.0 / Operation::COUNT as f64; RAW_FEATURES];
    // Input uniform over 0..node gives E[(node − input)/node] = (node+1)/(2·node).
    let gap = (0..blocks)
        .map(|i| {
            let node = (i + 2) as f64;
            (node + 1.0) / (2.0 * node)
        })
        .sum::<f64>()
        / blocks as f64;
    out[Operation::COUNT] = gap;
    out[RAW_FEATURES - 1] = gap;
    out
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let norm = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
