use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::{fingerprint, Genome};
use crate::error::{Error, Result};
use crate::seed;
use crate::taskbench::{
    mean_std, pearson, ObservationHistory, ObservationRecord, SuiteDescriptor, TaskSuite,
};
use crate::xfernet::{train, Head, TrainConfig, XferNet};

/// Training budget used inside the grid: a short joint phase followed by
/// head-only epochs on frozen codes.
pub fn ablation_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 100,
        max_steps: Some(0),
        head_epochs: 200,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub pool_size: usize,
    pub holdout: usize,
    pub splits: usize,
    /// Records per source task.
    pub source_sizes: Vec<usize>,
    pub target_sizes: Vec<usize>,
    pub suite: SuiteDescriptor,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            pool_size: 600,
            holdout: 50,
            splits: 10,
            source_sizes: vec![0, 50, 100, 150],
            target_sizes: vec![0, 10, 25, 50, 100, 150],
            suite: SuiteDescriptor::default(),
            train: ablation_train_config(),
            seed: 0,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.holdout < 2 || self.holdout >= self.pool_size {
            return Err(Error::InvalidConfig(format!(
                "holdout {} must be in [2, pool_size {})",
                self.holdout, self.pool_size
            )));
        }
        let candidates = self.pool_size - self.holdout;
        if let Some(t) = self.target_sizes.iter().find(|&&t| t > candidates) {
            return Err(Error::InvalidConfig(format!(
                "target size {t} exceeds the {candidates} candidates"
            )));
        }
        if self.splits == 0 {
            return Err(Error::InvalidConfig("splits must be at least 1".into()));
        }
        if self.suite.n_tasks < 2 {
            return Err(Error::InvalidConfig(
                "the suite needs at least one source task".into(),
            ));
        }
        self.train.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub source_size: usize,
    pub target_size: usize,
    pub split: usize,
    pub pearson_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub source_size: usize,
    pub target_size: usize,
    pub mean: f64,
    pub std: f64,
    pub splits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub config: AblationConfig,
    /// Ordered by source size, target size, split.
    pub cells: Vec<AblationCell>,
    pub summary: Vec<GridPoint>,
}

impl AblationResult {
    pub fn point(&self, source_size: usize, target_size: usize) -> Option<&GridPoint> {
        self.summary
            .iter()
            .find(|p| p.source_size == source_size && p.target_size == target_size)
    }

    pub fn cells_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source_size", "target_size", "split", "pearson_r"])?;
        for c in &self.cells {
            w.write_record([
                c.source_size.to_string(),
                c.target_size.to_string(),
                c.split.to_string(),
                c.pearson_r.to_string(),
            ])?;
        }
        finish_csv(w)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source_size", "target_size", "mean", "std", "splits"])?;
        for p in &self.summary {
            w.write_record([
                p.source_size.to_string(),
                p.target_size.to_string(),
                p.mean.to_string(),
                p.std.to_string(),
                p.splits.to_string(),
            ])?;
        }
        finish_csv(w)
    }

    /// Config and training budget as JSON, written next to the CSVs.
    pub fn metadata_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "format": "xfernas-ablation/1",
            "config": self.config,
            "cells": self.cells.len(),
        }))?)
    }

    /// Writes `path`, `<stem>_summary.csv` and `<stem>_meta.json`
    /// alongside it. Returns the paths written.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let path = path.as_ref();
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "grid".into());
        let dir = path.parent().unwrap_or(Path::new(""));
        let summary = dir.join(format!("{stem}_summary.csv"));
        let meta = dir.join(format!("{stem}_meta.json"));
        write_file(path, &self.cells_csv()?)?;
        write_file(&summary, &self.summary_csv()?)?;
        write_file(&meta, &(self.metadata_json()? + "\n"))?;
        Ok(vec![path.to_path_buf(), summary, meta])
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// The evaluated target-task pool shared by every cell.
#[derive(Debug, Clone)]
pub struct AblationPool {
    suite: TaskSuite,
    genomes: Vec<Genome>,
    scores: Vec<f64>,
}

impl AblationPool {
    pub fn new(cfg: &AblationConfig) -> Result<Self> {
        cfg.validate()?;
        let suite = TaskSuite::new(cfg.suite)?;
        let target = suite.task_index(suite.target().as_str())?;
        let mut rng = seed::rng(cfg.seed, &[b"ablation-pool"]);
        let mut seen = HashSet::new();
        let mut genomes = Vec::with_capacity(cfg.pool_size);
        while genomes.len() < cfg.pool_size {
            let g = Genome::random(cfg.suite.blocks, &mut rng)?;
            if seen.insert(fingerprint(&g)) {
                genomes.push(g);
            }
        }
        let scores = genomes
            .iter()
            .map(|g| suite.eval_index(target, g))
            .collect::<Result<_>>()?;
        Ok(AblationPool {
            suite,
            genomes,
            scores,
        })
    }

    pub fn suite(&self) -> &TaskSuite {
        &self.suite
    }

    pub fn genomes(&self) -> &[Genome] {
        &self.genomes
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Pool indices for `split`: the first `holdout` are held out, the
    /// rest are target-knowledge candidates in draw order.
    pub fn split_order(&self, cfg: &AblationConfig, split: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.genomes.len()).collect();
        order.shuffle(&mut seed::rng(
            cfg.seed,
            &[b"ablation-split", &(split as u64).to_le_bytes()],
        ));
        order
    }
}

/// Trains and scores one grid cell. A pure function of the config, the
/// pool and the cell coordinates.
pub fn run_cell(
    cfg: &AblationConfig,
    pool: &AblationPool,
    source_size: usize,
    target_size: usize,
    split: usize,
) -> Result<AblationCell> {
    let split_tag = (split as u64).to_le_bytes();
    let suite = pool.suite();
    let target = suite.target().clone();
    let order = pool.split_order(cfg, split);
    let (held, candidates) = order.split_at(cfg.holdout);

    let mut history = if source_size == 0 {
        ObservationHistory::new(suite.registry())
    } else {
        suite.build_source_knowledge(
            source_size,
            seed::derive(cfg.seed, &[b"ablation-source", &split_tag]),
        )?
    };
    for &i in &candidates[..target_size] {
        history.push(ObservationRecord {
            task: target.clone(),
            genome: pool.genomes[i].clone(),
            score: pool.scores[i],
        })?;
    }

    let train_seed = seed::derive(
        cfg.seed,
        &[
            b"ablation-train",
            &(source_size as u64).to_le_bytes(),
            &(target_size as u64).to_le_bytes(),
            &split_tag,
        ],
    );
    let model = if history.is_empty() {
        XferNet::new(cfg.suite.blocks, suite.registry(), train_seed)?
    } else {
        let train_cfg = TrainConfig {
            seed: train_seed,
            ..cfg.train.clone()
        };
        train(&history, &train_cfg)?.0
    };

    let genomes: Vec<Genome> = held.iter().map(|&i| pool.genomes[i].clone()).collect();
    let truth: Vec<f64> = held.iter().map(|&i| pool.scores[i]).collect();
    let pred = model.predict_genomes(&genomes, Head::Task(target.as_str()))?;
    Ok(AblationCell {
        source_size,
        target_size,
        split,
        pearson_r: pearson(&pred, &truth)?,
    })
}

/// Runs the whole grid. Cells run on the rayon pool; the output order is
/// canonical regardless of scheduling.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationResult> {
    run_ablation_with(cfg, |_| {})
}

/// As [`run_ablation`], calling `progress` after each finished cell.
pub fn run_ablation_with(
    cfg: &AblationConfig,
    progress: impl Fn(&AblationCell) + Sync,
) -> Result<AblationResult> {
    let pool = AblationPool::new(cfg)?;
    let mut coords = Vec::new();
    for &s in &cfg.source_sizes {
        for &t in &cfg.target_sizes {
            for split in 0..cfg.splits {
                coords.push((s, t, split));
            }
        }
    }
    let cells = coords
        .par_iter()
        .map(|&(s, t, split)| {
            let cell = run_cell(cfg, &pool, s, t, split)?;
            progress(&cell);
            Ok(cell)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&cells);
    Ok(AblationResult {
        config: cfg.clone(),
        cells,
        summary,
    })
}

/// Mean and standard deviation over splits per grid point, in first-seen
/// order.
pub fn summarize(cells: &[AblationCell]) -> Vec<GridPoint> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.source_size, c.target_size)) {
            keys.push((c.source_size, c.target_size));
        }
    }
    keys.into_iter()
        .map(|(s, t)| {
            let rs: Vec<f64> = cells
                .iter()
                .filter(|c| c.source_size == s && c.target_size == t)
                .map(|c| c.pearson_r)
                .collect();
            let (mean, std) = mean_std(&rs);
            GridPoint {
                source_size: s,
                target_size: t,
                mean,
                std,
                splits: rs.len(),
            }
        })
        .collect()
}
