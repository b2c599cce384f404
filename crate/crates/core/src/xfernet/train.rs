use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{self, residual_prefix, UNIVERSAL};
use super::XferNet;
use crate::archspace::{tokenize, TokenSeq};
use crate::error::{Error, Result};
use crate::seed;
use crate::taskbench::ObservationHistory;
use crate::tensor::{
    clip_global_norm, grad_check, AdamConfig, GradCheckReport, Graph, ParamStore, Tensor, Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stops after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    /// Extra epochs that fit only the prediction heads on codes from the
    /// frozen encoder, after the joint phase.
    pub head_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.8,
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            max_steps: None,
            clip_norm: 5.0,
            head_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "lr must be positive and weight_decay non-negative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::InvalidConfig(
                "clip_norm must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-record joint loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Mean per-record prediction loss of each head-only epoch.
    pub head_epoch_losses: Vec<f64>,
}

/// One training example: a token sequence, the registry index of its task
/// and its observed score.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seq: TokenSeq,
    pub task: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub prediction: f64,
    pub reconstruction: f64,
}

pub(crate) struct LossVars {
    pub total: Var,
    pub prediction: Var,
    pub reconstruction: Var,
}

/// Builds `alpha·L_pred + (1−alpha)·L_rec` for a batch. Each record's
/// prediction uses only its own task's head; both terms are sums.
pub(crate) fn build_loss(
    g: &mut Graph,
    p: &ParamStore,
    blocks: usize,
    batch: &[&Sample],
    alpha: f64,
) -> LossVars {
    let seqs: Vec<&[usize]> = batch.iter().map(|s| s.seq.tokens()).collect();
    let enc = network::encode(g, p, &seqs);
    let logits = network::decode_teacher(g, p, &enc, &seqs, blocks);
    let targets: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
    let reconstruction = g.cross_entropy(logits, &targets);

    let tasks: Vec<usize> = batch.iter().map(|s| s.task).collect();
    let scores: Vec<f64> = batch.iter().map(|s| s.score).collect();
    let prediction = prediction_loss(g, p, enc.code, &tasks, &scores);
    let a = g.scale(prediction, alpha);
    let b = g.scale(reconstruction, 1.0 - alpha);
    let total = g.add(a, b);
    LossVars {
        total,
        prediction,
        reconstruction,
    }
}

/// `Σ (universal(z) + residual_task(z) − score)²` over the rows of `code`,
/// grouped so that each task's head sees only its own rows.
fn prediction_loss(
    g: &mut Graph,
    p: &ParamStore,
    code: Var,
    tasks: &[usize],
    scores: &[f64],
) -> Var {
    let universal = network::head(g, p, UNIVERSAL, code);
    let mut groups: Vec<usize> = tasks.to_vec();
    groups.sort_unstable();
    groups.dedup();
    let mut total: Option<Var> = None;
    for task in groups {
        let rows: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i] == task).collect();
        let target: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let z = g.gather_rows(code, &rows);
        let u = g.gather_rows(universal, &rows);
        let r = network::head(g, p, &residual_prefix(task), z);
        let pred = g.add(u, r);
        let se = g.squared_error(pred, Tensor::new([rows.len(), 1], target));
        total = Some(match total {
            Some(acc) => g.add(acc, se),
            None => se,
        });
    }
    total.expect("non-empty batch")
}

impl XferNet {
    pub(crate) fn loss_graph(&self, g: &mut Graph, batch: &[&Sample], alpha: f64) -> LossVars {
        build_loss(g, self.params(), self.blocks(), batch, alpha)
    }

    pub fn loss(&self, batch: &[Sample], alpha: f64) -> Result<LossParts> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        self.check_samples(batch)?;
        let mut g = Graph::new();
        let refs: Vec<&Sample> = batch.iter().collect();
        let v = self.loss_graph(&mut g, &refs, alpha);
        Ok(LossParts {
            total: g.value(v.total).item(),
            prediction: g.value(v.prediction).item(),
            reconstruction: g.value(v.reconstruction).item(),
        })
    }

    /// Checks reverse-mode gradients of the joint loss on `batch` against
    /// central differences with step `eps`.
    pub fn grad_check_loss(
        &self,
        batch: &[Sample],
        alpha: f64,
        eps: f64,
    ) -> Result<GradCheckReport> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        self.check_samples(batch)?;
        let refs: Vec<&Sample> = batch.iter().collect();
        let blocks = self.blocks();
        Ok(grad_check(
            |g, store| build_loss(g, store, blocks, &refs, alpha).total,
            self.params(),
            eps,
        ))
    }

    fn check_samples(&self, samples: &[Sample]) -> Result<()> {
        for s in samples {
            if !(0.0..=1.0).contains(&s.score) {
                return Err(Error::Data(format!("score {} outside [0, 1]", s.score)));
            }
            if s.task >= self.registry().len() {
                return Err(Error::UnknownTask(format!("#{}", s.task)));
            }
            if s.seq.blocks() != self.blocks() {
                return Err(Error::Data(format!(
                    "sequence has {} blocks, surrogate expects {}",
                    s.seq.blocks(),
                    self.blocks()
                )));
            }
        }
        Ok(())
    }

    /// Training examples for every record, in registry then insertion order.
    pub fn samples(&self, history: &ObservationHistory) -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(history.len());
        for rec in history.records() {
            out.push(Sample {
                seq: tokenize(&rec.genome),
                task: self.task_index(rec.task.as_str())?,
                score: rec.score,
            });
        }
        Ok(out)
    }
}

/// Trains a fresh surrogate on every record of `history`. The model gets
/// one residual head per task in the history's registry.
pub fn train(history: &ObservationHistory, cfg: &TrainConfig) -> Result<(XferNet, TrainLog)> {
    let blocks = history
        .records()
        .next()
        .map(|r| r.genome.num_blocks())
        .ok_or_else(|| Error::InvalidConfig("cannot train on an empty history".into()))?;
    let model = XferNet::new(blocks, history.registry().clone(), cfg.seed)?;
    train_from(model, history, cfg)
}

/// Continues training `model`. Tasks in `history` that the model does not
/// know yet receive fresh zero-output residual heads.
pub fn train_from(
    mut model: XferNet,
    history: &ObservationHistory,
    cfg: &TrainConfig,
) -> Result<(XferNet, TrainLog)> {
    cfg.validate()?;
    if history.is_empty() {
        return Err(Error::InvalidConfig(
            "cannot train on an empty history".into(),
        ));
    }
    for task in history.registry().tasks() {
        model.register_task(task, cfg.seed);
    }
    let samples = model.samples(history)?;
    model.check_samples(&samples)?;

    let adam = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let step_cap = cfg.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..cfg.epochs {
        if log.steps >= step_cap {
            break;
        }
        let mut rng = seed::rng(cfg.seed, &[b"shuffle", &(epoch as u64).to_le_bytes()]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if log.steps >= step_cap {
                log.epoch_losses.push(total / seen as f64);
                break 'epochs;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let mut g = Graph::new();
            let loss = model.loss_graph(&mut g, &batch, cfg.alpha).total;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite loss at step {}",
                    log.steps
                )));
            }
            let mut grads = g.backward(loss).into_params();
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm);
            }
            model.params_mut().adam_step(&grads, &adam);
            total += value;
            seen += batch.len();
            log.steps += 1;
        }
        log.epoch_losses.push(total / seen as f64);
    }
    if cfg.head_epochs > 0 {
        fit_heads(&mut model, &samples, cfg, &adam, &mut log)?;
    }
    Ok((model, log))
}

fn fit_heads(
    model: &mut XferNet,
    samples: &[Sample],
    cfg: &TrainConfig,
    adam: &AdamConfig,
    log: &mut TrainLog,
) -> Result<()> {
    let seqs: Vec<TokenSeq> = samples.iter().map(|s| s.seq.clone()).collect();
    let codes = model.encode_codes(&seqs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.head_epochs {
        let mut rng = seed::rng(cfg.seed, &[b"head-shuffle", &(epoch as u64).to_le_bytes()]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut z = Vec::with_capacity(chunk.len() * network::HIDDEN);
            chunk.iter().for_each(|&i| z.extend_from_slice(&codes[i]));
            let tasks: Vec<usize> = chunk.iter().map(|&i| samples[i].task).collect();
            let scores: Vec<f64> = chunk.iter().map(|&i| samples[i].score).collect();
            let mut g = Graph::new();
            let code = g.input(Tensor::new([chunk.len(), network::HIDDEN], z));
            let pred = prediction_loss(&mut g, model.params(), code, &tasks, &scores);
            let loss = g.scale(pred, cfg.alpha);
            total += g.value(pred).item();
            let mut grads = g.backward(loss).into_params();
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm);
            }
            model.params_mut().adam_step(&grads, adam);
        }
        if !total.is_finite() {
            return Err(Error::Data(format!(
                "non-finite head loss in epoch {epoch}"
            )));
        }
        log.head_epoch_losses.push(total / samples.len() as f64);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::sample_genome;
    use crate::taskbench::{ObservationRecord, TaskId, TaskRegistry};

    fn registry() -> TaskRegistry {
        TaskRegistry::new(
            vec![TaskId::new("s0"), TaskId::new("s1"), TaskId::new("t")],
            Some(TaskId::new("t")),
        )
        .unwrap()
    }

    fn history(n: usize, tasks: &[&str]) -> ObservationHistory {
        let mut h = ObservationHistory::new(registry());
        for i in 0..n {
            let g = sample_genome(100 + i as u64, 2).unwrap();
            let task = tasks[i % tasks.len()];
            let score = 0.3 + 0.4 * ((i * 7) % 11) as f64 / 10.0;
            h.push(ObservationRecord {
                task: TaskId::new(task),
                genome: g,
                score,
            })
            .unwrap();
        }
        h
    }

    #[test]
    fn defaults_follow_the_method() {
        let c = TrainConfig::default();
        assert_eq!((c.alpha, c.lr, c.weight_decay), (0.8, 1e-3, 1e-4));
        assert_eq!((c.epochs, c.batch_size), (200, 32));
    }

    #[test]
    fn alpha_endpoints_select_one_term() {
        let h = history(4, &["s0", "s1"]);
        let m = XferNet::new(2, registry(), 1).unwrap();
        let samples = m.samples(&h).unwrap();
        let one = m.loss(&samples, 1.0).unwrap();
        assert_eq!(one.total, one.prediction);
        let zero = m.loss(&samples, 0.0).unwrap();
        assert_eq!(zero.total, zero.reconstruction);
        let mid = m.loss(&samples, 0.8).unwrap();
        assert!((mid.total - (0.8 * mid.prediction + 0.2 * mid.reconstruction)).abs() < 1e-9);
    }

    #[test]
    fn prediction_loss_is_a_plain_sum_over_tasks() {
        let h = history(6, &["s0", "s1"]);
        let m = XferNet::new(2, registry(), 1).unwrap();
        let samples = m.samples(&h).unwrap();
        let expected: f64 = samples
            .iter()
            .map(|s| {
                let z = m.encode(&s.seq).code;
                let task = m.registry().tasks()[s.task].as_str();
                let p = m.predict(&z, super::super::Head::Task(task)).unwrap();
                (p - s.score).powi(2)
            })
            .sum();
        let got = m.loss(&samples, 1.0).unwrap().prediction;
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn out_of_range_score_is_a_data_error() {
        let m = XferNet::new(2, registry(), 1).unwrap();
        let bad = Sample {
            seq: tokenize(&sample_genome(1, 2).unwrap()),
            task: 0,
            score: 1.5,
        };
        assert!(matches!(m.loss(&[bad], 0.8), Err(Error::Data(_))));
    }

    #[test]
    fn full_loss_passes_gradient_check() {
        let h = history(4, &["s0", "s1"]);
        let mut m = XferNet::new(2, registry(), 3).unwrap();
        // Give residual heads nonzero output weights so their gradients are exercised.
        for k in 0..2 {
            let w = m.params_mut().get_mut(&format!("residual.{k}.w2")).unwrap();
            w.data_mut()
                .iter_mut()
                .enumerate()
                .for_each(|(i, x)| *x = 0.05 * ((i % 5) as f64 - 2.0));
        }
        let samples = m.samples(&h).unwrap();
        let refs: Vec<&Sample> = samples.iter().collect();
        let report = grad_check(
            |g, store| build_loss(g, store, 2, &refs, 0.8).total,
            m.params(),
            1e-3,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn empty_history_is_rejected() {
        let h = ObservationHistory::new(registry());
        assert!(matches!(
            train(&h, &TrainConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn max_steps_caps_training() {
        let h = history(10, &["s0"]);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            max_steps: Some(5),
            ..Default::default()
        };
        let (_, log) = train(&h, &cfg).unwrap();
        assert_eq!(log.steps, 5);
        assert_eq!(log.epoch_losses.len(), 2);
    }

    #[test]
    fn unused_heads_stay_untouched_and_runs_are_reproducible() {
        let h = history(12, &["s0", "s1"]);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        };
        let (a, log_a) = train(&h, &cfg).unwrap();
        let fresh = XferNet::new(2, registry(), 9).unwrap();
        for name in ["w1", "b1", "w2", "b2"] {
            let path = format!("residual.2.{name}");
            assert_eq!(a.params().get(&path), fresh.params().get(&path));
        }
        let z = vec![0.2; super::super::HIDDEN];
        assert_eq!(a.residual(&z, "t").unwrap(), 0.0);
        let (b, log_b) = train(&h, &cfg).unwrap();
        assert!(a.params().same_values(b.params()));
        assert_eq!(log_a, log_b);
        assert_eq!(a.params().to_bytes(), b.params().to_bytes());
    }
}
