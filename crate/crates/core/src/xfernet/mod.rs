//! The XferNet surrogate: a recurrent sequence autoencoder whose mean-pooled
//! code feeds a universal prediction head plus one residual head per task.
//!
//! The prediction for task `i` is `universal(z) + residual_i(z)`. Residual
//! output layers start at zero, so an untrained task predicts exactly what
//! the universal head predicts.

mod network;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archspace::{tokenize, Genome, TokenSeq, TokenVocab};
use crate::error::{Error, Result};
use crate::seed;
use crate::taskbench::{TaskId, TaskRegistry};
use crate::tensor::{Graph, ParamStore, Tensor};

pub use network::{param_specs, EMBED_DIM, HIDDEN, RESIDUAL_HIDDEN, UNIVERSAL_HIDDEN};
pub use train::{train, train_from, LossParts, Sample, TrainConfig, TrainLog};

use network::{head_value, residual_prefix, UNIVERSAL};

/// Which prediction to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head<'a> {
    Universal,
    Task(&'a str),
}

/// Encoder output for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    /// Hidden states, `[L, HIDDEN]`.
    pub states: Tensor,
    /// Mean of `states` over time.
    pub code: Vec<f64>,
}

impl Encoding {
    /// Moves the code by `delta` and every hidden state with it, so the
    /// code stays the mean of the states.
    pub fn shifted(&self, delta: &[f64]) -> Encoding {
        let mut states = self.states.clone();
        for row in states.data_mut().chunks_mut(HIDDEN) {
            for (x, d) in row.iter_mut().zip(delta) {
                *x += d;
            }
        }
        let code = self.code.iter().zip(delta).map(|(c, d)| c + d).collect();
        Encoding { states, code }
    }
}

/// Decoder output for one sequence.
#[derive(Clone, Debug)]
pub struct Decoding {
    /// `[L, V]`; illegal tokens hold `-inf`.
    pub logits: Tensor,
    pub tokens: TokenSeq,
}

#[derive(Clone, Debug)]
pub struct XferNet {
    blocks: usize,
    registry: TaskRegistry,
    params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    blocks: usize,
    #[serde(flatten)]
    registry: TaskRegistry,
}

const SIDECAR_FORMAT: &str = "xfernet-tasks/1";

impl XferNet {
    /// Fresh parameters with one residual head per registered task.
    pub fn new(blocks: usize, registry: TaskRegistry, seed: u64) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::InvalidConfig("blocks must be at least 1".into()));
        }
        let specs = param_specs(blocks, registry.len());
        let params = ParamStore::init(seed::derive(seed, &[b"xfernet-init"]), &specs);
        Ok(XferNet {
            blocks,
            registry,
            params,
        })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.registry
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Adds a residual head for a task not yet registered. The new head
    /// outputs zero everywhere.
    pub fn register_task(&mut self, task: &TaskId, seed: u64) -> usize {
        if let Some(k) = self.registry.index_of(task.as_str()) {
            return k;
        }
        let k = self.registry.ensure(task);
        for spec in network::residual_specs(k) {
            self.params
                .insert_spec(seed::derive(seed, &[b"xfernet-init"]), &spec);
        }
        k
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.registry
            .index_of(task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }

    pub fn seq_len(&self) -> usize {
        TokenVocab::new(self.blocks).seq_len()
    }

    fn check_seq(&self, seq: &TokenSeq) {
        assert_eq!(
            seq.blocks(),
            self.blocks,
            "token sequence has {} blocks, surrogate expects {}",
            seq.blocks(),
            self.blocks
        );
    }

    pub fn encode(&self, seq: &TokenSeq) -> Encoding {
        self.check_seq(seq);
        let mut g = Graph::new();
        let enc = network::encode(&mut g, &self.params, &[seq.tokens()]);
        let len = seq.len();
        Encoding {
            states: g.value(enc.states).clone().reshape([len, HIDDEN]),
            code: g.value(enc.code).data().to_vec(),
        }
    }

    pub fn encode_genome(&self, genome: &Genome) -> Encoding {
        self.encode(&tokenize(genome))
    }

    /// Codes for many sequences, computed in batches.
    pub fn encode_codes(&self, seqs: &[TokenSeq]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(64) {
            chunk.iter().for_each(|s| self.check_seq(s));
            let mut g = Graph::new();
            let ids: Vec<&[usize]> = chunk.iter().map(TokenSeq::tokens).collect();
            let enc = network::encode(&mut g, &self.params, &ids);
            out.extend(g.value(enc.code).data().chunks(HIDDEN).map(<[f64]>::to_vec));
        }
        out
    }

    pub fn universal(&self, code: &[f64]) -> f64 {
        head_value(&self.params, UNIVERSAL, code)
    }

    pub fn residual(&self, code: &[f64], task: &str) -> Result<f64> {
        let k = self.task_index(task)?;
        Ok(head_value(&self.params, &residual_prefix(k), code))
    }

    pub fn predict(&self, code: &[f64], head: Head<'_>) -> Result<f64> {
        let u = self.universal(code);
        match head {
            Head::Universal => Ok(u),
            Head::Task(task) => Ok(u + self.residual(code, task)?),
        }
    }

    /// Predictions for many genomes on one head.
    pub fn predict_genomes(&self, genomes: &[Genome], head: Head<'_>) -> Result<Vec<f64>> {
        let seqs: Vec<TokenSeq> = genomes.iter().map(tokenize).collect();
        self.encode_codes(&seqs)
            .iter()
            .map(|z| self.predict(z, head))
            .collect()
    }

    /// Value and gradient of `predict(code, head)` with respect to the code.
    pub fn predict_gradient(&self, code: &[f64], head: Head<'_>) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let z = g.input(Tensor::new([1, code.len()], code.to_vec()));
        let mut y = network::head(&mut g, &self.params, UNIVERSAL, z);
        if let Head::Task(task) = head {
            let k = self.task_index(task)?;
            let r = network::head(&mut g, &self.params, &residual_prefix(k), z);
            y = g.add(y, r);
        }
        let y = g.sum(y);
        let grads = g.backward(y);
        let dz = grads.wrt(z).expect("code gradient").data().to_vec();
        Ok((g.value(y).item(), dz))
    }

    /// Greedy decoding: at each step the argmax over legal tokens is fed back.
    pub fn decode(&self, enc: &Encoding) -> Decoding {
        let code = Tensor::from_vec(enc.code.clone());
        let (logits, tokens) =
            network::decode_greedy(&self.params, &enc.states, &code, self.blocks);
        let tokens =
            TokenSeq::new(self.blocks, tokens).expect("masked decoding yields legal tokens");
        Decoding { logits, tokens }
    }

    /// Teacher-forced decoding; returns masked logits `[L, V]`.
    pub fn decode_teacher(&self, enc: &Encoding, teacher: &TokenSeq) -> Tensor {
        self.check_seq(teacher);
        let len = teacher.len();
        let mut g = Graph::new();
        let states = g.input(enc.states.clone().reshape([1, len, HIDDEN]));
        let code = g.input(Tensor::new([1, HIDDEN], enc.code.clone()));
        let encoded = network::Encoded { states, code };
        let logits = network::decode_teacher(
            &mut g,
            &self.params,
            &encoded,
            &[teacher.tokens()],
            self.blocks,
        );
        g.value(logits).clone()
    }

    pub fn reconstruct(&self, genome: &Genome) -> Genome {
        self.decode(&self.encode_genome(genome)).tokens.to_genome()
    }

    /// Writes the parameter file to `path` and the task registry to
    /// `<path>.tasks.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.params.save(path)?;
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.into(),
            blocks: self.blocks,
            registry: self.registry.clone(),
        };
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let params = ParamStore::load(path)?;
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        if sidecar.format != SIDECAR_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported sidecar format `{}`",
                sidecar.format
            )));
        }
        let expected = param_specs(sidecar.blocks, sidecar.registry.len());
        for spec in &expected {
            match params.get(&spec.path) {
                Some(t) if t.shape() == spec.shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{}` has shape {:?}, expected {:?}",
                        spec.path,
                        t.shape(),
                        spec.shape
                    )))
                }
                None => {
                    return Err(Error::Checkpoint(format!(
                        "missing parameter `{}`",
                        spec.path
                    )))
                }
            }
        }
        if params.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, expected {}",
                params.len(),
                expected.len()
            )));
        }
        Ok(XferNet {
            blocks: sidecar.blocks,
            registry: sidecar.registry,
            params,
        })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".tasks.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{detokenize, legal_tokens, sample_genome};
    use rand::Rng;

    fn registry() -> TaskRegistry {
        TaskRegistry::new(
            vec![TaskId::new("a"), TaskId::new("b"), TaskId::new("t")],
            Some(TaskId::new("t")),
        )
        .unwrap()
    }

    fn net(blocks: usize) -> XferNet {
        XferNet::new(blocks, registry(), 7).unwrap()
    }

    #[test]
    fn code_is_mean_of_states() {
        let m = net(3);
        let enc = m.encode_genome(&sample_genome(1, 3).unwrap());
        assert_eq!(enc.code.len(), HIDDEN);
        let len = m.seq_len();
        for j in 0..HIDDEN {
            let mean = (0..len)
                .map(|t| enc.states.data()[t * HIDDEN + j])
                .sum::<f64>()
                / len as f64;
            assert!((mean - enc.code[j]).abs() < 1e-12);
        }
        assert_eq!(m.encode_genome(&sample_genome(1, 3).unwrap()), enc);
    }

    #[test]
    fn batched_codes_match_single() {
        let m = net(2);
        let seqs: Vec<TokenSeq> = (0..5)
            .map(|s| tokenize(&sample_genome(s, 2).unwrap()))
            .collect();
        let batch = m.encode_codes(&seqs);
        for (seq, z) in seqs.iter().zip(&batch) {
            let single = m.encode(seq).code;
            for (a, b) in single.iter().zip(z) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fresh_residuals_are_exactly_zero() {
        let m = net(2);
        let mut rng = seed::rng(3, &[b"codes"]);
        for _ in 0..20 {
            let z: Vec<f64> = (0..HIDDEN).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let u = m.predict(&z, Head::Universal).unwrap();
            for task in ["a", "b", "t"] {
                assert_eq!(m.residual(&z, task).unwrap(), 0.0);
                assert_eq!(
                    m.predict(&z, Head::Task(task)).unwrap().to_bits(),
                    u.to_bits()
                );
            }
        }
    }

    #[test]
    fn prediction_is_additive() {
        let mut m = net(2);
        let w2 = m.params_mut().get_mut("residual.1.w2").unwrap();
        w2.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = 0.01 * i as f64);
        let z = vec![0.3; HIDDEN];
        let u = m.predict(&z, Head::Universal).unwrap();
        let r = m.residual(&z, "b").unwrap();
        assert_ne!(r, 0.0);
        assert_eq!(m.predict(&z, Head::Task("b")).unwrap(), u + r);
        let ra = m.residual(&z, "a").unwrap();
        let diff =
            m.predict(&z, Head::Task("b")).unwrap() - m.predict(&z, Head::Task("a")).unwrap();
        assert!((diff - (r - ra)).abs() < 1e-15);
    }

    #[test]
    fn unknown_task_is_rejected() {
        let m = net(2);
        assert!(matches!(
            m.predict(&[0.0; HIDDEN], Head::Task("nope")),
            Err(Error::UnknownTask(_))
        ));
    }

    #[test]
    fn decoded_logits_respect_the_legality_mask() {
        let m = net(3);
        let dec = m.decode(&m.encode_genome(&sample_genome(4, 3).unwrap()));
        let v = TokenVocab::new(3).size();
        let row = &dec.logits.data()[..v];
        let finite: Vec<usize> = (0..v).filter(|&t| row[t].is_finite()).collect();
        assert_eq!(finite, vec![0, 1]);
        for pos in 0..m.seq_len() {
            let legal = legal_tokens(3, pos);
            for t in 0..v {
                assert_eq!(
                    dec.logits.data()[pos * v + t].is_finite(),
                    legal.contains(&t)
                );
            }
        }
    }

    #[test]
    fn random_and_perturbed_codes_decode_to_valid_genomes() {
        let m = net(3);
        let base = m.encode_genome(&sample_genome(9, 3).unwrap());
        let mut rng = seed::rng(5, &[b"perturb"]);
        for scale in [0.0, 0.5, 5.0, 50.0] {
            let delta: Vec<f64> = (0..HIDDEN)
                .map(|_| scale * rng.gen_range(-1.0..1.0))
                .collect();
            let dec = m.decode(&base.shifted(&delta));
            detokenize(3, dec.tokens.tokens()).unwrap();
        }
    }

    #[test]
    fn teacher_forced_first_step_matches_greedy() {
        let m = net(2);
        let g = sample_genome(2, 2).unwrap();
        let enc = m.encode_genome(&g);
        let greedy = m.decode(&enc);
        let forced = m.decode_teacher(&enc, &greedy.tokens);
        for (a, b) in greedy.logits.data().iter().zip(forced.data()) {
            assert!(a == b || (a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn predict_gradient_matches_finite_differences() {
        let mut m = net(2);
        m.params_mut()
            .get_mut("residual.2.w2")
            .unwrap()
            .data_mut()
            .fill(0.2);
        let z: Vec<f64> = (0..HIDDEN).map(|i| (i as f64 * 0.37).sin()).collect();
        let (y, dz) = m.predict_gradient(&z, Head::Task("t")).unwrap();
        assert!((y - m.predict(&z, Head::Task("t")).unwrap()).abs() < 1e-12);
        for j in [0, 17, 95] {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            let num = (m.predict(&zp, Head::Task("t")).unwrap()
                - m.predict(&zm, Head::Task("t")).unwrap())
                / 2e-6;
            assert!((num - dz[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn register_task_adds_a_zero_head() {
        let mut m = net(2);
        let k = m.register_task(&TaskId::new("new"), 1);
        assert_eq!(k, 3);
        assert_eq!(m.residual(&[1.0; HIDDEN], "new").unwrap(), 0.0);
        assert_eq!(m.register_task(&TaskId::new("a"), 1), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join(format!("xfernet-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        let m = net(2);
        m.save(&path).unwrap();
        let back = XferNet::load(&path).unwrap();
        assert!(back.params().same_values(m.params()));
        assert_eq!(back.registry(), m.registry());
        assert_eq!(back.blocks(), 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
