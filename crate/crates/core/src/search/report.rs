use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::Phase;
use crate::archspace::{fingerprint, genome_from_json, genome_to_json, Genome};
use crate::error::{Error, Result};
use crate::xfernet::TrainLog;

/// How an evaluated genome was proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SourceStart,
    TargetStart,
    Random,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::SourceStart => "source-start",
            Provenance::TargetStart => "target-start",
            Provenance::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub genome: Genome,
    pub score: f64,
    pub round: usize,
    pub provenance: Provenance,
    /// Surrogate prediction at the accepted latent point, if any.
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub phase: Phase,
    /// Surrogate training log; absent when the round had nothing to train on.
    pub train: Option<TrainLog>,
    pub starts_tried: usize,
    pub random_fills: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchReport {
    /// In evaluation order.
    pub evaluated: Vec<Evaluation>,
    pub rounds: Vec<RoundLog>,
    pub oracle_calls: usize,
}

impl SearchReport {
    pub(crate) fn push(&mut self, e: Evaluation) {
        self.evaluated.push(e);
    }

    /// Highest-scoring evaluation; the earliest one wins ties.
    pub fn best(&self) -> Option<&Evaluation> {
        self.evaluated
            .iter()
            .fold(None, |best: Option<&Evaluation>, e| match best {
                Some(b) if b.score >= e.score => Some(b),
                _ => Some(e),
            })
    }

    /// Best score after each round.
    pub fn best_by_round(&self) -> Vec<f64> {
        self.rounds
            .iter()
            .map(|r| {
                self.evaluated
                    .iter()
                    .filter(|e| e.round <= r.round)
                    .map(|e| e.score)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    pub fn to_value(&self) -> Result<Value> {
        let genome =
            |g: &Genome| -> Result<Value> { Ok(serde_json::from_str(&genome_to_json(g))?) };
        let mut evaluated = Vec::with_capacity(self.evaluated.len());
        for e in &self.evaluated {
            evaluated.push(json!({
                "round": e.round,
                "provenance": e.provenance,
                "score": e.score,
                "predicted": e.predicted,
                "fingerprint": fingerprint(&e.genome),
                "genome": genome(&e.genome)?,
            }));
        }
        let best = match self.best() {
            Some(b) => json!({ "score": b.score, "genome": genome(&b.genome)? }),
            None => Value::Null,
        };
        Ok(json!({
            "evaluated": evaluated,
            "best": best,
            "rounds": self.rounds,
            "oracle_calls": self.oracle_calls,
        }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_value()?)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let bad = |what: &str| Error::Data(format!("search report: bad or missing `{what}`"));
        let mut evaluated = Vec::new();
        for e in v["evaluated"].as_array().ok_or_else(|| bad("evaluated"))? {
            evaluated.push(Evaluation {
                genome: genome_from_json(&e["genome"].to_string())?,
                score: e["score"].as_f64().ok_or_else(|| bad("score"))?,
                round: e["round"].as_u64().ok_or_else(|| bad("round"))? as usize,
                provenance: serde_json::from_value(e["provenance"].clone())?,
                predicted: e["predicted"].as_f64(),
            });
        }
        Ok(SearchReport {
            evaluated,
            rounds: serde_json::from_value(v["rounds"].clone())?,
            oracle_calls: v["oracle_calls"]
                .as_u64()
                .ok_or_else(|| bad("oracle_calls"))? as usize,
        })
    }

    /// One row per evaluation: `index,round,provenance,score,fingerprint`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index", "round", "provenance", "score", "fingerprint"])?;
        for (i, e) in self.evaluated.iter().enumerate() {
            w.write_record([
                i.to_string(),
                e.round.to_string(),
                e.provenance.as_str().to_string(),
                e.score.to_string(),
                fingerprint(&e.genome),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
