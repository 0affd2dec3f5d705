//! Experience buffer: every evaluated skeleton, deduplicated by canonical
//! form and ranked by MAPE on the training data.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::expr::{canonicalize, parse, Expr, Params};
use crate::fit::FitResult;

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    /// Canonical skeleton in DSL form; also the dedup key.
    pub canonical_text: String,
    pub expr: Expr,
    /// MAPE fraction; `None` entries are kept but never ranked.
    pub score: Option<f64>,
    /// Fitted parameters, relabeled to match the canonical skeleton.
    pub params: Params,
    pub iteration_found: usize,
    pub sequence: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Improved,
    DuplicateWorse,
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    canonical_text: String,
    score: Option<f64>,
    params: Params,
    iteration_found: usize,
    sequence: u64,
}

#[derive(Debug, Clone)]
pub struct ExperienceBuffer {
    variables: Vec<String>,
    entries: Vec<BufferEntry>,
    index: HashMap<String, usize>,
    next_sequence: u64,
}

// Undefined scores rank after everything.
fn rank_key(score: Option<f64>) -> f64 {
    score.unwrap_or(f64::INFINITY)
}

impl ExperienceBuffer {
    pub fn new(variables: Vec<String>) -> Self {
        Self {
            variables,
            entries: Vec::new(),
            index: HashMap::new(),
            next_sequence: 0,
        }
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn contains(&self, expr: &Expr) -> bool {
        let key = canonicalize(expr).to_text(&self.variables);
        self.index.contains_key(&key)
    }

    pub fn insert(&mut self, expr: &Expr, fit: &FitResult, iteration: usize) -> InsertOutcome {
        let canon = canonicalize(expr);
        let canonical_text = canon.to_text(&self.variables);
        let score = fit.metrics.mape;
        let sequence = self.next_sequence;
        let entry = BufferEntry {
            canonical_text: canonical_text.clone(),
            expr: canon.expr.clone(),
            score,
            params: canon.remap_params(&fit.params),
            iteration_found: iteration,
            sequence,
        };
        match self.index.get(&canonical_text) {
            None => {
                self.index.insert(canonical_text, self.entries.len());
                self.entries.push(entry);
                self.next_sequence += 1;
                InsertOutcome::Inserted
            }
            Some(&i) => {
                if rank_key(score) < rank_key(self.entries[i].score) {
                    self.entries[i] = entry;
                    self.next_sequence += 1;
                    InsertOutcome::Improved
                } else {
                    InsertOutcome::DuplicateWorse
                }
            }
        }
    }

    /// Up to `k` scored entries, ascending MAPE, earlier discovery first on
    /// ties.
    pub fn topk(&self, k: usize) -> Vec<&BufferEntry> {
        let mut scored: Vec<&BufferEntry> = self.entries.iter().filter(|e| e.score.is_some()).collect();
        scored.sort_by(|a, b| {
            rank_key(a.score)
                .total_cmp(&rank_key(b.score))
                .then(a.sequence.cmp(&b.sequence))
        });
        scored.truncate(k);
        scored
    }

    pub fn best(&self) -> Option<&BufferEntry> {
        self.entries
            .iter()
            .filter(|e| e.score.is_some())
            .min_by(|a, b| {
                rank_key(a.score)
                    .total_cmp(&rank_key(b.score))
                    .then(a.sequence.cmp(&b.sequence))
            })
    }

    /// One JSON object per line, in sequence order. Empty buffer, empty
    /// output.
    pub fn snapshot(&self) -> String {
        let mut ordered: Vec<&BufferEntry> = self.entries.iter().collect();
        ordered.sort_by_key(|e| e.sequence);
        let mut out = String::new();
        for e in ordered {
            let rec = Record {
                canonical_text: e.canonical_text.clone(),
                score: e.score,
                params: e.params,
                iteration_found: e.iteration_found,
                sequence: e.sequence,
            };
            out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn restore(text: &str, variables: Vec<String>) -> Result<ExperienceBuffer, SnapshotError> {
        let mut buf = ExperienceBuffer::new(variables);
        let mut last_seq: Option<u64> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| SnapshotError::Line { line: line_no, msg };
            let rec: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let expr = parse(&rec.canonical_text, &buf.variables).map_err(|e| err(e.to_string()))?;
            if last_seq.is_some_and(|s| rec.sequence <= s) {
                return Err(err("sequence numbers must strictly increase".into()));
            }
            if buf.index.contains_key(&rec.canonical_text) {
                return Err(err(format!("duplicate skeleton `{}`", rec.canonical_text)));
            }
            if rec.score.is_some_and(|s| !(s >= 0.0)) {
                return Err(err("score must be a non-negative number".into()));
            }
            last_seq = Some(rec.sequence);
            buf.index.insert(rec.canonical_text.clone(), buf.entries.len());
            buf.entries.push(BufferEntry {
                canonical_text: rec.canonical_text,
                expr,
                score: rec.score,
                params: rec.params,
                iteration_found: rec.iteration_found,
                sequence: rec.sequence,
            });
            buf.next_sequence = rec.sequence + 1;
        }
        Ok(buf)
    }
}
