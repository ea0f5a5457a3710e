//! Evolutionary instruction search.
//!
//! Each generation asks the proposal backend for `breadth` variants of every
//! surviving instruction, scores the new ones, and keeps the `keep_top` best
//! seen so far. Variants that fail to parse, or repeat an earlier instruction,
//! are skipped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenRequest, ThoughtGenerator};
use crate::ops::template::{vars, Template, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoproConfig {
    pub breadth: u32,
    pub depth: u32,
    pub keep_top: usize,
    pub temperature: f64,
}

impl Default for CoproConfig {
    fn default() -> Self {
        CoproConfig { breadth: 8, depth: 6, keep_top: 8, temperature: 1.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub instruction: String,
    pub score: f64,
    pub depth: u32,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoproResult {
    pub best: usize,
    pub candidates: Vec<Candidate>,
    pub skipped: usize,
}

impl CoproResult {
    pub fn best_candidate(&self) -> &Candidate {
        &self.candidates[self.best]
    }

    /// Ids from the seed down to the best candidate.
    pub fn lineage(&self) -> Vec<usize> {
        let mut out = vec![self.best];
        while let Some(p) = self.candidates[*out.last().expect("non-empty")].parent {
            out.push(p);
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CoproError {
    #[error("breadth and keep_top must be at least 1")]
    InvalidConfig,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Extracts the instruction from a proposal. `None` when nothing usable remains.
pub fn parse_proposal(text: &str) -> Option<String> {
    let body = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("Instruction:"))
        .map(str::to_string)
        .unwrap_or_else(|| text.to_string());
    let s = body.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim();
    (!s.is_empty()).then(|| s.to_string())
}

/// Ranks by score, ties to the older candidate.
fn ranked(cands: &[Candidate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cands.len()).filter(|&i| !cands[i].score.is_nan()).collect();
    idx.sort_by(|&a, &b| cands[b].score.total_cmp(&cands[a].score).then(a.cmp(&b)));
    idx
}

pub fn optimize_prompt_copro(
    seed_instruction: &str,
    cfg: &CoproConfig,
    metric: &dyn Fn(&str) -> f64,
    proposer: &dyn ThoughtGenerator,
    template: &Template,
) -> Result<CoproResult, CoproError> {
    if cfg.breadth == 0 || cfg.keep_top == 0 {
        return Err(CoproError::InvalidConfig);
    }
    let mut cands = vec![Candidate { id: 0, instruction: seed_instruction.to_string(), score: metric(seed_instruction), depth: 0, parent: None }];
    let mut survivors = vec![0];
    let mut skipped = 0;
    for gen in 1..=cfg.depth {
        for &s in &survivors {
            let messages = template.render(&vars([("instruction", cands[s].instruction.clone())]))?;
            // Fresh ordinals per generation so re-expanded survivors get new variants.
            let req = GenRequest::new(messages).with_n(cfg.breadth).with_temperature(cfg.temperature).with_offset((gen - 1) * cfg.breadth);
            let resp = proposer.generate(&req)?;
            for text in &resp.texts {
                match parse_proposal(text) {
                    Some(ins) if !cands.iter().any(|c| c.instruction == ins) => {
                        let score = metric(&ins);
                        cands.push(Candidate { id: cands.len(), instruction: ins, score, depth: gen, parent: Some(s) });
                    }
                    _ => skipped += 1,
                }
            }
        }
        survivors = ranked(&cands).into_iter().take(cfg.keep_top).collect();
        log::debug!("copro generation {gen}: {} candidates, best {:?}", cands.len(), survivors.first().map(|&i| cands[i].score));
    }
    let best = ranked(&cands).first().copied().unwrap_or(0);
    Ok(CoproResult { best, candidates: cands, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, Responder};
    use crate::ops::template::PromptLibrary;

    const BETTER: &str = "Sort the numbers ascending and double-check every adjacent pair.";

    /// Variant `k` of an instruction is "<instruction> v<k>"; ordinal 5 of the seed's prompt is the known-better one.
    struct Script;

    impl Responder for Script {
        fn respond(&self, req: &GenRequest, ordinal: u32) -> Result<String, BackendError> {
            let user = &req.messages.last().unwrap().content;
            let cur = user.lines().nth(1).unwrap_or("").to_string();
            Ok(match ordinal {
                5 if cur == "Sort." => format!("Instruction: {BETTER}"),
                6 => "   ".to_string(),
                k => format!("Instruction: \"{cur} v{k}\""),
            })
        }
    }

    fn metric(ins: &str) -> f64 {
        if ins == BETTER {
            10.0
        } else {
            // Longer variants score slightly higher, but never above the known-better one.
            (ins.len() as f64).min(200.0) / 100.0
        }
    }

    fn run(cfg: CoproConfig) -> CoproResult {
        let backend = MockBackend::new("script", Script);
        let lib = PromptLibrary::default();
        optimize_prompt_copro("Sort.", &cfg, &metric, &backend, lib.get("copro_propose").unwrap()).unwrap()
    }

    #[test]
    fn depth_zero_returns_seed() {
        let r = run(CoproConfig { depth: 0, ..Default::default() });
        assert_eq!(r.best_candidate().instruction, "Sort.");
        assert_eq!(r.best_candidate().depth, 0);
        assert_eq!(r.candidates.len(), 1);
    }

    #[test]
    fn known_better_instruction_wins() {
        let r = run(CoproConfig { depth: 2, ..Default::default() });
        let b = r.best_candidate();
        assert_eq!(b.instruction, BETTER);
        assert_eq!(b.depth, 1);
        assert_eq!(r.lineage(), vec![0, b.id]);
        assert!(r.skipped > 0);
    }

    #[test]
    fn paper_scale_configuration_runs() {
        let r = run(CoproConfig { breadth: 8, depth: 6, keep_top: 8, temperature: 1.6 });
        assert_eq!(r.best_candidate().instruction, BETTER);
        assert!(r.candidates.iter().any(|c| c.depth == 6));
    }

    #[test]
    fn parsing() {
        assert_eq!(parse_proposal("Instruction: 'Do it.'"), Some("Do it.".into()));
        assert_eq!(parse_proposal("preamble\nInstruction: x"), Some("x".into()));
        assert_eq!(parse_proposal("plain"), Some("plain".into()));
        assert_eq!(parse_proposal("Instruction:  "), None);
    }

    #[test]
    fn zero_breadth_is_rejected() {
        let backend = MockBackend::new("script", Script);
        let lib = PromptLibrary::default();
        let cfg = CoproConfig { breadth: 0, ..Default::default() };
        assert_eq!(optimize_prompt_copro("x", &cfg, &metric, &backend, lib.get("copro_propose").unwrap()).unwrap_err(), CoproError::InvalidConfig);
    }
}
