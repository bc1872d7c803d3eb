//! Human-effort cost model, in seconds.
//!
//! Three edit actions carry a cost: verifying a prediction (`c_v`), picking a
//! correction from a drop-down of suggestions (`c_d`) and typing a word
//! (`c_t`). The naive baselines correct every flagged instance on its own;
//! batch cost charges the actions recorded in an [`ActionLog`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::correction::{ActionKind, ActionLog};
use crate::corpus::Corpus;
use crate::lexicon::{Categories, Dictionary, SuggestParams};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CostError {
    #[error("costs must satisfy 0 <= c_v <= c_d <= c_t (got {c_v}, {c_d}, {c_t})")]
    Unordered { c_v: f64, c_d: f64, c_t: f64 },
    #[error("costs must be finite and non-negative")]
    Invalid,
    #[error("relative cost needs a positive baseline (got {0})")]
    ZeroBaseline(f64),
    #[error("instance {0:?} has no ground truth")]
    MissingGroundTruth(String),
    #[error("cannot parse cost triple {0:?}; expected c_v,c_d,c_t")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_v: f64,
    pub c_d: f64,
    pub c_t: f64,
}

impl Default for CostModel {
    /// One second to verify, five to pick a suggestion, fifteen to type.
    fn default() -> Self {
        Self {
            c_v: 1.0,
            c_d: 5.0,
            c_t: 15.0,
        }
    }
}

impl CostModel {
    pub fn new(c_v: f64, c_d: f64, c_t: f64) -> Result<Self, CostError> {
        let m = Self::unchecked(c_v, c_d, c_t)?;
        if !(c_v <= c_d && c_d <= c_t) {
            return Err(CostError::Unordered { c_v, c_d, c_t });
        }
        Ok(m)
    }

    /// Accepts any non-negative ordering, logging a warning when it is unusual.
    pub fn unchecked(c_v: f64, c_d: f64, c_t: f64) -> Result<Self, CostError> {
        if [c_v, c_d, c_t].iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(CostError::Invalid);
        }
        if !(c_v <= c_d && c_d <= c_t) {
            log::warn!("cost model ({c_v}, {c_d}, {c_t}) is not ordered c_v <= c_d <= c_t");
        }
        Ok(Self { c_v, c_d, c_t })
    }

    pub fn cost_of(&self, kind: ActionKind) -> f64 {
        match kind {
            ActionKind::Verify => self.c_v,
            ActionKind::Select => self.c_d,
            ActionKind::Type => self.c_t,
        }
    }

    /// Parses `"1,5,15"`.
    pub fn parse(s: &str, allow_unordered: bool) -> Result<Self, CostError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CostError::Parse(s.to_owned()))?;
        let [c_v, c_d, c_t] = parts[..] else {
            return Err(CostError::Parse(s.to_owned()));
        };
        if allow_unordered {
            Self::unchecked(c_v, c_d, c_t)
        } else {
            Self::new(c_v, c_d, c_t)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub v_t: usize,
    pub v_d: usize,
    pub v_v: usize,
    pub typing_seconds: f64,
    pub selection_seconds: f64,
    pub verification_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub method_tag: String,
    pub absolute_seconds: f64,
    pub breakdown: CostBreakdown,
    pub baseline_typing_seconds: f64,
    pub relative_to_typing: Option<f64>,
}

impl CostReport {
    /// Flat `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.kv_pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn kv_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("method_tag", self.method_tag.clone()),
            ("absolute_seconds", self.absolute_seconds.to_string()),
            ("v_t", self.breakdown.v_t.to_string()),
            ("v_d", self.breakdown.v_d.to_string()),
            ("v_v", self.breakdown.v_v.to_string()),
            ("typing_seconds", self.breakdown.typing_seconds.to_string()),
            ("selection_seconds", self.breakdown.selection_seconds.to_string()),
            ("verification_seconds", self.breakdown.verification_seconds.to_string()),
            ("baseline_typing_seconds", self.baseline_typing_seconds.to_string()),
            (
                "relative_to_typing",
                self.relative_to_typing
                    .map_or_else(|| "undefined".to_owned(), |r| format!("{r:.6}")),
            ),
        ]
    }

    pub fn from_kv(text: &str) -> Option<CostReport> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let num = |k: &str| map.get(k).and_then(|v| v.parse::<f64>().ok());
        let int = |k: &str| map.get(k).and_then(|v| v.parse::<usize>().ok());
        Some(CostReport {
            method_tag: map.get("method_tag")?.to_string(),
            absolute_seconds: num("absolute_seconds")?,
            breakdown: CostBreakdown {
                v_t: int("v_t")?,
                v_d: int("v_d")?,
                v_v: int("v_v")?,
                typing_seconds: num("typing_seconds")?,
                selection_seconds: num("selection_seconds")?,
                verification_seconds: num("verification_seconds")?,
            },
            baseline_typing_seconds: num("baseline_typing_seconds")?,
            relative_to_typing: num("relative_to_typing"),
        })
    }
}

/// Typing every true error and verifying every false alarm: `|ETP| c_t + |EFP| c_v`.
pub fn naive_typing_cost(categories: &Categories, model: &CostModel) -> f64 {
    categories.etp.len() as f64 * model.c_t + categories.efp.len() as f64 * model.c_v
}

/// Splits ETP into those whose truth is offered as a suggestion for the
/// prediction (`ETP_d`) and the rest (`ETP_t`). Returns `(|ETP_t|, |ETP_d|)`.
pub fn split_etp(
    categories: &Categories,
    corpus: &Corpus,
    dict: &Dictionary,
    params: SuggestParams,
) -> Result<(usize, usize), CostError> {
    let mut selectable = 0;
    for &i in &categories.etp {
        let w = &corpus.instances()[i];
        let gt = w
            .ground_truth
            .as_deref()
            .ok_or_else(|| CostError::MissingGroundTruth(w.id.clone()))?;
        if dict.suggestion_rank(&w.prediction, gt, params).is_some() {
            selectable += 1;
        }
    }
    Ok((categories.etp.len() - selectable, selectable))
}

/// `|ETP_t| c_t + |ETP_d| c_d + |EFP| c_v`.
pub fn naive_selection_cost(
    categories: &Categories,
    corpus: &Corpus,
    dict: &Dictionary,
    model: &CostModel,
    params: SuggestParams,
) -> Result<f64, CostError> {
    let (typed, selected) = split_etp(categories, corpus, dict, params)?;
    Ok(typed as f64 * model.c_t + selected as f64 * model.c_d + categories.efp.len() as f64 * model.c_v)
}

/// `V_t c_t + V_d c_d + V_v c_v` from the log tallies.
pub fn batch_cost(log: &ActionLog, model: &CostModel) -> CostBreakdown {
    CostBreakdown {
        v_t: log.v_t,
        v_d: log.v_d,
        v_v: log.v_v,
        typing_seconds: log.v_t as f64 * model.c_t,
        selection_seconds: log.v_d as f64 * model.c_d,
        verification_seconds: log.v_v as f64 * model.c_v,
    }
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.typing_seconds + self.selection_seconds + self.verification_seconds
    }
}

pub fn relative_cost(cost: f64, baseline: f64) -> Result<f64, CostError> {
    if baseline > 0.0 {
        Ok(cost / baseline)
    } else {
        Err(CostError::ZeroBaseline(baseline))
    }
}

pub fn report(method_tag: impl Into<String>, log: &ActionLog, model: &CostModel, baseline: f64) -> CostReport {
    let breakdown = batch_cost(log, model);
    let absolute = breakdown.total();
    CostReport {
        method_tag: method_tag.into(),
        absolute_seconds: absolute,
        breakdown,
        baseline_typing_seconds: baseline,
        relative_to_typing: relative_cost(absolute, baseline).ok(),
    }
}

/// One row per method tag, one column per (mode, dictionary) pair; cells hold
/// relative-to-typing costs.
pub fn render_table(cells: &[(String, String, f64)]) -> String {
    let mut rows: Vec<&str> = Vec::new();
    let mut cols: Vec<&str> = Vec::new();
    for (r, c, _) in cells {
        if !rows.contains(&r.as_str()) {
            rows.push(r);
        }
        if !cols.contains(&c.as_str()) {
            cols.push(c);
        }
    }
    let row_w = rows.iter().map(|r| r.len()).max().unwrap_or(0).max("method".len());
    let col_w: Vec<usize> = cols.iter().map(|c| c.len().max(6)).collect();
    let mut out = format!("{:<row_w$}", "method");
    for (c, w) in cols.iter().zip(&col_w) {
        let _ = write!(out, " | {c:>w$}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(out.trim_end().len()));
    out.push('\n');
    for r in &rows {
        let _ = write!(out, "{r:<row_w$}");
        for (c, w) in cols.iter().zip(&col_w) {
            match cells.iter().find(|(rr, cc, _)| rr == r && cc == c) {
                Some((_, _, v)) => {
                    let _ = write!(out, " | {v:>w$.3}");
                }
                None => {
                    let _ = write!(out, " | {:>w$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
