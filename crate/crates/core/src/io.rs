//! Plain-text formats for measures, costs, plans, allocations and reports.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! writer/parser pair reproduces the in-memory object exactly. Blank lines and
//! lines starting with `#` are ignored by the parsers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationMap, Assignment, PipelineReport};
use crate::cost::ConcaveCost;
use crate::domain::PeriodicDomain;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::solver::{PlanEntry, TransportPlan};
use crate::verification::CheckReport;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(k, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (k + 1, l.split_whitespace().collect()))
    })
}

fn num<T: std::str::FromStr>(line: usize, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse number '{tok}'")))
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// `domain d L n` followed by `x_1 … x_d mass` per atom in canonical order.
pub fn write_measure(mu: &DiscreteMeasure) -> String {
    let dom = mu.domain();
    let mut out = format!("domain {} {} {}\n", dom.dim(), dom.side(), dom.resolution());
    for (x, m) in mu.atoms() {
        out.push_str(&join(x.iter().copied().chain([m])));
        out.push('\n');
    }
    out
}

pub fn parse_measure(text: &str) -> Result<DiscreteMeasure> {
    let mut lines = content_lines(text);
    let (line, head) = lines.next().ok_or_else(|| parse_err(1, "missing domain header"))?;
    if head.len() != 4 || head[0] != "domain" {
        return Err(parse_err(line, "expected 'domain d L n'"));
    }
    let domain = PeriodicDomain::new(num(line, head[1])?, num(line, head[2])?, num(line, head[3])?)?;
    let d = domain.dim();
    let mut atoms = Vec::new();
    for (line, toks) in lines {
        if toks.len() != d + 1 {
            return Err(parse_err(
                line,
                format!("expected {} numbers, found {}", d + 1, toks.len()),
            ));
        }
        let vals = toks.iter().map(|t| num::<f64>(line, t)).collect::<Result<Vec<_>>>()?;
        atoms.push((vals[..d].to_vec(), vals[d]));
    }
    DiscreteMeasure::new(domain, atoms)
}

/// `breakpoint value` lines, then `final_slope s`.
pub fn write_cost(theta: &ConcaveCost) -> String {
    let mut out = String::new();
    for (r, v) in theta.breakpoints().iter().zip(theta.values()) {
        out.push_str(&format!("{r} {v}\n"));
    }
    out.push_str(&format!("final_slope {}\n", theta.final_slope()));
    out
}

pub fn parse_cost(text: &str) -> Result<ConcaveCost> {
    let mut breakpoints = Vec::new();
    let mut values = Vec::new();
    let mut slope = None;
    for (line, toks) in content_lines(text) {
        if slope.is_some() {
            return Err(parse_err(line, "content after final_slope"));
        }
        match toks.as_slice() {
            ["final_slope", s] => slope = Some(num::<f64>(line, s)?),
            [r, v] => {
                breakpoints.push(num(line, r)?);
                values.push(num(line, v)?);
            }
            _ => return Err(parse_err(line, "expected 'breakpoint value' or 'final_slope s'")),
        }
    }
    let slope = slope.ok_or_else(|| parse_err(text.lines().count().max(1), "missing final_slope"))?;
    ConcaveCost::new(breakpoints, values, slope)
}

/// Plan entries together with the files holding its measures and cost.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanFile {
    pub source: String,
    pub target: String,
    pub cost: String,
    pub entries: Vec<PlanEntry>,
}

impl PlanFile {
    pub fn new(plan: &TransportPlan, source: &str, target: &str, cost: &str) -> Self {
        Self {
            source: source.to_string(),
            target: target.to_string(),
            cost: cost.to_string(),
            entries: plan.entries().to_vec(),
        }
    }

    /// Attaches the measures the indices refer to.
    pub fn into_plan(self, source: DiscreteMeasure, target: DiscreteMeasure) -> Result<TransportPlan> {
        if source.domain() != target.domain() {
            return Err(Error::DomainMismatch);
        }
        for e in &self.entries {
            if e.source >= source.len() || e.target >= target.len() {
                return Err(Error::InvalidMeasure(format!(
                    "plan entry ({}, {}) out of range",
                    e.source, e.target
                )));
            }
        }
        Ok(TransportPlan::new(source, target, self.entries))
    }
}

/// `source PATH`, `target PATH`, `cost PATH`, then `src dst mass` lines.
pub fn write_plan(plan: &PlanFile) -> String {
    let mut out = format!("source {}\ntarget {}\ncost {}\n", plan.source, plan.target, plan.cost);
    for e in &plan.entries {
        out.push_str(&format!("{} {} {}\n", e.source, e.target, e.mass));
    }
    out
}

pub fn parse_plan(text: &str) -> Result<PlanFile> {
    let mut refs: [Option<String>; 3] = [None, None, None];
    let mut entries = Vec::new();
    for (line, toks) in content_lines(text) {
        let slot = ["source", "target", "cost"].iter().position(|&k| k == toks[0]);
        match (slot, toks.len()) {
            (Some(k), 2) => refs[k] = Some(toks[1].to_string()),
            (None, 3) => entries.push(PlanEntry {
                source: num(line, toks[0])?,
                target: num(line, toks[1])?,
                mass: num(line, toks[2])?,
            }),
            _ => return Err(parse_err(line, "expected a reference or 'src dst mass'")),
        }
    }
    let [source, target, cost] = refs;
    let missing = |name: &str| parse_err(1, format!("missing '{name}' reference"));
    Ok(PlanFile {
        source: source.ok_or_else(|| missing("source"))?,
        target: target.ok_or_else(|| missing("target"))?,
        cost: cost.ok_or_else(|| missing("cost"))?,
        entries,
    })
}

/// `src_index tx_1 … tx_d f` per assigned atom.
pub fn write_allocation(map: &AllocationMap) -> String {
    let mut out = String::new();
    for a in map.assignments() {
        out.push_str(&format!(
            "{} {}\n",
            a.source,
            join(a.target.iter().copied().chain([a.fraction]))
        ));
    }
    out
}

/// Reads an allocation defined on the atoms of `source`.
pub fn parse_allocation(text: &str, source: DiscreteMeasure) -> Result<AllocationMap> {
    let d = source.domain().dim();
    let mut assignments = Vec::new();
    for (line, toks) in content_lines(text) {
        if toks.len() != d + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", d + 2, toks.len()),
            ));
        }
        let vals = toks[1..]
            .iter()
            .map(|t| num::<f64>(line, t))
            .collect::<Result<Vec<_>>>()?;
        assignments.push(Assignment {
            source: num(line, toks[0])?,
            target: vals[..d].to_vec(),
            fraction: vals[d],
        });
    }
    AllocationMap::new(source, assignments)
}

/// `key = value` document with the report's fixed key names.
pub fn write_report(report: &PipelineReport) -> Result<String> {
    toml::to_string(report).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_report(text: &str) -> Result<PipelineReport> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// All checks of one experiment. Diagnostics are advisory and do not affect
/// `passed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub passed: bool,
    #[serde(rename = "check", default)]
    pub checks: Vec<CheckReport>,
    #[serde(rename = "diagnostic", default)]
    pub diagnostics: Vec<CheckReport>,
}

impl VerificationSummary {
    pub fn new(checks: Vec<CheckReport>, diagnostics: Vec<CheckReport>) -> Self {
        Self {
            passed: checks.iter().all(|c| c.passed),
            checks,
            diagnostics,
        }
    }
}

pub fn write_summary(summary: &VerificationSummary) -> Result<String> {
    toml::to_string(summary).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_summary(text: &str) -> Result<VerificationSummary> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    parse_measure(&fs::read_to_string(path)?)
}

pub fn read_cost(path: &Path) -> Result<ConcaveCost> {
    parse_cost(&fs::read_to_string(path)?)
}
