//! Recomputes every reported number of an experiment directory from its
//! per-run traces.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::experiment::{
    pick_best_single, runs_from_jsonl, ExperimentPlan, ExperimentResults, SingleResult, PLAN_FILE,
    RESULTS_FILE,
};
use super::report::{improvement_pct, mean_std, ResultTable, Summary, HEATMAP_CSV, TABLE_CSV};
use crate::profile::RewardDistribution;
use crate::runtime::RunResult;

pub const AUDIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {reason}")]
    Malformed { file: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditCheck {
    pub label: String,
    pub reported: f64,
    pub recomputed: f64,
}

impl AuditCheck {
    pub fn ok(&self) -> bool {
        self.reported == self.recomputed
            || (self.reported - self.recomputed).abs() <= AUDIT_TOLERANCE
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
    /// Mismatches that are not numeric: wrong labels, missing rows, bad timelines.
    pub problems: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.problems.is_empty() && self.checks.iter().all(AuditCheck::ok)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = self.problems.clone();
        out.extend(self.checks.iter().filter(|c| !c.ok()).map(|c| {
            format!(
                "{}: reported {} but traces give {}",
                c.label, c.reported, c.recomputed
            )
        }));
        out
    }

    fn check(&mut self, label: impl Into<String>, reported: f64, recomputed: f64) {
        self.checks.push(AuditCheck {
            label: label.into(),
            reported,
            recomputed,
        });
    }

    fn optional(&mut self, label: &str, reported: Option<f64>, recomputed: Option<f64>) {
        match (reported, recomputed) {
            (Some(a), Some(b)) => self.check(label, a, b),
            (None, None) => {}
            _ => self
                .problems
                .push(format!("{label}: defined on one side only")),
        }
    }
}

struct Dir {
    root: PathBuf,
    runs: BTreeMap<String, Vec<RunResult>>,
}

impl Dir {
    fn read(&self, relative: &str) -> Result<String, AuditError> {
        let path = self.root.join(relative);
        fs::read_to_string(&path).map_err(|source| AuditError::Io { path, source })
    }

    fn runs(&mut self, relative: &str) -> Result<&[RunResult], AuditError> {
        if !self.runs.contains_key(relative) {
            let runs =
                runs_from_jsonl(&self.read(relative)?).map_err(|e| AuditError::Malformed {
                    file: relative.to_string(),
                    reason: e.to_string(),
                })?;
            self.runs.insert(relative.to_string(), runs);
        }
        Ok(&self.runs[relative])
    }
}

fn trace_returns(runs: &[RunResult]) -> Vec<f64> {
    runs.iter()
        .map(|r| r.trace.steps.iter().map(|s| s.reward).sum())
        .collect()
}

fn summary_of(file: &str, values: &[f64]) -> Result<Summary, AuditError> {
    mean_std(values).map_err(|e| AuditError::Malformed {
        file: file.to_string(),
        reason: e.to_string(),
    })
}

fn parse_number(file: &str, field: &str) -> Result<Option<f64>, AuditError> {
    match field {
        "" | "n/a" => Ok(None),
        text => text.parse().map(Some).map_err(|_| AuditError::Malformed {
            file: file.to_string(),
            reason: format!("bad number `{text}`"),
        }),
    }
}

fn check_runs(report: &mut AuditReport, file: &str, runs: &[RunResult], k: u32, ensemble: bool) {
    for (i, (run, total)) in runs.iter().zip(trace_returns(runs)).enumerate() {
        report.check(format!("{file} run {i} return"), run.episode_return, total);
        if run.categorizer_call_count != run.situation_timeline.len() as u64 {
            report.problems.push(format!(
                "{file} run {i}: call count disagrees with the situation timeline"
            ));
        }
        if ensemble {
            let expected = (run.trace.len() as u64).div_ceil(u64::from(k));
            let on_cadence = run.situation_timeline.iter().all(|(s, _)| s % k == 0);
            if run.categorizer_call_count != expected || !on_cadence {
                report.problems.push(format!(
                    "{file} run {i}: categorizations are not every {k} steps"
                ));
            }
        }
    }
}

/// Every selection must be the profile's best agent for the situation seen
/// at the same step.
fn check_selections(
    report: &mut AuditReport,
    file: &str,
    runs: &[RunResult],
    dist: &RewardDistribution,
    candidates: &[String],
) {
    for (i, run) in runs.iter().enumerate() {
        for (step, agent) in &run.selection_timeline {
            let situation = run
                .situation_timeline
                .iter()
                .find(|(s, _)| s == step)
                .map(|(_, id)| *id);
            let expected = situation.and_then(|s| dist.best_agent_for(s, candidates).ok());
            if expected.as_deref() != Some(agent.as_str()) {
                report.problems.push(format!(
                    "{file} run {i} step {step}: selected {agent}, profile says {expected:?}"
                ));
            }
        }
    }
}

pub fn audit(dir: &Path) -> Result<AuditReport, AuditError> {
    let mut files = Dir {
        root: dir.to_path_buf(),
        runs: BTreeMap::new(),
    };
    let results = ExperimentResults::from_json(&files.read(RESULTS_FILE)?).map_err(|e| {
        AuditError::Malformed {
            file: RESULTS_FILE.into(),
            reason: e.to_string(),
        }
    })?;
    let plan =
        ExperimentPlan::from_json(&files.read(PLAN_FILE)?).map_err(|e| AuditError::Malformed {
            file: PLAN_FILE.into(),
            reason: e.to_string(),
        })?;
    let mut report = AuditReport::default();

    let mut singles = Vec::new();
    for single in &results.singles {
        let runs = files.runs(&single.trace_file)?.to_vec();
        check_runs(&mut report, &single.trace_file, &runs, results.k, false);
        let values = trace_returns(&runs);
        let mean = summary_of(&single.trace_file, &values)?.mean;
        report.check(format!("{} mean", single.agent_id), single.mean, mean);
        singles.push((
            SingleResult {
                mean,
                ..single.clone()
            },
            values,
        ));
    }
    let recomputed_singles: Vec<SingleResult> = singles.iter().map(|(s, _)| s.clone()).collect();
    let best = pick_best_single(&recomputed_singles).map(|s| s.agent_id.clone());
    if results.heatmap.is_none() && best != results.best_single_agent {
        report.problems.push(format!(
            "best single agent is {best:?}, reported {:?}",
            results.best_single_agent
        ));
    }

    let mut profiles = Vec::new();
    for round in &results.rounds {
        let text = files.read(&round.profile_file)?;
        let dist =
            RewardDistribution::from_json(&text, Some(&results.catalog_hash)).map_err(|e| {
                AuditError::Malformed {
                    file: round.profile_file.clone(),
                    reason: e.to_string(),
                }
            })?;
        profiles.push(dist);
    }

    let methods: Vec<String> = plan.methods.iter().map(|m| m.token().to_string()).collect();
    let mut recomputed = ResultTable::new(methods);
    for row in &results.rows {
        let runs = files.runs(&row.trace_file)?.to_vec();
        let ensemble = row.method == super::report::ENSEMBLE_METHOD;
        check_runs(&mut report, &row.trace_file, &runs, results.k, ensemble);
        let values = trace_returns(&runs);
        if values.len() != row.returns.len() {
            report.problems.push(format!(
                "{}: {} runs logged, {} reported",
                row.method,
                values.len(),
                row.returns.len()
            ));
        }
        for (i, (a, b)) in row.returns.iter().zip(&values).enumerate() {
            report.check(format!("{} return {i}", row.method), *a, *b);
        }
        let summary = summary_of(&row.trace_file, &values)?;
        report.check(format!("{} mean", row.method), row.mean, summary.mean);
        report.check(format!("{} std", row.method), row.std, summary.std);
        report.check(format!("{} n", row.method), row.n as f64, summary.n as f64);
        recomputed.insert(&results.env_name, &row.method, summary);

        if row.method == "best-single" {
            let slot = singles
                .iter()
                .find(|(s, _)| Some(&s.agent_id) == best.as_ref());
            if slot.map(|(_, v)| v) != Some(&values) {
                report
                    .problems
                    .push("best-single traces are not the best agent's traces".into());
            }
        }
        if ensemble {
            let mut offset = 0;
            for (round, dist) in results.rounds.iter().zip(&profiles) {
                let count = round
                    .eval_seeds
                    .len()
                    .min(runs.len().saturating_sub(offset));
                check_selections(
                    &mut report,
                    &row.trace_file,
                    &runs[offset..offset + count],
                    dist,
                    &round.agents,
                );
                offset += count;
            }
        }
    }

    if !results.rows.is_empty() {
        let csv = files.read(TABLE_CSV)?;
        let mut seen = 0;
        for line in csv.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(AuditError::Malformed {
                    file: TABLE_CSV.into(),
                    reason: format!("bad line `{line}`"),
                });
            }
            let (env, method) = (fields[0], fields[1]);
            let Some(row) = recomputed.get(env, method) else {
                report
                    .problems
                    .push(format!("{TABLE_CSV}: unexpected row ({env}, {method})"));
                continue;
            };
            seen += 1;
            let label = |what: &str| format!("{TABLE_CSV} {method} {what}");
            report.optional(
                &label("mean"),
                parse_number(TABLE_CSV, fields[2])?,
                Some(row.mean),
            );
            report.optional(
                &label("std"),
                parse_number(TABLE_CSV, fields[3])?,
                Some(row.std),
            );
            report.optional(
                &label("n"),
                parse_number(TABLE_CSV, fields[4])?,
                Some(row.n as f64),
            );
            let mark = match recomputed.marks(env) {
                Some((b, _)) if b == method => "best",
                Some((_, s)) if s == method => "second",
                _ => "",
            };
            if fields[5] != mark {
                report.problems.push(format!(
                    "{TABLE_CSV} {method}: marked `{}`, traces give `{mark}`",
                    fields[5]
                ));
            }
            if method == super::report::ENSEMBLE_METHOD {
                let expected = recomputed.ensemble_improvement(env).flatten();
                report.optional(
                    &label("improvement"),
                    parse_number(TABLE_CSV, fields[6])?,
                    expected,
                );
            }
        }
        if seen != recomputed.rows.len() {
            report.problems.push(format!(
                "{TABLE_CSV}: {seen} rows, expected {}",
                recomputed.rows.len()
            ));
        }
    }

    if let Some(heatmap) = &results.heatmap {
        let dist = profiles.first();
        let mut cells = Vec::new();
        for source in &heatmap.cells {
            let runs = files.runs(&source.trace_file)?.to_vec();
            check_runs(&mut report, &source.trace_file, &runs, results.k, true);
            if let Some(dist) = dist {
                check_selections(&mut report, &source.trace_file, &runs, dist, &source.agents);
            }
            let ensemble_mean = summary_of(&source.trace_file, &trace_returns(&runs))?.mean;
            let baseline_mean = source
                .agents
                .iter()
                .filter_map(|a| {
                    recomputed_singles
                        .iter()
                        .find(|s| &s.agent_id == a)
                        .map(|s| s.mean)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            cells.push((
                source.x,
                source.y,
                ensemble_mean,
                baseline_mean,
                improvement_pct(ensemble_mean, baseline_mean),
            ));
        }
        let csv = files.read(HEATMAP_CSV)?;
        let rows: Vec<&str> = csv
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .collect();
        if rows.len() != cells.len() {
            report.problems.push(format!(
                "{HEATMAP_CSV}: {} rows, expected {}",
                rows.len(),
                cells.len()
            ));
        }
        for line in rows {
            let fields: Vec<Option<f64>> = line
                .split(',')
                .map(|f| parse_number(HEATMAP_CSV, f))
                .collect::<Result<_, _>>()?;
            if fields.len() != 5 {
                return Err(AuditError::Malformed {
                    file: HEATMAP_CSV.into(),
                    reason: format!("bad line `{line}`"),
                });
            }
            let (Some(x), Some(y)) = (fields[0], fields[1]) else {
                report
                    .problems
                    .push(format!("{HEATMAP_CSV}: missing coordinates in `{line}`"));
                continue;
            };
            let Some(cell) = cells.iter().find(|c| c.0 == x && c.1 == y) else {
                report
                    .problems
                    .push(format!("{HEATMAP_CSV}: unexpected cell ({x}, {y})"));
                continue;
            };
            let label = |what: &str| format!("{HEATMAP_CSV} ({x}, {y}) {what}");
            report.optional(&label("improvement"), fields[2], cell.4);
            report.optional(&label("ensemble mean"), fields[3], Some(cell.2));
            report.optional(&label("baseline mean"), fields[4], Some(cell.3));
        }
    }
    Ok(report)
}
