//! Summary statistics and the table / heatmap files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENSEMBLE_METHOD: &str = "llm-ens";
pub const TABLE_CSV: &str = "table.csv";
pub const TABLE_TXT: &str = "table.txt";
pub const HEATMAP_CSV: &str = "heatmap.csv";
pub const HEATMAP_TXT: &str = "heatmap.txt";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no values to summarize")]
    Empty,
    #[error("need at least two methods to mark, got {0}")]
    TooFewMethods(usize),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 when `n == 1`.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn single_sample(&self) -> bool {
        self.n == 1
    }
}

pub fn mean_std(values: &[f64]) -> Result<Summary, ReportError> {
    let n = values.len();
    if n == 0 {
        return Err(ReportError::Empty);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Summary { mean, std, n })
}

/// Two decimals with trailing zeros dropped: 10400 → "10400", 4159.333 → "4159.33".
pub fn format_number(value: f64) -> String {
    let text = format!("{value:.2}");
    let text = text.trim_end_matches('0').trim_end_matches('.');
    if text == "-0" {
        "0".to_string()
    } else {
        text.to_string()
    }
}

pub fn format_cell(summary: &Summary) -> String {
    format!(
        "{}({})",
        format_number(summary.mean),
        format_number(summary.std)
    )
}

/// `100 · (candidate − baseline) / baseline`; undefined for a non-positive baseline.
pub fn improvement_pct(candidate: f64, baseline: f64) -> Option<f64> {
    (baseline > 0.0).then(|| 100.0 * (candidate - baseline) / baseline)
}

pub fn format_improvement(pct: Option<f64>) -> String {
    match pct {
        Some(p) if format!("{p:.1}") == "-0.0" => "0.0".to_string(),
        Some(p) => format!("{p:.1}"),
        None => "n/a".to_string(),
    }
}

/// Highest and second-highest mean. Ties go to the lexicographically
/// smaller method name.
pub fn mark_best(row: &[(String, f64)]) -> Result<(String, String), ReportError> {
    if row.len() < 2 {
        return Err(ReportError::TooFewMethods(row.len()));
    }
    let mut ranked: Vec<&(String, f64)> = row.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok((ranked[0].0.clone(), ranked[1].0.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub env: String,
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    /// Column order for rendering.
    pub methods: Vec<String>,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(methods: Vec<String>) -> Self {
        ResultTable {
            methods,
            rows: Vec::new(),
        }
    }

    pub fn insert(&mut self, env: &str, method: &str, summary: Summary) {
        if !self.methods.iter().any(|m| m == method) {
            self.methods.push(method.to_string());
        }
        self.rows.retain(|r| !(r.env == env && r.method == method));
        self.rows.push(ResultRow {
            env: env.to_string(),
            method: method.to_string(),
            mean: summary.mean,
            std: summary.std,
            n: summary.n,
        });
    }

    pub fn get(&self, env: &str, method: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.env == env && r.method == method)
    }

    pub fn envs(&self) -> Vec<String> {
        let mut envs: Vec<String> = self.rows.iter().map(|r| r.env.clone()).collect();
        envs.sort();
        envs.dedup();
        envs
    }

    /// Rows with envs alphabetical and methods in column order.
    pub fn ordered_rows(&self) -> Vec<&ResultRow> {
        let mut out = Vec::new();
        for env in self.envs() {
            for method in &self.methods {
                out.extend(self.get(&env, method));
            }
        }
        out
    }

    pub fn marks(&self, env: &str) -> Option<(String, String)> {
        let row: Vec<(String, f64)> = self
            .methods
            .iter()
            .filter_map(|m| self.get(env, m).map(|r| (m.clone(), r.mean)))
            .collect();
        mark_best(&row).ok()
    }

    /// The ensemble's improvement over the best other method in `env`;
    /// `None` when the ensemble is absent or alone.
    pub fn ensemble_improvement(&self, env: &str) -> Option<Option<f64>> {
        let ensemble = self.get(env, ENSEMBLE_METHOD)?;
        let best_other = self
            .rows
            .iter()
            .filter(|r| r.env == env && r.method != ENSEMBLE_METHOD)
            .map(|r| r.mean)
            .max_by(f64::total_cmp)?;
        Some(improvement_pct(ensemble.mean, best_other))
    }

    pub fn merge(&mut self, other: &ResultTable) {
        for row in &other.rows {
            self.insert(
                &row.env,
                &row.method,
                Summary {
                    mean: row.mean,
                    std: row.std,
                    n: row.n,
                },
            );
        }
    }
}

fn write(path: PathBuf, text: &str) -> Result<(), ReportError> {
    fs::write(&path, text).map_err(|source| ReportError::Io { path, source })
}

pub fn render_table_csv(table: &ResultTable) -> String {
    let mut out = String::from("env,method,mean,std,n,mark,improvement_pct\n");
    for row in table.ordered_rows() {
        let mark = match table.marks(&row.env) {
            Some((best, _)) if best == row.method => "best",
            Some((_, second)) if second == row.method => "second",
            _ => "",
        };
        let improvement = match table.ensemble_improvement(&row.env) {
            Some(pct) if row.method == ENSEMBLE_METHOD => {
                pct.map_or("n/a".to_string(), |p| p.to_string())
            }
            _ => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.env, row.method, row.mean, row.std, row.n, mark, improvement
        );
    }
    out
}

/// Aligned text table: one line per env, `*` marks the best cell and `_`
/// the second best.
pub fn render_table_txt(table: &ResultTable) -> String {
    let envs = table.envs();
    let with_improvement = envs.iter().any(|e| table.ensemble_improvement(e).is_some());
    let mut header = vec!["env".to_string()];
    header.extend(table.methods.iter().cloned());
    if with_improvement {
        header.push("improvement %".to_string());
    }
    let mut lines = vec![header];
    for env in &envs {
        let marks = table.marks(env);
        let mut line = vec![env.clone()];
        for method in &table.methods {
            let cell = match table.get(env, method) {
                None => "-".to_string(),
                Some(r) => {
                    let marker = match &marks {
                        Some((best, _)) if best == method => "*",
                        Some((_, second)) if second == method => "_",
                        _ => "",
                    };
                    format!(
                        "{}{marker}",
                        format_cell(&Summary {
                            mean: r.mean,
                            std: r.std,
                            n: r.n
                        })
                    )
                }
            };
            line.push(cell);
        }
        if with_improvement {
            line.push(
                table
                    .ensemble_improvement(env)
                    .map_or("-".to_string(), format_improvement),
            );
        }
        lines.push(line);
    }
    align(&lines)
}

fn align(lines: &[Vec<String>]) -> String {
    let columns = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns)
        .map(|c| {
            lines
                .iter()
                .filter_map(|l| l.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for line in lines {
        let padded: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    }
    out
}

pub fn emit_table(table: &ResultTable, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(dir.join(TABLE_CSV), &render_table_csv(table))?;
    write(dir.join(TABLE_TXT), &render_table_txt(table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub x: f64,
    pub y: f64,
    pub ensemble_mean: f64,
    pub baseline_mean: f64,
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub parameter: String,
    pub axis_x: Vec<f64>,
    pub axis_y: Vec<f64>,
    pub cells: Vec<HeatmapCell>,
}

impl HeatmapGrid {
    pub fn cell(&self, x: f64, y: f64) -> Option<&HeatmapCell> {
        self.cells.iter().find(|c| c.x == x && c.y == y)
    }
}

pub fn render_heatmap_csv(grid: &HeatmapGrid) -> String {
    let mut out = String::from("x,y,improvement_pct,ensemble_mean,baseline_mean\n");
    for &x in &grid.axis_x {
        for &y in &grid.axis_y {
            if let Some(c) = grid.cell(x, y) {
                let pct = c
                    .improvement_pct
                    .map_or("n/a".to_string(), |p| p.to_string());
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    c.x, c.y, pct, c.ensemble_mean, c.baseline_mean
                );
            }
        }
    }
    out
}

/// Rows are y values, columns x values, cells improvement percentages.
pub fn render_heatmap_txt(grid: &HeatmapGrid) -> String {
    let mut header = vec![format!("{} (y \\ x)", grid.parameter)];
    header.extend(grid.axis_x.iter().map(|x| x.to_string()));
    let mut lines = vec![header];
    for &y in &grid.axis_y {
        let mut line = vec![y.to_string()];
        for &x in &grid.axis_x {
            line.push(
                grid.cell(x, y)
                    .map_or("-".to_string(), |c| format_improvement(c.improvement_pct)),
            );
        }
        lines.push(line);
    }
    align(&lines)
}

pub fn emit_heatmap(grid: &HeatmapGrid, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(dir.join(HEATMAP_CSV), &render_heatmap_csv(grid))?;
    write(dir.join(HEATMAP_TXT), &render_heatmap_txt(grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn summary(mean: f64, std: f64) -> Summary {
        Summary { mean, std, n: 5 }
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(
            mean_std(&[5.0, 5.0, 5.0]).unwrap(),
            Summary {
                mean: 5.0,
                std: 0.0,
                n: 3
            }
        );
        let s = mean_std(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 1.5811).abs() < 1e-4);
        let one = mean_std(&[7.0]).unwrap();
        assert!(one.single_sample());
        assert_eq!(one.std, 0.0);
        assert!(matches!(mean_std(&[]), Err(ReportError::Empty)));
    }

    #[test]
    fn cell_format() {
        assert_eq!(format_cell(&summary(10400.0, 4159.33)), "10400(4159.33)");
        assert_eq!(format_cell(&summary(10400.0, 4159.3333)), "10400(4159.33)");
        assert_eq!(format_cell(&summary(5.5, 0.0)), "5.5(0)");
        assert_eq!(format_number(-0.001), "0");
        assert_eq!(format_number(2.005e3), "2005");
    }

    #[test]
    fn improvements() {
        assert!((improvement_pct(10400.0, 8600.0).unwrap() - 20.9).abs() < 0.05);
        assert!((improvement_pct(1116.0, 738.0).unwrap() - 51.2).abs() < 0.05);
        assert_eq!(format_improvement(improvement_pct(10400.0, 8600.0)), "20.9");
        assert_eq!(format_improvement(improvement_pct(1116.0, 738.0)), "51.2");
        assert_eq!(improvement_pct(3.0, 3.0), Some(0.0));
        assert_eq!(improvement_pct(3.0, 0.0), None);
        assert_eq!(format_improvement(improvement_pct(3.0, -1.0)), "n/a");
    }

    #[test]
    fn marking() {
        let row = |items: &[(&str, f64)]| {
            items
                .iter()
                .map(|(m, v)| (m.to_string(), *v))
                .collect::<Vec<_>>()
        };
        assert_eq!(
            mark_best(&row(&[
                ("LLM-Ens", 10400.0),
                ("Agg", 8600.0),
                ("MV", 5000.0)
            ]))
            .unwrap(),
            ("LLM-Ens".to_string(), "Agg".to_string())
        );
        assert_eq!(
            mark_best(&row(&[("b", 3.0), ("a", 3.0), ("c", 1.0)])).unwrap(),
            ("a".into(), "b".into())
        );
        assert_eq!(
            mark_best(&row(&[("a", 1.0), ("b", 2.0)])).unwrap(),
            ("b".into(), "a".into())
        );
        assert!(mark_best(&row(&[("a", 1.0)])).is_err());
    }

    #[test]
    fn table_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = ResultTable::new(vec!["llm-ens".into()]);
        table.insert("two-zone-corridor", "llm-ens", summary(11.0, 0.0));
        emit_table(&table, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join(TABLE_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(dir.path().join(TABLE_TXT).exists());

        table.insert("two-zone-corridor", "best-single", summary(6.0, 0.0));
        table.insert("four-rooms-forage", "best-single", summary(2.0, 1.0));
        table.insert("four-rooms-forage", "llm-ens", summary(3.0, 0.5));
        let csv = render_table_csv(&table);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "four-rooms-forage,llm-ens,3,0.5,5,best,50");
        assert_eq!(lines[2], "four-rooms-forage,best-single,2,1,5,second,");
        let txt = render_table_txt(&table);
        assert!(txt.contains("11(0)*"));
        assert!(txt.contains("6(0)_"));
        assert!(txt.lines().nth(2).unwrap().ends_with("83.3"));
    }

    #[test]
    fn heatmap_shape() {
        let axis = vec![0.1, 0.5];
        let mut cells = Vec::new();
        for &x in &axis {
            for &y in &axis {
                cells.push(HeatmapCell {
                    x,
                    y,
                    ensemble_mean: 2.0,
                    baseline_mean: 1.0,
                    improvement_pct: Some(100.0),
                });
            }
        }
        let grid = HeatmapGrid {
            parameter: "learning_rate".into(),
            axis_x: axis.clone(),
            axis_y: axis,
            cells,
        };
        let csv = render_heatmap_csv(&grid);
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(csv.lines().nth(1).unwrap(), "0.1,0.1,100,2,1");
        let dir = tempfile::tempdir().unwrap();
        emit_heatmap(&grid, dir.path()).unwrap();
        assert!(fs::read_to_string(dir.path().join(HEATMAP_TXT))
            .unwrap()
            .contains("100.0"));
    }

    proptest! {
        #[test]
        fn marks_and_ratio_scale_invariant(means in prop::collection::vec(1u32..1000, 2..6), scale in 1u32..50) {
            let row: Vec<(String, f64)> =
                means.iter().enumerate().map(|(i, m)| (format!("m{i}"), f64::from(*m))).collect();
            let scaled: Vec<(String, f64)> = row.iter().map(|(m, v)| (m.clone(), v * f64::from(scale))).collect();
            prop_assert_eq!(mark_best(&row).unwrap(), mark_best(&scaled).unwrap());
            let (a, b) = (row[0].1, row[1].1);
            let s = f64::from(scale);
            prop_assert!((improvement_pct(a, b).unwrap() - improvement_pct(a * s, b * s).unwrap()).abs() < 1e-9);
        }
    }
}
