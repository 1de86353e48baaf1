//! Text tables and JSON-lines records for evaluation results.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dedup::RepetitivenessReport;
use crate::eval::{
    metrics, percent, ConfusionMatrix, CvReport, ExceptionRow, MatchingScore, MetricSet,
};

/// Column-aligned text table. The first column is left-aligned, the rest
/// right-aligned.
#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<S: Into<String>>(&mut self, cells: impl IntoIterator<Item = S>) {
        self.rows.push(cells.into_iter().map(Into::into).collect());
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i < widths.len() {
                    widths[i] = widths[i].max(cell.chars().count());
                }
            }
        }
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let mut line = String::new();
            for (i, cell) in row.iter().enumerate() {
                let w = widths.get(i).copied().unwrap_or(0);
                if i == 0 {
                    let _ = write!(line, "{cell:<w$}");
                } else {
                    let _ = write!(line, "  {cell:>w$}");
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

fn counts(m: &ConfusionMatrix) -> [String; 6] {
    [m.flaky(), m.true_failures(), m.tp, m.fn_, m.fp, m.tn].map(|n| n.to_string())
}

fn rates(s: &MetricSet) -> [String; 4] {
    [s.precision, s.recall, s.specificity, s.f1].map(percent)
}

pub fn repetitiveness_table(report: &RepetitivenessReport) -> String {
    let mut t = Table::new([
        "project",
        "tests",
        "flaky",
        "set",
        "uniq_test",
        "repet_test",
        "uniq_cross",
        "repet_cross",
    ]);
    let mut add = |name: &str, r: &crate::dedup::ProjectRepetitiveness| {
        let nums = [
            r.tests,
            r.flaky,
            r.set,
            r.uniq_per_test,
            r.repet_per_test,
            r.uniq_cross,
            r.repet_cross,
        ];
        t.row(std::iter::once(name.to_string()).chain(nums.iter().map(|n| n.to_string())));
    };
    for (project, row) in &report.projects {
        add(project, row);
    }
    if !report.projects.is_empty() {
        add("total", &report.total());
    }
    t.render()
}

const METRIC_HEADER: [&str; 11] = [
    "project", "flaky", "true", "tp", "fn", "fp", "tn", "P%", "R%", "SP%", "F1%",
];

/// Leave-one-out matching results, one row per project plus a total.
pub fn matching_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MatchingScore)>) -> String {
    let mut t = Table::new(
        METRIC_HEADER
            .iter()
            .copied()
            .chain(["tests_tp", "tests_fn"]),
    );
    let mut total = MatchingScore::default();
    let mut any = false;
    let add = |t: &mut Table, name: &str, s: &MatchingScore| {
        let cells = std::iter::once(name.to_string())
            .chain(counts(&s.matrix))
            .chain(rates(&metrics(&s.matrix)))
            .chain([s.tests_with_tp.to_string(), s.tests_with_fn.to_string()]);
        t.row(cells);
    };
    for (name, s) in rows {
        add(&mut t, name, s);
        total.matrix.add(&s.matrix);
        total.tests_with_tp += s.tests_with_tp;
        total.tests_with_fn += s.tests_with_fn;
        any = true;
    }
    if any {
        add(&mut t, "total", &total);
    }
    t.render()
}

/// Cross-validation aggregates, one row per project plus a total.
pub fn cv_table<'a>(reports: impl IntoIterator<Item = &'a CvReport>) -> String {
    let mut t = Table::new(METRIC_HEADER);
    let mut total = ConfusionMatrix::default();
    let mut any = false;
    for r in reports {
        t.row(
            std::iter::once(r.project.clone())
                .chain(counts(&r.aggregate))
                .chain(rates(&r.metrics)),
        );
        total.add(&r.aggregate);
        any = true;
    }
    if any {
        t.row(
            std::iter::once("total".to_string())
                .chain(counts(&total))
                .chain(rates(&metrics(&total))),
        );
    }
    t.render()
}

pub fn exception_table(rows: &[ExceptionRow]) -> String {
    let mut t = Table::new([
        "exception",
        "projects",
        "tests",
        "failures",
        "true",
        "flaky",
        "tp",
        "fn",
        "fp",
        "tn",
    ]);
    for r in rows {
        let m = &r.matrix;
        let nums = [
            r.projects,
            r.tests,
            r.failures,
            r.true_failures,
            r.flaky,
            m.tp,
            m.fn_,
            m.fp,
            m.tn,
        ];
        t.row(std::iter::once(r.exception.clone()).chain(nums.iter().map(|n| n.to_string())));
    }
    t.render()
}

/// One JSON-lines record.
#[derive(Debug, Clone, Serialize)]
pub struct JsonRecord<'a> {
    pub project: &'a str,
    pub method: &'a str,
    /// `fold`, `aggregate` or `matching`.
    pub kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    #[serde(flatten)]
    pub matrix: ConfusionMatrix,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

impl<'a> JsonRecord<'a> {
    pub fn new(
        project: &'a str,
        method: &'a str,
        kind: &'a str,
        fold: Option<usize>,
        matrix: ConfusionMatrix,
    ) -> Self {
        let m = metrics(&matrix);
        JsonRecord {
            project,
            method,
            kind,
            fold,
            matrix,
            precision: m.precision,
            recall: m.recall,
            specificity: m.specificity,
            f1: m.f1,
        }
    }
}

pub fn cv_jsonl(report: &CvReport, method: &str) -> String {
    let mut out = String::new();
    for f in &report.folds {
        push_json(
            &mut out,
            &JsonRecord::new(&report.project, method, "fold", Some(f.fold), f.matrix),
        );
    }
    push_json(
        &mut out,
        &JsonRecord::new(&report.project, method, "aggregate", None, report.aggregate),
    );
    out
}

pub fn matching_jsonl(project: &str, method: &str, score: &MatchingScore) -> String {
    let mut out = String::new();
    push_json(
        &mut out,
        &JsonRecord::new(project, method, "matching", None, score.matrix),
    );
    out
}

fn push_json<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("report records serialize"));
    out.push('\n');
}

/// File name for a project's reports; characters outside `[A-Za-z0-9._-]`
/// become `_`.
pub fn report_file_stem(project: &str) -> String {
    let stem: String = project
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if stem.is_empty() || stem.chars().all(|c| c == '.') {
        format!("_{stem}")
    } else {
        stem
    }
}

/// Writes `<dir>/<project>.txt` and `<dir>/<project>.jsonl`.
pub fn write_project_report(
    dir: &Path,
    project: &str,
    text: &str,
    jsonl: &str,
) -> io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let stem = report_file_stem(project);
    let txt = dir.join(format!("{stem}.txt"));
    let json = dir.join(format!("{stem}.jsonl"));
    std::fs::write(&txt, text)?;
    std::fs::write(&json, jsonl)?;
    Ok((txt, json))
}
