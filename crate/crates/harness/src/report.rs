//! Tables, CSV and the on-disk output layout.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{ensure, Context, Result};
use chfl_core::federation::Method;
use serde::Serialize;

use crate::experiment::{ExperimentResult, MetricsRecord};
use crate::summary::{self_check, summarize, MethodSummary};
use crate::sweep::SweepWarning;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const TABLE_FILE: &str = "table.txt";
pub const WARNINGS_FILE: &str = "warnings.jsonl";

fn column_title(m: Method) -> &'static str {
    match m {
        Method::Common => "Common",
        Method::Local => "Local",
        Method::ChflMu0 => "mu=0",
        Method::Chfl => "mu>0",
        Method::Concat => "Concat",
    }
}

fn row_label(s: &MethodSummary, vary_ratio: bool, vary_clients: bool) -> String {
    let mut label = s.dataset.clone();
    if vary_ratio {
        write!(label, " r={}", s.common_ratio).unwrap();
    }
    if vary_clients {
        write!(label, " K={}", s.clients).unwrap();
    }
    label
}

/// Wide text table: one row per (dataset, ratio, clients), one column per
/// method in the order Common, Local, mu=0, mu>0, Concat. Cells read
/// `mean ± std`.
pub fn render_table(summaries: &[MethodSummary]) -> String {
    let methods: Vec<Method> = Method::ALL
        .iter()
        .copied()
        .filter(|m| summaries.iter().any(|s| s.method == *m))
        .collect();
    let first = summaries.first();
    let vary_ratio = summaries
        .iter()
        .any(|s| Some(s.common_ratio) != first.map(|f| f.common_ratio));
    let vary_clients = summaries
        .iter()
        .any(|s| Some(s.clients) != first.map(|f| f.clients));

    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    for s in summaries {
        let label = row_label(s, vary_ratio, vary_clients);
        if rows.last().is_none_or(|(l, _)| *l != label) {
            rows.push((label.clone(), vec![String::from("-"); methods.len()]));
        }
        let col = methods
            .iter()
            .position(|m| *m == s.method)
            .expect("method listed");
        rows.last_mut().unwrap().1[col] = format!("{:.4} ± {:.4}", s.mean, s.std);
    }

    let header: Vec<String> = std::iter::once("dataset".to_string())
        .chain(methods.iter().map(|m| column_title(*m).to_string()))
        .collect();
    let lines: Vec<Vec<String>> = std::iter::once(header)
        .chain(
            rows.into_iter()
                .map(|(l, cells)| std::iter::once(l).chain(cells).collect()),
        )
        .collect();
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| {
            lines
                .iter()
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for line in &lines {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Long-format CSV, one row per summary.
pub fn render_csv(summaries: &[MethodSummary]) -> String {
    let mut out =
        String::from("dataset,common_ratio,clients,method,runs,mean,std,split_std,split_means\n");
    for s in summaries {
        let splits: Vec<String> = s.split_means.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.dataset,
            s.common_ratio,
            s.clients,
            s.method,
            s.runs,
            s.mean,
            s.std,
            s.split_std,
            splits.join(";")
        )
        .unwrap();
    }
    out
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut file = std::io::BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for item in items {
        serde_json::to_writer(&mut file, item)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Writes records, rounds, summary CSV and table under `dir`.
pub fn write_outputs(
    dir: &Path,
    result: &ExperimentResult,
    warnings: &[SweepWarning],
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_jsonl(&dir.join(RECORDS_FILE), &result.records)?;
    write_jsonl(&dir.join(ROUNDS_FILE), &result.rounds)?;
    if !warnings.is_empty() {
        write_jsonl(&dir.join(WARNINGS_FILE), warnings)?;
    }
    fs::write(dir.join(SUMMARY_FILE), render_csv(&result.summaries))?;
    fs::write(dir.join(TABLE_FILE), render_table(&result.summaries))?;
    if !result.checkpoints.is_empty() {
        let ckpt_dir = dir.join(CHECKPOINT_DIR);
        fs::create_dir_all(&ckpt_dir)?;
        for c in &result.checkpoints {
            fs::write(ckpt_dir.join(c.file_name()), &c.text)?;
        }
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// Summaries of previously written records, self-checked.
pub fn report(records: &[MetricsRecord]) -> Result<Vec<MethodSummary>> {
    ensure!(!records.is_empty(), "no records to report");
    let summaries = summarize(records);
    self_check(records, &summaries)?;
    Ok(summaries)
}
