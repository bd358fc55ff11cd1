use std::fs;
use std::path::Path;

use afdo_core::simnet::{masked_bytes, TIME_FIELDS};
use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::commands::list_files;
use crate::output::{io_err, read, OutputDir, MANIFEST_FILE};
use crate::{run_with, Cli, CliError, Command, Context, Outcome, ReproduceArgs};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub path: String,
    /// Byte offset of the first difference within the file.
    pub offset: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReproduceReport {
    pub command: Vec<String>,
    pub runs: [String; 2],
    pub exit_codes: [i32; 2],
    pub files_compared: usize,
    pub identical: bool,
    pub divergence: Option<Divergence>,
}

/// Files whose declared time fields are masked before comparison.
fn is_snapshot(path: &str) -> bool {
    path.ends_with(".jsonl") && path.split('/').any(|c| c == "snapshots")
}

fn first_difference(a: &[u8], b: &[u8]) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| x != y).or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))
}

/// Line-wise masked comparison; masking keeps offsets because time values
/// are fixed width.
fn masked_difference(a: &[u8], b: &[u8]) -> Option<usize> {
    let (sa, sb) = (String::from_utf8_lossy(a), String::from_utf8_lossy(b));
    let mut offset = 0;
    let mut la = sa.split_inclusive('\n');
    let mut lb = sb.split_inclusive('\n');
    loop {
        match (la.next(), lb.next()) {
            (None, None) => return None,
            (Some(_), None) | (None, Some(_)) => return Some(offset),
            (Some(x), Some(y)) => {
                let (tx, ty) = (x.trim_end_matches('\n'), y.trim_end_matches('\n'));
                if let Some(d) = first_difference(&masked_bytes(tx, &TIME_FIELDS), &masked_bytes(ty, &TIME_FIELDS)) {
                    return Some(offset + d);
                }
                if x.len() != y.len() {
                    return Some(offset + tx.len().min(ty.len()));
                }
                offset += x.len();
            }
        }
    }
}

/// Compares two output trees file by file in sorted path order, manifests
/// last, and returns the number of files compared and the first divergence.
pub fn compare_dirs(a: &Path, b: &Path) -> Result<(usize, Option<Divergence>), CliError> {
    let left = list_files(a)?;
    let right = list_files(b)?;
    let mut all: Vec<&String> = left.iter().chain(&right).collect();
    all.sort_by_key(|p| (p.rsplit('/').next() == Some(MANIFEST_FILE), p.as_str()));
    all.dedup();
    for (i, path) in all.iter().enumerate() {
        let (in_a, in_b) = (left.contains(path), right.contains(path));
        if !(in_a && in_b) {
            let side = if in_a { "second" } else { "first" };
            return Ok((
                i + 1,
                Some(Divergence { path: path.to_string(), offset: 0, reason: format!("missing from the {side} run") }),
            ));
        }
        let (x, y) = (read(&a.join(path.as_str()))?, read(&b.join(path.as_str()))?);
        let diff = if is_snapshot(path) { masked_difference(&x, &y) } else { first_difference(&x, &y) };
        if let Some(offset) = diff {
            return Ok((
                i + 1,
                Some(Divergence {
                    path: path.to_string(),
                    offset: offset as u64,
                    reason: "content differs".to_string(),
                }),
            ));
        }
    }
    Ok((all.len(), None))
}

pub fn reproduce(outer: &Cli, args: &ReproduceArgs) -> Result<Outcome, CliError> {
    let mut argv = vec![
        "afdo".to_string(),
        "--seed".to_string(),
        outer.seed.to_string(),
        "--scale".to_string(),
        outer.scale.to_string(),
        "--format".to_string(),
        match outer.format {
            crate::Format::Csv => "csv".to_string(),
            crate::Format::Json => "json".to_string(),
        },
    ];
    argv.extend(args.command.iter().cloned());
    let inner = Cli::try_parse_from(&argv).map_err(|e| CliError::usage(e.to_string().trim_end()))?;
    if matches!(inner.command, Command::Reproduce(_)) {
        return Err(CliError::usage("reproduce cannot wrap itself"));
    }

    let runs = ["run-1".to_string(), "run-2".to_string()];
    let mut codes = [0; 2];
    for (i, name) in runs.iter().enumerate() {
        let dir = outer.out.join(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let mut cli = inner.clone();
        cli.out = dir;
        let mut ctx = Context::from_cli(&cli);
        ctx.unseeded = args.inject_unseeded && i == 1;
        codes[i] = run_with(&cli, &ctx)?.code;
    }

    let (files_compared, divergence) = compare_dirs(&outer.out.join(&runs[0]), &outer.out.join(&runs[1]))?;
    let report = ReproduceReport {
        command: args.command.clone(),
        runs,
        exit_codes: codes,
        files_compared,
        identical: divergence.is_none(),
        divergence,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serialises");
    text.push('\n');
    let mut out = OutputDir::create(&outer.out)?;
    out.write("reproduce.json", text)?;
    out.finish("reproduce", outer.seed, serde_json::to_value(outer).expect("command line serialises"))?;

    let line = match &report.divergence {
        None => format!("pass: {} files identical across two runs", report.files_compared),
        Some(d) => format!("divergence: {} at byte offset {} ({})", d.path, d.offset, d.reason),
    };
    Ok(Outcome::check(report.identical, vec![line]))
}
