//! Deterministic emission of experiment outputs: `runs.csv`, `summary.csv`
//! and `report.md`. Re-emitting the same results produces byte-identical
//! files; nothing time- or environment-dependent is written.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentReport, RunResult};
use crate::kernel::Method;

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_p(v: f64) -> String {
    format!("{v:.9}")
}

/// `runs.csv`: one row per run result, in the given order.
fn runs_csv(results: &[RunResult]) -> String {
    let mut out = String::from("method,seed,runtime_s,interactions,correct,trace_path\n");
    for r in results {
        let trace = r
            .trace_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method.token(),
            r.seed,
            fmt_f64(r.runtime_s),
            r.interactions,
            r.correct,
            trace
        ));
    }
    out
}

/// `summary.csv`: per-method aggregates.
fn summary_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "method,runs,runtime_mean_s,runtime_std_s,interactions_mean,interactions_std,correct_runs,partial\n",
    );
    for a in &report.aggregates {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            a.method.token(),
            a.runs,
            fmt_f64(a.runtime_mean_s),
            fmt_f64(a.runtime_std_s),
            fmt_f64(a.interactions_mean),
            fmt_f64(a.interactions_std),
            a.correct_runs,
            a.partial
        ));
    }
    out
}

fn report_md(results: &[RunResult], report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str("# Experiment report\n\n");
    out.push_str(&format!("- config digest: `{}`\n", report.config_digest));
    out.push_str(&format!("- measured runs per method: {}\n", report.run_count));
    out.push_str(&format!("- significance level: {}\n\n", report.alpha));

    if results.is_empty() {
        out.push_str("no data\n");
        return out;
    }

    out.push_str("## Per-method aggregates\n\n");
    out.push_str("| method | runs | runtime mean (s) | runtime std (s) | interactions mean | correct | partial |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for a in &report.aggregates {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {}/{} | {} |\n",
            a.method.token(),
            a.runs,
            fmt_f64(a.runtime_mean_s),
            fmt_f64(a.runtime_std_s),
            fmt_f64(a.interactions_mean),
            a.correct_runs,
            a.runs,
            a.partial
        ));
    }

    // Runtime reductions against the baseline, stated under both possible
    // denominators since either convention appears in practice.
    let baseline = report
        .aggregates
        .iter()
        .find(|a| a.method == Method::NotLearning);
    if let Some(base) = baseline {
        let others: Vec<_> = report
            .aggregates
            .iter()
            .filter(|a| a.method != Method::NotLearning)
            .collect();
        if !others.is_empty() {
            out.push_str("\n## Runtime reduction vs baseline\n\n");
            out.push_str(
                "| method | (base - x) / base | (base - x) / x |\n|---|---|---|\n",
            );
            for a in others {
                let d = base.runtime_mean_s - a.runtime_mean_s;
                out.push_str(&format!(
                    "| {} | {}% | {}% |\n",
                    a.method.token(),
                    fmt_f64(100.0 * d / base.runtime_mean_s),
                    fmt_f64(100.0 * d / a.runtime_mean_s),
                ));
            }
            out.push_str(
                "\nBoth denominators are reported on purpose: percentage-reduction \
claims are ambiguous without one, so neither is silently chosen.\n",
            );
        }
    }

    if !report.pairs.is_empty() {
        out.push_str("\n## Pairwise Welch t-tests (two-sided)\n\n");
        out.push_str("| pair | t | dof | p | significant |\n|---|---|---|---|---|\n");
        for pair in &report.pairs {
            out.push_str(&format!(
                "| {} vs {} | {} | {} | {} | {} |\n",
                pair.a.token(),
                pair.b.token(),
                fmt_f64(pair.t),
                fmt_f64(pair.dof),
                fmt_p(pair.p),
                pair.significant
            ));
        }
    }

    let partial: Vec<_> = report
        .aggregates
        .iter()
        .filter(|a| a.partial)
        .map(|a| a.method.token())
        .collect();
    if !partial.is_empty() {
        out.push_str(&format!(
            "\nPartial results: {} aborted after repeated backend failures.\n",
            partial.join(", ")
        ));
    }
    out
}

/// Write all three artifacts into `out_dir` and return their paths.
pub fn emit_report(
    results: &[RunResult],
    report: &ExperimentReport,
    out_dir: &Path,
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let artifacts = [
        ("runs.csv", runs_csv(results)),
        ("summary.csv", summary_csv(report)),
        ("report.md", report_md(results, report)),
    ];
    let mut paths = Vec::with_capacity(artifacts.len());
    for (name, contents) in artifacts {
        let path = out_dir.join(name);
        fs::write(&path, contents)?;
        paths.push(path);
    }
    Ok(paths)
}
