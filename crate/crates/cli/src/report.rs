//! Consolidates evaluation artifacts under a run directory into the four
//! result tables: main results, few-shot curve, ablation, and the
//! hyperparameter grid.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use simcurl_core::error::{Error, Result};
use simcurl_core::eval::EvalReport;
use walkdir::WalkDir;

fn tag<'a>(report: &'a EvalReport, key: &str) -> &'a str {
    report.context.get(key).map(String::as_str).unwrap_or("")
}

/// A row of any output table, pre-sorted by its key columns.
struct TableRow {
    key: Vec<String>,
    accuracy: f64,
    weighted_f1: f64,
}

fn write_table(path: &Path, fingerprint: &str, header: &str, mut rows: Vec<TableRow>) -> Result<()> {
    rows.sort_by(|a, b| a.key.cmp(&b.key));
    let mut text = format!("# fingerprint = {fingerprint}\n{header},accuracy,weighted_f1\n");
    for row in rows {
        text.push_str(&row.key.join(","));
        text.push_str(&format!(",{:.6},{:.6}\n", row.accuracy, row.weighted_f1));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Fractions sort descending but stay readable in the key column, so they
/// are zero-padded percentages of the form `p100`, `p050`, ...
fn fraction_key(fraction: f64) -> String {
    format!("p{:03}", (fraction * 100.0).round() as u32)
}

pub fn cmd_report(run_dir: &Path, out: &Path, force: bool) -> Result<()> {
    let mut reports: Vec<EvalReport> = Vec::new();
    for entry in WalkDir::new(run_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Eval(format!("scan {}: {e}", run_dir.display())))?;
        if !entry.file_type().is_file()
            || entry.path().extension().and_then(|e| e.to_str()) != Some("json")
        {
            continue;
        }
        let Ok(text) = fs::read_to_string(entry.path()) else { continue };
        if let Ok(report) = serde_json::from_str::<EvalReport>(&text) {
            reports.push(report);
        }
    }
    if reports.is_empty() {
        return Err(Error::Eval(format!(
            "no evaluation artifacts found under {}",
            run_dir.display()
        )));
    }

    let fingerprints: BTreeSet<&str> = reports
        .iter()
        .map(|r| r.fingerprint.as_str())
        .filter(|f| !f.is_empty())
        .collect();
    if fingerprints.len() > 1 && !force {
        let shorts: Vec<&str> =
            fingerprints.iter().map(|f| &f[..f.len().min(12)]).collect();
        return Err(Error::Eval(format!(
            "artifacts mix fingerprints [{}]; rerun with --force to consolidate anyway",
            shorts.join(", ")
        )));
    }
    let stamp = if fingerprints.len() == 1 {
        fingerprints.iter().next().unwrap().to_string()
    } else {
        "mixed".to_string()
    };

    let mut main_rows = Vec::new();
    let mut fewshot_rows = Vec::new();
    let mut ablation_rows = Vec::new();
    let mut grid_rows = Vec::new();
    for report in &reports {
        let seed = tag(report, "seed").to_string();
        match tag(report, "table") {
            "fewshot" => {
                for row in &report.rows {
                    fewshot_rows.push(TableRow {
                        key: vec![
                            fraction_key(report.fraction),
                            report.method.clone(),
                            row.task.clone(),
                            seed.clone(),
                        ],
                        accuracy: row.accuracy,
                        weighted_f1: row.weighted_f1,
                    });
                }
            }
            "ablation" => {
                let label = tag(report, "row").to_string();
                let mut acc_sum = 0.0;
                let mut f1_sum = 0.0;
                let mut n = 0usize;
                for row in &report.rows {
                    if row.task != "archetype_mean" {
                        acc_sum += row.accuracy;
                        f1_sum += row.weighted_f1;
                        n += 1;
                    }
                    ablation_rows.push(TableRow {
                        key: vec![label.clone(), row.task.clone(), seed.clone()],
                        accuracy: row.accuracy,
                        weighted_f1: row.weighted_f1,
                    });
                }
                if n > 0 {
                    ablation_rows.push(TableRow {
                        key: vec![label.clone(), "mean".into(), seed.clone()],
                        accuracy: acc_sum / n as f64,
                        weighted_f1: f1_sum / n as f64,
                    });
                }
            }
            "grid" => {
                for row in &report.rows {
                    grid_rows.push(TableRow {
                        key: vec![
                            tag(report, "rho_pre").to_string(),
                            tag(report, "rho_tr").to_string(),
                            tag(report, "depth").to_string(),
                            tag(report, "batch").to_string(),
                            row.task.clone(),
                            seed.clone(),
                        ],
                        accuracy: row.accuracy,
                        weighted_f1: row.weighted_f1,
                    });
                }
            }
            _ => {
                for row in report.rows.iter().chain(&report.merged) {
                    main_rows.push(TableRow {
                        key: vec![report.method.clone(), row.task.clone(), seed.clone()],
                        accuracy: row.accuracy,
                        weighted_f1: row.weighted_f1,
                    });
                }
            }
        }
    }

    fs::create_dir_all(out)?;
    write_table(&out.join("main-results.csv"), &stamp, "method,task,seed", main_rows)?;
    write_table(
        &out.join("few-shot.csv"),
        &stamp,
        "fraction,method,task,seed",
        fewshot_rows,
    )?;
    write_table(&out.join("ablation.csv"), &stamp, "row,task,seed", ablation_rows)?;
    write_table(
        &out.join("grid.csv"),
        &stamp,
        "rho_pre,rho_tr,depth,batch,task,seed",
        grid_rows,
    )?;
    println!("report: {} artifacts consolidated -> {}", reports.len(), out.display());
    Ok(())
}
