//! Text tables over result ledgers: attack summaries (success rate and
//! mutual information per run) and augmentation ledgers (reconstruction
//! error before and after retraining).

use std::fmt::Write as _;
use std::path::Path;

use crate::attack::SUMMARY_HEADER;
use crate::augment::LEDGER_HEADER;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AttackRow {
    pub run_id: String,
    pub samples: usize,
    pub asr: f64,
    pub mean_mi: Option<f64>,
    pub std_mi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentRow {
    pub run_id: String,
    pub method: String,
    pub asr: String,
    pub original_test_error: f64,
    pub retrained_test_error: f64,
    pub improvement_pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tables {
    pub attacks: Vec<AttackRow>,
    pub augmentations: Vec<AugmentRow>,
}

fn parse_f64(cell: &str, path: &Path) -> Result<f64> {
    cell.parse()
        .map_err(|_| Error::Data(format!("{}: `{cell}` is not a number", path.display())))
}

impl Tables {
    /// Adds one CSV file, recognized by its header. Attack summaries take
    /// their run id from the enclosing run directory.
    pub fn add_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header == SUMMARY_HEADER {
            let run_id = path
                .parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let (mut n, mut hits, mut mis) = (0, 0, Vec::new());
            for line in lines.filter(|l| !l.is_empty()) {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != 5 {
                    return Err(Error::Data(format!("{}: malformed row `{line}`", path.display())));
                }
                n += 1;
                if cells[1] == "true" {
                    hits += 1;
                }
                if !cells[2].is_empty() {
                    mis.push(parse_f64(cells[2], path)?);
                }
            }
            let (mean, std) = mean_std(&mis);
            self.attacks.push(AttackRow {
                run_id,
                samples: n,
                asr: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
                mean_mi: mean,
                std_mi: std,
            });
            Ok(())
        } else if header == LEDGER_HEADER {
            for line in lines.filter(|l| !l.is_empty()) {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != LEDGER_HEADER.split(',').count() {
                    return Err(Error::Data(format!("{}: malformed row `{line}`", path.display())));
                }
                self.augmentations.push(AugmentRow {
                    run_id: cells[0].to_string(),
                    method: cells[1].to_string(),
                    asr: cells[2].to_string(),
                    original_test_error: parse_f64(cells[5], path)?,
                    retrained_test_error: parse_f64(cells[6], path)?,
                    improvement_pct: parse_f64(cells[7], path)?,
                });
            }
            Ok(())
        } else {
            Err(Error::Data(format!("{}: unrecognized header `{header}`", path.display())))
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.attacks.is_empty() {
            let rows: Vec<Vec<String>> = self
                .attacks
                .iter()
                .map(|r| {
                    let mi = match (r.mean_mi, r.std_mi) {
                        (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
                        _ => "-".into(),
                    };
                    vec![r.run_id.clone(), r.samples.to_string(), format!("{:.2}%", 100.0 * r.asr), mi]
                })
                .collect();
            out.push_str(&table(&["run", "samples", "ASR", "MI"], &rows));
        }
        if !self.augmentations.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            let rows: Vec<Vec<String>> = self
                .augmentations
                .iter()
                .map(|r| {
                    let asr = match r.asr.parse::<f64>() {
                        Ok(a) => format!("{:.2}%", 100.0 * a),
                        Err(_) => r.asr.clone(),
                    };
                    let sign = if r.improvement_pct >= 0.0 { "↑" } else { "↓" };
                    vec![
                        r.run_id.clone(),
                        r.method.clone(),
                        format!("{:.5}", r.original_test_error),
                        format!("{:.5} ({sign}{:.1}%)", r.retrained_test_error, r.improvement_pct.abs()),
                        asr,
                    ]
                })
                .collect();
            out.push_str(&table(&["run", "method", "original (test)", "retrained (test)", "ASR"], &rows));
        }
        out
    }
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (Some(m), Some(var.sqrt()))
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let _ = writeln!(out, "{}", width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    for r in rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
    out
}
