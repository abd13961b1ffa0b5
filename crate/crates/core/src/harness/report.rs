use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttackSet, ExperimentPlan};
use crate::defense::{Strategy, Tally};
use crate::error::{Error, Result};

pub const REPORT_VERSION: u16 = 1;

/// Published numbers on the BIOMDATA test set, rendered only as footnotes.
pub mod reference {
    /// Random masking on FGSM, rows K = 3, 5, 7, 10, 15, 20, 30, columns N = 1..7.
    pub const RANDOM_FGSM_K: [usize; 7] = [3, 5, 7, 10, 15, 20, 30];
    pub const RANDOM_FGSM: [[f64; 7]; 7] = [
        [12.50, 20.87, 22.21, 26.67, 32.38, 28.21, 26.31],
        [22.13, 24.54, 31.92, 40.48, 45.58, 40.67, 35.56],
        [24.79, 26.91, 35.72, 43.21, 56.37, 51.90, 44.75],
        [26.87, 28.73, 38.64, 54.91, 62.75, 59.12, 49.43],
        [28.31, 30.84, 42.83, 64.43, 64.81, 64.37, 54.57],
        [31.10, 35.51, 62.75, 72.97, 75.01, 65.89, 65.23],
        [32.14, 46.87, 63.81, 72.41, 76.08, 66.08, 65.46],
    ];
    /// Rows N = 1..7; columns: no attack, strategy 2 (FGSM, iGSM, DeepFool),
    /// strategy 3 (FGSM, iGSM, DeepFool).
    pub const SUSPECT: [[f64; 7]; 7] = [
        [99.10, 12.57, 8.31, 18.35, 12.91, 10.42, 18.54],
        [98.97, 15.19, 12.67, 25.48, 15.24, 14.86, 25.92],
        [98.86, 27.38, 20.72, 37.53, 28.51, 23.12, 37.73],
        [98.54, 38.52, 32.15, 63.74, 39.54, 35.28, 64.11],
        [98.21, 61.74, 55.43, 84.36, 62.12, 57.74, 84.36],
        [98.07, 81.23, 75.59, 78.21, 81.65, 77.59, 78.25],
        [97.87, 78.18, 71.81, 70.42, 78.53, 73.81, 70.51],
    ];
    /// Best cell per strategy (rows 1..3) and attack (FGSM, iGSM, DeepFool).
    pub const BEST: [[f64; 3]; 3] = [[76.08, 71.26, 79.54], [81.23, 75.59, 84.21], [81.65, 77.59, 84.36]];

    pub fn attack_column(attack: &str) -> Option<usize> {
        ["fgsm", "igsm", "deepfool"].iter().position(|a| *a == attack)
    }
}

/// One grid cell. `attack = "none"` holds benign probes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub strategy: u8,
    pub attack: String,
    pub k: Option<usize>,
    pub n: usize,
    pub tally: Tally,
    pub success_rate: f64,
    pub benign_pass_rate: f64,
    pub detection_rate: f64,
}

impl Cell {
    pub fn new(strategy: Strategy, attack: &str, k: Option<usize>, n: usize, tally: Tally) -> Self {
        Cell {
            strategy: strategy.number(),
            attack: attack.into(),
            k,
            n,
            success_rate: tally.success_rate(),
            benign_pass_rate: tally.benign_pass_rate(),
            detection_rate: tally.detection_rate(),
            tally,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: String,
    pub corpus_hash: String,
    pub probes: usize,
    pub successful: usize,
    pub success_rate: f64,
    pub mean_final_hd: f64,
    /// Successful attacks on probes inside the defense sweep.
    pub in_sweep: usize,
}

impl AttackSummary {
    pub(super) fn new(set: &AttackSet, defense_probes: usize) -> Self {
        let n = set.pairs.len();
        AttackSummary {
            attack: set.config.kind.name().into(),
            corpus_hash: set.hash.clone(),
            probes: n,
            successful: set.pairs.iter().filter(|p| p.success).count(),
            success_rate: set.success_rate(),
            mean_final_hd: set.pairs.iter().map(|p| p.final_hd).sum::<f64>() / n.max(1) as f64,
            in_sweep: set
                .pairs
                .iter()
                .filter(|p| p.success && p.benign.index as usize <= defense_probes)
                .count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u16,
    /// Resolved plan (all derived seeds filled in).
    pub plan: ExperimentPlan,
    pub report_hash: String,
    pub dataset_hash: String,
    pub bank_dir: String,
    pub attacks: Vec<AttackSummary>,
    pub benign_inputs: usize,
    /// Mean error ratio per band over the benign sweep probes.
    pub benign_alpha_mean: Vec<f64>,
    /// Mean PSNR (dB) of the fully denoised benign sweep probes.
    pub benign_denoised_psnr: f64,
    pub cells: Vec<Cell>,
}

impl EvaluationReport {
    pub fn cell(&self, strategy: u8, attack: &str, k: Option<usize>, n: usize) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy && c.attack == attack && c.k == k && c.n == n)
    }

    /// Success rate over the N grid for a strategy/attack at a fixed K.
    pub fn curve(&self, strategy: u8, attack: &str, k: Option<usize>) -> Vec<(usize, f64)> {
        self.plan
            .n_grid
            .iter()
            .filter_map(|&n| self.cell(strategy, attack, k, n).map(|c| (n, c.success_rate)))
            .collect()
    }

    /// Best success rate for a strategy/attack over its whole grid.
    pub fn best(&self, strategy: u8, attack: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .filter(|c| c.strategy == strategy && c.attack == attack)
            .fold(None, |best: Option<&Cell>, c| match best {
                Some(b) if b.success_rate >= c.success_rate => Some(b),
                _ => Some(c),
            })
    }

    fn attack_names(&self) -> Vec<String> {
        self.plan.attacks.iter().map(|a| a.kind.name().to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::Json => "report.json",
            ReportFormat::Markdown => "report.md",
        }
    }
}

pub const CSV_HEADER: &str = "strategy,attack,k,n,inputs,benign_pass,benign_fail,adversarial_detected,adversarial_missed,success_rate,benign_pass_rate,detection_rate";

pub fn to_csv(report: &EvaluationReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &report.cells {
        let t = &c.tally;
        let k = c.k.map(|k| k.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{k},{},{},{},{},{},{},{:.4},{:.4},{:.4}",
            c.strategy,
            c.attack,
            c.n,
            t.total(),
            t.benign_pass,
            t.benign_fail,
            t.adversarial_detected,
            t.adversarial_missed,
            c.success_rate,
            c.benign_pass_rate,
            c.detection_rate
        );
    }
    out
}

fn fmt_rate(c: Option<&Cell>) -> String {
    c.map_or_else(|| "-".into(), |c| format!("{:.2}", c.success_rate))
}

fn table(out: &mut String, head: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", head.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(head.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn n_head(first: &str, ns: &[usize]) -> Vec<String> {
    std::iter::once(first.to_string()).chain(ns.iter().map(|n| format!("N={n}"))).collect()
}

pub fn to_markdown(report: &EvaluationReport) -> String {
    let p = &report.plan;
    let attacks = report.attack_names();
    let mut out = String::new();
    let _ = writeln!(out, "# Detection report\n");
    let _ = writeln!(
        out,
        "Report `{}`, dataset `{}`, bank `{}`. {} identities, {} benign sweep probes, seed {}. \
         Figures marked \"this run (synthetic)\" come from this run; \"reference (BIOMDATA)\" figures \
         are published values on a different dataset and are shown for shape only.\n",
        report.report_hash,
        report.dataset_hash,
        report.bank_dir,
        p.dataset.identities,
        report.benign_inputs,
        p.seed
    );

    let _ = writeln!(out, "## Attacks\n");
    let rows: Vec<Vec<String>> = report
        .attacks
        .iter()
        .map(|a| {
            vec![
                a.attack.clone(),
                a.probes.to_string(),
                a.successful.to_string(),
                format!("{:.2}", a.success_rate),
                format!("{:.4}", a.mean_final_hd),
                a.in_sweep.to_string(),
            ]
        })
        .collect();
    let head = ["attack", "probes", "successful", "success %", "mean HD", "in sweep"].map(String::from);
    table(&mut out, &head, &rows);

    if !p.k_grid.is_empty() {
        let _ = writeln!(out, "## Strategy 1: random masking, success rate (%) by K and N\n");
        for attack in std::iter::once("none".to_string()).chain(attacks.iter().cloned()) {
            let _ = writeln!(out, "### {attack}: this run (synthetic)\n");
            let rows: Vec<Vec<String>> = p
                .k_grid
                .iter()
                .map(|&k| {
                    std::iter::once(format!("K={k}"))
                        .chain(p.n_grid.iter().map(|&n| fmt_rate(report.cell(1, &attack, Some(k), n))))
                        .collect()
                })
                .collect();
            table(&mut out, &n_head("", &p.n_grid), &rows);
            if attack == "fgsm" {
                let _ = writeln!(out, "Reference (BIOMDATA), FGSM:\n");
                let rows: Vec<Vec<String>> = reference::RANDOM_FGSM_K
                    .iter()
                    .zip(reference::RANDOM_FGSM.iter())
                    .map(|(k, r)| std::iter::once(format!("K={k}")).chain(r.iter().map(|v| format!("{v:.2}"))).collect())
                    .collect();
                table(&mut out, &n_head("", &(1..=7).collect::<Vec<_>>()), &rows);
            }
        }
    }

    let _ = writeln!(out, "## Strategies 2 and 3: success rate (%) by N\n");
    let _ = writeln!(out, "### This run (synthetic)\n");
    let mut head = vec!["N".to_string(), "no attack".to_string()];
    for s in [2, 3] {
        head.extend(attacks.iter().map(|a| format!("S{s} {a}")));
    }
    let rows: Vec<Vec<String>> = p
        .n_grid
        .iter()
        .map(|&n| {
            let mut r = vec![n.to_string(), fmt_rate(report.cell(2, "none", None, n))];
            for s in [2, 3] {
                r.extend(attacks.iter().map(|a| fmt_rate(report.cell(s, a, None, n))));
            }
            r
        })
        .collect();
    table(&mut out, &head, &rows);
    let _ = writeln!(out, "### Reference (BIOMDATA)\n");
    let mut head = vec!["N".to_string(), "no attack".to_string()];
    for s in [2, 3] {
        head.extend(["fgsm", "igsm", "deepfool"].map(|a| format!("S{s} {a}")));
    }
    let rows: Vec<Vec<String>> = reference::SUSPECT
        .iter()
        .enumerate()
        .map(|(i, r)| std::iter::once((i + 1).to_string()).chain(r.iter().map(|v| format!("{v:.2}"))).collect())
        .collect();
    table(&mut out, &head, &rows);

    let _ = writeln!(out, "## Best cell per strategy (%)\n");
    let mut head = vec!["strategy".to_string()];
    head.extend(attacks.iter().map(|a| format!("{a}: this run (synthetic)")));
    head.extend(attacks.iter().map(|a| format!("{a}: reference (BIOMDATA)")));
    let rows: Vec<Vec<String>> = [1u8, 2, 3]
        .iter()
        .filter(|&&s| s != 1 || !p.k_grid.is_empty())
        .map(|&s| {
            let mut r = vec![s.to_string()];
            r.extend(attacks.iter().map(|a| match report.best(s, a) {
                Some(c) => match c.k {
                    Some(k) => format!("{:.2} (K={k}, N={})", c.success_rate, c.n),
                    None => format!("{:.2} (N={})", c.success_rate, c.n),
                },
                None => "-".into(),
            }));
            r.extend(attacks.iter().map(|a| {
                reference::attack_column(a).map_or_else(|| "-".into(), |j| format!("{:.2}", reference::BEST[s as usize - 1][j]))
            }));
            r
        })
        .collect();
    table(&mut out, &head, &rows);

    let _ = writeln!(out, "## Mean benign error ratio per band\n");
    let head: Vec<String> = (1..=report.benign_alpha_mean.len()).map(|b| b.to_string()).collect();
    let row: Vec<String> = report.benign_alpha_mean.iter().map(|a| format!("{a:.3}")).collect();
    table(&mut out, &head, &[row]);
    let _ = writeln!(out, "\nFully denoised benign probes: {:.2} dB PSNR.", report.benign_denoised_psnr);
    out
}

pub fn emit_report(report: &EvaluationReport, dir: &Path, formats: &[ReportFormat]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for &f in formats {
        let body = match f {
            ReportFormat::Csv => to_csv(report),
            ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
            ReportFormat::Markdown => to_markdown(report),
        };
        let path = dir.join(f.file_name());
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<EvaluationReport> {
    let path = dir.join(ReportFormat::Json.file_name());
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let r: EvaluationReport = serde_json::from_str(&text)?;
    if r.format_version != REPORT_VERSION {
        return Err(Error::Format(format!(
            "{}: report format version {} (expected {REPORT_VERSION})",
            path.display(),
            r.format_version
        )));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty() -> EvaluationReport {
        EvaluationReport {
            format_version: REPORT_VERSION,
            plan: ExperimentPlan::default(),
            report_hash: "0".into(),
            dataset_hash: "0".into(),
            bank_dir: String::new(),
            attacks: vec![],
            benign_inputs: 0,
            benign_alpha_mean: vec![],
            benign_denoised_psnr: 0.0,
            cells: vec![],
        }
    }

    #[test]
    fn empty_sweep_gives_header_only_csv() {
        assert_eq!(to_csv(&empty()), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_rows_follow_cells() {
        let mut r = empty();
        let t = Tally {
            benign_pass: 3,
            benign_fail: 1,
            adversarial_detected: 2,
            adversarial_missed: 2,
        };
        r.cells.push(Cell::new(Strategy::RandomMasking, "fgsm", Some(5), 2, t));
        r.cells.push(Cell::new(Strategy::SuspectRemoval, "none", None, 1, t));
        let csv = to_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "1,fgsm,5,2,8,3,1,2,2,62.5000,75.0000,50.0000");
        assert!(lines[2].starts_with("2,none,,1,"));
    }

    #[test]
    fn markdown_has_no_attack_column_and_reference_labels() {
        let md = to_markdown(&empty());
        assert!(md.contains("no attack"));
        assert!(md.contains("reference (BIOMDATA)"));
        assert!(md.contains("this run (synthetic)"));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = empty();
        emit_report(&r, dir.path(), &ReportFormat::ALL).unwrap();
        assert_eq!(read_report(dir.path()).unwrap(), r);
    }
}
