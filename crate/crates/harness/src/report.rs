//! Result tables and report emission. Row-level records are the source of
//! truth; aggregates are always recomputable from them, and a manifest
//! indexes every emitted file with its checksum.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub target: String,
    pub severity: Option<u8>,
    pub seed: u64,
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub affine_delta_norm: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    /// `None` is the overall row: the mean over each seed's per-target mean.
    pub target: Option<String>,
    pub severity: Option<u8>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<Aggregate>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ResultTable {
    /// Sort rows canonically and compute all aggregates.
    pub fn from_rows(mut rows: Vec<ResultRow>) -> Self {
        rows.sort_by(|a, b| {
            (&a.method, &a.target, a.severity, a.seed).cmp(&(
                &b.method,
                &b.target,
                b.severity,
                b.seed,
            ))
        });
        let aggregates = compute_aggregates(&rows);
        Self { rows, aggregates }
    }

    /// Recompute the aggregates from the stored rows (for integrity checks).
    pub fn recompute_aggregates(&self) -> Vec<Aggregate> {
        compute_aggregates(&self.rows)
    }

    pub fn aggregate_for(&self, method: &str, target: Option<&str>) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.target.as_deref() == target)
    }

    /// Per-seed accuracies of one method, averaged over that seed's targets.
    pub fn per_seed_means(&self, method: &str) -> Vec<f64> {
        let mut by_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for row in self.rows.iter().filter(|r| r.method == method) {
            by_seed.entry(row.seed).or_default().push(row.accuracy);
        }
        by_seed
            .values()
            .map(|accs| accs.iter().sum::<f64>() / accs.len() as f64)
            .collect()
    }
}

fn compute_aggregates(rows: &[ResultRow]) -> Vec<Aggregate> {
    // Per (method, target, severity) over seeds.
    let mut per_cell: BTreeMap<(String, String, Option<u8>), Vec<f64>> = BTreeMap::new();
    // Per method: each seed's mean over targets, then stats over seeds.
    let mut per_method_seed: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for row in rows {
        per_cell
            .entry((row.method.clone(), row.target.clone(), row.severity))
            .or_default()
            .push(row.accuracy);
        per_method_seed
            .entry((row.method.clone(), row.seed))
            .or_default()
            .push(row.accuracy);
    }
    let mut aggregates = Vec::new();
    for ((method, target, severity), accs) in &per_cell {
        let (mean, std) = mean_std(accs);
        aggregates.push(Aggregate {
            method: method.clone(),
            target: Some(target.clone()),
            severity: *severity,
            mean_accuracy: mean,
            std_accuracy: std,
            n: accs.len(),
        });
    }
    let mut overall: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((method, _), accs) in &per_method_seed {
        overall
            .entry(method.clone())
            .or_default()
            .push(accs.iter().sum::<f64>() / accs.len() as f64);
    }
    for (method, seed_means) in &overall {
        let (mean, std) = mean_std(seed_means);
        aggregates.push(Aggregate {
            method: method.clone(),
            target: None,
            severity: None,
            mean_accuracy: mean,
            std_accuracy: std,
            n: seed_means.len(),
        });
    }
    aggregates.sort_by(|a, b| {
        (&a.method, &a.target, a.severity).cmp(&(&b.method, &b.target, b.severity))
    });
    aggregates
}

// ── Emission ───────────────────────────────────────────────────────

fn fmt_opt_severity(severity: Option<u8>) -> String {
    severity.map(|s| s.to_string()).unwrap_or_default()
}

pub fn table_to_csv(table: &ResultTable) -> String {
    let mut out =
        String::from("method,target,severity,seed,accuracy,mean_entropy,affine_delta_norm,batches\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.method,
            row.target,
            fmt_opt_severity(row.severity),
            row.seed,
            row.accuracy,
            row.mean_entropy,
            row.affine_delta_norm,
            row.batches
        ));
    }
    out
}

pub fn table_to_markdown(table: &ResultTable, title: &str) -> String {
    let mut out = format!("# {title}\n\nAccuracy, mean over seeds (percent).\n\n");
    out.push_str("| method | target | severity | accuracy | n |\n");
    out.push_str("|---|---|---|---|---|\n");
    for agg in &table.aggregates {
        out.push_str(&format!(
            "| {} | {} | {} | {:.1} ±{:.1} | {} |\n",
            agg.method,
            agg.target.as_deref().unwrap_or("(overall)"),
            fmt_opt_severity(agg.severity),
            agg.mean_accuracy * 100.0,
            agg.std_accuracy * 100.0,
            agg.n
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub crc32: u32,
}

/// Write the table as JSON + CSV + markdown under `dir`, then index every
/// file in `manifest.json`. Returns the paths written.
pub fn emit_report(table: &ResultTable, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();

    let json_path = dir.join(format!("{name}.json"));
    let json = serde_json::to_string_pretty(table).expect("table serializes");
    std::fs::write(&json_path, json.as_bytes()).map_err(|e| io_err(&json_path, e))?;
    written.push(json_path);

    let csv_path = dir.join(format!("{name}.csv"));
    std::fs::write(&csv_path, table_to_csv(table)).map_err(|e| io_err(&csv_path, e))?;
    written.push(csv_path);

    let md_path = dir.join(format!("{name}.md"));
    std::fs::write(&md_path, table_to_markdown(table, name)).map_err(|e| io_err(&md_path, e))?;
    written.push(md_path);

    let mut entries = Vec::new();
    for path in &written {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        entries.push(ManifestEntry {
            file: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            bytes: bytes.len() as u64,
            crc32: crc32fast::hash(&bytes),
        });
    }
    entries.sort_by(|a, b| a.file.cmp(&b.file));
    let manifest_path = dir.join("manifest.json");
    let manifest = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    std::fs::write(&manifest_path, manifest.as_bytes()).map_err(|e| io_err(&manifest_path, e))?;
    written.push(manifest_path);
    Ok(written)
}

/// Re-ingest a JSON report.
pub fn read_table(path: &Path) -> Result<ResultTable> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::ConfigFile {
        path: path.to_path_buf(),
        reason: format!("not a result table: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, target: &str, seed: u64, accuracy: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            target: target.into(),
            severity: None,
            seed,
            accuracy,
            mean_entropy: 0.5,
            affine_delta_norm: 0.1,
            batches: 3,
        }
    }

    #[test]
    fn aggregates_are_recomputable() {
        let table = ResultTable::from_rows(vec![
            row("tent", "d0", 0, 0.8),
            row("tent", "d0", 1, 0.9),
            row("tent", "d1", 0, 0.6),
            row("tent", "d1", 1, 0.7),
        ]);
        assert_eq!(table.recompute_aggregates(), table.aggregates);
        let overall = table.aggregate_for("tent", None).unwrap();
        assert!((overall.mean_accuracy - 0.75).abs() < 1e-12);
        // Per-seed means: (0.8+0.6)/2 = 0.7 and (0.9+0.7)/2 = 0.8.
        assert_eq!(table.per_seed_means("tent"), vec![0.7, 0.8]);
    }

    #[test]
    fn empty_table_is_valid() {
        let table = ResultTable::from_rows(Vec::new());
        assert!(table.rows.is_empty());
        assert!(table.aggregates.is_empty());
        let csv = table_to_csv(&table);
        assert_eq!(csv.lines().count(), 1, "header only");
        let md = table_to_markdown(&table, "empty");
        assert!(md.contains("| method |"));
    }

    #[test]
    fn csv_rows_match_json_rows() {
        let table = ResultTable::from_rows(vec![
            row("a", "t", 0, 0.5),
            row("b", "t", 0, 0.25),
            row("a", "t", 1, 0.75),
        ]);
        let csv = table_to_csv(&table);
        assert_eq!(csv.lines().count(), 1 + table.rows.len());
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let table = ResultTable::from_rows(vec![
            row("a", "t", 0, 1.0 / 3.0),
            row("a", "t", 1, 0.123456789012345678),
        ]);
        let json = serde_json::to_string_pretty(&table).unwrap();
        let back: ResultTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, table);
        for (a, b) in table.rows.iter().zip(back.rows.iter()) {
            assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
        }
        for (a, b) in table.aggregates.iter().zip(back.aggregates.iter()) {
            assert_eq!(a.mean_accuracy.to_bits(), b.mean_accuracy.to_bits());
            assert_eq!(a.std_accuracy.to_bits(), b.std_accuracy.to_bits());
        }
    }

    #[test]
    fn emit_writes_all_formats_and_manifest() {
        let dir = std::env::temp_dir().join(format!("ttbn-report-{}", std::process::id()));
        let table = ResultTable::from_rows(vec![row("tent", "d0", 0, 0.8)]);
        let written = emit_report(&table, &dir, "results").unwrap();
        assert_eq!(written.len(), 4);
        let manifest: Vec<ManifestEntry> =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest.len(), 3);
        let back = read_table(&dir.join("results.json")).unwrap();
        assert_eq!(back, table);
        std::fs::remove_dir_all(&dir).ok();
    }
}
