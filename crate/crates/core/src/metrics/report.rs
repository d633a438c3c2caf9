use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, DatasetMetrics};
use crate::error::{Error, Result};

/// Table shapes for result reporting.
///
/// * `Table2`: per excluded sub-dataset, step-1 and step-2 columns of
///   source, excluded, buildcrack and overall (union of the two target pools).
/// * `Table3`: one source and one target column per run.
/// * `Table4`: ablation rows with KL-loss and GRL switches plus source and
///   target columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Table2,
    Table3,
    Table4,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(Layout::Table2),
            "table3" => Ok(Layout::Table3),
            "table4" => Ok(Layout::Table4),
            other => Err(Error::config(format!(
                "unknown layout {other:?}; expected table2, table3 or table4"
            ))),
        }
    }
}

/// Metrics of one evaluated model, keyed by pool name (`source`, `target`,
/// `excluded`, `buildcrack`, …).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub row: String,
    pub step: u8,
    pub use_kld: bool,
    pub use_grl: bool,
    pub datasets: BTreeMap<String, DatasetMetrics>,
}

impl RunResults {
    pub fn new(row: &str, step: u8, datasets: impl IntoIterator<Item = DatasetMetrics>) -> Self {
        Self {
            row: row.to_string(),
            step,
            use_kld: step == 2,
            use_grl: step == 2,
            datasets: datasets.into_iter().map(|d| (d.name.clone(), d)).collect(),
        }
    }

    fn require(&self, name: &str) -> Result<&DatasetMetrics> {
        self.datasets.get(name).ok_or_else(|| {
            Error::validation(format!(
                "run {} (step {}) has no {name:?} results; available: {}",
                self.row,
                self.step,
                self.datasets.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Miou(f64),
    Flag(bool),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub key: String,
    pub value: CellValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub cells: Vec<ReportCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub layout: Layout,
    pub rows: Vec<ReportRow>,
    /// Every dataset entry that fed the report, keyed `row/step/name`.
    pub per_dataset: BTreeMap<String, DatasetMetrics>,
}

impl EvalReport {
    /// One `key=value` line per row; mIoU values are fractions in `[0, 1]`.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let _ = write!(out, "layout={} row={}", layout_name(self.layout), row.label);
            for cell in &row.cells {
                match cell.value {
                    CellValue::Miou(v) => {
                        let _ = write!(out, " {}={v:.6}", cell.key);
                    }
                    CellValue::Flag(b) => {
                        let _ = write!(out, " {}={b}", cell.key);
                    }
                }
            }
            out.push('\n');
        }
        for (key, m) in &self.per_dataset {
            let iou = |v: Option<f64>| v.map_or("absent".to_string(), |v| format!("{v:.6}"));
            let c = m.confusion.counts;
            let _ = writeln!(
                out,
                "dataset={key} iou_background={} iou_crack={} miou={:.6} images={} skipped_unlabeled={} tn={} fp={} fn={} tp={}",
                iou(m.iou_background),
                iou(m.iou_crack),
                m.miou,
                m.images,
                m.skipped_unlabeled,
                c[0][0],
                c[0][1],
                c[1][0],
                c[1][1]
            );
        }
        out
    }

    /// Fixed-width table with mIoU in percent, two decimals.
    pub fn render_table(&self) -> String {
        let headers: Vec<String> = std::iter::once(first_header(self.layout).to_string())
            .chain(
                self.rows
                    .first()
                    .into_iter()
                    .flat_map(|r| r.cells.iter().map(|c| c.key.clone())),
            )
            .collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.label.clone())
                    .chain(r.cells.iter().map(|c| match c.value {
                        CellValue::Miou(v) => format!("{:.2}", v * 100.0),
                        CellValue::Flag(true) => "yes".into(),
                        CellValue::Flag(false) => "no".into(),
                    }))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..headers.len())
            .map(|i| {
                body.iter()
                    .filter_map(|r| r.get(i))
                    .chain(std::iter::once(&headers[i]))
                    .map(String::len)
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(&headers);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &body {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

fn layout_name(layout: Layout) -> &'static str {
    match layout {
        Layout::Table2 => "table2",
        Layout::Table3 => "table3",
        Layout::Table4 => "table4",
    }
}

fn first_header(layout: Layout) -> &'static str {
    match layout {
        Layout::Table2 => "excluded",
        Layout::Table3 => "method",
        Layout::Table4 => "method",
    }
}

fn miou_cell(key: &str, v: f64) -> ReportCell {
    ReportCell {
        key: key.to_string(),
        value: CellValue::Miou(v),
    }
}

fn table2_cells(run: &RunResults) -> Result<(Vec<ReportCell>, DatasetMetrics)> {
    let source = run.require("source")?;
    let excluded = run.require("excluded")?;
    let build = run.require("buildcrack")?;
    let union: ConfusionMatrix = excluded.confusion.merge(&build.confusion);
    let overall = DatasetMetrics::from_confusion("overall", union, excluded.images + build.images)?;
    let s = run.step;
    let cells = vec![
        miou_cell(&format!("step{s}.source"), source.miou),
        miou_cell(&format!("step{s}.excluded"), excluded.miou),
        miou_cell(&format!("step{s}.buildcrack"), build.miou),
        miou_cell(&format!("step{s}.overall"), overall.miou),
    ];
    Ok((cells, overall))
}

/// Arranges evaluated runs into `layout`. Errors name the first missing
/// pool or step.
pub fn build_report(results: &[RunResults], layout: Layout) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::validation("cannot build a report from no results"));
    }
    let mut per_dataset = BTreeMap::new();
    for run in results {
        for (name, m) in &run.datasets {
            per_dataset.insert(format!("{}/step{}/{name}", run.row, run.step), m.clone());
        }
    }
    let mut rows = Vec::new();
    match layout {
        Layout::Table2 => {
            let mut order: Vec<&str> = Vec::new();
            for run in results {
                if !order.contains(&run.row.as_str()) {
                    order.push(&run.row);
                }
            }
            for label in order {
                let mut cells = Vec::new();
                for step in [1, 2] {
                    let run = results
                        .iter()
                        .find(|r| r.row == label && r.step == step)
                        .ok_or_else(|| Error::validation(format!("row {label} has no step-{step} results")))?;
                    let (c, overall) = table2_cells(run)?;
                    per_dataset.insert(format!("{label}/step{step}/overall"), overall);
                    cells.extend(c);
                }
                rows.push(ReportRow {
                    label: label.to_string(),
                    cells,
                });
            }
        }
        Layout::Table3 | Layout::Table4 => {
            for run in results {
                let mut cells = Vec::new();
                if layout == Layout::Table4 {
                    cells.push(ReportCell {
                        key: "kld".into(),
                        value: CellValue::Flag(run.use_kld),
                    });
                    cells.push(ReportCell {
                        key: "grl".into(),
                        value: CellValue::Flag(run.use_grl),
                    });
                }
                cells.push(miou_cell("source", run.require("source")?.miou));
                cells.push(miou_cell("target", run.require("target")?.miou));
                rows.push(ReportRow {
                    label: run.row.clone(),
                    cells,
                });
            }
        }
    }
    Ok(EvalReport {
        layout,
        rows,
        per_dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(name: &str, counts: [[u64; 2]; 2]) -> DatasetMetrics {
        DatasetMetrics::from_confusion(name, ConfusionMatrix { counts }, 1).unwrap()
    }

    fn table2_run(step: u8) -> RunResults {
        RunResults::new(
            "volker",
            step,
            [
                metrics("source", [[90, 2], [3, 5]]),
                metrics("excluded", [[50, 10], [5, 5]]),
                metrics("buildcrack", [[400, 30], [20, 50]]),
            ],
        )
    }

    #[test]
    fn table2_has_eight_columns() {
        let r = build_report(&[table2_run(1), table2_run(2)], Layout::Table2).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].cells.len(), 8);
        let union = metrics("u", [[450, 40], [25, 55]]).miou;
        assert_eq!(r.rows[0].cells[3].value, CellValue::Miou(union));
        let table = r.render_table();
        assert!(table.lines().next().unwrap().contains("step2.overall"));
    }

    #[test]
    fn table2_requires_both_steps() {
        let err = build_report(&[table2_run(1)], Layout::Table2).unwrap_err();
        assert!(err.to_string().contains("step-2"));
    }

    #[test]
    fn table3_two_columns_and_missing_pool() {
        let run = RunResults::new(
            "ours",
            2,
            [metrics("source", [[9, 1], [1, 9]]), metrics("target", [[8, 2], [2, 8]])],
        );
        let r = build_report(std::slice::from_ref(&run), Layout::Table3).unwrap();
        assert_eq!(r.rows[0].cells.len(), 2);
        assert!(r.to_records().starts_with("layout=table3 row=ours source="));
        let mut partial = run.clone();
        partial.datasets.remove("target");
        let err = build_report(&[partial], Layout::Table3).unwrap_err();
        assert!(err.to_string().contains("\"target\""));
    }

    #[test]
    fn table4_carries_switches() {
        let mut run = RunResults::new(
            "2 step w/o kld",
            2,
            [metrics("source", [[9, 1], [1, 9]]), metrics("target", [[8, 2], [2, 8]])],
        );
        run.use_kld = false;
        let r = build_report(&[run], Layout::Table4).unwrap();
        assert_eq!(r.rows[0].cells[0].value, CellValue::Flag(false));
        assert_eq!(r.rows[0].cells.len(), 4);
    }

    #[test]
    fn empty_results_rejected() {
        assert!(build_report(&[], Layout::Table3).is_err());
        assert!("table9".parse::<Layout>().is_err());
    }
}
