use std::fmt::Write as _;

use super::evaluate::MetricsReport;
use crate::items::ItemId;

const METRIC_COLUMNS: [&str; 7] = [
    "avg",
    "2-acc",
    "2-precision",
    "2-f1",
    "3-acc",
    "3-precision",
    "3-f1",
];

/// Aligned plain-text table: one row per report, 15 metric columns
/// (eight item MAEs, their mean, then binary and ternary acc/precision/f1).
pub fn render_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut header: Vec<String> = vec!["model".into()];
    header.extend(ItemId::ALL.iter().map(|id| id.as_str().to_string()));
    header.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));

    let mut body: Vec<Vec<String>> = Vec::new();
    for (name, r) in rows {
        let mut row = vec![name.to_string()];
        row.extend(r.per_item_mae.values().iter().map(|v| format!("{v:.4}")));
        for v in [
            r.mean_mae,
            r.binary.accuracy,
            r.binary.precision,
            r.binary.f1,
            r.ternary.accuracy,
            r.ternary.precision,
            r.ternary.f1,
        ] {
            row.push(format!("{v:.4}"));
        }
        body.push(row);
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].len())
                .chain(std::iter::once(header[c].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut out = String::new();
    let mut emit = |cells: &[String]| {
        let line: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    };
    emit(&header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    emit(&rule);
    for row in &body {
        emit(row);
    }
    out
}
