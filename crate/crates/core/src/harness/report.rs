//! CSV, Markdown, and SVG emitters for experiment results.

use std::fmt::Write;

use crate::trainer::RunResult;

pub const METRICS_HEADER: &str =
    "scheme,seed,epoch,task,train_loss,test_loss,test_accuracy,mean_weight,lr";

/// One row per (epoch, task) in the fixed metrics column order.
pub fn metrics_csv(run: &RunResult) -> String {
    let mut out = String::new();
    writeln!(out, "{METRICS_HEADER}").unwrap();
    for m in &run.epochs {
        for (col, &task) in run.tasks.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                run.label,
                run.config.seed,
                m.epoch,
                task,
                m.train_loss[col],
                m.test_loss[col],
                m.test_accuracy[col],
                m.mean_weight[col],
                m.lr
            )
            .unwrap();
        }
    }
    out
}

/// Rows of a scheme-by-task comparison table. `None` marks a missing cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl AccuracyTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("scheme,{}\n", self.columns.join(","));
        for (name, cells) in &self.rows {
            let cells: Vec<String> = cells
                .iter()
                .map(|c| c.map_or_else(String::new, |v| v.to_string()))
                .collect();
            writeln!(out, "{name},{}", cells.join(",")).unwrap();
        }
        out
    }

    /// Best value per column in `**bold**`, second best in `_underscore_`.
    /// Ties share the mark.
    pub fn to_markdown(&self) -> String {
        let ranks: Vec<(Option<f64>, Option<f64>)> = (0..self.columns.len())
            .map(|j| {
                let mut vals: Vec<f64> = self.rows.iter().filter_map(|(_, r)| r[j]).collect();
                vals.sort_by(|a, b| b.total_cmp(a));
                vals.dedup();
                (vals.first().copied(), vals.get(1).copied())
            })
            .collect();
        let mut out = format!("| scheme | {} |\n", self.columns.join(" | "));
        writeln!(out, "|---|{}", "---|".repeat(self.columns.len())).unwrap();
        for (name, cells) in &self.rows {
            let cells: Vec<String> = cells
                .iter()
                .zip(&ranks)
                .map(|(cell, &(best, second))| match *cell {
                    None => "n/a".to_string(),
                    Some(v) if Some(v) == best => format!("**{v:.2}**"),
                    Some(v) if Some(v) == second => format!("_{v:.2}_"),
                    Some(v) => format!("{v:.2}"),
                })
                .collect();
            writeln!(out, "| {name} | {} |", cells.join(" | ")).unwrap();
        }
        out
    }
}

/// Mean-over-seeds loss curve of one scheme: `epoch,task,train_loss,test_loss`.
pub fn loss_curve_csv(curve: &LossCurve) -> String {
    let mut out = String::from("epoch,task,train_loss,test_loss\n");
    for (epoch, (train, test)) in curve.train.iter().zip(&curve.test).enumerate() {
        for (col, &task) in curve.tasks.iter().enumerate() {
            writeln!(out, "{epoch},{task},{},{}", train[col], test[col]).unwrap();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossCurve {
    pub scheme: String,
    pub tasks: Vec<usize>,
    /// `[epoch][task column]`
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

impl LossCurve {
    /// Averages runs of one scheme (same epochs) elementwise. Runs that
    /// cover disjoint tasks (STL) are merged column-wise.
    pub fn average(scheme: &str, runs: &[&RunResult]) -> Option<LossCurve> {
        if runs.is_empty() {
            return None;
        }
        let mut tasks: Vec<usize> = runs.iter().flat_map(|r| r.tasks.iter().copied()).collect();
        tasks.sort_unstable();
        tasks.dedup();
        let epochs = runs.iter().map(|r| r.epochs.len()).min().unwrap_or(0);
        let mut train = vec![vec![0.0; tasks.len()]; epochs];
        let mut test = vec![vec![0.0; tasks.len()]; epochs];
        let mut counts = vec![0usize; tasks.len()];
        for run in runs {
            for (col, task) in run.tasks.iter().enumerate() {
                let j = tasks.binary_search(task).expect("task collected");
                counts[j] += 1;
                for e in 0..epochs {
                    train[e][j] += run.epochs[e].train_loss[col];
                    test[e][j] += run.epochs[e].test_loss[col];
                }
            }
        }
        for e in 0..epochs {
            for j in 0..tasks.len() {
                train[e][j] /= counts[j] as f64;
                test[e][j] /= counts[j] as f64;
            }
        }
        Some(LossCurve {
            scheme: scheme.to_string(),
            tasks,
            train,
            test,
        })
    }

    fn mean_test(&self) -> Vec<f64> {
        self.test
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// Line chart of task-averaged test loss against epoch, one line per scheme.
pub fn loss_curves_svg(curves: &[LossCurve]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let series: Vec<(&str, Vec<f64>)> = curves
        .iter()
        .map(|c| (c.scheme.as_str(), c.mean_test()))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let max_epochs = series
        .iter()
        .map(|(_, v)| v.len())
        .max()
        .unwrap_or(1)
        .max(2);
    let y_max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let x = |e: usize| pad + (w - 2.0 * pad) * e as f64 / (max_epochs - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v / y_max;

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<path d="M{pad},{pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        w / 2.0,
        h - 12.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">mean test loss</text>"#,
        h / 2.0,
        h / 2.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{y_max:.3}</text>"#,
        pad - 4.0,
        pad + 4.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">0</text>"#,
        pad - 4.0,
        h - pad
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        w - pad,
        h - pad + 16.0,
        max_epochs - 1
    )
    .unwrap();
    for (i, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(e, &v)| format!("{:.2},{:.2}", x(e), y(v)))
            .collect();
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = pad + 16.0 * i as f64;
        writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            w - pad - 150.0,
            w - pad - 130.0,
            w - pad - 125.0,
            ly + 4.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markdown_marks_per_column() {
        let t = AccuracyTable {
            columns: vec!["a".into(), "b".into()],
            rows: vec![
                ("x".into(), vec![Some(10.0), Some(3.0)]),
                ("y".into(), vec![Some(20.0), None]),
                ("z".into(), vec![Some(15.0), Some(4.0)]),
            ],
        };
        let md = t.to_markdown();
        assert!(md.contains("| x | 10.00 | _3.00_ |"), "{md}");
        assert!(md.contains("| y | **20.00** | n/a |"), "{md}");
        assert!(md.contains("| z | _15.00_ | **4.00** |"), "{md}");
    }

    #[test]
    fn csv_leaves_missing_cells_blank() {
        let t = AccuracyTable {
            columns: vec!["a".into()],
            rows: vec![("x".into(), vec![None])],
        };
        assert_eq!(t.to_csv(), "scheme,a\nx,\n");
    }
}
