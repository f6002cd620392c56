//! Result records, seed aggregation, summary table and charts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MethodResult, OodAuroc};
use crate::error::Result;
use crate::metrics::{mean, std_dev};

/// One line of a result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Method(MethodResult),
    Ood(OodAuroc),
    Steering { seed: u64, teacher: usize, gamma: f64, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub seed: u64,
    pub seconds: f64,
}

/// Records of a run. Wall-clock timings are kept apart so that the records
/// regenerate exactly from (config, seeds).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub records: Vec<Record>,
    pub wall_clock: Vec<Timing>,
}

/// Mean and sample std of one quantity over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

fn row(label: String, xs: &[f64]) -> SummaryRow {
    SummaryRow { label, n: xs.len(), mean: mean(xs), std: std_dev(xs) }
}

fn fmt_lambda(l: f64) -> String {
    format!("lambda={l}")
}

impl RunReport {
    pub fn methods(&self) -> impl Iterator<Item = &MethodResult> {
        self.records.iter().filter_map(|r| match r {
            Record::Method(m) => Some(m),
            _ => None,
        })
    }

    pub fn oods(&self) -> impl Iterator<Item = &OodAuroc> {
        self.records.iter().filter_map(|r| match r {
            Record::Ood(o) => Some(o),
            _ => None,
        })
    }

    /// Row label of a method result; the weight and teacher count are
    /// appended only when the report varies them.
    pub fn label(&self, m: &MethodResult) -> String {
        let lambdas: BTreeSet<String> = self.methods().filter(|r| r.method == m.method).filter_map(|r| r.lambda.map(fmt_lambda)).collect();
        let ks: BTreeSet<usize> = self.methods().map(|r| r.n_teachers).collect();
        let mut s = m.method.name().to_string();
        if lambdas.len() > 1 {
            if let Some(l) = m.lambda {
                write!(s, " {}", fmt_lambda(l)).unwrap();
            }
        }
        if ks.len() > 1 {
            write!(s, " K={}", m.n_teachers).unwrap();
        }
        s
    }

    /// Mean accuracy per label, in first-appearance order.
    pub fn accuracy_summary(&self) -> Vec<SummaryRow> {
        let mut order: Vec<String> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for m in self.methods() {
            let l = self.label(m);
            match order.iter().position(|o| *o == l) {
                Some(i) => values[i].push(m.accuracy),
                None => {
                    order.push(l);
                    values.push(vec![m.accuracy]);
                }
            }
        }
        order.into_iter().zip(values).map(|(l, v)| row(l, &v)).collect()
    }

    /// Mean accuracy of the rows labeled `label`.
    pub fn mean_accuracy(&self, label: &str) -> Option<f64> {
        self.accuracy_summary().into_iter().find(|r| r.label == label).map(|r| r.mean)
    }

    /// Mean final-block AUROC per score, over teachers and seeds.
    pub fn auroc_summary(&self) -> Vec<SummaryRow> {
        let o: Vec<&OodAuroc> = self.oods().collect();
        if o.is_empty() {
            return Vec::new();
        }
        vec![
            row("auroc rmd".into(), &o.iter().map(|x| x.rmd).collect::<Vec<_>>()),
            row("auroc md".into(), &o.iter().map(|x| x.md).collect::<Vec<_>>()),
            row("auroc msp".into(), &o.iter().map(|x| x.msp).collect::<Vec<_>>()),
        ]
    }

    pub fn steering_summary(&self) -> Vec<SummaryRow> {
        let rates: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| match r {
                Record::Steering { rate, .. } => Some(*rate),
                _ => None,
            })
            .collect();
        if rates.is_empty() {
            Vec::new()
        } else {
            vec![row("steering success".into(), &rates)]
        }
    }

    /// Human-readable table of accuracies and diagnostics.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let rows: Vec<SummaryRow> = self.accuracy_summary().into_iter().chain(self.auroc_summary()).chain(self.steering_summary()).collect();
        let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
        writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>5}", "row", "mean", "std", "n").unwrap();
        for r in &rows {
            writeln!(out, "{:<width$}  {:>8.4}  {:>8.4}  {:>5}", r.label, r.mean, r.std, r.n).unwrap();
        }
        out
    }

    /// One JSON record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        Ok(Self { records, wall_clock: Vec::new() })
    }

    /// Write `results.jsonl`, `summary.txt` and, when any, `timing.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.jsonl"), self.to_jsonl())?;
        fs::write(dir.join("summary.txt"), self.table())?;
        if !self.wall_clock.is_empty() {
            let mut f = fs::File::create(dir.join("timing.jsonl"))?;
            for t in &self.wall_clock {
                writeln!(f, "{}", serde_json::to_string(t)?)?;
            }
        }
        Ok(())
    }

    /// Bar chart of mean accuracy with one-std whiskers.
    pub fn accuracy_svg(&self) -> String {
        bar_chart("Test accuracy (union labels)", &self.accuracy_summary())
    }

    pub fn auroc_svg(&self) -> String {
        bar_chart("Final-block AUROC", &self.auroc_summary())
    }
}

/// Static SVG bar chart on a [0, 1] axis.
pub fn bar_chart(title: &str, rows: &[SummaryRow]) -> String {
    let (bar, gap, left, top, height) = (36.0, 14.0, 50.0, 40.0, 240.0);
    let width = left + rows.len() as f64 * (bar + gap) + gap;
    let mut s = String::new();
    let total_h = top + height + 120.0;
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, r#"<text x="{left}" y="20" font-size="14">{title}</text>"#).unwrap();
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = top + height * (1.0 - v);
        writeln!(s, r##"<line x1="{left}" y1="{y}" x2="{width}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.2}</text>"##, left - 4.0, y + 4.0).unwrap();
    }
    for (i, r) in rows.iter().enumerate() {
        let x = left + gap + i as f64 * (bar + gap);
        let h = height * r.mean.clamp(0.0, 1.0);
        let y = top + height - h;
        writeln!(s, r##"<rect x="{x}" y="{y}" width="{bar}" height="{h}" fill="#4c72b0"/>"##).unwrap();
        if r.std > 0.0 {
            let cx = x + bar / 2.0;
            let y1 = top + height * (1.0 - (r.mean + r.std).clamp(0.0, 1.0));
            let y2 = top + height * (1.0 - (r.mean - r.std).clamp(0.0, 1.0));
            writeln!(s, r#"<line x1="{cx}" y1="{y1}" x2="{cx}" y2="{y2}" stroke="black"/>"#).unwrap();
        }
        let ly = top + height + 12.0;
        writeln!(s, r#"<text transform="translate({},{ly}) rotate(45)">{}</text>"#, x + bar / 2.0, escape(&r.label)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
