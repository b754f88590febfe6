//! Summary tables and accuracy-vs-magnitude plots from a report CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use oocs_core::{OocsError, Result};

use crate::eval::{EvalRow, REPORT_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
    pub rows: usize,
}

fn schema(line: u64, msg: impl std::fmt::Display) -> OocsError {
    OocsError::Format(format!("report line {line}: {msg}"))
}

/// Parses and validates a report CSV. Errors name the offending line.
pub fn read_report(path: &Path) -> Result<Vec<EvalRow>> {
    let text = fs::read_to_string(path).map_err(|e| OocsError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| schema(1, e))?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(schema(
            1,
            format!("expected header `{}`, found `{}`", REPORT_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            schema(line, e)
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: EvalRow = rec.deserialize(Some(&header)).map_err(|e| schema(line, e))?;
        if !(0.0..=1.0).contains(&row.accuracy) {
            return Err(schema(line, format!("accuracy {} outside [0, 1]", row.accuracy)));
        }
        if row.n == 0 {
            return Err(schema(line, "n must be positive"));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Mean accuracy over seeds, keyed by (model, test set, perturbation) and
/// then by magnitude.
type Series = BTreeMap<(String, String, String), Vec<(f64, Vec<f64>)>>;

fn group(rows: &[EvalRow]) -> Series {
    let mut out: Series = BTreeMap::new();
    for r in rows {
        let key = (r.model_id.clone(), r.test_set_id.clone(), r.perturbation.clone());
        let points = out.entry(key).or_default();
        match points.iter_mut().find(|(m, _)| *m == r.magnitude) {
            Some((_, accs)) => accs.push(r.accuracy),
            None => points.push((r.magnitude, vec![r.accuracy])),
        }
    }
    for points in out.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn summary_markdown(series: &Series) -> String {
    let mut s = String::from("# Evaluation summary\n\n");
    s.push_str("| model | test set | perturbation | magnitude | seeds | accuracy | min | max |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for ((model, test, pert), points) in series {
        for (mag, accs) in points {
            let lo = accs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                s,
                "| {model} | {test} | {pert} | {mag} | {} | {:.4} | {lo:.4} | {hi:.4} |",
                accs.len(),
                mean(accs)
            );
        }
    }
    s
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One line per labelled series of (magnitude, accuracy) points.
pub fn line_plot_svg(title: &str, lines: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 160.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let xs = lines.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if !(x1 > x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - y) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<g stroke="black" fill="none"><line x1="{left}" y1="{}" x2="{}" y2="{}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}"/></g>"#,
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{tick}" y1="{py}" x2="{left}" y2="{py}" stroke="black"/><text x="{label}" y="{ty}" text-anchor="end">{y:.1}</text>"#,
            tick = left - 4.0,
            label = left - 6.0,
            py = sy(y),
            ty = sy(y) + 4.0
        );
    }
    for i in 0..=4 {
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/><text x="{0}" y="{3}" text-anchor="middle">{x:.3}</text>"#,
            sx(x),
            top + ph,
            top + ph + 4.0,
            top + ph + 18.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">magnitude</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">accuracy</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `summary.md` and one `<perturbation>.svg` per perturbation found
/// (clean `none` rows are tabulated but not plotted).
pub fn cmd_report(report_csv: &Path, out_dir: &Path) -> Result<ReportOutput> {
    let rows = read_report(report_csv)?;
    fs::create_dir_all(out_dir).map_err(|e| OocsError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let series = group(&rows);
    let summary = out_dir.join("summary.md");
    let write = |path: &Path, text: &str| {
        fs::write(path, text).map_err(|e| OocsError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    };
    write(&summary, &summary_markdown(&series))?;

    type Entry<'a> = (&'a str, &'a str, &'a Vec<(f64, Vec<f64>)>);
    let mut per_pert: BTreeMap<&str, Vec<Entry>> = BTreeMap::new();
    for ((model, test, pert), points) in &series {
        if pert != "none" {
            per_pert.entry(pert).or_default().push((model, test, points));
        }
    }
    let mut plots = Vec::new();
    for (pert, entries) in per_pert {
        let several_sets = entries.iter().any(|e| e.1 != entries[0].1);
        let lines: Vec<(String, Vec<(f64, f64)>)> = entries
            .iter()
            .map(|(model, test, points)| {
                let label = if several_sets { format!("{model} ({test})") } else { model.to_string() };
                (label, points.iter().map(|(m, a)| (*m, mean(a))).collect())
            })
            .collect();
        let name: String = pert.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
        let path = out_dir.join(format!("{name}.svg"));
        write(&path, &line_plot_svg(&format!("accuracy vs {pert}"), &lines))?;
        plots.push(path);
    }
    Ok(ReportOutput {
        summary,
        plots,
        rows: rows.len(),
    })
}
