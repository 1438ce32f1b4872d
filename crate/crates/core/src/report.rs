//! CSV and SVG rendering of a [`MetricsReport`]. Output is a pure function
//! of the report, so regenerating it yields identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::write_atomic;
use crate::error::{Error, Result};
use crate::evaluation::{ClassCurves, CurvePoint, MetricsReport};

pub fn confusion_csv(r: &MetricsReport) -> String {
    let mut s = String::from("true\\predicted");
    for n in &r.class_names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for (name, row) in r.class_names.iter().zip(&r.confusion.counts) {
        s.push_str(name);
        for c in row {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    s
}

pub fn metrics_csv(r: &MetricsReport) -> String {
    let m = &r.summary;
    let mut s = String::from("metric,value\n");
    for (k, v) in [
        ("accuracy", m.accuracy),
        ("macro_precision", m.macro_precision),
        ("macro_recall", m.macro_recall),
        ("macro_f1", m.macro_f1),
    ] {
        let _ = writeln!(s, "{k},{v}");
    }
    for (name, c) in r.class_names.iter().zip(&m.per_class) {
        if !c.is_present() {
            continue;
        }
        let _ = writeln!(s, "precision[{name}],{}", c.precision);
        let _ = writeln!(s, "recall[{name}],{}", c.recall);
        let _ = writeln!(s, "f1[{name}],{}", c.f1);
        let _ = writeln!(s, "support[{name}],{}", c.support);
    }
    for c in &r.curves {
        let _ = writeln!(s, "auc[{}],{}", r.class_names[c.class], c.auc);
    }
    s
}

pub fn per_snr_csv(r: &MetricsReport) -> String {
    let mut s = String::from("snr_db,correct,total,accuracy\n");
    for row in &r.per_snr {
        let snr = if row.snr_db.is_infinite() { "clean".to_string() } else { row.snr_db.to_string() };
        let _ = writeln!(s, "{snr},{},{},{}", row.correct, row.total, row.accuracy());
    }
    s
}

/// `class,threshold,x,y` rows for one curve family.
pub fn curve_csv(r: &MetricsReport, pick: fn(&ClassCurves) -> &[CurvePoint]) -> String {
    let mut s = String::from("class,threshold,x,y\n");
    for c in &r.curves {
        for p in pick(c) {
            let _ = writeln!(s, "{},{},{},{}", r.class_names[c.class], p.threshold, p.x, p.y);
        }
    }
    s
}

const PALETTE: [&str; 9] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22"];

/// One polyline per class on the unit square, with a legend.
pub fn curve_svg(
    r: &MetricsReport,
    title: &str,
    x_label: &str,
    y_label: &str,
    pick: fn(&ClassCurves) -> &[CurvePoint],
) -> String {
    let (w, h, m) = (480.0, 400.0, 50.0);
    let (pw, ph) = (w - 2.0 * m - 90.0, h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, m + pw / 2.0);
    let _ = writeln!(s, r#"<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let x = m + v * pw;
        let y = m + ph - v * ph;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v}</text>"#, m + ph + 14.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, m - 4.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, m + pw / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        m + ph / 2.0,
        m + ph / 2.0
    );
    for (k, c) in r.curves.iter().enumerate() {
        let colour = PALETTE[c.class % PALETTE.len()];
        let pts: Vec<String> = pick(c)
            .iter()
            .map(|p| format!("{:.2},{:.2}", m + p.x.clamp(0.0, 1.0) * pw, m + ph - p.y.clamp(0.0, 1.0) * ph))
            .collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = m + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            m + pw + 10.0,
            m + pw + 24.0,
            m + pw + 28.0,
            ly + 4.0,
            r.class_names[c.class]
        );
    }
    s.push_str("</svg>\n");
    s
}

fn roc(c: &ClassCurves) -> &[CurvePoint] {
    &c.roc
}

fn pr(c: &ClassCurves) -> &[CurvePoint] {
    &c.pr
}

fn f1(c: &ClassCurves) -> &[CurvePoint] {
    &c.f1
}

/// Every report file as `(file name, contents)`.
pub fn render(r: &MetricsReport) -> Vec<(&'static str, String)> {
    vec![
        ("confusion.csv", confusion_csv(r)),
        ("metrics.csv", metrics_csv(r)),
        ("per_snr.csv", per_snr_csv(r)),
        ("roc.csv", curve_csv(r, roc)),
        ("pr.csv", curve_csv(r, pr)),
        ("f1_threshold.csv", curve_csv(r, f1)),
        ("roc.svg", curve_svg(r, "ROC (one-vs-rest)", "false positive rate", "true positive rate", roc)),
        ("pr.svg", curve_svg(r, "Precision-recall", "recall", "precision", pr)),
        ("f1_threshold.svg", curve_svg(r, "F1 vs threshold", "threshold", "F1", f1)),
    ]
}

/// Writes all report files into `dir`, creating it if needed.
pub fn write_report(r: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    render(r)
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            write_atomic(&path, body.as_bytes())?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{metrics, Prediction, PredictionSet};

    fn report() -> MetricsReport {
        let rows = [(0, [0.7, 0.2, 0.1]), (1, [0.1, 0.8, 0.1]), (1, [0.5, 0.4, 0.1]), (0, [0.6, 0.3, 0.1])];
        let items = rows
            .iter()
            .enumerate()
            .map(|(i, (label, p))| Prediction {
                label: *label,
                probs: p.to_vec(),
                snr_db: if i % 2 == 0 { 10.0 } else { f64::INFINITY },
            })
            .collect();
        metrics(&PredictionSet::new(3, items).unwrap()).unwrap()
    }

    #[test]
    fn confusion_has_name_header_and_rows() {
        let csv = confusion_csv(&report());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "true\\predicted,BPSK,QPSK,8PSK");
        assert_eq!(lines[1], "BPSK,2,0,0");
        assert_eq!(lines[2], "QPSK,1,1,0");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn files_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = report();
        let paths = write_report(&a, dir.path()).unwrap();
        assert_eq!(paths.len(), 9);
        let first: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        write_report(&report(), dir.path()).unwrap();
        let second: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        let svg = String::from_utf8(first[6].clone()).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }

    #[test]
    fn summary_and_snr_tables() {
        let r = report();
        let m = metrics_csv(&r);
        assert!(m.starts_with("metric,value\naccuracy,0.75\n"));
        assert!(!m.contains("[8PSK]"));
        assert_eq!(per_snr_csv(&r), "snr_db,correct,total,accuracy\n10,1,2,0.5\nclean,2,2,1\n");
    }
}
