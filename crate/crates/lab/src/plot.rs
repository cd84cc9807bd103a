//! Precision-recall export: CSV tables and standalone SVG plots.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Serialized evaluation output of `eval-sap`, input of `plot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub dataset: String,
    pub images: usize,
    pub truths: usize,
    pub curves: Vec<Curve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub theta: f64,
    pub sap: f64,
    /// `(recall, precision)` per score-sorted prefix.
    pub points: Vec<(f64, f64)>,
}

pub fn pr_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("recall,precision\n");
    for (r, p) in points {
        writeln!(s, "{r},{p}").unwrap();
    }
    s
}

const SIZE: f64 = 320.0;
const MARGIN: f64 = 40.0;

/// Minimal static plot of one curve on the unit square.
pub fn pr_svg(curve: &Curve) -> String {
    let span = SIZE - 2.0 * MARGIN;
    let x = |r: f64| MARGIN + r * span;
    let y = |p: f64| SIZE - MARGIN - p * span;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for t in 1..5 {
        let v = t as f64 / 5.0;
        writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{MARGIN}" x2="{0:.2}" y2="{1:.2}" stroke="#ddd"/><line x1="{MARGIN}" y1="{2:.2}" x2="{1:.2}" y2="{2:.2}" stroke="#ddd"/>"##,
            x(v),
            SIZE - MARGIN,
            y(v)
        )
        .unwrap();
    }
    if !curve.points.is_empty() {
        let pts: Vec<String> = curve.points.iter().map(|&(r, p)| format!("{:.2},{:.2}", x(r), y(p))).collect();
        writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f6fb4" stroke-width="2"/>"##,
            pts.join(" ")
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">sAP{} = {:.2}</text>"#,
        SIZE / 2.0,
        curve.theta,
        curve.sap
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">recall</text>"#,
        SIZE / 2.0,
        SIZE - 12.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{0}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {0})">precision</text>"#,
        SIZE / 2.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_one_row_per_point() {
        let s = pr_csv(&[(0.5, 1.0), (1.0, 0.5)]);
        assert_eq!(s, "recall,precision\n0.5,1\n1,0.5\n");
    }

    #[test]
    fn svg_is_closed_document() {
        let c = Curve {
            theta: 10.0,
            sap: 50.0,
            points: vec![(0.0, 1.0), (1.0, 0.5)],
        };
        let s = pr_svg(&c);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("polyline"));
    }
}
