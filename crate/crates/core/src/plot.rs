//! Self-contained SVG line charts of a run's per-round metrics.

use std::fmt::Write;

use crate::metrics::RoundRecord;

const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 140.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 44.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Axis range that never collapses to zero width.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.05 } else { 0.5 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn panel(out: &mut String, p: &Panel, y0: f64) {
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let all = || p.series.iter().flat_map(|s| s.points.iter());
    let (x_lo, x_hi) = range(all().map(|p| p.0));
    let (y_lo, y_hi) = range(all().map(|p| p.1));
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| y0 + MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        y0 + 20.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN_L:.2}" y="{:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#444"/>"##,
        y0 + MARGIN_T
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = y_lo + t * (y_hi - y_lo);
        let xv = x_lo + t * (x_hi - x_lo);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{yv:.3}</text>"#,
            MARGIN_L - 4.0,
            sy(yv) + 3.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{xv:.1}</text>"#,
            sx(xv),
            y0 + MARGIN_T + plot_h + 14.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">round</text>"#,
        MARGIN_L + plot_w / 2.0,
        y0 + PANEL_H - 8.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        y0 + MARGIN_T + plot_h / 2.0,
        y0 + MARGIN_T + plot_h / 2.0,
        escape(&p.y_label)
    );

    for (i, s) in p.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).copied().collect();
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in &pts {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = y0 + MARGIN_T + 12.0 + 16.0 * i as f64;
        let lx = PANEL_W - MARGIN_R + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            lx + 22.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
}

/// Stacks panels vertically into one SVG document.
pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_H * panels.len().max(1) as f64;
    let mut out = format!(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" viewBox="0 0 {PANEL_W} {height}">
<rect width="100%" height="100%" fill="white"/>
"#
    );
    for (i, p) in panels.iter().enumerate() {
        panel(&mut out, p, i as f64 * PANEL_H);
    }
    out.push_str("</svg>\n");
    out
}

fn series(name: impl Into<String>, rounds: &[RoundRecord], f: impl Fn(&RoundRecord) -> Option<f64>) -> Series {
    Series {
        name: name.into(),
        points: rounds.iter().filter_map(|r| f(r).map(|v| (r.round as f64, v))).collect(),
    }
}

/// The four standard charts as (file name, SVG text).
pub fn charts(rounds: &[RoundRecord]) -> Vec<(&'static str, String)> {
    let edges: Vec<usize> = rounds.first().map(|r| r.per_edge.keys().copied().collect()).unwrap_or_default();
    let per_edge = |f: fn(&crate::metrics::EdgeMetrics) -> f64| -> Vec<Series> {
        edges
            .iter()
            .map(|&e| series(format!("edge {e}"), rounds, |r| r.per_edge.get(&e).map(f)))
            .collect()
    };
    vec![
        (
            "edge_metrics.svg",
            render(&[
                Panel {
                    title: "Edge test accuracy per round".into(),
                    y_label: "accuracy".into(),
                    series: per_edge(|m| m.accuracy),
                },
                Panel {
                    title: "Edge test loss per round".into(),
                    y_label: "loss".into(),
                    series: per_edge(|m| m.loss),
                },
            ]),
        ),
        (
            "jfi.svg",
            render(&[Panel {
                title: "Jain's fairness index per round".into(),
                y_label: "JFI".into(),
                series: vec![series("JFI", rounds, |r| Some(r.jfi))],
            }]),
        ),
        (
            "global_metrics.svg",
            render(&[
                Panel {
                    title: "Global loss per round".into(),
                    y_label: "loss".into(),
                    series: vec![
                        series("validation", rounds, |r| Some(r.global_val.loss)),
                        series("test", rounds, |r| Some(r.global_test.loss)),
                    ],
                },
                Panel {
                    title: "Global accuracy per round".into(),
                    y_label: "accuracy".into(),
                    series: vec![
                        series("validation", rounds, |r| Some(r.global_val.accuracy)),
                        series("test", rounds, |r| Some(r.global_test.accuracy)),
                    ],
                },
            ]),
        ),
        (
            "classification.svg",
            render(&[Panel {
                title: "F1 and AUROC per round".into(),
                y_label: "score".into(),
                series: vec![
                    series("F1 macro", rounds, |r| Some(r.global_test.f1_macro)),
                    series("F1 weighted", rounds, |r| Some(r.global_test.f1_weighted)),
                    series("AUROC", rounds, |r| r.global_test.auroc),
                ],
            }]),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_ranges_are_padded() {
        assert_eq!(range([2.0, 2.0].into_iter()), (1.9, 2.1));
        assert_eq!(range([0.0].into_iter()), (-0.5, 0.5));
        assert_eq!(range(std::iter::empty()), (0.0, 1.0));
        let (lo, hi) = range([0.0, 10.0].into_iter());
        assert!(lo < 0.0 && hi > 10.0);
    }

    #[test]
    fn single_point_renders_marker_only() {
        let svg = render(&[Panel {
            title: "t".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "s".into(),
                points: vec![(1.0, 0.5)],
            }],
        }]);
        assert!(svg.contains("<circle"));
        assert!(!svg.contains("<polyline"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
