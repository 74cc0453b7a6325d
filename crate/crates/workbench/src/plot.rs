// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal SVG plots: labelled scatter and line curves.

use std::fmt::Write;

use steerprobe::interpret::EmbeddedPoint;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 8] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    s
}

fn legend(s: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{y:.1}" r="4" fill="{}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            WIDTH - MARGIN - 90.0,
            PALETTE[i % PALETTE.len()],
            WIDTH - MARGIN - 82.0,
            y + 4.0,
            escape(name)
        );
    }
}

/// Scatter of embedded points coloured by label.
pub fn scatter_svg(title: &str, points: &[EmbeddedPoint], label_names: &[String]) -> String {
    let frame = Frame::fit(points.iter().map(|p| p.x), points.iter().map(|p| p.y));
    let mut s = open(title);
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            frame.px(p.x),
            frame.py(p.y),
            PALETTE[p.label % PALETTE.len()]
        );
    }
    legend(&mut s, label_names);
    s.push_str("</svg>\n");
    s
}

/// One polyline per series over shared x values.
pub fn curves_svg(title: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let frame = Frame::fit(
        xs.iter().copied(),
        series.iter().flat_map(|(_, v)| v.iter().copied()).chain([0.0]),
    );
    let mut s = open(title);
    for (i, (_, values)) in series.iter().enumerate() {
        let pts: Vec<String> = xs
            .iter()
            .zip(values)
            .map(|(x, y)| format!("{:.2},{:.2}", frame.px(*x), frame.py(*y)))
            .collect();
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{colour}"/>"#);
        }
    }
    for x in xs {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="10">{x}</text>"#,
            frame.px(*x),
            HEIGHT - MARGIN + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="6" y="{:.2}" font-family="sans-serif" font-size="10">{:.3}</text><text x="6" y="{:.2}" font-family="sans-serif" font-size="10">{:.3}</text>"#,
        frame.py(frame.y.1) + 4.0,
        frame.y.1,
        frame.py(frame.y.0),
        frame.y.0
    );
    let names: Vec<String> = series.iter().map(|(n, _)| n.clone()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_has_one_marker_per_point() {
        let pts: Vec<EmbeddedPoint> = (0..5).map(|i| EmbeddedPoint { x: i as f64, y: -(i as f64), label: i % 2 }).collect();
        let svg = scatter_svg("t <1>", &pts, &["a".into(), "b".into()]);
        assert_eq!(svg.matches("r=\"2.5\"").count(), 5);
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn curves_handle_flat_series() {
        let svg = curves_svg("flat", &[1.0, 2.0], &[("v".into(), vec![0.5, 0.5])]);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("NaN"));
    }
}
