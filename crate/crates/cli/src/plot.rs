//! Minimal static SVG charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series<'a> {
    pub label: &'a str,
    /// `(x, y)` points in data coordinates.
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn bounds(series: &[Series<'_>], y_range: Option<(f64, f64)>) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if let Some((a, b)) = y_range {
        y0 = a;
        y1 = b;
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0, y1)
}

fn axes(s: &mut String, x_label: &str, y_label: &str, (x0, x1, y0, y1): (f64, f64, f64, f64)) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = b - f * (b - t);
        let x = l + f * (r - l);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
            l - 6.0,
            y + 4.0,
            y0 + f * (y1 - y0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{:.1}</text>"#,
            b + 16.0,
            x0 + f * (x1 - x0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
}

pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    y_range: Option<(f64, f64)>,
) -> String {
    let mut s = header(title);
    let bb = bounds(series, y_range);
    axes(&mut s, x_label, y_label, bb);
    let (x0, x1, y0, y1) = bb;
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN, HEIGHT - MARGIN);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    l + (x - x0) / (x1 - x0) * (r - l),
                    b - (y - y0) / (y1 - y0) * (b - t)
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = t + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            r - 4.0,
            escape(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: one group per category, one bar per series value.
pub fn bar_chart(title: &str, y_label: &str, categories: &[&str], groups: &[(&str, Vec<f64>)]) -> String {
    let mut s = header(title);
    let max = groups
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN, HEIGHT - MARGIN);
    axes(&mut s, "", y_label, (0.0, groups.len() as f64, 0.0, max));
    let group_w = (r - l) / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / categories.len().max(1) as f64;
    for (gi, (name, values)) in groups.iter().enumerate() {
        let gx = l + gi as f64 * group_w + group_w * 0.1;
        for (ci, v) in values.iter().enumerate() {
            let h = v / max * (b - t);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + ci as f64 * bar_w,
                b - h,
                bar_w * 0.9,
                h,
                COLORS[ci % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            b + 32.0,
            escape(name)
        );
    }
    for (ci, c) in categories.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{}" text-anchor="end">{}</text>"#,
            r - 4.0,
            t + 16.0 * ci as f64,
            COLORS[ci % COLORS.len()],
            escape(c)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed_svg() {
        let line = line_chart(
            "CMC",
            "rank",
            "accuracy",
            &[Series {
                label: "a<b",
                points: vec![(1.0, 0.5), (2.0, 1.0)],
            }],
            Some((0.0, 1.0)),
        );
        assert!(line.starts_with("<svg") && line.trim_end().ends_with("</svg>"));
        assert!(line.contains("a&lt;b"));
        let bars = bar_chart("d", "x1e3", &["intra", "inter"], &[("fused", vec![1.0, 2.0])]);
        assert_eq!(bars.matches("<rect").count(), 3);
        // Degenerate input still renders.
        assert!(line_chart("e", "x", "y", &[], None).contains("</svg>"));
    }
}
