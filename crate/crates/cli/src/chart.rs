//! A tiny SVG line plotter. Enough for post-hoc training curves.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One polyline. Lines sharing a `group` share a color and a legend entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub group: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Roughly `n` round tick values covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / n.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl LineChart {
    fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let pts = self
            .lines
            .iter()
            .flat_map(|l| &l.points)
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for &(x, y) in pts {
            b = Some(match b {
                None => (x, x, y, y),
                Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
            });
        }
        let (mut x0, mut x1, mut y0, mut y1) = b?;
        if x1 <= x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 <= y0 {
            let pad = if y0 == 0.0 { 0.5 } else { 0.05 * y0.abs() };
            y0 -= pad;
            y1 += pad;
        } else {
            let pad = 0.05 * (y1 - y0);
            y0 -= pad;
            y1 += pad;
        }
        Some((x0, x1, y0, y1))
    }

    /// Renders the chart as a standalone SVG document.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
            escape(&self.title)
        );
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );

        let Some((x0, x1, y0, y1)) = self.bounds() else {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#,
                LEFT + pw / 2.0,
                TOP + ph / 2.0
            );
            s.push_str("</svg>\n");
            return s;
        };
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        for t in nice_ticks(x0, x1, 6) {
            let px = sx(t);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#ddd"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
                TOP,
                TOP + ph,
                TOP + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in nice_ticks(y0, y1, 6) {
            let py = sy(t);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                py + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        let mut groups: Vec<&str> = Vec::new();
        for l in &self.lines {
            if !groups.contains(&l.group.as_str()) {
                groups.push(&l.group);
            }
        }
        for l in &self.lines {
            let gi = groups.iter().position(|g| *g == l.group).unwrap_or(0);
            let color = PALETTE[gi % PALETTE.len()];
            let pts: Vec<String> = l
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" stroke-opacity="0.8" points="{}"/>"#,
                pts.join(" ")
            );
        }
        for (i, g) in groups.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * i as f64;
            let x = LEFT + pw + 12.0;
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                s,
                r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
                x + 20.0,
                x + 26.0,
                y + 4.0,
                escape(g)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = nice_ticks(0.0, 1.0, 5);
        assert_eq!(t, vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        let t = nice_ticks(-3.3, 17.0, 6);
        assert!(t.iter().all(|v| (-3.3..=17.0).contains(v)));
        assert_eq!(nice_ticks(2.0, 2.0, 5), vec![2.0]);
    }

    #[test]
    fn renders_one_polyline_per_line_and_legend_per_group() {
        let chart = LineChart {
            title: "a < b".into(),
            x_label: "step".into(),
            y_label: "v".into(),
            lines: vec![
                Line { group: "bt".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] },
                Line { group: "bt".into(), points: vec![(0.0, 1.5), (1.0, f64::NAN), (2.0, 2.5)] },
                Line { group: "bt-bsr".into(), points: vec![(0.0, 0.5)] },
            ],
        };
        let svg = chart.render();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains(">bt-bsr<"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_chart_still_renders() {
        let chart = LineChart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            lines: vec![],
        };
        assert!(chart.render().contains("no data"));
    }
}
