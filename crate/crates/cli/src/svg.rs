//! Tiny SVG writer for diagnostic plots.

use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}").trim_end_matches('0').to_string()
    }
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// At most `n` entries of `xs` (sorted, deduplicated), evenly spread and
/// always including both ends.
fn pick_ticks(xs: &[f64], n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() <= n {
        return v;
    }
    (0..n).map(|i| v[i * (v.len() - 1) / (n - 1)]).collect()
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart; x ticks are taken from the data's own x values.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let (w, h) = (760.0, 440.0);
    let (l, r, t, b) = (70.0, 150.0, 40.0, 55.0);
    let ty = |y: f64| if log_y { y.max(1e-12).log10() } else { y };
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| ty(p.1))).collect();
    let (x0, x1) = span(
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = span(
        ys.iter().copied().filter(|y| y.is_finite()).fold(f64::INFINITY, f64::min),
        ys.iter().copied().filter(|y| y.is_finite()).fold(f64::NEG_INFINITY, f64::max),
    );
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let py = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - l - r,
        h - t - b
    );
    for x in pick_ticks(&xs, 6) {
        let xp = px(x);
        let _ = writeln!(s, r#"<line x1="{xp:.1}" y1="{}" x2="{xp:.1}" y2="{}" stroke="black"/>"#, h - b, h - b + 4.0);
        let _ = writeln!(s, r#"<text x="{xp:.1}" y="{}" text-anchor="middle">{}</text>"#, h - b + 16.0, fmt_tick(x));
    }
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let yp = py(y);
        let label = if log_y { fmt_tick(10f64.powf(y)) } else { fmt_tick(y) };
        let _ = writeln!(s, r#"<line x1="{}" y1="{yp:.1}" x2="{l}" y2="{yp:.1}" stroke="black"/>"#, l - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{label}</text>"#, l - 6.0, yp + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + w - r) / 2.0, h - 12.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (t + h - b) / 2.0,
        esc(y_label)
    );
    for (i, se) in series.iter().enumerate() {
        let pts: Vec<String> = se
            .points
            .iter()
            .filter(|p| ty(p.1).is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(ty(y))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(i),
            pts.join(" ")
        );
        let ly = t + 14.0 * (i as f64 + 1.0);
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#, w - r + 10.0, w - r + 30.0, color(i));
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - r + 35.0, ly + 4.0, esc(&se.label));
    }
    s.push_str("</svg>\n");
    s
}

pub struct Heatmap {
    pub label: String,
    /// Row-major square or rectangular grid.
    pub rows: Vec<Vec<f64>>,
}

/// Grid of heat maps sharing one symmetric color scale (blue negative,
/// red positive).
pub fn heatmaps(title: &str, maps: &[Heatmap]) -> String {
    let cols = maps.len().clamp(1, 4);
    let nrows = maps.len().div_ceil(cols).max(1);
    let cell = 160.0;
    let (w, h) = (cols as f64 * (cell + 30.0) + 20.0, nrows as f64 * (cell + 40.0) + 50.0);
    let scale = maps
        .iter()
        .flat_map(|m| m.rows.iter().flatten())
        .fold(0.0f64, |a, &v| a.max(v.abs()))
        .max(1e-300);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{} (|max| = {})</text>"#, w / 2.0, esc(title), fmt_tick(scale));
    for (i, m) in maps.iter().enumerate() {
        let ox = 20.0 + (i % cols) as f64 * (cell + 30.0);
        let oy = 50.0 + (i / cols) as f64 * (cell + 40.0);
        let nr = m.rows.len().max(1);
        let nc = m.rows.first().map_or(1, Vec::len).max(1);
        let (cw, ch) = (cell / nc as f64, cell / nr as f64);
        for (r, row) in m.rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                let a = (v / scale).clamp(-1.0, 1.0);
                let fade = (255.0 * (1.0 - a.abs())) as u8;
                let fill = if a >= 0.0 {
                    format!("rgb(255,{fade},{fade})")
                } else {
                    format!("rgb({fade},{fade},255)")
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    ox + c as f64 * cw,
                    oy + r as f64 * ch,
                    cw,
                    ch
                );
            }
        }
        let _ = writeln!(s, r#"<rect x="{ox}" y="{oy}" width="{cell}" height="{cell}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ox + cell / 2.0, oy + cell + 16.0, esc(&m.label));
    }
    s.push_str("</svg>\n");
    s
}

pub struct ScatterPanel {
    pub label: String,
    pub points: Vec<[f64; 2]>,
    /// Optional reference points drawn in grey behind the samples.
    pub reference: Vec<[f64; 2]>,
}

/// One square panel per class, each zoomed to its own points.
pub fn scatter_panels(title: &str, panels: &[ScatterPanel]) -> String {
    let cols = panels.len().clamp(1, 4);
    let nrows = panels.len().div_ceil(cols).max(1);
    let cell = 170.0;
    let (w, h) = (cols as f64 * (cell + 30.0) + 20.0, nrows as f64 * (cell + 40.0) + 50.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, esc(title));
    for (i, p) in panels.iter().enumerate() {
        let ox = 20.0 + (i % cols) as f64 * (cell + 30.0);
        let oy = 50.0 + (i / cols) as f64 * (cell + 40.0);
        let all: Vec<&[f64; 2]> = p.points.iter().chain(&p.reference).collect();
        let lo = |k: usize| all.iter().map(|q| q[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| all.iter().map(|q| q[k]).fold(f64::NEG_INFINITY, f64::max);
        let (cx, cy) = ((lo(0) + hi(0)) / 2.0, (lo(1) + hi(1)) / 2.0);
        let half = ((hi(0) - lo(0)).max(hi(1) - lo(1)) / 2.0 * 1.1).max(0.05);
        let half = if half.is_finite() { half } else { 1.0 };
        let map = |q: &[f64; 2]| {
            (
                ox + (q[0] - cx + half) / (2.0 * half) * cell,
                oy + cell - (q[1] - cy + half) / (2.0 * half) * cell,
            )
        };
        let _ = writeln!(s, r#"<rect x="{ox}" y="{oy}" width="{cell}" height="{cell}" fill="none" stroke="black"/>"#);
        for q in &p.reference {
            let (x, y) = map(q);
            let _ = writeln!(s, r##"<circle cx="{x:.1}" cy="{y:.1}" r="1.2" fill="#bbbbbb"/>"##);
        }
        for q in &p.points {
            let (x, y) = map(q);
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="1.2" fill="{}"/>"#, color(i));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{} (width {})</text>"#,
            ox + cell / 2.0,
            oy + cell + 16.0,
            esc(&p.label),
            fmt_tick(2.0 * half)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_labels_ticks_with_data_steps() {
        let s = line_plot(
            "t",
            "step",
            "y",
            &[Series { label: "a<b".into(), points: vec![(0.0, 1.0), (500.0, 2.0), (1000.0, 0.5)] }],
            false,
        );
        assert!(s.contains(">500</text>") && s.contains(">1000</text>"));
        assert!(s.contains("a&lt;b"));
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn degenerate_inputs_do_not_produce_nan() {
        let s = line_plot("t", "x", "y", &[Series { label: "c".into(), points: vec![(1.0, 3.0)] }], true);
        assert!(!s.contains("NaN"));
        let s = scatter_panels("s", &[ScatterPanel { label: "p".into(), points: vec![[1.0, 1.0]; 5], reference: vec![] }]);
        assert!(!s.contains("NaN"));
        let s = heatmaps("h", &[Heatmap { label: "z".into(), rows: vec![vec![0.0; 2]; 2] }]);
        assert!(!s.contains("NaN"));
    }

    #[test]
    fn tick_picking_keeps_ends() {
        let xs: Vec<f64> = (0..=40).map(|i| i as f64 * 500.0).collect();
        let t = pick_ticks(&xs, 6);
        assert_eq!(t.len(), 6);
        assert_eq!((t[0], t[5]), (0.0, 20000.0));
    }
}
