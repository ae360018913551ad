//! Standalone SVG line chart of average loss against `log2 t`.
//!
//! Every plotted point carries `data-series`, `data-t` and `data-value`
//! attributes holding the exact table values, so a chart can be checked
//! against `curve.csv` by parsing.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(usize, f64)],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render(title: &str, series: &[Series<'_>], optimal: Option<f64>) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| (p.0.max(1) as f64).log2()));
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(optimal);
    let (y_lo, y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let (x_lo, x_hi) = if x_lo.is_finite() { (x_lo, x_hi.max(x_lo + 1.0)) } else { (0.0, 1.0) };
    let (y_lo, y_hi) = if y_lo.is_finite() { (y_lo.min(0.0), y_hi.max(y_lo + 1e-3)) } else { (0.0, 1.0) };
    let y_hi = y_hi + 0.05 * (y_hi - y_lo);
    let px = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (left, right, bottom, top) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{left} {top} V{bottom} H{right}" stroke="black" fill="none"/>"#);
    let first = x_lo.ceil() as i64;
    let last = x_hi.floor() as i64;
    let step = ((last - first) / 10).max(1);
    for k in (first..=last).step_by(step as usize) {
        let x = px(k as f64);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">2^{k}</text>"#, bottom + 20.0);
    }
    for i in 0..=5 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 5.0;
        let y = py(v);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, left - 8.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">checkpoint t (log scale)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">average loss</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    if let Some(o) = optimal {
        let y = py(o);
        let _ = writeln!(
            s,
            r#"<line class="optimal" data-value="{o:e}" x1="{left}" y1="{y:.2}" x2="{right}" y2="{y:.2}" stroke="gray" stroke-dasharray="6 4"/>"#
        );
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" fill="gray">L*</text>"#, right + 4.0, y + 4.0);
    }

    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let name = escape(ser.name);
        let path: Vec<String> = ser
            .points
            .iter()
            .enumerate()
            .map(|(j, &(t, v))| format!("{}{:.2} {:.2}", if j == 0 { 'M' } else { 'L' }, px((t as f64).log2()), py(v)))
            .collect();
        let _ = writeln!(s, r#"<g class="series" data-series="{name}">"#);
        let _ = writeln!(s, r#"<path d="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#, path.join(" "));
        for &(t, v) in ser.points {
            let _ = writeln!(
                s,
                r#"<circle data-series="{name}" data-t="{t}" data-value="{v:e}" cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                px((t as f64).log2()),
                py(v)
            );
        }
        let _ = writeln!(s, "</g>");
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, right - 150.0, ly - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{name}</text>"#, right - 135.0);
    }
    s.push_str("</svg>\n");
    s
}

/// `(series, t, value)` for every plotted point, and the `L*` line if any.
pub fn extract_points(svg: &str) -> (Vec<(String, usize, f64)>, Option<f64>) {
    fn attr<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
        let start = tag.find(&format!(" {name}=\""))? + name.len() + 3;
        let len = tag[start..].find('"')?;
        Some(&tag[start..start + len])
    }
    let mut points = Vec::new();
    let mut optimal = None;
    for tag in svg.split('<') {
        if tag.starts_with("circle") {
            if let (Some(n), Some(t), Some(v)) =
                (attr(tag, "data-series"), attr(tag, "data-t"), attr(tag, "data-value"))
            {
                if let (Ok(t), Ok(v)) = (t.parse(), v.parse()) {
                    points.push((n.to_string(), t, v));
                }
            }
        } else if tag.starts_with("line class=\"optimal\"") {
            optimal = attr(tag, "data-value").and_then(|v| v.parse().ok());
        }
    }
    (points, optimal)
}
