//! Small static SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
    /// Symmetric error bars, e.g. one standard deviation.
    pub errors: Option<Vec<f64>>,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Series {
            name: name.into(),
            values,
            errors: None,
        }
    }

    pub fn with_errors(mut self, errors: Vec<f64>) -> Self {
        self.errors = Some(errors);
        self
    }
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A tick step of 1, 2 or 5 times a power of ten giving about five ticks.
fn nice_step(max: f64) -> f64 {
    if !(max.is_finite() && max > 0.0) {
        return 1.0;
    }
    let raw = max / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

struct Frame {
    out: String,
    y_max: f64,
}

impl Frame {
    fn new(title: &str, y_label: &str, data_max: f64) -> Frame {
        let step = nice_step(data_max);
        let y_max = (data_max / step).ceil().max(1.0) * step;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
            escape(y_label)
        );
        let mut f = Frame { out, y_max };
        let mut t = 0.0;
        while t <= y_max + step * 1e-9 {
            let y = f.y(t);
            let _ = writeln!(
                f.out,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
                WIDTH - RIGHT
            );
            let _ = writeln!(
                f.out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
            t += step;
        }
        let _ = writeln!(
            f.out,
            r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
            f.y(0.0),
            WIDTH - RIGHT,
            f.y(0.0)
        );
        f
    }

    fn y(&self, v: f64) -> f64 {
        let span = HEIGHT - TOP - BOTTOM;
        HEIGHT - BOTTOM - (v.max(0.0) / self.y_max).min(1.0) * span
    }

    fn legend(&mut self, names: &[&str]) {
        for (k, name) in names.iter().enumerate() {
            let y = TOP + 10.0 + 20.0 * k as f64;
            let x = WIDTH - RIGHT + 14.0;
            let _ = writeln!(
                self.out,
                r#"<rect x="{x}" y="{:.2}" width="12" height="12" fill="{}"/>"#,
                y - 10.0,
                PALETTE[k % PALETTE.len()]
            );
            let _ = writeln!(self.out, r#"<text x="{}" y="{y:.2}">{}</text>"#, x + 18.0, escape(name));
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn finite_max(series: &[Series], stacked: bool) -> f64 {
    if stacked {
        let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
        (0..n)
            .map(|i| series.iter().map(|s| s.values.get(i).copied().unwrap_or(0.0)).filter(|v| v.is_finite()).sum())
            .fold(0.0, f64::max)
    } else {
        series
            .iter()
            .flat_map(|s| {
                s.values
                    .iter()
                    .enumerate()
                    .map(move |(i, v)| v + s.errors.as_ref().map_or(0.0, |e| e[i]))
            })
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    }
}

fn category_labels(f: &mut Frame, categories: &[String], slot: f64) {
    for (i, c) in categories.iter().enumerate() {
        let _ = writeln!(
            f.out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + slot * (i as f64 + 0.5),
            HEIGHT - BOTTOM + 18.0,
            escape(c)
        );
    }
}

/// Grouped bars, one group per category and one bar per series.
pub fn bar_chart(title: &str, y_label: &str, categories: &[String], series: &[Series]) -> String {
    let mut f = Frame::new(title, y_label, finite_max(series, false));
    let slot = (WIDTH - LEFT - RIGHT) / categories.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (k, s) in series.iter().enumerate() {
        for (i, v) in s.values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let x = LEFT + slot * i as f64 + slot * 0.1 + bar * k as f64;
            let (y0, y1) = (f.y(0.0), f.y(*v));
            let _ = writeln!(
                f.out,
                r#"<rect x="{x:.2}" y="{y1:.2}" width="{bar:.2}" height="{:.2}" fill="{}"/>"#,
                y0 - y1,
                PALETTE[k % PALETTE.len()]
            );
            if let Some(e) = s.errors.as_ref().map(|e| e[i]).filter(|e| e.is_finite() && *e > 0.0) {
                let cx = x + bar / 2.0;
                let _ = writeln!(
                    f.out,
                    r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                    f.y(v - e),
                    f.y(v + e)
                );
            }
        }
    }
    category_labels(&mut f, categories, slot);
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    f.legend(&names);
    f.finish()
}

/// One stacked bar per category.
pub fn stacked_bar_chart(title: &str, y_label: &str, categories: &[String], series: &[Series]) -> String {
    let mut f = Frame::new(title, y_label, finite_max(series, true));
    let slot = (WIDTH - LEFT - RIGHT) / categories.len().max(1) as f64;
    for i in 0..categories.len() {
        let mut base = 0.0;
        for (k, s) in series.iter().enumerate() {
            let v = s.values.get(i).copied().filter(|v| v.is_finite()).unwrap_or(0.0);
            let (y0, y1) = (f.y(base), f.y(base + v));
            let _ = writeln!(
                f.out,
                r#"<rect x="{:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                LEFT + slot * i as f64 + slot * 0.2,
                slot * 0.6,
                y0 - y1,
                PALETTE[k % PALETTE.len()]
            );
            base += v;
        }
    }
    category_labels(&mut f, categories, slot);
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    f.legend(&names);
    f.finish()
}

/// Lines over shared x positions, with optional error bars.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, xs: &[f64], series: &[Series]) -> String {
    let mut f = Frame::new(title, y_label, finite_max(series, false));
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |x: f64| LEFT + 20.0 + (x - lo) / span * (WIDTH - LEFT - RIGHT - 40.0);
    for x in xs {
        let _ = writeln!(
            f.out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(*x),
            HEIGHT - BOTTOM + 18.0,
            fmt_tick(*x)
        );
    }
    let _ = writeln!(
        f.out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(&s.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(x, v)| format!("{:.2},{:.2}", px(*x), f.y(*v)))
            .collect();
        let _ = writeln!(
            f.out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for (i, (x, v)) in xs.iter().zip(&s.values).enumerate().filter(|(_, (_, v))| v.is_finite()) {
            let _ = writeln!(
                f.out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(*x),
                f.y(*v)
            );
            if let Some(e) = s.errors.as_ref().map(|e| e[i]).filter(|e| e.is_finite() && *e > 0.0) {
                let _ = writeln!(
                    f.out,
                    r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}"/>"#,
                    px(*x),
                    f.y(v - e),
                    f.y(v + e)
                );
            }
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    f.legend(&names);
    f.finish()
}
