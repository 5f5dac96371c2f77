//! Native SVG line plots: fixed 800×500 viewBox, automatic axis ranges
//! with 5% padding, simple tick labels, one polyline per series.  Output
//! is deterministic for identical input.

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const ML: f64 = 62.0; // left margin (y labels)
const MR: f64 = 18.0;
const MT: f64 = 34.0; // top margin (title)
const MB: f64 = 44.0; // bottom margin (x labels)

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        // degenerate data: open up a unit window around it
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders the series as an 800×500 line plot.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = (WIDTH - ML - MR) / (x1 - x0);
    let sy = (HEIGHT - MT - MB) / (y1 - y0);
    let px = |x: f64| ML + (x - x0) * sx;
    let py = |y: f64| HEIGHT - MB - (y - y0) * sy;

    let mut out = String::with_capacity(16 * 1024);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // frame
    out.push_str(&format!(
        "<rect x=\"{ML:.1}\" y=\"{MT:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>\n",
        WIDTH - ML - MR,
        HEIGHT - MT - MB
    ));

    // ticks
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let gx = px(fx);
        out.push_str(&format!(
            "<line x1=\"{gx:.1}\" y1=\"{:.1}\" x2=\"{gx:.1}\" y2=\"{:.1}\" stroke=\"#333\"/>\n",
            HEIGHT - MB,
            HEIGHT - MB + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{gx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MB + 18.0,
            fmt_tick(fx)
        ));
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let gy = py(fy);
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{gy:.1}\" x2=\"{ML:.1}\" y2=\"{gy:.1}\" stroke=\"#333\"/>\n",
            ML - 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            ML - 8.0,
            gy + 4.0,
            fmt_tick(fy)
        ));
    }

    // axis labels
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        ML + (WIDTH - ML - MR) / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        MT + (HEIGHT - MT - MB) / 2.0,
        MT + (HEIGHT - MT - MB) / 2.0,
        escape(y_label)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::with_capacity(s.points.len() * 14);
        for (x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            if !path.is_empty() {
                path.push(' ');
            }
            path.push_str(&format!("{:.2},{:.2}", px(*x), py(*y)));
        }
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.3\" points=\"{path}\"/>\n"
        ));
    }

    // legend (only when labels are distinct and few)
    if series.len() <= 8 && series.iter().any(|s| !s.label.is_empty()) {
        for (i, s) in series.iter().enumerate() {
            if s.label.is_empty() {
                continue;
            }
            let color = PALETTE[i % PALETTE.len()];
            let y = MT + 14.0 + 16.0 * i as f64;
            out.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                WIDTH - MR - 120.0,
                WIDTH - MR - 96.0
            ));
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
                WIDTH - MR - 90.0,
                y + 4.0,
                escape(&s.label)
            ));
        }
    }

    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
