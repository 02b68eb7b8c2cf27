use std::fmt::Write as _;

use super::{check_shape, MetricSeries, ReportError};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Line chart of `series` against round index. Output depends only on the
/// inputs, so equal reports give byte-identical documents.
pub fn render_svg(rounds: &[u32], series: &[MetricSeries]) -> Result<String, ReportError> {
    check_shape(rounds, series)?;
    let finite = || series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let mut lo = finite().fold(0.0f64, f64::min);
    let mut hi = finite().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() || hi <= lo {
        hi = lo + 1.0;
    }
    if lo > 0.0 {
        lo = 0.0;
    }
    let x0 = f64::from(rounds[0]);
    let x1 = f64::from(*rounds.last().expect("checked non-empty"));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| if x1 > x0 { LEFT + (x - x0) / (x1 - x0) * plot_w } else { LEFT + plot_w / 2.0 };
    let py = |y: f64| TOP + (hi - y) / (hi - lo) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (bx, by) = (LEFT, TOP + plot_h);
    let _ = writeln!(
        out,
        r#"<g stroke="black"><line x1="{bx}" y1="{by}" x2="{:.2}" y2="{by}"/><line x1="{bx}" y1="{TOP}" x2="{bx}" y2="{by}"/></g>"#,
        LEFT + plot_w
    );

    for k in 0..=TICKS {
        let y = lo + (hi - lo) * k as f64 / TICKS as f64;
        let yy = py(y);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{yy:.2}" x2="{bx}" y2="{yy:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            yy + 4.0,
            fmt_num(y)
        );
    }
    let step = (rounds.len().div_ceil(10)).max(1);
    for r in rounds.iter().step_by(step) {
        let xx = px(f64::from(*r));
        let _ = writeln!(
            out,
            r#"<line x1="{xx:.2}" y1="{by}" x2="{xx:.2}" y2="{:.2}" stroke="black"/><text x="{xx:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#,
            by + 5.0,
            by + 18.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round index</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">value</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = rounds
            .iter()
            .zip(&s.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(r, v)| format!("{:.2},{:.2}", px(f64::from(*r)), py(*v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(&s.name)
        );
    }

    let lx = LEFT + plot_w + 20.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    Ok(out)
}
