use std::fmt::Write;

use icl_forge::eval::EvalReport;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Legend label: `Proposed + G + P + I` for ICL rows, the method name for baselines.
pub fn series_label(method: &str, variant: &str) -> String {
    let head = match method {
        "naive" => "Naive",
        "proposed" => "Proposed",
        other => return if variant == "-" { other.to_string() } else { format!("{other} {variant}") },
    };
    if variant == "-" {
        head.to_string()
    } else {
        format!("{head} + {}", variant.replace('+', " + "))
    }
}

struct Series {
    label: String,
    points: Vec<(usize, f64, f64)>,
}

/// Accuracy-versus-context-length chart of one metric: log-scaled x axis,
/// one line per series with a shaded mean ± std band, and a legend.
pub fn emit_plot(report: &EvalReport, metric: &str, title: &str) -> Result<String, String> {
    let mut series = Vec::new();
    for (method, variant) in report.series_keys() {
        let points: Vec<(usize, f64, f64)> = report
            .series(&method, &variant, metric)
            .into_iter()
            .filter(|&(len, _, _)| len > 0)
            .filter_map(|(len, mean, std)| Some((len, mean?, std.unwrap_or(0.0))))
            .collect();
        if !points.is_empty() {
            series.push(Series { label: series_label(&method, &variant), points });
        }
    }
    if series.is_empty() {
        return Err(format!("report has no defined values for metric '{metric}'"));
    }
    let mut lengths: Vec<usize> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let (lo, hi) = ((lengths[0] as f64).log2(), (*lengths.last().unwrap() as f64).log2());
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |len: usize| LEFT + ((len as f64).log2() - lo) / (hi - lo) * plot_w;
    let sy = |v: f64| TOP + (1.0 - v.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    )
    .unwrap();

    svg.push_str("<g class=\"axes\" stroke=\"#444\" stroke-width=\"1\">\n");
    writeln!(svg, r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/>"#, TOP + plot_h, LEFT + plot_w, TOP + plot_h).unwrap();
    writeln!(svg, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/>"#, TOP + plot_h).unwrap();
    svg.push_str("</g>\n<g class=\"ticks\" fill=\"#222\">\n");
    for &len in &lengths {
        let x = sx(len);
        writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#444"/>"##,
            TOP + plot_h,
            TOP + plot_h + 4.0
        )
        .unwrap();
        writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{len}</text>"#, TOP + plot_h + 18.0).unwrap();
    }
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = sy(v);
        writeln!(svg, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + plot_w).unwrap();
        writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, LEFT - 6.0, y + 4.0).unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">context length</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(metric)
    )
    .unwrap();
    svg.push_str("</g>\n");

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> = s.points.iter().map(|&(l, m, d)| format!("{:.2},{:.2}", sx(l), sy(m + d))).collect();
        let lower: Vec<String> =
            s.points.iter().rev().map(|&(l, m, d)| format!("{:.2},{:.2}", sx(l), sy(m - d))).collect();
        writeln!(
            svg,
            r#"<polygon class="band" points="{} {}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        )
        .unwrap();
        let line: Vec<String> = s.points.iter().map(|&(l, m, _)| format!("{:.2},{:.2}", sx(l), sy(m))).collect();
        writeln!(
            svg,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        )
        .unwrap();
    }

    svg.push_str("<g class=\"legend\">\n");
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = TOP + 10.0 + i as f64 * 20.0;
        let x = WIDTH - RIGHT + 16.0;
        writeln!(
            svg,
            r#"<g class="entry"><rect x="{x}" y="{}" width="14" height="4" fill="{color}"/><text x="{}" y="{}">{}</text></g>"#,
            y - 2.0,
            x + 20.0,
            y + 4.0,
            escape(&s.label)
        )
        .unwrap();
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}
