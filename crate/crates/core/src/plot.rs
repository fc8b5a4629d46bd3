//! Static SVG rendering: per-layer difference curves and a pairwise
//! discrepancy heatmap. Output is a pure function of the input data.

use std::fmt::Write;

use crate::localize::LocalizationReport;

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One named series of `(x, y)` points; `None` leaves a gap.
struct Series {
    name: String,
    color: &'static str,
    dashed: bool,
    points: Vec<Option<f64>>,
}

/// Layer-wise differences on a log scale: one curve per traced input plus the
/// parameter differences, indexed by aligned-pair position.
pub fn layers_svg(report: &LocalizationReport) -> String {
    let n = report.alignment.pairs.len();
    let mut series: Vec<Series> = report
        .layer_divergences
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut points = vec![None; n];
            for p in &d.pairs {
                points[p.position] = p.mean_abs_diff;
            }
            Series {
                name: if d.control { format!("{} (control)", d.input_id) } else { d.input_id.clone() },
                color: PALETTE[i % PALETTE.len()],
                dashed: d.control,
                points,
            }
        })
        .collect();
    let mut params = vec![None; n];
    for p in &report.params {
        let slot: &mut Option<f64> = &mut params[p.position];
        *slot = Some(slot.map_or(p.mean_abs_diff, |v| v.max(p.mean_abs_diff)));
    }
    series.push(Series {
        name: "parameters".into(),
        color: "#000000",
        dashed: true,
        points: params,
    });
    let labels: Vec<String> = report.alignment.pairs.iter().map(|(s, _)| s.clone()).collect();
    line_chart("Layer-wise differences", "aligned layer", "mean |difference|", &labels, &series)
}

fn line_chart(title: &str, x_label: &str, y_label: &str, x_ticks: &[String], series: &[Series]) -> String {
    let (width, height) = (900.0, 520.0);
    let (left, right, top, bottom) = (90.0, 220.0, 50.0, 120.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let positive: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().flatten().copied())
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    let lo_exp = positive.iter().copied().fold(f64::INFINITY, f64::min).log10().floor();
    let hi_exp = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10().ceil();
    let (lo_exp, hi_exp) = if positive.is_empty() {
        (-12.0, 0.0)
    } else {
        (lo_exp - 1.0, hi_exp.max(lo_exp + 1.0))
    };
    // Zero differences sit on the floor of the axis.
    let y_of = |v: f64| {
        let e = if v > 0.0 { v.log10().clamp(lo_exp, hi_exp) } else { lo_exp };
        top + plot_h * (hi_exp - e) / (hi_exp - lo_exp)
    };
    let n = x_ticks.len().max(1);
    let x_of = |i: usize| left + if n == 1 { plot_w / 2.0 } else { plot_w * i as f64 / (n - 1) as f64 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="28" font-size="16" text-anchor="middle">{}</text>"#, left + plot_w / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    for e in (lo_exp as i64)..=(hi_exp as i64) {
        let y = y_of(10f64.powi(e as i32));
        let _ = writeln!(
            svg,
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">1e{e}</text>",
            left + plot_w,
            left - 6.0,
            y + 4.0
        );
    }
    for (i, tick) in x_ticks.iter().enumerate() {
        let x = x_of(i);
        let _ = writeln!(
            svg,
            "<text transform=\"translate({x:.1},{:.1}) rotate(-60)\" text-anchor=\"end\">{i}: {}</text>",
            top + plot_h + 12.0,
            escape(tick)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + plot_w / 2.0,
        height - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(20,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        escape(y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let mut run: Vec<String> = Vec::new();
        let flush = |run: &mut Vec<String>, svg: &mut String| {
            if run.len() > 1 {
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.8"{dash} points="{}"/>"#,
                    s.color,
                    run.join(" ")
                );
            }
            run.clear();
        };
        for (i, p) in s.points.iter().enumerate() {
            match p {
                Some(v) if !v.is_nan() => {
                    let (x, y) = (x_of(i), y_of(*v));
                    run.push(format!("{x:.1},{y:.1}"));
                    let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.5" fill="{}"/>"#, s.color);
                }
                _ => flush(&mut run, &mut svg),
            }
        }
        flush(&mut run, &mut svg);
        let ly = top + 16.0 * k as f64 + 8.0;
        let lx = left + plot_w + 16.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 24.0,
            s.color,
            lx + 30.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grid of pairwise discrepancy rates, `rates[i][j]` for models `i` (row) and `j`.
pub fn heatmap_svg(labels: &[String], rates: &[Vec<f64>]) -> String {
    let n = labels.len();
    let cell = 70.0;
    let margin = 130.0;
    let size = margin + cell * n as f64 + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="24" font-size="16" text-anchor="middle">Top-1 label discrepancy</text>"#, size / 2.0);
    for (i, row) in rates.iter().enumerate() {
        for (j, &rate) in row.iter().enumerate() {
            let (x, y) = (margin + cell * j as f64, margin + cell * i as f64);
            // White at 0, saturated red at 1.
            let shade = (255.0 * (1.0 - rate.clamp(0.0, 1.0))).round() as u8;
            let ink = if rate > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb(255,{shade},{shade})\" stroke=\"#888\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{ink}\">{:.1}%</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0,
                rate * 100.0
            );
        }
    }
    for (i, label) in labels.iter().enumerate() {
        let c = margin + cell * i as f64 + cell / 2.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{c:.1}" text-anchor="end">{}</text>"#, margin - 8.0, escape(label));
        let _ = writeln!(
            svg,
            r#"<text transform="translate({c:.1},{:.1}) rotate(-45)" text-anchor="start">{}</text>"#,
            margin - 8.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
