//! Standalone SVG charts: signed horizontal bars for feature importances and
//! a histogram for inter-dealer distances. Output is plain text with fixed
//! number formatting, so identical inputs give identical bytes.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const LABEL_WIDTH: f64 = 260.0;
const BAR_HEIGHT: f64 = 22.0;
const MARGIN: f64 = 40.0;
const POSITIVE: &str = "#2b6cb0";
const NEGATIVE: &str = "#c53030";

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

/// Horizontal bars centred on a zero axis, one per `(label, value)`, in the
/// given order.
pub fn signed_bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let height = MARGIN * 2.0 + BAR_HEIGHT * bars.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, WIDTH, height, title);
    let extent = bars.iter().map(|b| b.1.abs()).fold(0.0, f64::max);
    let extent = if extent > 0.0 { extent } else { 1.0 };
    let plot_left = LABEL_WIDTH;
    let plot_width = WIDTH - LABEL_WIDTH - MARGIN;
    let zero = plot_left + plot_width / 2.0;
    let scale = plot_width / 2.0 / extent;
    for (i, (label, value)) in bars.iter().enumerate() {
        let y = MARGIN + i as f64 * BAR_HEIGHT;
        let len = value.abs() * scale;
        let x = if *value >= 0.0 { zero } else { zero - len };
        let colour = if *value >= 0.0 { POSITIVE } else { NEGATIVE };
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            plot_left - 8.0,
            y + BAR_HEIGHT * 0.65,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{len:.2}" height="{:.2}" fill="{colour}"><title>{}: {value:.6}</title></rect>"#,
            y + 3.0,
            BAR_HEIGHT - 6.0,
            escape(label)
        );
    }
    let _ = writeln!(
        out,
        r##"<line x1="{zero:.2}" y1="{:.1}" x2="{zero:.2}" y2="{:.1}" stroke="#333"/>"##,
        MARGIN - 4.0,
        height - MARGIN + 4.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">importance (max |value| {extent:.4})</text>"#,
        zero,
        height - MARGIN / 3.0
    );
    out.push_str("</svg>\n");
    out
}

/// Equal-width bin counts over `[min, max]` of `values`; the maximum lands
/// in the last bin. Returns `(lower edge, width, counts)`.
pub fn histogram(values: &[f64], bins: usize) -> (f64, f64, Vec<usize>) {
    let bins = bins.max(1);
    let mut counts = vec![0; bins];
    if values.is_empty() {
        return (0.0, 1.0, counts);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    (lo, width, counts)
}

/// Histogram with a dashed marker at `marker` (for example the median).
pub fn histogram_chart(
    title: &str,
    x_label: &str,
    values: &[f64],
    bins: usize,
    marker: Option<f64>,
) -> String {
    let height = 360.0;
    let mut out = String::new();
    header(&mut out, WIDTH, height, title);
    let (lo, width, counts) = histogram(values, bins);
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_left = MARGIN * 1.5;
    let plot_width = WIDTH - plot_left - MARGIN;
    let plot_bottom = height - MARGIN * 1.5;
    let plot_height = plot_bottom - MARGIN * 1.2;
    let bar_w = plot_width / counts.len() as f64;
    for (i, &c) in counts.iter().enumerate() {
        let h = c as f64 / top * plot_height;
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{POSITIVE}" stroke="white"><title>{:.1}-{:.1}: {c}</title></rect>"##,
            plot_left + i as f64 * bar_w,
            plot_bottom - h,
            bar_w,
            lo + i as f64 * width,
            lo + (i + 1) as f64 * width
        );
    }
    let _ = writeln!(
        out,
        r##"<line x1="{plot_left:.1}" y1="{plot_bottom:.1}" x2="{:.1}" y2="{plot_bottom:.1}" stroke="#333"/>"##,
        plot_left + plot_width
    );
    for (i, edge) in [0, counts.len()].iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="{}">{:.1}</text>"#,
            plot_left + *edge as f64 * bar_w,
            plot_bottom + 16.0,
            if i == 0 { "start" } else { "end" },
            lo + *edge as f64 * width
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        plot_left + plot_width / 2.0,
        height - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">max count {}</text>"#,
        plot_left + plot_width,
        MARGIN,
        top as usize
    );
    if let Some(m) = marker {
        let span = width * counts.len() as f64;
        let x = plot_left + ((m - lo) / span).clamp(0.0, 1.0) * plot_width;
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{plot_bottom:.1}" stroke="#c53030" stroke-dasharray="5,4"/>"##,
            MARGIN * 1.2
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.1}" fill="#c53030">median {m:.1}</text>"##,
            x + 4.0,
            MARGIN * 1.2 + 12.0
        );
    }
    out.push_str("</svg>\n");
    out
}
