//! Grouped histograms as standalone SVG.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#b279a2"];

/// Bin counts over `[lo, hi]`; the top edge is closed.
pub fn bin_counts(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let k = if width > 0.0 { ((v - lo) / width).floor() as isize } else { 0 };
        counts[k.clamp(0, bins as isize - 1) as usize] += 1;
    }
    counts
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn histogram(title: &str, groups: &[(String, Vec<f64>)], bins: usize) -> String {
    let all = groups.iter().flat_map(|(_, v)| v.iter().copied());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let counts: Vec<Vec<usize>> = groups.iter().map(|(_, v)| bin_counts(v, lo, hi, bins)).collect();
    let peak = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;

    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bin_w = plot_w / bins as f64;
    let bar_w = bin_w / groups.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let base = HEIGHT - MARGIN;
    for (g, group_counts) in counts.iter().enumerate() {
        let color = PALETTE[g % PALETTE.len()];
        for (k, &c) in group_counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let h = plot_h * c as f64 / peak;
            let x = MARGIN + k as f64 * bin_w + g as f64 * bar_w;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{color}" fill-opacity="0.85"/>"#,
                base - h,
                bar_w.max(0.5)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{base}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" text-anchor="middle">{lo:.2}</text>"#, base + 16.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{hi:.2}</text>"#,
        WIDTH - MARGIN,
        base + 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        MARGIN - 6.0,
        MARGIN + 4.0,
        peak as usize
    );
    for (g, (name, values)) in groups.iter().enumerate() {
        let y = MARGIN + 4.0 + 16.0 * g as f64;
        let x = WIDTH - MARGIN - 150.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            PALETTE[g % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}">{} (n={})</text>"#,
            x + 14.0,
            escape(name),
            values.len()
        );
    }
    s.push_str("</svg>\n");
    s
}
