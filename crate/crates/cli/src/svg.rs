//! Static energy/accuracy scatter with the Pareto front drawn on top.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Energy on a log10 x axis, accuracy on a linear y axis.
pub fn scatter(points: &[(String, f64, f64)], front: &[usize]) -> String {
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();

    let positive: Vec<f64> = points.iter().map(|p| p.1).filter(|&e| e > 0.0).collect();
    let (lo, hi) = if positive.is_empty() {
        (0.0, 1.0)
    } else {
        let lo = positive.iter().copied().fold(f64::INFINITY, f64::min).log10().floor();
        let hi = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10().ceil();
        (lo, if hi > lo { hi } else { lo + 1.0 })
    };
    let amin = points.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let amax = points.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let (amin, amax) = if points.is_empty() { (0.0, 1.0) } else if amax > amin { (amin, amax) } else { (amin - 1.0, amax + 1.0) };
    let pad = (amax - amin) * 0.1;
    let (amin, amax) = (amin - pad, amax + pad);

    let x = |e: f64| {
        let v = if e > 0.0 { e.log10() } else { lo };
        MARGIN + (v - lo) / (hi - lo) * (W - 2.0 * MARGIN)
    };
    let y = |a: f64| H - MARGIN - (a - amin) / (amax - amin) * (H - 2.0 * MARGIN);

    // axes and decade ticks
    writeln!(out, r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, H - MARGIN, W - MARGIN).unwrap();
    writeln!(out, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{0}" stroke="black"/>"#, H - MARGIN).unwrap();
    let mut d = lo;
    while d <= hi + 1e-9 {
        let px = x(10f64.powf(d));
        writeln!(out, r#"<line x1="{px:.1}" y1="{0}" x2="{px:.1}" y2="{1}" stroke="black"/>"#, H - MARGIN, H - MARGIN + 5.0).unwrap();
        writeln!(out, r#"<text x="{px:.1}" y="{0}" text-anchor="middle">{1}</text>"#, H - MARGIN + 18.0, 10f64.powf(d)).unwrap();
        d += 1.0;
    }
    for i in 0..=4 {
        let a = amin + (amax - amin) * i as f64 / 4.0;
        writeln!(out, r#"<text x="{0}" y="{1:.1}" text-anchor="end">{a:.1}</text>"#, MARGIN - 6.0, y(a) + 4.0).unwrap();
    }
    writeln!(out, r#"<text x="{0}" y="{1}" text-anchor="middle">energy per classification [mJ]</text>"#, W / 2.0, H - 15.0).unwrap();
    writeln!(out, r#"<text x="15" y="{0}" transform="rotate(-90 15 {0})" text-anchor="middle">accuracy</text>"#, H / 2.0).unwrap();

    let mut on_front: Vec<usize> = front.to_vec();
    on_front.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1));
    if on_front.len() > 1 {
        let path: Vec<String> = on_front.iter().map(|&i| format!("{:.1},{:.1}", x(points[i].1), y(points[i].2))).collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="crimson" stroke-width="1.5"/>"#, path.join(" ")).unwrap();
    }
    for (i, (name, e, a)) in points.iter().enumerate() {
        let fill = if front.contains(&i) { "crimson" } else { "gray" };
        writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{fill}"/>"#, x(*e), y(*a)).unwrap();
        writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x(*e) + 6.0, y(*a) - 6.0, escape(name)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}
