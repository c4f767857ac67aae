//! Minimal self-contained SVG charts.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 170.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 50.0;
const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_ticks: &[(f64, String)]) {
    let (x0, y0, x1, y1) = (PAD_L, H - PAD_B, W - PAD_R, PAD_T);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for (y, label) in y_ticks {
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// One polyline per series over a shared integer x axis.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> String {
    let mut s = header(title);
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let y_max = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
    let px = |i: usize| PAD_L + (W - PAD_L - PAD_R) * i as f64 / (n - 1) as f64;
    let py = |v: f64| H - PAD_B - (H - PAD_B - PAD_T) * (v / y_max).clamp(0.0, 1.0);
    let ticks: Vec<(f64, String)> = (0..=4).map(|k| {
        let v = y_max * k as f64 / 4.0;
        (py(v), format!("{v:.3}"))
    }).collect();
    axes(&mut s, x_label, y_label, &ticks);
    for (k, (name, v)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = v.iter().enumerate().map(|(i, &y)| format!("{:.2},{:.2}", px(i), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = PAD_T + 18.0 * k as f64 + 10.0;
        let lx = W - PAD_R + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Bars on a log10 axis, which keeps values spanning several decades legible.
pub fn log_bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut s = header(title);
    let logs: Vec<f64> = bars.iter().map(|(_, v)| v.max(1e-6).log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).min(0.0).floor();
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo + 1.0).ceil();
    let py = |l: f64| H - PAD_B - (H - PAD_B - PAD_T) * (l - lo) / (hi - lo);
    let ticks: Vec<(f64, String)> = (lo as i32..=hi as i32).map(|e| (py(e as f64), format!("1e{e}"))).collect();
    axes(&mut s, "variant", y_label, &ticks);
    let slot = (W - PAD_L - PAD_R) / bars.len().max(1) as f64;
    for (k, ((name, v), l)) in bars.iter().zip(&logs).enumerate() {
        let x = PAD_L + slot * k as f64 + slot * 0.2;
        let top = py(*l);
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
            slot * 0.6,
            (H - PAD_B - top).max(0.0)
        );
        let cx = x + slot * 0.3;
        let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{v:.4}</text>"#, top - 4.0);
        let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, H - PAD_B + 16.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let l = line_chart("t", "x", "y", &[("a<b".into(), vec![0.0, 1.0, 0.5])]);
        assert!(l.starts_with("<svg") && l.trim_end().ends_with("</svg>"));
        assert!(l.contains("a&lt;b"));
        let b = log_bar_chart("t", "y", &[("a".into(), 1.5), ("b".into(), 1e5)]);
        assert_eq!(b.matches("<rect").count(), 3);
        assert!(b.contains("1e5"));
    }
}
