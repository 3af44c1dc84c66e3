//! Minimal static line chart of mean local coverage per method.

use std::fmt::Write as _;

use conformal_ts::calibrator::Method;
use conformal_ts::MetricsReport;

const W: f64 = 800.0;
const H: f64 = 400.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 7] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
];

/// Window index on x, coverage averaged over cells on y, one polyline per
/// method, with a dashed line at the target level.
pub fn local_coverage_chart(series: &[(Method, MetricsReport)], alpha: f64) -> String {
    let curves: Vec<(Method, Vec<f64>)> = series
        .iter()
        .map(|(m, r)| {
            let n = r.local_cov.iter().map(Vec::len).min().unwrap_or(0);
            let mean = (0..n)
                .map(|k| r.local_cov.iter().map(|c| c[k]).sum::<f64>() / r.local_cov.len() as f64)
                .collect();
            (*m, mean)
        })
        .collect();
    let n = curves
        .iter()
        .map(|(_, c)| c.len())
        .max()
        .unwrap_or(0)
        .max(2);
    let x = |k: usize| PAD + (W - 2.0 * PAD) * k as f64 / (n - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="gray" stroke-dasharray="4 4"/>"#,
        y(1.0 - alpha),
        W - PAD
    );
    for (k, (m, c)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = c
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{m}</text>"#,
            W - PAD - 120.0,
            PAD + 14.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}
