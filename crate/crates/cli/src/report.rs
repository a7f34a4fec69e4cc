//! Markdown comparison table and SVG bar charts.

use std::fmt::Write;

use inpaint_aug::trainer::{DeltaReport, EvalReport};

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn signed_pct(v: f64) -> String {
    format!("{:+.2}", 100.0 * v)
}

/// One row per method, one column per class, F1 in percent. The treated row
/// carries deltas against the baseline in parentheses. Tail classes are
/// marked with `*`.
pub fn comparison_table(
    baseline: &EvalReport,
    treated: &EvalReport,
    delta: &DeltaReport,
    treated_name: &str,
) -> String {
    let mut s = String::new();
    let classes: Vec<String> = baseline
        .per_class
        .iter()
        .map(|m| {
            if m.tail {
                format!("{}*", m.class)
            } else {
                m.class.clone()
            }
        })
        .collect();
    let _ = writeln!(s, "| Method | F1 Score | {} |", classes.join(" | "));
    let _ = writeln!(s, "|---|---|{}", "---|".repeat(classes.len()));
    let base: Vec<String> = baseline.per_class.iter().map(|m| pct(m.f1)).collect();
    let _ = writeln!(s, "| Baseline | {} | {} |", pct(baseline.macro_f1), base.join(" | "));
    let treat: Vec<String> = treated
        .per_class
        .iter()
        .zip(&delta.per_class)
        .map(|(m, d)| format!("{}({})", pct(m.f1), signed_pct(d.f1)))
        .collect();
    let _ = writeln!(
        s,
        "| {treated_name} | {}({}) | {} |",
        pct(treated.macro_f1),
        signed_pct(delta.macro_f1),
        treat.join(" | ")
    );
    s.push_str("\nClasses marked * are tail classes.\n\n");
    let _ = writeln!(s, "| Method | Head macro F1 | Tail macro F1 |");
    let _ = writeln!(s, "|---|---|---|");
    let _ = writeln!(
        s,
        "| Baseline | {} | {} |",
        pct(baseline.head_macro_f1),
        pct(baseline.tail_macro_f1)
    );
    let _ = writeln!(
        s,
        "| {treated_name} | {}({}) | {}({}) |",
        pct(treated.head_macro_f1),
        signed_pct(delta.head_macro_f1),
        pct(treated.tail_macro_f1),
        signed_pct(delta.tail_macro_f1)
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Vertical bars around a zero baseline; highlighted bars are drawn in a
/// second colour. Handles negative values.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64], highlight: &[bool]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 80.0;
    let plot_h = H - TOP - BOTTOM;
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let min = values.iter().copied().fold(0.0f64, f64::min);
    let span = if max - min > 0.0 { max - min } else { 1.0 };
    let y_of = |v: f64| TOP + (max - v) / span * plot_h;
    let zero = y_of(0.0);
    let slot = (W - LEFT - 20.0) / values.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{zero:.1}" x2="{}" y2="{zero:.1}" stroke="black"/>"#,
        W - 20.0
    );
    for (v, label) in [(max, format!("{max:.3}")), (min, format!("{min:.3}"))] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{label}</text>"#,
            LEFT - 6.0,
            y_of(v) + 4.0
        );
    }
    for (i, (v, label)) in values.iter().zip(labels).enumerate() {
        let x = LEFT + i as f64 * slot + slot * 0.15;
        let (y, h) = if *v >= 0.0 {
            (y_of(*v), zero - y_of(*v))
        } else {
            (zero, y_of(*v) - zero)
        };
        let fill = if highlight.get(i).copied().unwrap_or(false) {
            "#d62728"
        } else {
            "#1f77b4"
        };
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{h:.1}" fill="{fill}"/>"#,
            slot * 0.7
        );
        let cx = x + slot * 0.35;
        let ly = H - BOTTOM + 14.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-40 {cx:.1} {ly:.1})">{}</text>"#,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
