//! Standalone grouped bar chart.

use std::fmt::Write;

const COLORS: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `values[g][s]` is the bar of series `s` in group `g`. The y axis spans
/// [0, max(1, largest value)].
pub fn grouped_bars(title: &str, groups: &[String], series: &[&str], values: &[Vec<f64>]) -> String {
    let (w, h) = (160.0 + 110.0 * groups.len() as f64, 360.0);
    let (left, right, top, bottom) = (60.0, 130.0, 40.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let y_max = values
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let y = |v: f64| {
        let v = if v.is_finite() { v.clamp(0.0, y_max) } else { 0.0 };
        top + plot_h * (1.0 - v / y_max)
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + plot_w / 2.0,
        escape(title)
    );

    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            left + plot_w,
            left - 6.0,
            yy + 4.0
        );
    }

    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let x0 = left + g as f64 * group_w + 0.1 * group_w;
        for (k, v) in values[g].iter().enumerate() {
            let yy = y(*v);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{yy:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"><title>{}: {v:.4}</title></rect>"#,
                x0 + k as f64 * bar_w,
                top + plot_h - yy,
                COLORS[k % COLORS.len()],
                escape(series.get(k).copied().unwrap_or("")),
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            left + (g as f64 + 0.5) * group_w,
            top + plot_h + 20.0,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" x2="{left}" y1="{top}" y2="{}" stroke="black"/><line x1="{left}" x2="{}" y1="{}" y2="{}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h,
        top + plot_h
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">mean reward</text>"#,
        top + plot_h / 2.0
    );

    for (k, name) in series.iter().enumerate() {
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = w - right + 15.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            COLORS[k % COLORS.len()],
            lx + 18.0,
            ly + 10.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_value_plus_legend() {
        let svg = grouped_bars(
            "t",
            &["a".into(), "b<".into()],
            &["x", "y", "z"],
            &[vec![0.1, 0.5, 0.9], vec![0.2, f64::NAN, 1.0]],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        // background + 6 bars + 3 legend swatches
        assert_eq!(svg.matches("<rect").count(), 10);
        assert!(svg.contains("b&lt;"));
    }
}
