//! Static SVG boxplots of MaxSkew distributions.
//!
//! One box per group: whiskers at min and max, box from Q1 to Q3, a median
//! line and a mean marker. The maximum is drawn as a red point and the
//! minimum as a green point, each labeled with its subject. Every box also
//! carries its summary as `data-*` attributes so tools can read the figure
//! back without parsing geometry.

use std::fmt::Write as _;

use crate::metrics::AggregateSummary;

const BOX_SPACING: f64 = 180.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 50.0;
const PLOT_HEIGHT: f64 = 300.0;

pub struct BoxplotGroup<'a> {
    pub label: &'a str,
    pub summary: &'a AggregateSummary,
    /// Per-subject values drawn as jittered points, in report order.
    pub points: &'a [f64],
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn value_range(groups: &[BoxplotGroup<'_>]) -> (f64, f64) {
    let finite = groups
        .iter()
        .flat_map(|g| {
            [g.summary.min, g.summary.max]
                .into_iter()
                .chain(g.points.iter().copied())
        })
        .filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.08 * (hi - lo);
        (lo.min(0.0) - pad, hi + pad)
    }
}

/// Renders the groups side by side.
pub fn boxplot_svg(title: &str, y_label: &str, groups: &[BoxplotGroup<'_>]) -> String {
    let width = LEFT + BOX_SPACING * groups.len().max(1) as f64 + 40.0;
    let height = TOP + PLOT_HEIGHT + 70.0;
    let (lo, hi) = value_range(groups);
    let y = |v: f64| TOP + PLOT_HEIGHT * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );

    // Axis with five ticks.
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        TOP + PLOT_HEIGHT
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.1}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y(v) + 4.0,
            y = y(v),
        );
    }
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + PLOT_HEIGHT / 2.0,
        escape(y_label)
    );

    for (i, g) in groups.iter().enumerate() {
        let s = g.summary;
        let cx = LEFT + BOX_SPACING * (i as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<g class="box" data-group="{}" data-count="{}" data-mean="{}" data-min="{}" data-q1="{}" data-median="{}" data-q3="{}" data-max="{}" data-min-subject="{}" data-max-subject="{}" data-neg-inf-count="{}">"#,
            escape(g.label),
            s.count,
            s.mean,
            s.min,
            s.q1,
            s.median,
            s.q3,
            s.max,
            escape(&s.argmin_subject),
            escape(&s.argmax_subject),
            s.neg_inf_count
        );
        if s.count > 0 {
            let half = 30.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{cx:.1}" y1="{:.2}" x2="{cx:.1}" y2="{:.2}" stroke="black"/>"#,
                y(s.max),
                y(s.min)
            );
            let _ = writeln!(
                svg,
                r##"<rect x="{:.1}" y="{:.2}" width="{:.1}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
                cx - half,
                y(s.q3),
                2.0 * half,
                (y(s.q1) - y(s.q3)).max(0.5)
            );
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{m:.2}" x2="{:.1}" y2="{m:.2}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                cx + half,
                m = y(s.median)
            );
            let _ = writeln!(
                svg,
                r#"<path d="M {:.1} {m:.2} l 5 5 l -5 5 l -5 -5 z" transform="translate(0 -5)" fill="black"/>"#,
                cx,
                m = y(s.mean)
            );
            for (j, &v) in g.points.iter().enumerate().filter(|(_, v)| v.is_finite()) {
                // Deterministic jitter.
                let dx = ((j * 37) % 21) as f64 - 10.0;
                let _ = writeln!(
                    svg,
                    r##"<circle cx="{:.1}" cy="{:.2}" r="2" fill="#555" fill-opacity="0.5"/>"##,
                    cx + dx,
                    y(v)
                );
            }
            let _ = writeln!(
                svg,
                r#"<circle class="max-point" cx="{cx:.1}" cy="{:.2}" r="5" fill="red"/><text class="max-label" x="{:.1}" y="{:.2}">{}</text>"#,
                y(s.max),
                cx + 8.0,
                y(s.max) - 4.0,
                escape(&s.argmax_subject)
            );
            let _ = writeln!(
                svg,
                r#"<circle class="min-point" cx="{cx:.1}" cy="{:.2}" r="5" fill="green"/><text class="min-label" x="{:.1}" y="{:.2}">{}</text>"#,
                y(s.min),
                cx + 8.0,
                y(s.min) + 14.0,
                escape(&s.argmin_subject)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + PLOT_HEIGHT + 24.0,
            escape(g.label)
        );
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary() -> AggregateSummary {
        AggregateSummary {
            count: 3,
            mean: 0.6,
            min: 0.0,
            q1: 0.35,
            median: 0.69,
            q3: 0.9,
            max: 1.0986,
            argmin_subject: "swimmer".into(),
            argmax_subject: "nurse & <aide>".into(),
            neg_inf_count: 0,
        }
    }

    #[test]
    fn labels_extremes_and_escapes() {
        let s = summary();
        let svg = boxplot_svg(
            "MaxSkew@12",
            "MaxSkew",
            &[BoxplotGroup {
                label: "race/gender",
                summary: &s,
                points: &[0.0, 0.69, 1.0986],
            }],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(r#"class="max-label""#));
        assert!(svg.contains("nurse &amp; &lt;aide&gt;"));
        assert!(svg.contains(r#"data-max="1.0986""#));
        assert!(svg.contains(r#"data-min-subject="swimmer""#));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn deterministic_and_flat_range() {
        let mut s = summary();
        s.min = 0.0;
        s.max = 0.0;
        let g = [BoxplotGroup {
            label: "g",
            summary: &s,
            points: &[0.0],
        }];
        assert_eq!(boxplot_svg("t", "y", &g), boxplot_svg("t", "y", &g));
        assert!(!boxplot_svg("t", "y", &g).contains("NaN"));
    }
}
