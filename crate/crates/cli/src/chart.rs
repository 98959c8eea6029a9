//! Hand-rolled SVG chart: three log-scaled panels (MSE, squared bias,
//! variance) against alpha, with one line per estimator.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context as _;
use ope_mnar::{SweepRow, SweepSummary};

/// Values at or below this floor are clamped before taking logs, so exact
/// zeros (an unbiased estimator's squared bias) stay on the chart.
pub const LOG_FLOOR: f64 = 1e-12;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

const PLOT_W: f64 = 300.0;
const PLOT_H: f64 = 240.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 46.0;
const LEGEND_W: f64 = 200.0;

const PANEL_W: f64 = MARGIN_LEFT + PLOT_W + MARGIN_RIGHT;
const HEIGHT: f64 = MARGIN_TOP + PLOT_H + MARGIN_BOTTOM;

/// One estimator's trace within a single panel.
struct Series {
    color: &'static str,
    points: Vec<(f64, f64)>,
}

fn estimator_order(rows: &[SweepRow]) -> Vec<&str> {
    let mut names: Vec<&str> = Vec::new();
    for row in rows {
        if !names.contains(&row.estimator.as_str()) {
            names.push(&row.estimator);
        }
    }
    names
}

fn collect_series(rows: &[SweepRow], names: &[&str], metric: fn(&SweepRow) -> f64) -> Vec<Series> {
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.estimator == *name)
                .map(|r| (r.alpha, metric(r).max(LOG_FLOOR).log10()))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                color: PALETTE[i % PALETTE.len()],
                points,
            }
        })
        .collect()
}

fn decade_label(exp: i64) -> String {
    if exp == 0 {
        "1".to_string()
    } else {
        format!("1e{exp}")
    }
}

fn render_panel(svg: &mut String, index: usize, title: &str, series: &[Series]) {
    let x0 = index as f64 * PANEL_W + MARGIN_LEFT;
    let y0 = MARGIN_TOP;

    let alphas: Vec<f64> = {
        let mut a: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    };
    let (a_min, a_max) = match (alphas.first(), alphas.last()) {
        (Some(&lo), Some(&hi)) if hi > lo => (lo, hi),
        (Some(&lo), _) => (lo - 0.5, lo + 0.5),
        _ => (0.0, 1.0),
    };
    let a_span = a_max - a_min;

    let logs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min).floor();
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
    let (lo, hi) = if lo.is_finite() && hi.is_finite() {
        if hi > lo { (lo, hi) } else { (lo, lo + 1.0) }
    } else {
        (-1.0, 0.0)
    };
    let l_span = hi - lo;

    let x = |alpha: f64| x0 + (alpha - a_min) / a_span * PLOT_W;
    let y = |log_v: f64| y0 + PLOT_H - (log_v - lo) / l_span * PLOT_H;

    let _ = write!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"14\" font-weight=\"bold\">{title}</text>",
        x0 + PLOT_W / 2.0,
        y0 - 14.0,
    );

    // Decade gridlines and y tick labels; thin out when the span is wide.
    let step = (l_span / 8.0).ceil().max(1.0) as i64;
    let mut exp = lo as i64;
    while exp <= hi as i64 {
        let gy = y(exp as f64);
        let _ = write!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" stroke=\"#dddddd\"/>",
            x0,
            x0 + PLOT_W,
        );
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{}</text>",
            x0 - 6.0,
            gy + 4.0,
            decade_label(exp),
        );
        exp += step;
    }

    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{:.2}\" stroke=\"#333333\"/>",
        y0 + PLOT_H,
    );
    let _ = write!(
        svg,
        "<line x1=\"{x0:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#333333\"/>",
        y0 + PLOT_H,
        x0 + PLOT_W,
        y0 + PLOT_H,
    );

    // X ticks at each alpha.
    for &alpha in &alphas {
        let tx = x(alpha);
        let _ = write!(
            svg,
            "<line x1=\"{tx:.2}\" y1=\"{:.2}\" x2=\"{tx:.2}\" y2=\"{:.2}\" stroke=\"#333333\"/>",
            y0 + PLOT_H,
            y0 + PLOT_H + 4.0,
        );
        let _ = write!(
            svg,
            "<text x=\"{tx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{alpha}</text>",
            y0 + PLOT_H + 17.0,
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">alpha</text>",
        x0 + PLOT_W / 2.0,
        y0 + PLOT_H + 34.0,
    );

    // One polyline plus markers per estimator.
    for s in series {
        if s.points.len() > 1 {
            let mut attr = String::new();
            for (alpha, log_v) in &s.points {
                let _ = write!(attr, "{:.2},{:.2} ", x(*alpha), y(*log_v));
            }
            let _ = write!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>",
                attr.trim_end(),
                s.color,
            );
        }
        for (alpha, log_v) in &s.points {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>",
                x(*alpha),
                y(*log_v),
                s.color,
            );
        }
    }
}

/// Renders the sweep summary as a standalone SVG document.
pub fn render_chart(summary: &SweepSummary) -> String {
    let names = estimator_order(&summary.rows);
    let width = 3.0 * PANEL_W + if names.is_empty() { 0.0 } else { LEGEND_W };
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{HEIGHT:.0}\" \
         viewBox=\"0 0 {width:.0} {HEIGHT:.0}\" font-family=\"sans-serif\">",
    );
    let _ = write!(
        svg,
        "<rect width=\"{width:.0}\" height=\"{HEIGHT:.0}\" fill=\"#ffffff\"/>",
    );

    if summary.rows.is_empty() {
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"14\">no data</text>",
            width / 2.0,
            HEIGHT / 2.0,
        );
        svg.push_str("</svg>");
        return svg;
    }

    let panels: [(&str, fn(&SweepRow) -> f64); 3] = [
        ("MSE", |r| r.mse),
        ("Squared bias", |r| r.squared_bias),
        ("Variance", |r| r.variance),
    ];
    for (i, (title, metric)) in panels.iter().enumerate() {
        let series = collect_series(&summary.rows, &names, *metric);
        render_panel(&mut svg, i, title, &series);
    }

    // Legend to the right of the last panel.
    let lx = 3.0 * PANEL_W + 16.0;
    for (i, name) in names.iter().enumerate() {
        let ly = MARGIN_TOP + 14.0 + i as f64 * 20.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
            lx + 22.0,
        );
        let _ = write!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{ly:.2}\" r=\"3\" fill=\"{color}\"/>",
            lx + 11.0,
        );
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{name}</text>",
            lx + 28.0,
            ly + 4.0,
        );
    }

    svg.push_str("</svg>");
    svg
}

/// Writes [`render_chart`] output to `path`.
pub fn write_figure_svg(path: &Path, summary: &SweepSummary) -> anyhow::Result<()> {
    std::fs::write(path, render_chart(summary))
        .with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alpha: f64, estimator: &str, mse: f64, squared_bias: f64) -> SweepRow {
        SweepRow {
            alpha,
            estimator: estimator.to_string(),
            mse,
            squared_bias,
            variance: mse - squared_bias,
            mean_estimate: 1.0,
            true_value: 1.0,
            n_seeds: 10,
        }
    }

    fn sample_summary() -> SweepSummary {
        SweepSummary {
            rows: vec![
                row(0.0, "mips", 1e-3, 1e-5),
                row(1.0, "mips", 5e-3, 2e-3),
                row(0.0, "mips-true-roips", 2e-3, 0.0),
                row(1.0, "mips-true-roips", 2.5e-3, 0.0),
            ],
        }
    }

    #[test]
    fn chart_has_three_panels_and_a_line_per_estimator() {
        let svg = render_chart(&sample_summary());
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>"));
        for title in ["MSE", "Squared bias", "Variance"] {
            assert!(svg.contains(&format!(">{title}</text>")), "missing {title}");
        }
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert!(svg.contains("mips-true-roips"));
    }

    #[test]
    fn zero_values_are_clamped_to_the_floor() {
        let svg = render_chart(&sample_summary());
        assert!(!svg.contains("NaN"));
        assert!(!svg.contains("inf"));
        // The squared-bias panel's range reaches the clamp floor.
        assert!(svg.contains("1e-12"));
    }

    #[test]
    fn empty_summary_renders_a_placeholder() {
        let svg = render_chart(&SweepSummary::default());
        assert!(svg.contains("no data"));
        assert!(svg.ends_with("</svg>"));
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(render_chart(&sample_summary()), render_chart(&sample_summary()));
    }
}
