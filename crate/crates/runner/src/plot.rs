//! Epoch curves as standalone SVG files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::hex_digest;
use crate::error::{IoContext, Result, RunnerError};
use crate::report::BiasReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_Y: f64 = 40.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with axes, ticks and a legend.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(RunnerError::MissingSeries);
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_Y + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_Y}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            px(xv),
            HEIGHT - MARGIN_Y + 16.0,
            xv
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            MARGIN_LEFT + plot_w,
            py(yv),
            py(yv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            MARGIN_LEFT - 6.0,
            py(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 6.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_Y + plot_h / 2.0,
        MARGIN_Y + plot_h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        let ly = MARGIN_Y + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes `<id>-bias.svg` and `<id>-dev.svg`, one curve per report (mean over
/// seeds). `id` is the config hash prefix for one report, or a digest of all
/// config hashes when several are overlaid.
pub fn emit_plots(reports: &[BiasReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(RunnerError::MissingSeries);
    }
    let mut dev = Vec::new();
    let mut bias = Vec::new();
    for r in reports {
        let series = r.mean_series();
        if series.is_empty() {
            return Err(RunnerError::MissingSeries);
        }
        dev.push(Series {
            label: r.label.clone(),
            points: series.iter().map(|&(e, d, _)| (e as f64 + 1.0, d)).collect(),
        });
        let b: Vec<(f64, f64)> = series.iter().filter_map(|&(e, _, b)| b.map(|b| (e as f64 + 1.0, b))).collect();
        if !b.is_empty() {
            bias.push(Series {
                label: r.label.clone(),
                points: b,
            });
        }
    }
    let id = if reports.len() == 1 {
        reports[0].config_hash.chars().take(12).collect::<String>()
    } else {
        let joined: Vec<&str> = reports.iter().map(|r| r.config_hash.as_str()).collect();
        hex_digest(joined.join(",").as_bytes())[..12].to_string()
    };
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let mut written = Vec::new();
    if !bias.is_empty() {
        let name = reports[0].bias_probe_name.clone().unwrap_or_else(|| "bias".into());
        let svg = line_chart_svg(&format!("{name} along epochs"), "epoch", &name, &bias)?;
        let path = out_dir.join(format!("{id}-bias.svg"));
        std::fs::write(&path, svg).at(&path)?;
        written.push(path);
    }
    let name = format!("dev {}", reports[0].dev_metric_name);
    let svg = line_chart_svg(&format!("{name} along epochs"), "epoch", &name, &dev)?;
    let path = out_dir.join(format!("{id}-dev.svg"));
    std::fs::write(&path, svg).at(&path)?;
    written.push(path);
    Ok(written)
}
