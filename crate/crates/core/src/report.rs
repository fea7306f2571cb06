//! Artifact writers: CSV tables and SVG line charts, each carrying the
//! version header and the full run-config echo so a reader can reproduce
//! the file from its own header.

use crate::error::Result;
use std::io::Write;
use std::path::Path;

pub const ARTIFACT_VERSION: &str = "flowfill v1";

pub fn write_csv(
    path: &Path,
    config_echo: &serde_json::Value,
    header: &str,
    rows: &[Vec<String>],
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# {ARTIFACT_VERSION}")?;
    writeln!(out, "# config: {}", serde_json::to_string(config_echo)?)?;
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Minimal polyline chart; one series per (label, points) pair.
pub fn write_line_chart_svg(
    path: &Path,
    config_echo: &serde_json::Value,
    title: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let (width, height, margin) = (720.0, 420.0, 50.0);
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for (_, points) in series {
        for &(x, y) in points {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
    }
    if !min_x.is_finite() {
        min_x = 0.0;
        max_x = 1.0;
        min_y = 0.0;
        max_y = 1.0;
    }
    if (max_x - min_x).abs() < 1e-12 {
        max_x = min_x + 1.0;
    }
    if (max_y - min_y).abs() < 1e-12 {
        max_y = min_y + 1.0;
    }
    let sx = |x: f64| margin + (x - min_x) / (max_x - min_x) * (width - 2.0 * margin);
    let sy = |y: f64| height - margin - (y - min_y) / (max_y - min_y) * (height - 2.0 * margin);

    let palette = ["#2b6cb0", "#c05621", "#2f855a", "#6b46c1", "#c53030", "#2c7a7b"];
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<!-- {ARTIFACT_VERSION} -->\n<!-- config: {} -->\n",
        serde_json::to_string(config_echo)?.replace("--", "__")
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        xml_escape(title)
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#444\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#444\"/>\n",
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin
    ));
    for k in 0..=4 {
        let fx = min_x + (max_x - min_x) * k as f64 / 4.0;
        let fy = min_y + (max_y - min_y) * k as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{:.3}</text>\n",
            sx(fx),
            height - margin + 16.0,
            fx
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>\n",
            margin - 6.0,
            sy(fy) + 3.0,
            fy
        ));
    }
    for (i, (label, points)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let path_data: Vec<String> = points
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| {
                format!("{}{:.2},{:.2}", if k == 0 { "M" } else { "L" }, sx(x), sy(y))
            })
            .collect();
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path_data.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            width - margin - 150.0,
            margin + 14.0 * (i as f64 + 1.0),
            xml_escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
