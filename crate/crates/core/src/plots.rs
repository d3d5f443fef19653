//! SVG emission of the per-axis bias-error curves from a diagnostics CSV.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::pipeline::parse_csv;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 520.0;
const ML: f64 = 80.0;
const MR: f64 = 30.0;
const MT: f64 = 44.0;
const MB: f64 = 64.0;

const AXIS_COLORS: [(&str, &str); 3] = [("x", "#d62728"), ("y", "#2ca02c"), ("z", "#1f77b4")];

fn nice_num(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:.3e}")
    }
}

/// One line chart with three series sharing the time axis.
fn line_chart(title: &str, ylabel: &str, t: &[f64], series: &[Vec<f64>; 3]) -> String {
    let tmin = t.first().copied().unwrap_or(0.0);
    let tmax = t.last().copied().unwrap_or(1.0).max(tmin + 1e-9);
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for v in s {
            ymin = ymin.min(*v);
            ymax = ymax.max(*v);
        }
    }
    if !ymin.is_finite() || ymin == ymax {
        ymin -= 1.0;
        ymax += 1.0;
    }
    let pad = 0.05 * (ymax - ymin);
    let (ymin, ymax) = (ymin - pad, ymax + pad);
    let px = |tt: f64| ML + (tt - tmin) / (tmax - tmin) * (WIDTH - ML - MR);
    let py = |y: f64| HEIGHT - MB - (y - ymin) / (ymax - ymin) * (HEIGHT - MT - MB);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\" \
         font-family=\"sans-serif\">{title}</text>\n",
        WIDTH / 2.0
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MB,
        WIDTH - MR,
        HEIGHT - MB
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MB
    ));
    // Ticks.
    for k in 0..=5 {
        let tt = tmin + (tmax - tmin) * k as f64 / 5.0;
        let x = px(tt);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            HEIGHT - MB,
            HEIGHT - MB + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" \
             font-family=\"sans-serif\">{:.2}</text>\n",
            HEIGHT - MB + 20.0,
            tt
        ));
        let yy = ymin + (ymax - ymin) * k as f64 / 5.0;
        let y = py(yy);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ML}\" y2=\"{y}\" stroke=\"black\"/>\n",
            ML - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\" \
             font-family=\"sans-serif\">{}</text>\n",
            ML - 8.0,
            y + 4.0,
            nice_num(yy)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
         font-family=\"sans-serif\">t [s]</text>\n",
        (ML + WIDTH - MR) / 2.0,
        HEIGHT - 18.0
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 20 {})\">{ylabel}</text>\n",
        (MT + HEIGHT - MB) / 2.0,
        (MT + HEIGHT - MB) / 2.0
    ));
    // Series.
    for (s, (name, color)) in series.iter().zip(AXIS_COLORS) {
        let pts: Vec<String> = t
            .iter()
            .zip(s)
            .map(|(tt, y)| format!("{:.2},{:.2}", px(*tt), py(*y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let _ = name;
    }
    // Legend.
    for (idx, (name, color)) in AXIS_COLORS.iter().enumerate() {
        let x = WIDTH - MR - 150.0 + idx as f64 * 50.0;
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{MT}\" x2=\"{}\" y2=\"{MT}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            x + 18.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">{name}</text>\n",
            x + 22.0,
            MT + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads the diagnostics CSV and writes the translation- and rotation-bias
/// error charts; returns the two file paths.
pub fn emit_plots(csv_path: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let rows = parse_csv(csv_path)?;
    std::fs::create_dir_all(out_dir)?;
    let t: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let pve = [
        rows.iter().map(|r| r[7]).collect::<Vec<_>>(),
        rows.iter().map(|r| r[8]).collect(),
        rows.iter().map(|r| r[9]).collect(),
    ];
    let pwe = [
        rows.iter().map(|r| r[10]).collect::<Vec<_>>(),
        rows.iter().map(|r| r[11]).collect(),
        rows.iter().map(|r| r[12]).collect(),
    ];
    let trans = line_chart(
        "Translation bias error",
        "bias error [m/s]",
        &t,
        &pve,
    );
    let rot = line_chart("Rotation bias error", "bias error [rad/s]", &t, &pwe);
    let p1 = out_dir.join("bias_error_translation.svg");
    let p2 = out_dir.join("bias_error_rotation.svg");
    std::fs::write(&p1, trans)?;
    std::fs::write(&p2, rot)?;
    Ok((p1, p2))
}
