//! Minimal static SVG line charts for sweep results.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One named line.
pub struct Series<'a> {
    pub name: &'a str,
    pub ys: Vec<f64>,
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 100.0 || (v.fract() == 0.0 && v.abs() < 100.0) {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Write a line chart of the series over shared x values. The y axis is
/// clamped to `[0, 1]` when all values fit (metric plots), otherwise spans
/// the data.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    xs: &[f64],
    series: &[Series],
) -> Result<()> {
    if xs.is_empty() || series.is_empty() {
        return Err(Error::invalid_input("empty chart data"));
    }
    for s in series {
        if s.ys.len() != xs.len() {
            return Err(Error::shape(format!(
                "series {} has {} points for {} x values",
                s.name,
                s.ys.len(),
                xs.len()
            )));
        }
    }
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let all_unit = series
        .iter()
        .flat_map(|s| s.ys.iter())
        .all(|&y| (0.0..=1.0).contains(&y));
    let (ymin, ymax) = if all_unit {
        (0.0, 1.0)
    } else {
        let (lo, hi) = series
            .iter()
            .flat_map(|s| s.ys.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if lo == hi {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    };
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let yspan = ymax - ymin;
    let px = |x: f64| MARGIN_L + (x - xmin) / xspan * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - ymin) / yspan * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"17\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        title
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    // ticks
    for i in 0..=4 {
        let yv = ymin + yspan * i as f64 / 4.0;
        let y = py(yv);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{MARGIN_L}\" y2=\"{y}\" stroke=\"black\"/>\n",
            MARGIN_L - 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 9.0,
            y + 4.0,
            fmt_tick(yv)
        ));
        out.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n",
            WIDTH - MARGIN_R
        ));
    }
    for &xv in xs {
        let x = px(xv);
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 20.0,
            fmt_tick(xv)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 15.0,
        x_label
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        y_label
    ));
    // series
    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(&s.ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        for (&x, &y) in xs.iter().zip(&s.ys) {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                px(x),
                py(y)
            ));
        }
        // legend entry
        let ly = MARGIN_T + 18.0 * si as f64;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_R - 130.0,
            WIDTH - MARGIN_R - 104.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN_R - 98.0,
            ly + 4.0,
            s.name
        ));
    }
    out.push_str("</svg>\n");
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(out.as_bytes())?;
    f.flush()?;
    Ok(())
}
