//! Self-contained SVG 1.1 curve charts with byte-deterministic output.
//!
//! No plotting dependency: charts are a few hundred fixed-order elements,
//! and every coordinate is formatted with a fixed precision so identical
//! input gives identical bytes.

use advlab_core::analysis::BvReport;
use advlab_core::train::MetricsRecord;

use crate::output::CliError;

pub struct Series {
    pub name: &'static str,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 62.0;
const RIGHT: f64 = 490.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 372.0;

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick label: integers print bare, everything else at four decimals with
/// trailing zeros trimmed.
fn fmt_tick(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        return format!("{}", v as i64);
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

/// Render one chart. The x axis spans [0, x_max], the y axis [0, y_max];
/// polylines appear in series order, so element counts mirror the data.
pub fn curve_chart(
    title: &str,
    x_label: &str,
    x_max: f64,
    y_max: f64,
    x_ticks: &[f64],
    y_ticks: &[f64],
    series: &[Series],
) -> String {
    let x_span = if x_max > 0.0 { x_max } else { 1.0 };
    let y_span = if y_max > 0.0 { y_max } else { 1.0 };
    let to_px = |x: f64| LEFT + x / x_span * (RIGHT - LEFT);
    let to_py = |y: f64| BOTTOM - y / y_span * (BOTTOM - TOP);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"16\" font-family=\"monospace\" font-size=\"13\" \
         text-anchor=\"middle\">{}</text>\n",
        fmt_coord((LEFT + RIGHT) / 2.0),
        xml_escape(title)
    ));

    // Axes.
    out.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#000000\" stroke-width=\"1\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"#000000\" stroke-width=\"1\"/>\n",
        l = fmt_coord(LEFT),
        r = fmt_coord(RIGHT),
        t = fmt_coord(TOP),
        b = fmt_coord(BOTTOM),
    ));

    for &tx in x_ticks {
        let px = fmt_coord(to_px(tx));
        out.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#000000\" stroke-width=\"1\"/>\n",
            fmt_coord(BOTTOM),
            fmt_coord(BOTTOM + 4.0),
        ));
        out.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            fmt_coord(BOTTOM + 16.0),
            fmt_tick(tx)
        ));
    }
    for &ty in y_ticks {
        let py = fmt_coord(to_py(ty));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#000000\" stroke-width=\"1\"/>\n",
            fmt_coord(LEFT - 4.0),
            fmt_coord(LEFT),
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            fmt_coord(LEFT - 8.0),
            fmt_coord(to_py(ty) + 4.0),
            fmt_tick(ty)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
         text-anchor=\"middle\">{}</text>\n",
        fmt_coord((LEFT + RIGHT) / 2.0),
        fmt_coord(BOTTOM + 34.0),
        xml_escape(x_label)
    ));

    // One polyline per series, in order.
    for s in series {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt_coord(to_px(x)), fmt_coord(to_py(y))))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            s.color,
            pts.join(" ")
        ));
    }

    // Legend, one swatch and label per series.
    for (ix, s) in series.iter().enumerate() {
        let y = TOP + 14.0 + 18.0 * ix as f64;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            fmt_coord(RIGHT + 12.0),
            fmt_coord(RIGHT + 34.0),
            s.color,
            y = fmt_coord(y),
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            fmt_coord(RIGHT + 40.0),
            fmt_coord(y + 4.0),
            xml_escape(s.name)
        ));
    }

    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Accuracy curves over epochs, one polyline per accuracy column of the
/// metrics CSV. The y axis is the full [0, 1] accuracy range; the x axis
/// covers [0, epochs].
pub fn metrics_chart(rows: &[MetricsRecord]) -> Result<String, CliError> {
    let x_max = rows
        .iter()
        .map(|r| r.epoch)
        .max()
        .map(|e| (e + 1) as f64)
        .unwrap_or(1.0);
    let col = |f: fn(&MetricsRecord) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    let series = [
        Series { name: "nat_acc", color: "#1f77b4", points: col(|r| r.natural_acc) },
        Series { name: "fgsm_acc", color: "#ff7f0e", points: col(|r| r.fgsm_acc) },
        Series { name: "pgd_acc", color: "#d62728", points: col(|r| r.pgd_acc) },
        Series { name: "cw_acc", color: "#9467bd", points: col(|r| r.cw_acc) },
        Series { name: "strong_acc", color: "#2ca02c", points: col(|r| r.strong_acc) },
    ];
    for s in &series {
        for &(_, y) in &s.points {
            if !(0.0..=1.0).contains(&y) {
                return Err(CliError::input(format!(
                    "column {} holds {y}, outside the [0,1] accuracy range",
                    s.name
                )));
            }
        }
    }
    let x_ticks: Vec<f64> = (0..=4).map(|i| (x_max * i as f64 / 4.0).round()).collect();
    let y_ticks: Vec<f64> = (0..=5).map(|i| i as f64 / 5.0).collect();
    Ok(curve_chart(
        "test accuracy over training",
        "epoch",
        x_max,
        1.0,
        &dedup_sorted(x_ticks),
        &y_ticks,
        &series,
    ))
}

/// Six curves over the training-budget sweep: risk, bias and variance for
/// the natural and the adversarial evaluation.
pub fn bv_chart(report: &BvReport) -> String {
    let xs: Vec<f64> = report.points.iter().map(|p| p.train_eps).collect();
    let x_max = xs.iter().copied().fold(0.0f64, f64::max);
    let pick = |f: fn(&advlab_core::analysis::BvPoint) -> f64| -> Vec<(f64, f64)> {
        report.points.iter().map(|p| (p.train_eps, f(p))).collect()
    };
    let series = [
        Series { name: "nat_risk", color: "#1f77b4", points: pick(|p| p.natural.risk) },
        Series { name: "nat_bias", color: "#17becf", points: pick(|p| p.natural.bias) },
        Series { name: "nat_var", color: "#aec7e8", points: pick(|p| p.natural.variance) },
        Series { name: "adv_risk", color: "#d62728", points: pick(|p| p.adversarial.risk) },
        Series { name: "adv_bias", color: "#ff7f0e", points: pick(|p| p.adversarial.bias) },
        Series { name: "adv_var", color: "#e7ba52", points: pick(|p| p.adversarial.variance) },
    ];
    let y_data_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(_, y)| y))
        .fold(0.0f64, f64::max);
    let y_max = if y_data_max > 0.0 { y_data_max * 1.05 } else { 1.0 };
    let y_ticks: Vec<f64> = (0..=5).map(|i| y_max * i as f64 / 5.0).collect();
    curve_chart(
        "bias-variance over training budget",
        "training epsilon",
        x_max,
        y_max,
        &dedup_sorted(xs),
        &y_ticks,
        &series,
    )
}

fn dedup_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}
