//! The metrics CSV: exact header, six significant digits, one row per epoch.

use advlab_core::train::MetricsRecord;

use crate::output::CliError;

pub const METRICS_HEADER: &str =
    "epoch,lr,train_loss,nat_acc,fgsm_acc,pgd_acc,cw_acc,strong_acc,wall_s";

/// Plain decimal with six significant digits, no exponent notation. Values
/// at or above 1e6 keep their full integer part.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".into();
    }
    let prec = (5 - v.abs().log10().floor() as i64).max(0) as usize;
    format!("{v:.prec$}")
}

/// Render records to CSV text. `zero_wall` is the serial mode: wall seconds
/// are reported as 0 so repeated runs compare bitwise.
pub fn render_csv(records: &[MetricsRecord], zero_wall: bool) -> Result<String, CliError> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let wall = if zero_wall { 0.0 } else { r.wall_time };
        for v in [
            r.lr,
            r.train_loss,
            r.natural_acc,
            r.fgsm_acc,
            r.pgd_acc,
            r.cw_acc,
            r.strong_acc,
            wall,
        ] {
            if !v.is_finite() {
                return Err(CliError::artifact(format!(
                    "refusing to write non-finite metric {v} at epoch {}",
                    r.epoch
                )));
            }
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            fmt_sig(r.lr),
            fmt_sig(r.train_loss),
            fmt_sig(r.natural_acc),
            fmt_sig(r.fgsm_acc),
            fmt_sig(r.pgd_acc),
            fmt_sig(r.cw_acc),
            fmt_sig(r.strong_acc),
            fmt_sig(wall),
        ));
    }
    Ok(out)
}

/// Strict parse of a metrics CSV. The header must match column for column;
/// a renamed or missing column is reported by name.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRecord>, CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::input("metrics csv is empty, expected a header row"))?;
    check_header(header)?;

    let mut rows = Vec::new();
    for (ix, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(CliError::input(format!(
                "metrics csv row {}: expected 9 fields, found {}",
                ix + 2,
                fields.len()
            )));
        }
        let num = |col: usize| -> Result<f64, CliError> {
            fields[col].parse::<f64>().map_err(|_| {
                CliError::input(format!(
                    "metrics csv row {}, column {}: cannot parse {:?} as a number",
                    ix + 2,
                    header_columns()[col],
                    fields[col]
                ))
            })
        };
        let epoch = fields[0].parse::<usize>().map_err(|_| {
            CliError::input(format!(
                "metrics csv row {}, column epoch: cannot parse {:?} as an integer",
                ix + 2,
                fields[0]
            ))
        })?;
        rows.push(MetricsRecord {
            epoch,
            lr: num(1)?,
            train_loss: num(2)?,
            natural_acc: num(3)?,
            fgsm_acc: num(4)?,
            pgd_acc: num(5)?,
            cw_acc: num(6)?,
            strong_acc: num(7)?,
            wall_time: num(8)?,
        });
    }
    Ok(rows)
}

fn header_columns() -> Vec<&'static str> {
    METRICS_HEADER.split(',').collect()
}

fn check_header(header: &str) -> Result<(), CliError> {
    if header == METRICS_HEADER {
        return Ok(());
    }
    let expected = header_columns();
    let found: Vec<&str> = header.split(',').collect();
    for (ix, want) in expected.iter().enumerate() {
        match found.get(ix) {
            None => {
                return Err(CliError::input(format!(
                    "metrics csv header: missing column {want:?}"
                )))
            }
            Some(got) if got != want => {
                return Err(CliError::input(format!(
                    "metrics csv header: expected column {want:?}, found {got:?}"
                )))
            }
            Some(_) => {}
        }
    }
    Err(CliError::input(format!(
        "metrics csv header: unexpected extra column {:?}",
        found[expected.len()]
    )))
}
