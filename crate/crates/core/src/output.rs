//! Result tables.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::MetricsRow;

pub const METRICS_HEADER: [&str; 15] = [
    "strategy",
    "sweep_param",
    "sweep_value",
    "n_trials",
    "p_d",
    "p_fa",
    "c_h0",
    "c_h1",
    "delay_mean_s",
    "delay_detected_frac",
    "on_fraction",
    "rising_per_node",
    "on_duration_mean_s",
    "theta_gateway",
    "seed",
];

/// Formats `x` with `digits` significant digits in the style of C's `%g`:
/// fixed notation for moderate exponents, scientific otherwise, trailing
/// zeros removed.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".to_owned();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_owned();
    }
    if x == 0.0 {
        return "0".to_owned();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_owned()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt6(x: f64) -> String {
    format_sig(x, 6)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

impl MetricsRow {
    pub fn csv_record(&self) -> [String; 15] {
        [
            self.strategy.label().to_owned(),
            self.sweep_param.clone(),
            opt(self.sweep_value),
            self.n_trials.to_string(),
            opt(self.p_d),
            opt(self.p_fa),
            opt(self.c_h0),
            opt(self.c_h1),
            opt(self.delay_mean_s),
            opt(self.delay_detected_frac),
            fmt6(self.on_fraction),
            fmt6(self.rising_per_node),
            fmt6(self.on_duration_mean_s),
            fmt6(self.theta_gateway),
            self.seed.to_string(),
        ]
    }
}

/// Writes the metrics table as CSV to any writer.
pub fn write_metrics<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.write_record(row.csv_record())?;
    }
    w.flush().map_err(|e| Error::Other(e.to_string()))?;
    Ok(())
}

/// Writes the metrics table to `path`, creating parent directories.
pub fn write_results(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let wrap = |source| Error::Write {
        path: path.to_owned(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(wrap)?;
    }
    let file = std::fs::File::create(path).map_err(wrap)?;
    write_metrics(rows, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::StrategyKind;

    fn row() -> MetricsRow {
        MetricsRow {
            strategy: StrategyKind::Eir,
            sweep_param: "a_1".into(),
            sweep_value: Some(0.06),
            n_trials: 500,
            p_d: Some(0.694),
            p_fa: Some(0.052),
            c_h0: Some(1234.5678901),
            c_h1: Some(14791.0),
            delay_mean_s: Some(67.123456789),
            delay_detected_frac: Some(0.694),
            on_fraction: 1.0 / 3.0,
            rising_per_node: 6.15,
            on_duration_mean_s: 16.55,
            theta_gateway: 0.000012345678,
            seed: 42,
        }
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt6(1234.5678901), "1234.57");
        assert_eq!(fmt6(14791.0), "14791");
        assert_eq!(fmt6(123456789.0), "1.23457e+08");
        assert_eq!(fmt6(0.000012345678), "1.23457e-05");
        assert_eq!(fmt6(0.0001), "0.0001");
        assert_eq!(fmt6(-2.5), "-2.5");
        assert_eq!(fmt6(999999.5), "1e+06");
        assert_eq!(fmt6(0.9999995), "1");
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        write_metrics(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", METRICS_HEADER.join(",")));
    }

    #[test]
    fn one_row_two_lines() {
        let mut buf = Vec::new();
        write_metrics(&[row()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[1],
            "EIR,a_1,0.06,500,0.694,0.052,1234.57,14791,67.1235,0.694,0.333333,6.15,16.55,1.23457e-05,42"
        );
    }

    #[test]
    fn missing_values_are_empty_fields() {
        let mut r = row();
        r.p_d = None;
        r.sweep_value = None;
        let rec = r.csv_record();
        assert_eq!(rec[2], "");
        assert_eq!(rec[4], "");
    }

    #[test]
    fn files_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("x/a.csv");
        let b = dir.path().join("b.csv");
        write_results(&[row(), row()], &a).unwrap();
        write_results(&[row(), row()], &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn unwritable_path_fails() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, b"x").unwrap();
        let err = write_results(&[], &file.join("sub.csv")).unwrap_err();
        assert!(matches!(err, Error::Write { .. }));
    }
}
