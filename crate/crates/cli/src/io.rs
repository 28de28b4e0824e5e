//! CSV samples, JSON reports and output files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::ser::Formatter;
use wrht_core::sequential::Sample;

use crate::error::{CliError, CliResult};

/// Reads one sample per row; every row must have the same number of
/// numeric columns.
pub fn parse_samples_csv(path: &Path, has_header: bool) -> CliResult<Vec<Sample>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_samples(&text, has_header).map_err(|e| match e {
        CliError::Io(msg) => CliError::Io(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_samples(text: &str, has_header: bool) -> CliResult<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut samples: Vec<Sample> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Io(format!("malformed CSV: {e}")))?;
        let row = record.position().map_or(samples.len() + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::Io(format!("row {row}, column {}: not a number: '{cell}'", col + 1)))
            })
            .collect::<CliResult<Sample>>()?;
        if let Some(first) = samples.first() {
            if values.len() != first.len() {
                return Err(CliError::Io(format!(
                    "row {row}: expected {} columns, found {}",
                    first.len(),
                    values.len()
                )));
            }
        }
        samples.push(values);
    }
    if samples.is_empty() {
        return Err(CliError::Io("no samples".into()));
    }
    Ok(samples)
}

pub fn samples_to_csv(samples: &[Sample]) -> String {
    let mut out = String::new();
    for s in samples {
        let row: Vec<String> = s.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Compact JSON with every float written as `d.dddddddddddddddde±x`
/// (17 significant digits).
struct SignificantDigits;

impl Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SignificantDigits);
    value.serialize(&mut ser).map_err(|e| CliError::Io(format!("cannot serialize report: {e}")))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))
}

/// Writes `text` to `path`, or to standard output when no path is given.
pub fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        assert_eq!(parse_samples("0.0,1.0\n", false).unwrap(), vec![vec![0.0, 1.0]]);
        assert_eq!(parse_samples("x,y\n0,1\n", true).unwrap(), vec![vec![0.0, 1.0]]);
        let err = parse_samples("", false).unwrap_err();
        assert_eq!(err.to_string(), "no samples");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = parse_samples("1,2\n3,4,5\n", false).unwrap_err();
        assert_eq!(err.to_string(), "row 2: expected 2 columns, found 3");
        let err = parse_samples("1,2\n3,abc\n", false).unwrap_err();
        assert_eq!(err.to_string(), "row 2, column 2: not a number: 'abc'");
        let err = parse_samples("a,b\n1,2\nx,2\n", true).unwrap_err();
        assert_eq!(err.to_string(), "row 3, column 1: not a number: 'x'");
    }

    #[test]
    fn json_floats_have_17_digits() {
        let text = to_json(&serde_json::json!({"x": 3f64.sqrt(), "y": [0.5, 2.0], "z": null})).unwrap();
        assert_eq!(text, "{\"x\":1.7320508075688772e0,\"y\":[5.0000000000000000e-1,2.0000000000000000e0],\"z\":null}\n");
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(to_json(&back).unwrap(), text);
    }
}
