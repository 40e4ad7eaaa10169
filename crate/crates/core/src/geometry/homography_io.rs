use std::path::Path;

use super::Mat3;
use crate::error::{Error, Result};

/// Nine row-major values, one matrix row per line, shortest round-trip
/// decimal form.
pub fn format_homography(h: &Mat3) -> String {
    let mut s = String::new();
    for r in 0..3 {
        let row: Vec<String> = (0..3).map(|c| format!("{:e}", h[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Parses nine whitespace-separated values in row-major order.
pub fn parse_homography(text: &str, path: &Path) -> Result<Mat3> {
    let mut values = Vec::with_capacity(9);
    let base = text.as_ptr() as usize;
    for tok in text.split_ascii_whitespace() {
        let at = (tok.as_ptr() as usize - base) as u64;
        if values.len() == 9 {
            return Err(Error::parse(path, at, "more than 9 values"));
        }
        values.push(
            tok.parse::<f64>()
                .map_err(|_| Error::parse(path, at, format!("invalid number {tok:?}")))?,
        );
    }
    if values.len() != 9 {
        return Err(Error::parse(
            path,
            text.len() as u64,
            format!("expected 9 values, found {}", values.len()),
        ));
    }
    Ok(Mat3::from_row_slice(&values))
}

pub fn read_homography(path: &Path) -> Result<Mat3> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_homography(&text, path)
}
