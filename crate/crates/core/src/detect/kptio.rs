use std::fs;
use std::io::Write;
use std::path::Path;

use super::Keypoint;
use crate::error::{Error, Result};
use crate::textfmt::fmt_sig;

const HEADER: &str = "# alike-kpts v1 dim=";

/// Keypoints as read from a text file; `dim` comes from the header.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointFile {
    pub dim: usize,
    pub keypoints: Vec<Keypoint>,
}

/// Writes the header and one `u v score d…` line per keypoint. Keypoints
/// without a descriptor are written with `dim` zeros.
pub fn write_keypoints<W: Write>(mut out: W, keypoints: &[Keypoint], dim: usize) -> std::io::Result<()> {
    writeln!(out, "{HEADER}{dim}")?;
    let zeros = vec![0.0; dim];
    for kp in keypoints {
        let desc = kp.descriptor.as_deref().unwrap_or(&zeros);
        let mut line = format!("{} {} {}", fmt_sig(kp.u, 9), fmt_sig(kp.v, 9), fmt_sig(kp.score, 9));
        for &d in desc {
            line.push(' ');
            line.push_str(&fmt_sig(d, 9));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_keypoints(path: &Path) -> Result<KeypointFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints(&bytes, path)
}

/// Parses the text format; errors carry the byte offset of the bad token.
pub fn parse_keypoints(bytes: &[u8], path: &Path) -> Result<KeypointFile> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(path, e.valid_up_to() as u64, "invalid UTF-8"))?;
    let mut lines = line_offsets(text);
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 0, "missing header"))?;
    let dim = header
        .trim_end()
        .strip_prefix(HEADER)
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| Error::parse(path, 0, format!("expected header `{HEADER}<dim>`")))?;
    let mut keypoints = Vec::new();
    for (start, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(dim + 3);
        for (off, tok) in tokens(line) {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, (start + off) as u64, format!("invalid number {tok:?}")))?;
            values.push(v);
        }
        if values.len() != dim + 3 {
            return Err(Error::parse(
                path,
                start as u64,
                format!("expected {} values, found {}", dim + 3, values.len()),
            ));
        }
        let mut kp = Keypoint::new(values[0], values[1], values[2]);
        kp.descriptor = Some(values.split_off(3));
        keypoints.push(kp);
    }
    Ok(KeypointFile { dim, keypoints })
}

fn line_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut start = 0;
    text.split_inclusive('\n').map(move |l| {
        let s = start;
        start += l.len();
        (s, l.trim_end_matches(['\n', '\r']))
    })
}

fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split_ascii_whitespace()
        .map(move |t| (t.as_ptr() as usize - line.as_ptr() as usize, t))
}
