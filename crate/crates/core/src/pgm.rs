//! Binary portable graymap (P5) reading and writing, 8- and 16-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded graymap samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, samples: &[u8]) -> Result<()> {
    assert_eq!(samples.len(), width * height);
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(samples);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<()> {
    assert_eq!(samples.len(), width * height);
    let mut buf = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for s in samples {
        buf.extend_from_slice(&s.to_be_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Graymap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Graymap, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments.
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("unsupported magic `{}`", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field `{s}`"));
    let width = parse(&fields[1])?;
    let height = parse(&fields[2])?;
    let maxval = parse(&fields[3])?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    // Exactly one whitespace byte separates the header from raster data.
    pos += 1;
    let n = width * height;
    let data = bytes.get(pos..).unwrap_or(&[]);
    let samples = if maxval < 256 {
        if data.len() < n {
            return Err("truncated raster".into());
        }
        data[..n].iter().map(|&b| b as u16).collect()
    } else {
        if data.len() < 2 * n {
            return Err("truncated raster".into());
        }
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(Graymap {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}
