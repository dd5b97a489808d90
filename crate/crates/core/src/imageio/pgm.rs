use std::fs;
use std::path::Path;

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PgmEncoding {
    /// `P2`, ASCII decimal samples.
    Ascii,
    /// `P5`, raw samples (one byte below 256 levels, two big-endian bytes otherwise).
    #[default]
    Binary,
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>, encoding: PgmEncoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img, encoding)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(img: &GrayImage, encoding: PgmEncoding) -> Vec<u8> {
    let maxval = img.levels() - 1;
    let magic = match encoding {
        PgmEncoding::Ascii => "P2",
        PgmEncoding::Binary => "P5",
    };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", img.width(), img.height()).into_bytes();
    match encoding {
        PgmEncoding::Binary if maxval < 256 => {
            out.extend(img.pixels().iter().map(|&p| p as u8));
        }
        PgmEncoding::Binary => {
            for &p in img.pixels() {
                out.extend_from_slice(&p.to_be_bytes());
            }
        }
        PgmEncoding::Ascii => {
            for row in img.pixels().chunks(img.width()) {
                let line: Vec<String> = row.iter().map(u16::to_string).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Decode {
            path: self.name.to_string(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    /// Skips whitespace and `#` comments.
    fn skip_blank(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_blank();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.data.len() {
                self.err(format!("unexpected end of data reading {what}"))
            } else {
                self.err(format!("expected decimal {what}"))
            });
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Decode {
                path: self.name.to_string(),
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

/// Decodes a P2 or P5 graymap. `name` is only used in error messages.
pub fn decode_pgm(data: &[u8], name: &str) -> Result<GrayImage> {
    if data.len() < 2 || data[0] != b'P' {
        return Err(Error::Decode {
            path: name.to_string(),
            offset: 0,
            reason: "missing netpbm magic number".into(),
        });
    }
    let binary = match data[1] {
        b'5' => true,
        b'2' => false,
        other => {
            return Err(Error::UnsupportedFormat {
                path: name.to_string(),
                reason: format!("magic number P{} is not a graymap", other as char),
            })
        }
    };
    let mut cur = Cursor {
        data,
        pos: 2,
        name,
    };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(cur.err(format!("maxval {maxval} outside [1, 65535]")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| cur.err("image dimensions overflow"))?;

    let mut pixels = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates maxval from the raster
        match data.get(cur.pos) {
            Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
            Some(_) => return Err(cur.err("expected whitespace after maxval")),
            None => return Err(cur.err("truncated payload: no raster data")),
        }
        let bytes_per = if maxval < 256 { 1 } else { 2 };
        let needed = count * bytes_per;
        let available = data.len() - cur.pos;
        if available < needed {
            cur.pos = data.len();
            return Err(cur.err(format!(
                "truncated payload: expected {needed} raster bytes, found {available}"
            )));
        }
        let raster = &data[cur.pos..cur.pos + needed];
        for (i, chunk) in raster.chunks_exact(bytes_per).enumerate() {
            let v = if bytes_per == 1 {
                u32::from(chunk[0])
            } else {
                u32::from(u16::from_be_bytes([chunk[0], chunk[1]]))
            };
            if v > maxval {
                cur.pos += i * bytes_per;
                return Err(cur.err(format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as u16);
        }
    } else {
        for _ in 0..count {
            let at = cur.pos;
            let v = cur.number("sample").map_err(|e| match e {
                Error::Decode { reason, offset, .. } if offset >= data.len() => Error::Decode {
                    path: name.to_string(),
                    offset,
                    reason: format!("truncated payload: {reason}"),
                },
                other => other,
            })?;
            if v > maxval {
                cur.pos = at;
                cur.skip_blank();
                return Err(cur.err(format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as u16);
        }
    }
    GrayImage::new(width, height, maxval + 1, pixels)
}
