//! Readers and writers for the small file formats used by the pipeline:
//! binary PGM/PPM, grayscale PFM and ASCII PLY point clouds.
//!
//! Encoders return bytes so callers can digest exactly what is written.
//! Decoders take the source path only for error messages.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result, Vec3};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Position-tracking tokenizer for netpbm-style headers.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Header<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.path, format!("byte {}", self.pos), message)
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| self.err("header is not ASCII"))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let at = self.pos;
        let tok = self.token()?;
        tok.parse().map_err(|_| {
            Error::parse(self.path, format!("byte {at}"), format!("invalid {what} {tok:?}"))
        })
    }

    /// Consumes the single whitespace byte that ends a header.
    fn end(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(self.err("header must end with one whitespace byte")),
        }
    }
}

fn netpbm_header(bytes: &[u8], path: &Path, magic: &str) -> Result<(usize, usize, usize)> {
    let mut h = Header::new(bytes, path);
    let m = h.token()?;
    if m != magic {
        return Err(Error::parse(path, "byte 0", format!("expected magic {magic}, found {m:?}")));
    }
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let maxval: u32 = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(h.err("image dimensions must be positive"));
    }
    if maxval != 255 {
        return Err(h.err(format!("only maxval 255 is supported, found {maxval}")));
    }
    Ok((width, height, h.end()?))
}

fn check_payload(bytes: &[u8], path: &Path, start: usize, expected: usize) -> Result<()> {
    let available = bytes.len() - start;
    if available < expected {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len()),
            format!("truncated: expected {expected} data bytes from offset {start}, found {available}"),
        ));
    }
    if available > expected {
        return Err(Error::parse(
            path,
            format!("byte {}", start + expected),
            "trailing bytes after image data",
        ));
    }
    Ok(())
}

/// 8-bit grayscale image, row 0 on top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    assert_eq!(img.data.len(), img.width * img.height);
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let (width, height, start) = netpbm_header(bytes, path, "P5")?;
    check_payload(bytes, path, start, width * height)?;
    Ok(GrayImage {
        width,
        height,
        data: bytes[start..].to_vec(),
    })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&read_file(path)?, path)
}

/// 8-bit RGB image, row-major, row 0 on top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    assert_eq!(img.data.len(), img.width * img.height);
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().flatten());
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let (width, height, start) = netpbm_header(bytes, path, "P6")?;
    check_payload(bytes, path, start, width * height * 3)?;
    Ok(RgbImage {
        width,
        height,
        data: bytes[start..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

/// Single-channel float image, row 0 on top in memory. Non-finite values
/// round-trip unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Little-endian `Pf` with scale −1 and rows stored bottom-up.
pub fn encode_pfm(img: &FloatImage) -> Vec<u8> {
    assert_eq!(img.data.len(), img.width * img.height);
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    for row in (0..img.height).rev() {
        for v in &img.data[row * img.width..(row + 1) * img.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<FloatImage> {
    let mut h = Header::new(bytes, path);
    let magic = h.token()?;
    if magic != "Pf" {
        let message = if magic == "PF" {
            "color PFM is not supported".to_string()
        } else {
            format!("expected magic Pf, found {magic:?}")
        };
        return Err(Error::parse(path, "byte 0", message));
    }
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let scale: f64 = h.number("scale")?;
    if width == 0 || height == 0 {
        return Err(h.err("image dimensions must be positive"));
    }
    if !(scale < 0.0) {
        return Err(h.err("only little-endian PFM (negative scale) is supported"));
    }
    let start = h.end()?;
    check_payload(bytes, path, start, width * height * 4)?;
    let mut data = vec![0f32; width * height];
    for (i, chunk) in bytes[start..].chunks_exact(4).enumerate() {
        let file_row = i / width;
        let col = i % width;
        let row = height - 1 - file_row;
        data[row * width + col] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    Ok(FloatImage { width, height, data })
}

pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    decode_pfm(&read_file(path)?, path)
}

/// ASCII PLY with one `x y z` vertex per line in shortest round-trip form.
pub fn encode_ply(points: &[Vec3]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out.into_bytes()
}

pub fn decode_ply(bytes: &[u8], path: &Path) -> Result<Vec<Vec3>> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        Error::parse(path, format!("byte {}", e.valid_up_to()), "PLY file is not UTF-8")
    })?;
    let mut lines = text.lines().enumerate();
    let mut count = None;
    let mut properties = 0;
    let mut header_ok = false;
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(path, "line 1", "missing ply magic")),
    }
    for (i, line) in lines.by_ref() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("format") => {
                if parts.next() != Some("ascii") {
                    return Err(Error::parse(path, format!("line {}", i + 1), "only ascii PLY is supported"));
                }
            }
            Some("element") => {
                let name = parts.next();
                let n = parts.next().and_then(|s| s.parse::<usize>().ok());
                match (name, n) {
                    (Some("vertex"), Some(n)) => count = Some(n),
                    _ => {
                        return Err(Error::parse(path, format!("line {}", i + 1), "unsupported element"))
                    }
                }
            }
            Some("property") => properties += 1,
            Some("comment") | None => {}
            Some("end_header") => {
                header_ok = true;
                break;
            }
            Some(other) => {
                return Err(Error::parse(path, format!("line {}", i + 1), format!("unknown header keyword {other:?}")))
            }
        }
    }
    let count = match (header_ok, count) {
        (true, Some(n)) => n,
        _ => return Err(Error::parse(path, "header", "incomplete PLY header")),
    };
    if properties != 3 {
        return Err(Error::parse(path, "header", "expected exactly x y z vertex properties"));
    }
    let mut points = Vec::with_capacity(count);
    for (i, line) in lines.take(count) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("line {}", i + 1), e.to_string()))?;
        if vals.len() != 3 {
            return Err(Error::parse(path, format!("line {}", i + 1), "expected 3 coordinates"));
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
    }
    if points.len() != count {
        return Err(Error::parse(path, "end of file", format!("expected {count} vertices, found {}", points.len())));
    }
    Ok(points)
}
