//! Binary PGM (P5, 8-bit) reading and writing.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a binary PGM (expected P5 magic)")]
    BadMagic,
    #[error("malformed PGM header: {0}")]
    Header(&'static str),
    #[error("unsupported maxval {0}; only 8-bit images are handled")]
    Maxval(u32),
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// An 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode(img: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Gray, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        *field = next_header_number(bytes, &mut pos)?;
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PgmError::Header("missing separator before raster"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(PgmError::Header("zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::Maxval(maxval));
    }
    let expected = width as usize * height as usize;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Ok(Gray {
        width: width as usize,
        height: height as usize,
        pixels: payload[..expected].to_vec(),
    })
}

fn next_header_number(bytes: &[u8], pos: &mut usize) -> Result<u32, PgmError> {
    loop {
        match bytes.get(*pos) {
            None => return Err(PgmError::Header("unexpected end of header")),
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(PgmError::Header("expected a number"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(PgmError::Header("number out of range"))
}

pub fn read(path: &Path) -> Result<Gray, PgmError> {
    decode(&fs::read(path)?)
}

pub fn write(img: &Gray, path: &Path) -> Result<(), PgmError> {
    fs::write(path, encode(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_round_trip() {
        let img = Gray {
            width: 2,
            height: 2,
            pixels: vec![0, 255, 128, 7],
        };
        let bytes = encode(&img);
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(decode(&bytes).unwrap(), img);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n1 1\n255\n".to_vec();
        bytes.push(42);
        assert_eq!(decode(&bytes).unwrap().pixels, vec![42]);
    }

    #[test]
    fn truncated_and_bad_magic_are_distinct() {
        assert!(matches!(decode(b"P2\n1 1\n255\n0"), Err(PgmError::BadMagic)));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\x00"),
            Err(PgmError::Truncated { expected: 4, found: 1 })
        ));
        assert!(matches!(
            decode(b"P5\n1 1\n65535\n\x00\x00"),
            Err(PgmError::Maxval(65535))
        ));
    }
}
