//! 8-bit portable graymaps and pixmaps (P2, P3, P5, P6).

use std::path::Path;

use crate::error::{CliError, Result};
use crate::fsio;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    /// Interleaved, row-major.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Binary P5 or P6.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut token = || -> std::result::Result<String, String> {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err("truncated header".into()),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
                pos += 1;
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token()?;
        let (channels, binary) = match magic.as_str() {
            "P2" => (1, false),
            "P5" => (1, true),
            "P3" => (3, false),
            "P6" => (3, true),
            m => return Err(format!("unsupported magic `{m}`")),
        };
        let mut num = |what: &str| -> std::result::Result<usize, String> {
            let t = token()?;
            t.parse().map_err(|_| format!("bad {what} `{t}`"))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(format!("maxval {maxval} unsupported (8-bit only)"));
        }
        let len = width * height * channels;
        let data = if binary {
            // exactly one whitespace byte separates the header from the raster
            let start = pos + 1;
            let raster = bytes.get(start..start + len).ok_or("truncated raster")?;
            raster.to_vec()
        } else {
            (0..len)
                .map(|_| {
                    let v = num("sample")?;
                    u8::try_from(v).ok().filter(|&v| v as usize <= maxval).ok_or(format!("sample {v} > maxval"))
                })
                .collect::<std::result::Result<Vec<_>, _>>()?
        };
        let data = if maxval == 255 {
            data
        } else {
            data.into_iter()
                .map(|v| ((v as usize * 255 + maxval / 2) / maxval) as u8)
                .collect()
        };
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Image::decode(&fsio::read(path)?).map_err(|m| CliError::format(path, m))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.encode())
    }
}

/// Distinct colors for class indices; 255 (ignore) is white.
pub fn palette(class: u8) -> [u8; 3] {
    const BASE: [[u8; 3]; 8] = [
        [0, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [255, 225, 25],
        [145, 30, 180],
        [70, 240, 240],
        [245, 130, 48],
    ];
    if class == 255 {
        return [255, 255, 255];
    }
    let [r, g, b] = BASE[class as usize % BASE.len()];
    let k = (class as usize / BASE.len()) as u8;
    [r.wrapping_add(k * 37), g.wrapping_add(k * 71), b.wrapping_add(k * 113)]
}
