//! Grayscale rendering of attention maps as PGM images.

use std::io::Write;
use std::path::Path;

use gridptr::model::argmax_cell;
use gridptr::Tensor;

pub const UPSCALE: usize = 16;

/// An 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Maps `p` in (0, 1) to `round(255 p)` per cell, upsampled by `scale` with
/// nearest-neighbour replication. The argmax cell gets a white one-pixel
/// border unless the map is constant.
pub fn render(p: &Tensor<f32>, scale: usize) -> Gray {
    let (gh, gw) = (p.shape()[0], p.shape()[1]);
    let (width, height) = (gw * scale, gh * scale);
    let mut pixels = vec![0u8; width * height];
    for y in 0..height {
        for x in 0..width {
            let v = p.data()[(y / scale) * gw + x / scale];
            pixels[y * width + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let first = p.data()[0];
    if p.data().iter().any(|&v| v != first) {
        let (r, c) = argmax_cell(p);
        for y in r * scale..(r + 1) * scale {
            for x in c * scale..(c + 1) * scale {
                let edge = y == r * scale || y == (r + 1) * scale - 1 || x == c * scale || x == (c + 1) * scale - 1;
                if edge {
                    pixels[y * width + x] = 255;
                }
            }
        }
    }
    Gray { width, height, pixels }
}

/// Binary (P5) PGM.
pub fn write_pgm(img: &Gray, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{} {}\n255\n", img.width, img.height)?;
    f.write_all(&img.pixels)?;
    f.flush()
}

/// ASCII (P2) PGM, readable by any text tool.
pub fn write_pgm_ascii(img: &Gray, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P2\n{} {}\n255\n", img.width, img.height)?;
    for row in img.pixels.chunks(img.width) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    f.flush()
}

/// Parses either PGM flavour (no comment lines).
pub fn read_pgm(bytes: &[u8]) -> Result<Gray, String> {
    let mut pos = 0;
    let mut token = || -> Result<String, String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| s.parse::<usize>().map_err(|e| format!("bad header field {s:?}: {e}"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    if num(token()?)? != 255 {
        return Err("only 8-bit images are supported".into());
    }
    let pixels = match magic.as_str() {
        "P5" => {
            let start = pos + 1;
            bytes
                .get(start..start + width * height)
                .ok_or("truncated pixel data")?
                .to_vec()
        }
        "P2" => {
            let mut out = Vec::with_capacity(width * height);
            for _ in 0..width * height {
                out.push(token()?.parse::<u8>().map_err(|e| e.to_string())?);
            }
            out
        }
        m => return Err(format!("not a PGM file (magic {m:?})")),
    };
    Ok(Gray { width, height, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_map_is_constant() {
        let img = render(&Tensor::full(&[4, 4], 0.5), UPSCALE);
        assert_eq!((img.width, img.height), (64, 64));
        assert!(img.pixels.iter().all(|&v| v == 128));
    }

    #[test]
    fn peak_is_the_brightest_block() {
        let mut p = Tensor::full(&[5, 5], 0.1f32);
        p.set(&[2, 3], 0.8);
        let img = render(&p, UPSCALE);
        let max = *img.pixels.iter().max().unwrap();
        for (i, &v) in img.pixels.iter().enumerate() {
            let (y, x) = (i / img.width, i % img.width);
            let inside = y / UPSCALE == 2 && x / UPSCALE == 3;
            if v == max {
                assert!(inside, "bright pixel at ({y},{x})");
            }
            if inside {
                assert!(v >= 204);
            } else {
                assert_eq!(v, 26);
            }
        }
    }

    #[test]
    fn both_formats_reparse() {
        let mut p = Tensor::full(&[3, 3], 0.25f32);
        p.set(&[0, 1], 0.9);
        let img = render(&p, UPSCALE);
        let dir = tempfile::tempdir().unwrap();
        let (bin, txt) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
        write_pgm(&img, &bin).unwrap();
        write_pgm_ascii(&img, &txt).unwrap();
        assert_eq!(read_pgm(&std::fs::read(bin).unwrap()).unwrap(), img);
        assert_eq!(read_pgm(&std::fs::read(txt).unwrap()).unwrap(), img);
        assert!(read_pgm(b"P6\n1 1\n255\n\0").is_err());
    }
}
