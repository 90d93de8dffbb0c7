//! Binary PPM (P6) output for scan-order heat maps and sampled grids.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

impl Palette {
    /// Fixed, well-separated colours; token `k` gets entry `k`. Evenly spaced
    /// hues with alternating lightness cover vocabularies of any size.
    pub fn for_vocab(vocab: usize) -> Self {
        let colors = (0..vocab)
            .map(|k| {
                let hue = k as f64 / vocab.max(1) as f64;
                let light = if k % 2 == 0 { 0.55 } else { 0.35 };
                hsl_to_rgb(hue, 0.75, light)
            })
            .collect();
        Palette { colors }
    }
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> [u8; 3] {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let q = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Encode an RGB image, each cell scaled up to `scale x scale` pixels.
pub fn encode(width: usize, height: usize, scale: usize, pixel: impl Fn(usize, usize) -> [u8; 3]) -> Vec<u8> {
    let scale = scale.max(1);
    let (pw, ph) = (width * scale, height * scale);
    let mut out = format!("P6\n{pw} {ph}\n255\n").into_bytes();
    out.reserve(pw * ph * 3);
    for y in 0..ph {
        for x in 0..pw {
            out.extend_from_slice(&pixel(y / scale, x / scale));
        }
    }
    out
}

/// Tokens rendered through `palette`.
pub fn render_tokens(height: usize, width: usize, tokens: &[usize], palette: &Palette, scale: usize) -> Vec<u8> {
    encode(width, height, scale, |r, c| {
        palette.colors[tokens[r * width + c] % palette.colors.len()]
    })
}

/// Grayscale ramp of visit indices: the first visited cell is black.
pub fn render_visit_order(height: usize, width: usize, visit_step: &[usize], scale: usize) -> Vec<u8> {
    let n = (height * width).max(2) - 1;
    encode(width, height, scale, |r, c| {
        let v = (visit_step[r * width + c] * 255 / n) as u8;
        [v, v, v]
    })
}

pub fn write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_size() {
        let img = render_visit_order(2, 3, &[0, 1, 2, 3, 4, 5], 2);
        let header = b"P6\n6 4\n255\n";
        assert!(img.starts_with(header));
        assert_eq!(img.len(), header.len() + 6 * 4 * 3);
        assert_eq!(&img[header.len()..header.len() + 3], &[0, 0, 0]);
    }

    #[test]
    fn palette_is_distinct() {
        let p = Palette::for_vocab(8);
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(p.colors[i], p.colors[j]);
            }
        }
    }
}
