//! Grayscale artifact rendering: binary PGM output, mask overlays, and a
//! small line plotter for loss curves.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes a binary (P5) PGM image.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != width * height {
        return Err(Error::format(
            path,
            format!("{}×{} image needs {} pixels, got {}", width, height, width * height, pixels.len()),
        ));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    write!(file, "P5\n{width} {height}\n255\n").map_err(|e| Error::io(path, e))?;
    file.write_all(pixels).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

/// Maps unit-interval intensities to bytes, clamping out-of-range values.
pub fn to_gray_bytes(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Blends an image plane with a class mask: 0.5·image + 0.5·class/(K−1).
pub fn overlay(image: &[f32], mask: &[usize], num_classes: usize) -> Vec<f32> {
    let denom = num_classes.saturating_sub(1).max(1) as f32;
    image
        .iter()
        .zip(mask)
        .map(|(&v, &c)| 0.5 * v.clamp(0.0, 1.0) + 0.5 * (c as f32 / denom))
        .collect()
}

/// Renders line series as a white-background grayscale plot. Each series is a
/// (label, values) pair drawn at its own gray level (the label is not drawn;
/// ordering maps darkest → first). The y-range spans all finite values.
pub fn plot_series(series: &[(&str, Vec<f64>)], width: usize, height: usize) -> Result<Vec<u8>> {
    if width < 16 || height < 16 {
        return Err(Error::Config("plot extents must be at least 16×16".into()));
    }
    if series.is_empty() || series.iter().all(|(_, v)| v.is_empty()) {
        return Err(Error::Data("nothing to plot".into()));
    }
    let margin = 8usize;
    let (x0, x1) = (margin, width - margin);
    let (y0, y1) = (margin, height - margin);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_len = 0usize;
    for (_, values) in series {
        max_len = max_len.max(values.len());
        for &v in values {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Data("no finite values to plot".into()));
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }

    let mut pixels = vec![255u8; width * height];
    for x in x0..x1 {
        pixels[(y1 - 1) * width + x] = 0;
    }
    for y in y0..y1 {
        pixels[y * width + x0] = 0;
    }

    let to_px = |i: usize, v: f64, n: usize| -> (i64, i64) {
        let fx = if n <= 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let fy = (v - lo) / (hi - lo);
        let x = x0 as f64 + fx * (x1 - x0 - 1) as f64;
        let y = (y1 - 1) as f64 - fy * (y1 - y0 - 1) as f64;
        (x.round() as i64, y.round() as i64)
    };

    for (si, (_, values)) in series.iter().enumerate() {
        let shade = (si * 80).min(200) as u8;
        let mut prev: Option<(i64, i64)> = None;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let p = to_px(i, v, values.len());
            if let Some(q) = prev {
                draw_line(&mut pixels, width, height, q, p, shade);
            } else {
                draw_line(&mut pixels, width, height, p, p, shade);
            }
            prev = Some(p);
        }
    }
    Ok(pixels)
}

fn draw_line(pixels: &mut [u8], width: usize, height: usize, from: (i64, i64), to: (i64, i64), shade: u8) {
    let (mut x, mut y) = from;
    let (x2, y2) = to;
    let dx = (x2 - x).abs();
    let dy = -(y2 - y).abs();
    let sx = if x < x2 { 1 } else { -1 };
    let sy = if y < y2 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            pixels[y as usize * width + x as usize] = shade;
        }
        if x == x2 && y == y2 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_bytes_match_the_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        write_pgm(&path, 2, 2, &[0, 85, 170, 255]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, b"P5\n2 2\n255\n\x00\x55\xaa\xff");
    }

    #[test]
    fn pgm_rejects_mismatched_extents() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_pgm(dir.path().join("t.pgm"), 3, 2, &[0; 5]).is_err());
    }

    #[test]
    fn gray_bytes_clamp_and_round() {
        assert_eq!(to_gray_bytes(&[-0.5, 0.0, 0.5, 1.0, 2.0]), vec![0, 0, 128, 255, 255]);
    }

    #[test]
    fn overlay_blends_image_and_mask() {
        let out = overlay(&[0.0, 1.0], &[0, 2], 3);
        assert_eq!(out, vec![0.0, 1.0]);
        let mid = overlay(&[0.4], &[1], 3);
        assert!((mid[0] - (0.2 + 0.25)).abs() < 1e-6);
    }

    #[test]
    fn plot_is_deterministic_and_draws_ink() {
        let losses: Vec<f64> = (0..50).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let a = plot_series(&[("loss", losses.clone())], 320, 240).unwrap();
        let b = plot_series(&[("loss", losses)], 320, 240).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 320 * 240);
        assert!(a.iter().any(|&p| p == 0), "plot contains no dark pixels");
        assert!(a.iter().filter(|&&p| p == 255).count() > 320 * 240 / 2);
    }

    #[test]
    fn degenerate_plots_are_rejected() {
        assert!(plot_series(&[], 320, 240).is_err());
        assert!(plot_series(&[("x", vec![1.0])], 4, 4).is_err());
        assert!(plot_series(&[("x", vec![f64::NAN])], 64, 64).is_err());
    }

    #[test]
    fn constant_series_still_plots() {
        let a = plot_series(&[("flat", vec![2.5; 10])], 64, 64).unwrap();
        assert!(a.iter().any(|&p| p == 0));
    }
}
