//! Minimal line plots for exported traces.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: f64 = 20.0;

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let f = i as f64 / steps as f64;
        let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < WIDTH && (y as u32) < HEIGHT {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Polyline of `ys` against their index, optionally on a log₁₀ axis; non-finite points are skipped.
pub fn line_plot_png(path: &Path, ys: &[f64], log_y: bool) -> Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, (MARGIN, HEIGHT as f64 - MARGIN), (WIDTH as f64 - MARGIN, HEIGHT as f64 - MARGIN), axis);
    draw_line(&mut img, (MARGIN, MARGIN), (MARGIN, HEIGHT as f64 - MARGIN), axis);
    let vals: Vec<Option<f64>> = ys
        .iter()
        .map(|&y| if log_y { (y > 0.0).then(|| y.log10()) } else { Some(y) })
        .map(|y| y.filter(|v| v.is_finite()))
        .collect();
    let finite: Vec<f64> = vals.iter().flatten().copied().collect();
    if finite.len() >= 2 {
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let n = (vals.len() - 1).max(1) as f64;
        let to_px = |i: usize, v: f64| {
            (
                MARGIN + i as f64 / n * (WIDTH as f64 - 2.0 * MARGIN),
                HEIGHT as f64 - MARGIN - (v - lo) / span * (HEIGHT as f64 - 2.0 * MARGIN),
            )
        };
        let mut prev = None;
        for (i, v) in vals.iter().enumerate() {
            if let Some(v) = v {
                let p = to_px(i, *v);
                if let Some(q) = prev {
                    draw_line(&mut img, q, p, Rgb([200, 30, 30]));
                }
                prev = Some(p);
            }
        }
    }
    img.save(path)?;
    Ok(())
}
