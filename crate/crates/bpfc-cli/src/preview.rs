//! Bit-plane and quantization previews of a single image, written as PNG
//! panels plus a side-by-side montage.

use anyhow::{Context, Result};
use bpfc::quant::{bit_planes, quantize_batch, QuantConfig, QuantMode};
use image::GenericImageView;
use ndarray::Array4;
use std::path::Path;

pub fn cmd_quantize_preview(
    input: &Path,
    out_dir: &Path,
    bit_depth: u8,
    k: u8,
    plane_sets: &str,
    seed: u64,
) -> Result<()> {
    let img = image::open(input).with_context(|| format!("opening {}", input.display()))?;
    let (w, h) = img.dimensions();
    let rgb = img.to_rgb8();
    let mut x = Array4::<f32>::zeros((1, 3, h as usize, w as usize));
    for (px, py, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            x[[0, c, py as usize, px as usize]] = p.0[c] as f32 / 255.0;
        }
    }
    std::fs::create_dir_all(out_dir)?;

    let mut panels: Vec<(String, Array4<f32>)> = vec![("original".into(), x.clone())];

    for spec in plane_sets.split(';').filter(|s| !s.is_empty()) {
        let planes: Vec<u8> = spec
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<u8>().context("plane index"))
            .collect::<Result<_>>()?;
        let y = bit_planes(&x.view(), &planes, bit_depth)?;
        panels.push((format!("planes-{}", spec.replace(',', "_")), y));
    }

    let stoch = QuantConfig::new(bit_depth, k, QuantMode::Stochastic)?;
    panels.push((format!("quantized-stochastic-k{k}"), quantize_batch(&x.view(), &stoch, seed)?));
    let simple = QuantConfig::new(bit_depth, k, QuantMode::Simple)?;
    panels.push((format!("quantized-simple-k{k}"), quantize_batch(&x.view(), &simple, seed)?));

    for (name, arr) in &panels {
        write_png(&out_dir.join(format!("{name}.png")), arr)?;
    }

    // Horizontal montage with 2px separators.
    let n = panels.len();
    let sep = 2usize;
    let mw = n * w as usize + (n - 1) * sep;
    let mut montage = image::RgbImage::from_pixel(mw as u32, h, image::Rgb([255, 255, 255]));
    for (i, (_, arr)) in panels.iter().enumerate() {
        let x0 = i * (w as usize + sep);
        for py in 0..h as usize {
            for px in 0..w as usize {
                let pix = image::Rgb([
                    to_byte(arr[[0, 0, py, px]]),
                    to_byte(arr[[0, 1, py, px]]),
                    to_byte(arr[[0, 2, py, px]]),
                ]);
                montage.put_pixel((x0 + px) as u32, py as u32, pix);
            }
        }
    }
    let montage_path = out_dir.join("montage.png");
    montage.save(&montage_path)?;
    println!("wrote {} panels and {}", panels.len(), montage_path.display());
    Ok(())
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, arr: &Array4<f32>) -> Result<()> {
    let (_, _, h, w) = arr.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for py in 0..h {
        for px in 0..w {
            img.put_pixel(
                px as u32,
                py as u32,
                image::Rgb([
                    to_byte(arr[[0, 0, py, px]]),
                    to_byte(arr[[0, 1, py, px]]),
                    to_byte(arr[[0, 2, py, px]]),
                ]),
            );
        }
    }
    img.save(path)?;
    Ok(())
}
