use std::path::Path;

use crate::{
    datagen::{BoundingBox, Image},
    saliency::SaliencyMap,
    util::create_dir,
    Error, Result,
};

/// Map values at or below this stay uncoloured.
pub const OVERLAY_THRESHOLD: f64 = 0.05;
/// Opacity of the heatmap over the grayscale base.
pub const OVERLAY_ALPHA: f64 = 0.5;
pub const BOX_COLOR: [u8; 3] = [255, 0, 255];

/// Fixed red-to-blue ramp: 0 is blue, 1 is red, passing through cyan,
/// green and yellow at quarter steps.
pub fn heat_color(v: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 255.0],
        [0.0, 255.0, 255.0],
        [0.0, 255.0, 0.0],
        [255.0, 255.0, 0.0],
        [255.0, 0.0, 0.0],
    ];
    let t = v.clamp(0.0, 1.0) * 4.0;
    let i = (t.floor() as usize).min(3);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    out
}

/// Row-major RGB bytes of the overlay: grayscale base, blended heatmap
/// where the map exceeds [`OVERLAY_THRESHOLD`], 1-pixel box outlines.
pub fn overlay_rgb(image: &Image, map: &SaliencyMap, boxes: &[BoundingBox]) -> Result<Vec<u8>> {
    let (h, w) = (image.height(), image.width());
    if map.height != h || map.width != w {
        return Err(Error::Shape(format!(
            "map is {}x{}, image is {h}x{w}",
            map.height, map.width
        )));
    }
    let mut rgb = Vec::with_capacity(h * w * 3);
    for (&p, &m) in image.pixels().iter().zip(&map.values) {
        let g = f64::from(crate::datagen::to_u8(p));
        if m > OVERLAY_THRESHOLD {
            let c = heat_color(m);
            for ch in c {
                rgb.push(((1.0 - OVERLAY_ALPHA) * g + OVERLAY_ALPHA * f64::from(ch)).round() as u8);
            }
        } else {
            rgb.extend([g as u8; 3]);
        }
    }
    for b in boxes {
        if !b.fits(h, w) {
            return Err(Error::Shape(format!("box {:?} does not fit the image", <[u32; 4]>::from(*b))));
        }
        let (x0, y0) = (b.x as usize, b.y as usize);
        let (x1, y1) = (x0 + b.w as usize - 1, y0 + b.h as usize - 1);
        let mut paint = |y: usize, x: usize| rgb[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&BOX_COLOR);
        for x in x0..=x1 {
            paint(y0, x);
            paint(y1, x);
        }
        for y in y0..=y1 {
            paint(y, x0);
            paint(y, x1);
        }
    }
    Ok(rgb)
}

/// Writes the overlay as an RGB PNG.
pub fn render_overlay(image: &Image, map: &SaliencyMap, boxes: &[BoundingBox], path: &Path) -> Result<()> {
    let rgb = overlay_rgb(image, map, boxes)?;
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, rgb)
        .expect("buffer length matches the image");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
