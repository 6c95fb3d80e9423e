use image::{Rgb, RgbImage};

pub const SEPARATOR: u32 = 2;

/// Images side by side, left to right, with white separators. Shorter
/// images are top-aligned on a white background.
pub fn side_by_side(images: &[&RgbImage]) -> RgbImage {
    let width = images.iter().map(|i| i.width()).sum::<u32>() + SEPARATOR * images.len().saturating_sub(1) as u32;
    let height = images.iter().map(|i| i.height()).max().unwrap_or(0);
    let mut out = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let mut x = 0;
    for img in images {
        image::imageops::replace(&mut out, *img, x as i64, 0);
        x += img.width() + SEPARATOR;
    }
    out
}
