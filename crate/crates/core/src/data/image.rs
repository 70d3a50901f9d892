//! Decoding, resizing and normalizing input images.

use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Decodes a PNG, JPEG, TIFF or binary PPM (P6) file into an `[H, W, 3]`
/// tensor of byte values `0..=255`. Grayscale images are replicated to three
/// channels; alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let decode_err = |reason: String| Error::Decode { path: path.to_path_buf(), reason };
    let img = image::ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f32::from).collect();
    Tensor::new(&[h as usize, w as usize, 3], data)
}

fn image_dims(img: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *img.dims() {
        [h, w, c] => Ok((h, w, c)),
        _ => shape_err(format!("image must be [H,W,C], got {:?}", img.shape())),
    }
}

/// Source coordinate of output cell `i` under half-pixel-centered sampling,
/// clamped to the valid range, split into (lower index, upper index, weight).
fn sample_axis(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resize with half-pixel centers. Same-size input is returned as is.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (h, w, c) = image_dims(img)?;
    if out_h == 0 || out_w == 0 {
        return shape_err("resize target must be nonempty");
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let x = img.data();
    let px = |y: usize, xx: usize, ch: usize| x[(y * w + xx) * c + ch] as f64;
    // a + (b − a)·t leaves a == b untouched, so constant regions stay exact.
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let cols: Vec<_> = (0..out_w).map(|j| sample_axis(j, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for i in 0..out_h {
        let (y0, y1, ty) = sample_axis(i, h, out_h);
        for &(x0, x1, tx) in &cols {
            for ch in 0..c {
                let top = lerp(px(y0, x0, ch), px(y0, x1, ch), tx);
                let bottom = lerp(px(y1, x0, ch), px(y1, x1, ch), tx);
                out.push(lerp(top, bottom, ty) as f32);
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

/// Maps byte values `0..=255` onto `[0, 1]`.
pub fn normalize(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    if let Some(bad) = img.data().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::Input(format!("pixel value {bad} outside 0..=255")));
    }
    Ok(img.map(|v| v / 255.0))
}

/// Decode, resize to `extent × extent`, normalize.
pub fn preprocess(path: impl AsRef<Path>, extent: usize) -> Result<Tensor<f32>> {
    normalize(&resize_bilinear(&load_image(path)?, extent, extent)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn ppm_fixture_decodes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30]);
        let t = load_image(write(dir.path(), "a.ppm", &bytes)).unwrap();
        assert_eq!(t.dims(), &[2, 2, 3]);
        assert_eq!(t.data(), &[255.0, 0.0, 0.0, 0.0, 255.0, 0.0, 0.0, 0.0, 255.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn solid_png_is_constant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("solid.png");
        image::RgbImage::from_pixel(8, 8, image::Rgb([12, 34, 56])).save(&path).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.dims(), &[8, 8, 3]);
        for px in t.data().chunks(3) {
            assert_eq!(px, &[12.0, 34.0, 56.0]);
        }
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        image::GrayImage::from_pixel(3, 2, image::Luma([77])).save(&path).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.dims(), &[2, 3, 3]);
        assert!(t.data().iter().all(|&v| v == 77.0));
    }

    #[test]
    fn truncated_file_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.ppm", b"P6\n4 4\n255\n\x01\x02");
        match load_image(&p) {
            Err(Error::Decode { path, .. }) => assert_eq!(path, p),
            other => panic!("expected decode error, got {other:?}"),
        }
        let p = write(dir.path(), "junk.png", b"not an image");
        assert!(matches!(load_image(&p), Err(Error::Decode { .. })));
    }

    #[test]
    fn constant_image_resizes_to_constant() {
        let img = Tensor::full(&[13, 7, 3], 200.0f32).unwrap();
        let out = resize_bilinear(&img, 227, 227).unwrap();
        assert_eq!(out.dims(), &[227, 227, 3]);
        assert!(out.data().iter().all(|&v| v == 200.0));
    }

    #[test]
    fn same_size_is_bitwise_identity() {
        let data: Vec<f32> = (0..227 * 227 * 3).map(|i| (i % 256) as f32).collect();
        let img = Tensor::new(&[227, 227, 3], data).unwrap();
        assert_eq!(resize_bilinear(&img, 227, 227).unwrap(), img);
    }

    #[test]
    fn checkerboard_upsample_matches_hand_values() {
        // [[0, 255], [255, 0]] upsampled 2x. Sample coordinates along each axis
        // are (0, 0.25, 0.75, 1) after clamping, and bilinear interpolation of
        // this board is 255·(x + y − 2xy).
        let img = Tensor::new(&[2, 2, 1], vec![0.0f32, 255.0, 255.0, 0.0]).unwrap();
        let out = resize_bilinear(&img, 4, 4).unwrap();
        #[rustfmt::skip]
        let want = [
            0.0,    63.75,  191.25, 255.0,
            63.75,  95.625, 159.375, 191.25,
            191.25, 159.375, 95.625, 63.75,
            255.0,  191.25, 63.75,  0.0,
        ];
        assert_eq!(out.data(), &want);
    }

    #[test]
    fn normalize_values_and_range() {
        let t = Tensor::new(&[3], vec![255.0f32, 0.0, 51.0]).unwrap();
        assert_eq!(normalize(&t).unwrap().data(), &[1.0, 0.0, 0.2]);
        let bad = Tensor::new(&[1], vec![256.0f32]).unwrap();
        assert!(matches!(normalize(&bad), Err(Error::Input(_))));
        let neg = Tensor::new(&[1], vec![-1.0f32]).unwrap();
        assert!(normalize(&neg).is_err());
    }
}
