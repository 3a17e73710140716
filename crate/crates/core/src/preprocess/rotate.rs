use crate::geometry::BinaryMask;

use super::GrayImage;

/// Snap tiny deviations from whole numbers so exact quarter turns stay exact.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Source coordinate `(row, col)` for output pixel `(r, c)` under a rotation
/// by `degrees` counter-clockwise (as displayed) about the image centre.
fn source_of(h: usize, w: usize, degrees: f64) -> impl Fn(usize, usize) -> (f64, f64) {
    let t = degrees.to_radians();
    let (s, c) = (snap(t.sin()), snap(t.cos()));
    let (cr, cc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    move |r, col| {
        let (dy, dx) = (r as f64 - cr, col as f64 - cc);
        (snap(cr + dx * s + dy * c), snap(cc + dx * c - dy * s))
    }
}

/// Bilinear rotation; samples falling outside the source are 0.
pub fn rotate_image(image: &GrayImage, degrees: f64) -> GrayImage {
    if degrees == 0.0 {
        return image.clone();
    }
    let (h, w) = (image.height(), image.width());
    let src = source_of(h, w, degrees);
    GrayImage::from_fn(h, w, image.spacing(), |r, c| {
        let (y, x) = src(r, c);
        if y < 0.0 || x < 0.0 || y > (h - 1) as f64 || x > (w - 1) as f64 {
            return 0.0;
        }
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = image.get(y0, x0) * (1.0 - fx) + image.get(y0, x1) * fx;
        let bottom = image.get(y1, x0) * (1.0 - fx) + image.get(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Nearest-neighbour rotation; samples falling outside are background.
pub fn rotate_mask(mask: &BinaryMask, degrees: f64) -> BinaryMask {
    if degrees == 0.0 {
        return mask.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    let src = source_of(h, w, degrees);
    BinaryMask::from_fn(h, w, mask.spacing(), |r, c| {
        let (y, x) = src(r, c);
        let (y, x) = (y.round(), x.round());
        y >= 0.0 && x >= 0.0 && y < h as f64 && x < w as f64 && mask.get(y as usize, x as usize)
    })
}
