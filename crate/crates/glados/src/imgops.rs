//! Small image operations shared by the mock clients and the pipeline.

use glados_core::image::{Mask, Plane, RgbImage};

fn add(a: [f64; 3], b: [f64; 3], w: f64) -> [f64; 3] {
    [a[0] + w * b[0], a[1] + w * b[1], a[2] + w * b[2]]
}

/// Separable `[1 2 1] / 4` blur with clamped borders.
pub fn blur(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dims();
    let pass = |src: &RgbImage, dx: usize, dy: usize| {
        RgbImage::from_fn(w, h, |x, y| {
            let prev = *src.get(x.saturating_sub(dx), y.saturating_sub(dy));
            let next = *src.get((x + dx).min(w - 1), (y + dy).min(h - 1));
            let mid = *src.get(x, y);
            add(add(prev.map(|c| 0.25 * c), mid, 0.5), next, 0.25)
        })
    };
    pass(&pass(img, 1, 0), 0, 1)
}

pub fn lerp(a: &RgbImage, b: &RgbImage, t: f64) -> RgbImage {
    RgbImage::from_fn(a.width(), a.height(), |x, y| {
        let (p, q) = (a.get(x, y), b.get(x, y));
        [0, 1, 2].map(|c| p[c] * (1.0 - t) + q[c] * t)
    })
}

/// Pixel replication by an integer factor.
pub fn upsample(img: &RgbImage, factor: usize) -> RgbImage {
    RgbImage::from_fn(img.width() * factor, img.height() * factor, |x, y| *img.get(x / factor, y / factor))
}

/// Box average down to `w × h`; the source must be an integer multiple.
pub fn downsample(img: &RgbImage, w: usize, h: usize) -> Option<RgbImage> {
    let (sw, sh) = img.dims();
    if w == 0 || h == 0 || sw % w != 0 || sh % h != 0 {
        return None;
    }
    let (fx, fy) = (sw / w, sh / h);
    let norm = 1.0 / (fx * fy) as f64;
    Some(RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0.0; 3];
        for yy in y * fy..(y + 1) * fy {
            for xx in x * fx..(x + 1) * fx {
                acc = add(acc, *img.get(xx, yy), norm);
            }
        }
        acc
    }))
}

/// Source-index weights for area resampling of one axis.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let (lo, hi) = (i as f64 * ratio, (i + 1) as f64 * ratio);
            let mut w = Vec::new();
            let mut k = lo.floor() as usize;
            while (k as f64) < hi && k < src {
                let overlap = hi.min(k as f64 + 1.0) - lo.max(k as f64);
                if overlap > 0.0 {
                    w.push((k, overlap / ratio));
                }
                k += 1;
            }
            w
        })
        .collect()
}

/// Area-weighted resampling of a scalar plane to `w × h`.
pub fn resize_plane(p: &Plane<f64>, w: usize, h: usize) -> Plane<f64> {
    let (wx, wy) = (area_weights(p.width(), w), area_weights(p.height(), h));
    Plane::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for (yy, a) in &wy[y] {
            for (xx, b) in &wx[x] {
                acc += a * b * p.get(*xx, *yy);
            }
        }
        acc
    })
}

/// Area-weighted resampling of an image to `w × h`; equals [`downsample`] up
/// to rounding for integer factors.
pub fn resize_area(img: &RgbImage, w: usize, h: usize) -> RgbImage {
    let (wx, wy) = (area_weights(img.width(), w), area_weights(img.height(), h));
    RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0.0; 3];
        for (yy, a) in &wy[y] {
            for (xx, b) in &wx[x] {
                acc = add(acc, *img.get(*xx, *yy), a * b);
            }
        }
        acc.map(|c| c.clamp(0.0, 1.0))
    })
}

/// Mean gradient magnitude (forward differences, all channels).
pub fn mean_gradient(img: &RgbImage) -> f64 {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let p = img.get(x, y);
            let (r, d) = (img.get(x + 1, y), img.get(x, y + 1));
            sum += (0..3).map(|c| (r[c] - p[c]).abs() + (d[c] - p[c]).abs()).sum::<f64>();
        }
    }
    sum / ((w - 1) * (h - 1)) as f64
}

pub fn mean_color(img: &RgbImage) -> [f64; 3] {
    let n = img.len().max(1) as f64;
    img.as_slice().iter().fold([0.0; 3], |acc, p| add(acc, *p, 1.0 / n))
}

/// Fills masked pixels from the unmasked ones by a push-pull pyramid: known
/// colors are averaged down level by level and pulled back up into the gaps.
/// Unmasked pixels are returned unchanged. A fully masked image becomes
/// mid-gray.
pub fn push_pull_fill(img: &RgbImage, mask: &Mask) -> RgbImage {
    let (w, h) = img.dims();
    let known: Plane<Option<[f64; 3]>> = Plane::from_fn(w, h, |x, y| (!*mask.get(x, y)).then(|| *img.get(x, y)));
    let filled = fill_level(&known);
    RgbImage::from_fn(w, h, |x, y| filled.get(x, y).unwrap_or([0.5; 3]))
}

fn fill_level(level: &Plane<Option<[f64; 3]>>) -> Plane<Option<[f64; 3]>> {
    let (w, h) = level.dims();
    if level.as_slice().iter().all(Option::is_some) || (w <= 1 && h <= 1) {
        return level.clone();
    }
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let coarse = Plane::from_fn(cw, ch, |x, y| {
        let mut acc = [0.0; 3];
        let mut n = 0.0;
        for (xx, yy) in [(2 * x, 2 * y), (2 * x + 1, 2 * y), (2 * x, 2 * y + 1), (2 * x + 1, 2 * y + 1)] {
            if xx < w && yy < h {
                if let Some(p) = level.get(xx, yy) {
                    acc = add(acc, *p, 1.0);
                    n += 1.0;
                }
            }
        }
        (n > 0.0).then(|| acc.map(|c| c / n))
    });
    let coarse = fill_level(&coarse);
    Plane::from_fn(w, h, |x, y| level.get(x, y).or(*coarse.get(x / 2, y / 2)))
}
