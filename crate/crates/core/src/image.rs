//! Channel-first f32 images and the raster ops the pipeline needs:
//! patch extraction, bilinear resize, mean-padded cropping, flips, jitter.

/// Dense `[C x H x W]` f32 image, values nominally in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    /// Per-channel mean color.
    pub fn mean_color(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        (0..self.channels)
            .map(|c| {
                let s: f64 = self.data[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum();
                (s / plane as f64) as f32
            })
            .collect()
    }

    /// Mirror left-right in place.
    pub fn flip_horizontal(&mut self) {
        for c in 0..self.channels {
            for y in 0..self.height {
                let row = (c * self.height + y) * self.width;
                self.data[row..row + self.width].reverse();
            }
        }
    }

    /// Multiply every value by `factor` and clamp to `[0,1]`.
    pub fn scale_brightness(&mut self, factor: f32) {
        for v in &mut self.data {
            *v = (*v * factor).clamp(0.0, 1.0);
        }
    }

    /// ITU-R 601 luma for 3-channel images; identity plane for 1-channel.
    pub fn luma(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        match self.channels {
            1 => self.data.clone(),
            3 => (0..plane)
                .map(|i| {
                    0.299 * self.data[i] + 0.587 * self.data[plane + i] + 0.114 * self.data[2 * plane + i]
                })
                .collect(),
            c => panic!("luma expects 1 or 3 channels, got {c}"),
        }
    }

    /// Replicate a single channel into 3.
    pub fn to_rgb(&self) -> Image {
        match self.channels {
            3 => self.clone(),
            1 => {
                let mut data = Vec::with_capacity(3 * self.data.len());
                for _ in 0..3 {
                    data.extend_from_slice(&self.data);
                }
                Image {
                    channels: 3,
                    height: self.height,
                    width: self.width,
                    data,
                }
            }
            c => panic!("to_rgb expects 1 or 3 channels, got {c}"),
        }
    }
}

/// Split an image into non-overlapping `P x P` patches in raster order;
/// row `i` of the result is the flattened i-th patch (channel-major within
/// the patch). Output is `[N x (P*P*C)]` with `N = (H/P)*(W/P)`.
pub fn patchify(img: &Image, patch: usize) -> Vec<f32> {
    assert!(
        img.height % patch == 0 && img.width % patch == 0,
        "image {}x{} not divisible by patch size {patch}",
        img.height,
        img.width
    );
    let ph = img.height / patch;
    let pw = img.width / patch;
    let mut out = Vec::with_capacity(ph * pw * patch * patch * img.channels);
    for py in 0..ph {
        for px in 0..pw {
            for c in 0..img.channels {
                for dy in 0..patch {
                    for dx in 0..patch {
                        out.push(img.at(c, py * patch + dy, px * patch + dx));
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`]; bit-exact because both are pure reshuffles.
pub fn unpatchify(rows: &[f32], patch: usize, channels: usize, height: usize, width: usize) -> Image {
    let ph = height / patch;
    let pw = width / patch;
    assert_eq!(rows.len(), channels * height * width, "unpatchify size mismatch");
    let mut img = Image::zeros(channels, height, width);
    let stride = patch * patch * channels;
    for py in 0..ph {
        for px in 0..pw {
            let row = &rows[(py * pw + px) * stride..(py * pw + px + 1) * stride];
            let mut k = 0;
            for c in 0..channels {
                for dy in 0..patch {
                    for dx in 0..patch {
                        *img.at_mut(c, py * patch + dy, px * patch + dx) = row[k];
                        k += 1;
                    }
                }
            }
        }
    }
    img
}

/// Sample `src` at continuous coordinates with bilinear interpolation.
/// Out-of-bounds reads return `pad` (per channel).
fn sample_bilinear(src: &Image, c: usize, y: f32, x: f32, pad: f32) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let get = |yy: i64, xx: i64| -> f32 {
        if yy < 0 || xx < 0 || yy >= src.height as i64 || xx >= src.width as i64 {
            pad
        } else {
            src.at(c, yy as usize, xx as usize)
        }
    };
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    let v00 = get(y0, x0);
    let v01 = get(y0, x0 + 1);
    let v10 = get(y0 + 1, x0);
    let v11 = get(y0 + 1, x0 + 1);
    let top = v00 + (v01 - v00) * fx;
    let bot = v10 + (v11 - v10) * fx;
    top + (bot - top) * fy
}

/// Extract a square window of side `side` (source pixels) centered at
/// `(cx, cy)` and bilinearly resize it to `out_size`. Reads outside the
/// source use the per-channel `pad` colors.
pub fn crop_resize(src: &Image, cx: f32, cy: f32, side: f32, out_size: usize, pad: &[f32]) -> Image {
    assert!(side > 0.0, "crop side must be positive");
    assert_eq!(pad.len(), src.channels, "pad color channel mismatch");
    let mut out = Image::zeros(src.channels, out_size, out_size);
    let step = side / out_size as f32;
    let left = cx - side / 2.0;
    let top = cy - side / 2.0;
    for c in 0..src.channels {
        for oy in 0..out_size {
            let sy = top + (oy as f32 + 0.5) * step - 0.5;
            for ox in 0..out_size {
                let sx = left + (ox as f32 + 0.5) * step - 0.5;
                *out.at_mut(c, oy, ox) = sample_bilinear(src, c, sy, sx, pad[c]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_count_and_constant_rows() {
        let img = Image::filled(3, 64, 64, 0.25);
        let rows = patchify(&img, 8);
        let n = 64 * 64 / (8 * 8);
        assert_eq!(n, 64);
        assert_eq!(rows.len(), n * 8 * 8 * 3);
        let width = 8 * 8 * 3;
        let first = &rows[..width];
        for r in 1..n {
            assert_eq!(&rows[r * width..(r + 1) * width], first);
        }
    }

    #[test]
    #[should_panic(expected = "not divisible")]
    fn patchify_rejects_indivisible() {
        let img = Image::zeros(1, 10, 10);
        patchify(&img, 3);
    }

    #[test]
    fn unpatchify_is_exact_inverse() {
        let mut img = Image::zeros(3, 16, 16);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.618).sin();
        }
        let rows = patchify(&img, 4);
        let back = unpatchify(&rows, 4, 3, 16, 16);
        assert_eq!(back.data, img.data);
    }

    #[test]
    fn crop_identity_when_aligned() {
        let mut img = Image::zeros(1, 8, 8);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f32;
        }
        // full-frame crop at native size reproduces the image
        let out = crop_resize(&img, 4.0, 4.0, 8.0, 8, &[0.0]);
        for i in 0..img.data.len() {
            assert!((out.data[i] - img.data[i]).abs() < 1e-5, "pixel {i}");
        }
    }

    #[test]
    fn crop_outside_uses_pad() {
        let img = Image::filled(1, 4, 4, 1.0);
        let out = crop_resize(&img, -10.0, -10.0, 4.0, 4, &[0.5]);
        for &v in &out.data {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn flip_mirrors_columns() {
        let mut img = Image::zeros(1, 1, 4);
        img.data = vec![1.0, 2.0, 3.0, 4.0];
        img.flip_horizontal();
        assert_eq!(img.data, vec![4.0, 3.0, 2.0, 1.0]);
    }
}
