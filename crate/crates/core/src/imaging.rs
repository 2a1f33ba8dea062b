//! Image containers, bilinear sampling, Sobel gradients and average-pooled
//! pyramids.
//!
//! Pixel `(x, y)` has its center at continuous coordinate `(x, y)`; the
//! sampleable domain of a `w × h` image is `[0, w−1] × [0, h−1]`.

use crate::error::{Error, Result};

/// Smallest width/height accepted for the coarsest pyramid level.
pub const MIN_LEVEL_SIZE: usize = 8;

/// Largest stored inverse depth, in 1/m.
pub const MAX_INVERSE_DEPTH: f64 = 10.0;

/// Row-major single-channel image of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Result of a bilinear lookup. Invalid samples carry the value 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub valid: bool,
}

impl Sample {
    const INVALID: Sample = Sample {
        value: 0.0,
        valid: false,
    };
}

/// Integer corner and fractional offsets of a bilinear lookup, or `None`
/// when the four-pixel neighbourhood leaves the image.
#[inline]
fn bilinear_cell(width: usize, height: usize, x: f64, y: f64) -> Option<(usize, usize, usize, usize, f64, f64)> {
    if !(x >= 0.0 && y >= 0.0) {
        return None;
    }
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    if x > max_x || y > max_y {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    Some((x0, y0, x1, y1, fx, fy))
}

impl ScalarImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite value at pixel ({}, {})",
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from `f(x, y)`. Panics if `f` returns a non-finite value
    /// or a dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("from_fn produced an invalid image")
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        debug_assert!(value.is_finite());
        self.data[y * self.width + x] = value;
    }

    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarImage {
        ScalarImage::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
            .expect("map produced an invalid image")
    }

    /// Bilinear interpolation; out-of-bounds lookups are invalid.
    #[inline]
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Sample {
        match bilinear_cell(self.width, self.height, x, y) {
            None => Sample::INVALID,
            Some((x0, y0, x1, y1, fx, fy)) => {
                let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
                let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
                Sample {
                    value: top * (1.0 - fy) + bottom * fy,
                    valid: true,
                }
            }
        }
    }

    /// Copies the `width × height` window whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<ScalarImage> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidImage(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(ScalarImage::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }
}

/// Inverse depth `d = 1/depth` in 1/m, clamped to `[0, 10]`; 0 marks an
/// invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseDepthImage(ScalarImage);

impl InverseDepthImage {
    pub fn new(image: ScalarImage) -> Result<Self> {
        if let Some(v) = image
            .data()
            .iter()
            .find(|v| !(0.0..=MAX_INVERSE_DEPTH).contains(*v))
        {
            return Err(Error::InvalidImage(format!(
                "inverse depth {v} outside [0, {MAX_INVERSE_DEPTH}]"
            )));
        }
        Ok(Self(image))
    }

    /// Converts metric depth; non-positive or non-finite depths become invalid.
    pub fn from_depth(width: usize, height: usize, mut depth: impl FnMut(usize, usize) -> f64) -> Self {
        Self(ScalarImage::from_fn(width, height, |x, y| {
            let z = depth(x, y);
            if z.is_finite() && z > 0.0 {
                (1.0 / z).min(MAX_INVERSE_DEPTH)
            } else {
                0.0
            }
        }))
    }

    pub fn image(&self) -> &ScalarImage {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.0.data().iter().filter(|&&d| d > 0.0).count()
    }

    /// Bilinear lookup that is valid only if all four neighbours carry depth.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Sample {
        match bilinear_cell(self.width(), self.height(), x, y) {
            None => Sample::INVALID,
            Some((x0, y0, x1, y1, _, _)) => {
                let all_valid = self.is_valid(x0, y0)
                    && self.is_valid(x1, y0)
                    && self.is_valid(x0, y1)
                    && self.is_valid(x1, y1);
                if all_valid {
                    self.0.bilinear_sample(x, y)
                } else {
                    Sample::INVALID
                }
            }
        }
    }

    /// Inverse depth at the pixel nearest to `(x, y)`, if inside and valid.
    pub fn nearest(&self, x: f64, y: f64) -> Option<f64> {
        let (xr, yr) = (x.round(), y.round());
        if !(xr >= 0.0 && yr >= 0.0) || xr >= self.width() as f64 || yr >= self.height() as f64 {
            return None;
        }
        let d = self.get(xr as usize, yr as usize);
        (d > 0.0).then_some(d)
    }
}

/// 3×3 Sobel derivatives scaled by 1/8, so a unit ramp has gradient 1.
/// Borders use replicate padding.
pub fn sobel_gradients(img: &ScalarImage) -> Result<(ScalarImage, ScalarImage)> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            let dx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let dy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx.push(dx * 0.125);
            gy.push(dy * 0.125);
        }
    }
    Ok((ScalarImage::new(w, h, gx)?, ScalarImage::new(w, h, gy)?))
}

/// 2×2 non-overlapping mean; odd trailing rows/columns are dropped.
pub fn downsample_mean(img: &ScalarImage) -> Result<ScalarImage> {
    let (w, h) = (img.width() / 2, img.height() / 2);
    if w == 0 || h == 0 {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: 2,
        });
    }
    Ok(ScalarImage::from_fn(w, h, |x, y| {
        let (x, y) = (2 * x, 2 * y);
        0.25 * (img.get(x, y) + img.get(x + 1, y) + img.get(x, y + 1) + img.get(x + 1, y + 1))
    }))
}

/// 2×2 pooling of inverse depth averaging valid entries only. A block with
/// no valid entry is invalid at the coarse level.
pub fn downsample_depth(depth: &InverseDepthImage) -> Result<InverseDepthImage> {
    let (w, h) = (depth.width() / 2, depth.height() / 2);
    if w == 0 || h == 0 {
        return Err(Error::ImageTooSmall {
            width: depth.width(),
            height: depth.height(),
            min: 2,
        });
    }
    let pooled = ScalarImage::from_fn(w, h, |x, y| {
        let block = [
            depth.get(2 * x, 2 * y),
            depth.get(2 * x + 1, 2 * y),
            depth.get(2 * x, 2 * y + 1),
            depth.get(2 * x + 1, 2 * y + 1),
        ];
        let (sum, n) = block
            .iter()
            .filter(|&&d| d > 0.0)
            .fold((0.0, 0usize), |(s, n), &d| (s + d, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    });
    InverseDepthImage::new(pooled)
}

/// Plain average-pooling pyramid, finest first, without size floor or
/// gradients.
pub fn mean_pyramid(img: &ScalarImage, levels: usize) -> Result<Vec<ScalarImage>> {
    if levels == 0 {
        return Err(Error::InvalidConfig("pyramid needs at least one level".into()));
    }
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let next = downsample_mean(out.last().unwrap()).map_err(|_| Error::PyramidTooDeep {
            levels,
            width: img.width(),
            height: img.height(),
            min: 1,
        })?;
        out.push(next);
    }
    Ok(out)
}

pub fn depth_pyramid(depth: &InverseDepthImage, levels: usize) -> Result<Vec<InverseDepthImage>> {
    if levels == 0 {
        return Err(Error::InvalidConfig("pyramid needs at least one level".into()));
    }
    let mut out = vec![depth.clone()];
    for _ in 1..levels {
        let next = downsample_depth(out.last().unwrap()).map_err(|_| Error::PyramidTooDeep {
            levels,
            width: depth.width(),
            height: depth.height(),
            min: 1,
        })?;
        out.push(next);
    }
    Ok(out)
}

/// One pyramid level with its Sobel gradients.
#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub image: ScalarImage,
    pub gx: ScalarImage,
    pub gy: ScalarImage,
}

/// Factor-2 average-pooled pyramid, finest level first.
#[derive(Clone, Debug)]
pub struct ImagePyramid {
    levels: Vec<PyramidLevel>,
}

/// Dimensions of the coarsest level of a `levels`-deep pyramid.
pub fn coarsest_dims(width: usize, height: usize, levels: usize) -> (usize, usize) {
    let shift = levels.saturating_sub(1);
    (width >> shift, height >> shift)
}

impl ImagePyramid {
    /// Fails with [`Error::PyramidTooDeep`] when the coarsest level would be
    /// smaller than [`MIN_LEVEL_SIZE`] in either dimension.
    pub fn build(img: &ScalarImage, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidConfig("pyramid needs at least one level".into()));
        }
        let (cw, ch) = coarsest_dims(img.width(), img.height(), levels);
        if cw < MIN_LEVEL_SIZE || ch < MIN_LEVEL_SIZE {
            return Err(Error::PyramidTooDeep {
                levels,
                width: img.width(),
                height: img.height(),
                min: MIN_LEVEL_SIZE,
            });
        }
        let levels = mean_pyramid(img, levels)?
            .into_iter()
            .map(|image| {
                let (gx, gy) = sobel_gradients(&image)?;
                Ok(PyramidLevel { image, gx, gy })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, i: usize) -> &PyramidLevel {
        &self.levels[i]
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ScalarImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarImage::from_fn(w, h, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn bilinear_examples() {
        let img = ScalarImage::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(img.bilinear_sample(0.5, 0.5), Sample { value: 0.5, valid: true });
        assert_eq!(img.bilinear_sample(1.0, 1.0), Sample { value: 1.0, valid: true });
        assert_eq!(img.bilinear_sample(-0.5, 0.0), Sample { value: 0.0, valid: false });
        assert!(!img.bilinear_sample(1.0 + 1e-9, 0.0).valid);
        assert!(!img.bilinear_sample(f64::NAN, 0.0).valid);

        let r = random_image(7, 5, 1);
        for y in 0..5 {
            for x in 0..7 {
                assert_eq!(r.bilinear_sample(x as f64, y as f64).value, r.get(x, y));
            }
        }
    }

    #[test]
    fn bilinear_is_exact_on_linear_images() {
        let img = ScalarImage::from_fn(20, 15, |x, y| 0.3 + 0.02 * x as f64 - 0.015 * y as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let x = rng.random_range(0.0..19.0);
            let y = rng.random_range(0.0..14.0);
            let s = img.bilinear_sample(x, y);
            assert!(s.valid);
            assert!((s.value - (0.3 + 0.02 * x - 0.015 * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_sampling_requires_valid_neighbours() {
        let mut raw = ScalarImage::constant(4, 4, 0.5);
        raw.set(2, 2, 0.0);
        let d = InverseDepthImage::new(raw).unwrap();
        assert!(d.bilinear_sample(0.5, 0.5).valid);
        assert!(!d.bilinear_sample(1.5, 1.5).valid);
        assert!(d.bilinear_sample(1.0, 1.0).valid);
        assert_eq!(d.nearest(2.2, 1.8), None);
        assert_eq!(d.nearest(0.4, 0.4), Some(0.5));
        assert!(InverseDepthImage::new(ScalarImage::constant(2, 2, 11.0)).is_err());
    }

    #[test]
    fn sobel_constant_and_ramp() {
        let (gx, gy) = sobel_gradients(&ScalarImage::constant(9, 6, 0.7)).unwrap();
        assert!(gx.data().iter().chain(gy.data()).all(|&v| v == 0.0));

        let ramp = ScalarImage::from_fn(10, 8, |x, _| x as f64);
        let (gx, gy) = sobel_gradients(&ramp).unwrap();
        for y in 0..8 {
            for x in 1..9 {
                assert_eq!(gx.get(x, y), 1.0);
                assert_eq!(gy.get(x, y), 0.0);
            }
        }
        assert!(matches!(
            sobel_gradients(&ScalarImage::constant(2, 5, 0.0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn sobel_matches_direct_convolution() {
        let img = random_image(16, 16, 3);
        let (gx, gy) = sobel_gradients(&img).unwrap();
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        for y in 1..15 {
            for x in 1..15 {
                let (mut sx, mut sy) = (0.0, 0.0);
                for (j, (rx, ry)) in kx.iter().zip(ky.iter()).enumerate() {
                    for i in 0..3 {
                        let v = img.get(x + i - 1, y + j - 1);
                        sx += rx[i] * v;
                        sy += ry[i] * v;
                    }
                }
                assert!((gx.get(x, y) - sx / 8.0).abs() < 1e-14);
                assert!((gy.get(x, y) - sy / 8.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sobel_is_linear() {
        let a = random_image(12, 9, 4);
        let b = random_image(12, 9, 5);
        let combo = ScalarImage::from_fn(12, 9, |x, y| 0.7 * a.get(x, y) - 1.3 * b.get(x, y));
        let (ax, ay) = sobel_gradients(&a).unwrap();
        let (bx, by) = sobel_gradients(&b).unwrap();
        let (cx, cy) = sobel_gradients(&combo).unwrap();
        for i in 0..12 * 9 {
            assert!((cx.data()[i] - (0.7 * ax.data()[i] - 1.3 * bx.data()[i])).abs() < 1e-12);
            assert!((cy.data()[i] - (0.7 * ay.data()[i] - 1.3 * by.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_examples() {
        let img = ScalarImage::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let levels = mean_pyramid(&img, 2).unwrap();
        assert_eq!(levels[1], ScalarImage::new(1, 1, vec![1.5]).unwrap());
        assert!(matches!(mean_pyramid(&img, 3), Err(Error::PyramidTooDeep { .. })));

        let c = ImagePyramid::build(&ScalarImage::constant(64, 64, 0.25), 4).unwrap();
        for level in c.levels() {
            assert!(level.image.data().iter().all(|&v| v == 0.25));
        }
    }

    #[test]
    fn pooling_matches_block_means() {
        let img = random_image(32, 32, 6);
        let pyr = ImagePyramid::build(&img, 3).unwrap();
        let dims: Vec<_> = pyr.levels().iter().map(|l| l.image.dims()).collect();
        assert_eq!(dims, vec![(32, 32), (16, 16), (8, 8)]);
        for l in 1..3 {
            let fine = &pyr.level(l - 1).image;
            let coarse = &pyr.level(l).image;
            for y in 0..coarse.height() {
                for x in 0..coarse.width() {
                    let mean = (fine.get(2 * x, 2 * y)
                        + fine.get(2 * x + 1, 2 * y)
                        + fine.get(2 * x, 2 * y + 1)
                        + fine.get(2 * x + 1, 2 * y + 1))
                        / 4.0;
                    assert!((coarse.get(x, y) - mean).abs() < 1e-15);
                }
            }
            assert!((coarse.mean() - fine.mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_dimensions_drop_trailing_pixels() {
        let img = random_image(37, 21, 7);
        let levels = mean_pyramid(&img, 3).unwrap();
        assert_eq!(levels[1].dims(), (18, 10));
        assert_eq!(levels[2].dims(), (9, 5));
    }

    #[test]
    fn pyramid_too_deep() {
        let img = random_image(40, 32, 8);
        assert!(ImagePyramid::build(&img, 3).is_ok());
        assert!(matches!(
            ImagePyramid::build(&img, 4),
            Err(Error::PyramidTooDeep { .. })
        ));
    }

    #[test]
    fn depth_pooling_ignores_invalid() {
        let raw = ScalarImage::new(4, 2, vec![0.5, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let coarse = downsample_depth(&InverseDepthImage::new(raw).unwrap()).unwrap();
        assert_eq!(coarse.get(0, 0), 0.75);
        assert_eq!(coarse.get(1, 0), 0.0);
        assert!(!coarse.is_valid(1, 0));
    }
}
