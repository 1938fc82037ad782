//! Canonical 4D light-field storage and the exact index transforms between
//! lenslet mosaics, lenslet regions and perspective (sub-aperture) images.
//!
//! Samples are stored as `f64` in `[0, 1]` with layout `(channel, s, t, u, v)`,
//! row-major: `s` is the lenslet row, `t` the lenslet column, `u` the angular
//! row and `v` the angular column. Every lenslet region is therefore a
//! contiguous run of `A * A` samples.
//!
//! Nothing in this module does arithmetic on samples; all transforms are
//! gathers, so round trips are bit-exact.

use crate::error::{Error, Result};

/// Planar multi-channel image, layout `(channel, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(
                "image",
                "non-zero dimensions",
                (channels, height, width),
            ));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "image data length",
                channels * height * width,
                data.len(),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Single-channel image holding a copy of channel `c`.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.plane(c).to_vec(),
        }
    }

    /// Stacks single- or multi-channel images of equal size along the channel axis.
    pub fn stack(images: &[Image]) -> Result<Image> {
        let first = images
            .first()
            .ok_or_else(|| Error::Config("cannot stack zero images".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for img in images {
            if (img.height, img.width) != (h, w) {
                return Err(Error::shape("image stack", (h, w), (img.height, img.width)));
            }
            channels += img.channels;
            data.extend_from_slice(&img.data);
        }
        Image::new(channels, h, w, data)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// The `A x A` block of samples behind one lenslet, for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LensletRegion {
    origin: (usize, usize),
    side: usize,
    data: Vec<f64>,
}

impl LensletRegion {
    pub fn new(origin: (usize, usize), side: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 || data.len() != side * side {
            return Err(Error::shape("lenslet region", side * side, data.len()));
        }
        check_unit_range(&data)?;
        Ok(Self { origin, side, data })
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u * self.side + v]
    }
}

/// One `H x W` sub-aperture view, formed by fixing `(u, v)` in every lenslet.
#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveImage {
    pub angular_index: (usize, usize),
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    channels: usize,
    height: usize,
    width: usize,
    angular: usize,
    data: Vec<f64>,
}

impl LightField {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        angular: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::ChannelCount {
                expected: 3,
                found: channels,
            });
        }
        if height == 0 || width == 0 || angular == 0 {
            return Err(Error::shape(
                "light field",
                "non-zero dimensions",
                (height, width, angular),
            ));
        }
        let expected = channels * height * width * angular * angular;
        if data.len() != expected {
            return Err(Error::shape("light field data length", expected, data.len()));
        }
        check_unit_range(&data)?;
        Ok(Self {
            channels,
            height,
            width,
            angular,
            data,
        })
    }

    /// Builds a field by evaluating `f(c, s, t, u, v)` at every sample.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        angular: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width * angular * angular);
        for c in 0..channels {
            for s in 0..height {
                for t in 0..width {
                    for u in 0..angular {
                        for v in 0..angular {
                            data.push(f(c, s, t, u, v));
                        }
                    }
                }
            }
        }
        Self::new(channels, height, width, angular, data)
    }

    pub fn constant(
        channels: usize,
        height: usize,
        width: usize,
        angular: usize,
        value: f64,
    ) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            angular,
            vec![value; channels * height * width * angular * angular],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn angular(&self) -> usize {
        self.angular
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `(channels, height, width, angular)`
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.channels, self.height, self.width, self.angular)
    }

    #[inline]
    fn lenslet_offset(&self, c: usize, s: usize, t: usize) -> usize {
        ((c * self.height + s) * self.width + t) * self.angular * self.angular
    }

    #[inline]
    pub fn get(&self, c: usize, s: usize, t: usize, u: usize, v: usize) -> f64 {
        self.data[self.lenslet_offset(c, s, t) + u * self.angular + v]
    }

    /// Contiguous `A * A` samples of lenslet `(s, t)` in channel `c`, u-major.
    #[inline]
    pub fn lenslet_data(&self, c: usize, s: usize, t: usize) -> &[f64] {
        let off = self.lenslet_offset(c, s, t);
        &self.data[off..off + self.angular * self.angular]
    }

    pub fn lenslet(&self, c: usize, s: usize, t: usize) -> LensletRegion {
        LensletRegion {
            origin: (s, t),
            side: self.angular,
            data: self.lenslet_data(c, s, t).to_vec(),
        }
    }

    /// Splits a `(H*A) x (W*A)` lenslet mosaic into a field:
    /// `lf(c, s, t, u, v) = mosaic(c, s*A + u, t*A + v)`.
    pub fn from_lenslet_mosaic(mosaic: &Image, angular: usize) -> Result<Self> {
        if angular == 0 {
            return Err(Error::Config("angular side must be positive".into()));
        }
        if !mosaic.height().is_multiple_of(angular) {
            return Err(Error::NotDivisible {
                axis: "mosaic height",
                size: mosaic.height(),
                angular,
            });
        }
        if !mosaic.width().is_multiple_of(angular) {
            return Err(Error::NotDivisible {
                axis: "mosaic width",
                size: mosaic.width(),
                angular,
            });
        }
        let (h, w) = (mosaic.height() / angular, mosaic.width() / angular);
        Self::from_fn(mosaic.channels(), h, w, angular, |c, s, t, u, v| {
            mosaic.get(c, s * angular + u, t * angular + v)
        })
    }

    pub fn to_lenslet_mosaic(&self) -> Image {
        let a = self.angular;
        Image::from_fn(self.channels, self.height * a, self.width * a, |c, y, x| {
            self.get(c, y / a, x / a, y % a, x % a)
        })
    }

    pub fn extract_perspective(&self, u: usize, v: usize) -> Result<PerspectiveImage> {
        if u >= self.angular || v >= self.angular {
            return Err(Error::AngularIndexOutOfRange {
                u,
                v,
                angular: self.angular,
            });
        }
        let image = Image::from_fn(self.channels, self.height, self.width, |c, s, t| {
            self.get(c, s, t, u, v)
        });
        Ok(PerspectiveImage {
            angular_index: (u, v),
            image,
        })
    }

    /// All `A * A` views in u-major order.
    pub fn perspectives(&self) -> Vec<PerspectiveImage> {
        let a = self.angular;
        (0..a * a)
            .map(|i| {
                self.extract_perspective(i / a, i % a)
                    .expect("index within angular grid")
            })
            .collect()
    }

    /// Reassembles a field from a complete `A x A` grid of views. Views may
    /// arrive in any order; each is placed by its `angular_index`.
    pub fn from_perspectives(
        angular: usize,
        views: impl IntoIterator<Item = PerspectiveImage>,
    ) -> Result<Self> {
        if angular == 0 {
            return Err(Error::Config("angular side must be positive".into()));
        }
        let mut grid: Vec<Option<Image>> = vec![None; angular * angular];
        let mut shape: Option<(usize, usize, usize)> = None;
        for view in views {
            let (u, v) = view.angular_index;
            if u >= angular || v >= angular {
                return Err(Error::AngularIndexOutOfRange { u, v, angular });
            }
            match shape {
                None => shape = Some(view.image.shape()),
                Some(s) if s != view.image.shape() => {
                    return Err(Error::shape("perspective grid", s, view.image.shape()));
                }
                _ => {}
            }
            let slot = &mut grid[u * angular + v];
            if slot.is_some() {
                return Err(Error::Config(format!("duplicate perspective view ({u}, {v})")));
            }
            *slot = Some(view.image);
        }
        if let Some(i) = grid.iter().position(Option::is_none) {
            return Err(Error::MissingView {
                u: i / angular,
                v: i % angular,
            });
        }
        let (channels, height, width) = shape.expect("grid is non-empty");
        let grid: Vec<Image> = grid.into_iter().map(|v| v.unwrap()).collect();
        Self::from_fn(channels, height, width, angular, |c, s, t, u, v| {
            grid[u * angular + v].get(c, s, t)
        })
    }

    /// Keeps even angular indices: `out(s, t, u, v) = lf(s, t, 2u, 2v)`.
    pub fn downsample_angular(&self) -> Result<Self> {
        if !self.angular.is_multiple_of(2) {
            return Err(Error::OddAngular(self.angular));
        }
        Self::from_fn(
            self.channels,
            self.height,
            self.width,
            self.angular / 2,
            |c, s, t, u, v| self.get(c, s, t, 2 * u, 2 * v),
        )
    }

    /// Keeps even lenslet indices: `out(s, t, ., .) = lf(2s, 2t, ., .)`.
    /// Odd grid sides round up (`ceil(H / 2)` rows are kept).
    pub fn downsample_spatial(&self) -> Self {
        let (h, w) = (self.height.div_ceil(2), self.width.div_ceil(2));
        let n = self.angular * self.angular;
        let mut data = Vec::with_capacity(self.channels * h * w * n);
        for c in 0..self.channels {
            for s in 0..h {
                for t in 0..w {
                    data.extend_from_slice(self.lenslet_data(c, 2 * s, 2 * t));
                }
            }
        }
        Self {
            channels: self.channels,
            height: h,
            width: w,
            angular: self.angular,
            data,
        }
    }

    pub fn split_channels(&self) -> Result<Vec<Self>> {
        if self.channels != 3 {
            return Err(Error::ChannelCount {
                expected: 3,
                found: self.channels,
            });
        }
        let n = self.height * self.width * self.angular * self.angular;
        Ok(self
            .data
            .chunks_exact(n)
            .map(|chunk| Self {
                channels: 1,
                height: self.height,
                width: self.width,
                angular: self.angular,
                data: chunk.to_vec(),
            })
            .collect())
    }

    pub fn merge_channels(fields: &[Self]) -> Result<Self> {
        if fields.len() != 3 {
            return Err(Error::ChannelCount {
                expected: 3,
                found: fields.len(),
            });
        }
        let first = &fields[0];
        let mut data = Vec::with_capacity(3 * first.data.len());
        for f in fields {
            if f.channels != 1 {
                return Err(Error::ChannelCount {
                    expected: 1,
                    found: f.channels,
                });
            }
            if (f.height, f.width, f.angular) != (first.height, first.width, first.angular) {
                return Err(Error::shape(
                    "merge_channels",
                    (first.height, first.width, first.angular),
                    (f.height, f.width, f.angular),
                ));
            }
            data.extend_from_slice(&f.data);
        }
        Ok(Self {
            channels: 3,
            height: first.height,
            width: first.width,
            angular: first.angular,
            data,
        })
    }
}

pub(crate) fn check_unit_range(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::SampleOutOfRange {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}
