//! Non-learned light-field upsampling: each lenslet (angular) or each
//! perspective image (spatial) is resampled on its own, per channel.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lightfield::{Image, LightField, PerspectiveImage};
use crate::resample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Centre-aligned bicubic resize to twice the size.
    BicubicResize,
    /// Sample-preserving bicubic 2x interpolation.
    BicubicInterp,
    Nearest,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Self::BicubicResize, Self::BicubicInterp, Self::Nearest];

    pub fn name(self) -> &'static str {
        match self {
            Self::BicubicResize => "bicubic-resize",
            Self::BicubicInterp => "bicubic-interp",
            Self::Nearest => "nearest",
        }
    }

    /// Doubles both dimensions of `img`.
    pub fn upsample(self, img: &Image) -> Result<Image> {
        match self {
            Self::BicubicResize => resample::bicubic_resize(img, 2 * img.height(), 2 * img.width()),
            Self::BicubicInterp => resample::bicubic_upsample_2x(img),
            Self::Nearest => Ok(resample::nearest_upsample_2x(img)),
        }
    }

    /// Every `A x A` lenslet becomes `2A x 2A`.
    pub fn angular(self, lf: &LightField) -> Result<LightField> {
        let a = lf.angular();
        let b = 2 * a;
        let mut data = Vec::with_capacity(lf.data().len() * 4);
        for c in 0..lf.channels() {
            for s in 0..lf.height() {
                for t in 0..lf.width() {
                    let lenslet = Image::new(1, a, a, lf.lenslet_data(c, s, t).to_vec())?;
                    let up = self.upsample(&lenslet)?;
                    debug_assert_eq!(up.data().len(), b * b);
                    data.extend_from_slice(up.data());
                }
            }
        }
        LightField::new(lf.channels(), lf.height(), lf.width(), b, data)
    }

    /// Every perspective image becomes `2H x 2W`.
    pub fn spatial(self, lf: &LightField) -> Result<LightField> {
        let views = lf
            .perspectives()
            .into_iter()
            .map(|p| {
                Ok(PerspectiveImage {
                    angular_index: p.angular_index,
                    image: self.upsample(&p.image)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LightField::from_perspectives(lf.angular(), views)
    }

    /// Angular then spatial, matching the order of the learned pipeline.
    pub fn full(self, lf: &LightField) -> Result<LightField> {
        self.spatial(&self.angular(lf)?)
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown baseline method {s:?}; expected one of bicubic-resize, bicubic-interp, nearest"
                ))
            })
    }
}
