//! MaxEnt reconstruction of an image from its low-frequency DCT block.

use crate::activation::{ActivationKind, DataRange};
use crate::data_io::GrayImage;
use crate::error::{Error, Result};
use crate::linop::LinearMap;
use crate::saddle::{reconstruct_from_feature, SaddleOptions, SaddleResult};

/// Pixels are pulled this far inside (0, 1) before taking features, so
/// saturated pixels do not put the feature on the boundary of the
/// feasible set.
pub const PIXEL_MARGIN: f64 = 1.0 / 512.0;

#[derive(Clone, Debug)]
pub struct ImageReconstruction {
    /// The input after clamping into the open pixel range.
    pub original: GrayImage,
    /// Zero-padded inverse DCT of the kept coefficients.
    pub linear: GrayImage,
    pub maxent: GrayImage,
    /// The kept DCT coefficients.
    pub feature: Vec<f64>,
    pub solve: SaddleResult,
}

/// Reconstructs a square image from its `keep × keep` DCT coefficients.
///
/// `kind` must live on (0, 1) or (0, ∞).
pub fn reconstruct_image(
    image: &GrayImage,
    keep: usize,
    kind: ActivationKind,
    opts: &SaddleOptions,
) -> Result<ImageReconstruction> {
    let side = image.height;
    if image.width != side {
        return Err(Error::InvalidArgument(format!("image must be square, got {}x{}", image.height, image.width)));
    }
    if keep == 0 || keep > side {
        return Err(Error::InvalidArgument(format!("keep must be in 1..={side}, got {keep}")));
    }
    if kind.range() == DataRange::Reals {
        return Err(Error::InvalidArgument("image reconstruction needs the unit or positive range".into()));
    }
    let pixels: Vec<f64> = image.pixels.iter().map(|v| v.clamp(PIXEL_MARGIN, 1.0 - PIXEL_MARGIN)).collect();
    let map = LinearMap::truncated_dct(side, side, keep, keep)?;
    let feature = map.forward(&pixels)?;
    let linear = map.adjoint(&feature)?;
    let (maxent, solve) = reconstruct_from_feature(&map, kind, &feature, opts)?;
    Ok(ImageReconstruction {
        original: GrayImage::new(side, side, pixels)?,
        linear: GrayImage::new(side, side, linear)?,
        maxent: GrayImage::new(side, side, maxent)?,
        feature,
        solve,
    })
}
