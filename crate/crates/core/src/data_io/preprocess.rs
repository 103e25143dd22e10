//! Dithering, inverse-sigmoid "gaussianification" and range mapping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::RawMnist;
use crate::activation::{validate_range, ActivationKind, DataRange};
use crate::error::{Error, Result};

/// Dither applied before the inverse sigmoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dither {
    /// Mean of the exponential dither, in pixel units.
    pub mean: f64,
    /// Clamp margin keeping the logit finite.
    pub clamp_eps: f64,
    /// Symmetric clip applied to the logit.
    pub clip: f64,
}

impl Default for Dither {
    fn default() -> Self {
        Self { mean: 0.5 / 255.0, clamp_eps: 1e-6, clip: 10.0 }
    }
}

/// Deterministic uniform draw in [0, 1) for one pixel of one sample.
fn pixel_uniform(seed: u64, sample: u64, pixel: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng.set_word_pos(2 * pixel as u128);
    rng.random::<f64>()
}

/// Dithers pixels in [0, 1] away from the nearest quantization extreme
/// and maps them to logits. Sample `sample` of a dataset uses its own
/// random stream, so results do not depend on processing order.
pub fn gaussianify(pixels: &[f64], seed: u64, sample: u64, dither: &Dither) -> Result<Vec<f64>> {
    pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("pixel {i} = {p} is outside [0, 1]")));
            }
            let d = if dither.mean > 0.0 { -dither.mean * (1.0 - pixel_uniform(seed, sample, i)).ln() } else { 0.0 };
            let q = if p > 0.5 { p - d } else { p + d };
            let q = q.clamp(dither.clamp_eps, 1.0 - dither.clamp_eps);
            Ok((q / (1.0 - q)).ln().clamp(-dither.clip, dither.clip))
        })
        .collect()
}

/// [`gaussianify`] over every image of a raw dataset.
pub fn gaussianify_images(raw: &RawMnist, seed: u64, dither: &Dither) -> Result<Vec<Vec<f64>>> {
    (0..raw.len()).into_par_iter().map(|i| gaussianify(&raw.unit_pixels(i), seed, i as u64, dither)).collect()
}

/// Element-wise `λ_kind(g)`.
pub fn map_to_range(g: &[f64], kind: ActivationKind) -> Result<Vec<f64>> {
    let x = g.iter().map(|&v| kind.lambda(v)).collect::<Result<Vec<_>>>()?;
    if let Err(v) = validate_range(kind.range(), &x) {
        return Err(Error::OutOfRange { range: v.range, value: x[v.indices[0]] });
    }
    Ok(x)
}

/// How a dataset was produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Provenance {
    pub dither_seed: u64,
    pub dither: Dither,
    pub kind: ActivationKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub range: DataRange,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    fn pick(&self, idx: &[usize]) -> Dataset {
        Dataset {
            vectors: idx.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            range: self.range,
            provenance: self.provenance,
        }
    }
}

/// Raw images → dithered logits → vectors in the range of `kind`.
pub fn prepare(raw: &RawMnist, kind: ActivationKind, seed: u64, dither: &Dither) -> Result<Dataset> {
    let vectors =
        gaussianify_images(raw, seed, dither)?.par_iter().map(|g| map_to_range(g, kind)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        vectors,
        labels: raw.labels.clone(),
        range: kind.range(),
        provenance: Provenance { dither_seed: seed, dither: *dither, kind },
    })
}

/// The first `per_class_train` training samples of each listed class (in
/// file order) and every test sample of those classes.
pub fn select_subset(
    train: &Dataset,
    test: &Dataset,
    labels: &[u8],
    per_class_train: usize,
) -> Result<(Dataset, Dataset)> {
    let mut taken = vec![0usize; labels.len()];
    let mut train_idx = Vec::new();
    for (i, l) in train.labels.iter().enumerate() {
        if let Some(c) = labels.iter().position(|x| x == l) {
            if taken[c] < per_class_train {
                taken[c] += 1;
                train_idx.push(i);
            }
        }
    }
    if let Some(c) = taken.iter().position(|&t| t < per_class_train) {
        return Err(Error::InvalidArgument(format!(
            "class {} has only {} training samples, {per_class_train} requested",
            labels[c], taken[c]
        )));
    }
    let test_idx: Vec<usize> = (0..test.len()).filter(|&i| labels.contains(&test.labels[i])).collect();
    Ok((train.pick(&train_idx), test.pick(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::IdxImages;

    fn no_dither() -> Dither {
        Dither { mean: 0.0, ..Default::default() }
    }

    #[test]
    fn midpoint_and_clipping() {
        assert_eq!(gaussianify(&[0.5], 0, 0, &no_dither()).unwrap(), vec![0.0]);
        let g = gaussianify(&[1.0, 0.0], 0, 0, &Dither::default()).unwrap();
        assert!(g[0].is_finite() && g[0] <= 10.0 && g[0] > 0.0);
        assert!(g[1].is_finite() && g[1] >= -10.0 && g[1] < 0.0);
        assert!(gaussianify(&[1.5], 0, 0, &no_dither()).is_err());
    }

    #[test]
    fn dither_moves_toward_the_middle() {
        let d = Dither::default();
        let g = gaussianify(&[0.0; 64], 7, 3, &d).unwrap();
        let g2 = gaussianify(&[0.0; 64], 7, 3, &d).unwrap();
        assert_eq!(g, g2);
        let distinct: std::collections::BTreeSet<u64> = g.iter().map(|v| v.to_bits()).collect();
        assert!(distinct.len() > 50);
        assert_ne!(g, gaussianify(&[0.0; 64], 7, 4, &d).unwrap());
    }

    #[test]
    fn range_mapping() {
        assert_eq!(map_to_range(&[0.0], ActivationKind::Ted).unwrap(), vec![0.5]);
        let x = map_to_range(&[-10.0], ActivationKind::trunc_gauss()).unwrap();
        assert!(x[0] > 0.0);
        assert_eq!(map_to_range(&[-3.0, 2.5], ActivationKind::linear()).unwrap(), vec![-3.0, 2.5]);
    }

    fn dataset(labels: Vec<u8>) -> Dataset {
        let n = labels.len();
        let raw = RawMnist { images: IdxImages { count: n, rows: 1, cols: 2, pixels: vec![128; 2 * n] }, labels };
        prepare(&raw, ActivationKind::Ted, 0, &Dither::default()).unwrap()
    }

    #[test]
    fn subset_selection() {
        let train = dataset(vec![3, 1, 8, 3, 9, 7, 8, 9, 3]);
        let test = dataset(vec![1, 3, 7, 9]);
        let (tr, te) = select_subset(&train, &test, &[3, 8, 9], 2).unwrap();
        assert_eq!(tr.labels, vec![3, 8, 3, 9, 8, 9]);
        assert_eq!(te.labels, vec![3, 9]);
        let (tr, _) = select_subset(&train, &test, &[7], 1).unwrap();
        assert_eq!(tr.len(), 1);
        assert!(select_subset(&train, &test, &[7], 2).is_err());
    }
}
