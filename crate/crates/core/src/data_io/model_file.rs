//! Binary model container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "DPBN"  u32 version  u8 input-kind  f64 σ²  u32 layer-count
//! per layer:
//!   u64 n_in  u64 n_out  u8 out-kind  f64 σ²  u8 map-tag
//!   n_out × f64 bias  f64 recon_scale  n_in × f64 recon_bias
//!   map-tag 0: n_in·n_out × f64 weights (row-major)
//!   map-tag 1: 4 × u64 (height, width, keep_h, keep_w)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FormatError;
use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::linop::LinearMap;
use crate::network::{Layer, Network};

pub const MODEL_MAGIC: &[u8; 4] = b"DPBN";
pub const MODEL_VERSION: u32 = 1;

const KIND_NONE: u8 = 0;
const MAP_DENSE: u8 = 0;
const MAP_DCT: u8 = 1;

fn kind_tag(kind: Option<ActivationKind>) -> u8 {
    match kind {
        None => KIND_NONE,
        Some(ActivationKind::Linear { .. }) => 1,
        Some(ActivationKind::TruncGauss { .. }) => 2,
        Some(ActivationKind::Exponential) => 3,
        Some(ActivationKind::Ted) => 4,
    }
}

fn kind_from_tag(tag: u8, sigma_sq: f64) -> Result<Option<ActivationKind>> {
    let kind = match tag {
        KIND_NONE => return Ok(None),
        1 => ActivationKind::Linear { sigma_sq },
        2 => ActivationKind::TruncGauss { sigma_sq },
        3 => ActivationKind::Exponential,
        4 => ActivationKind::Ted,
        t => return Err(FormatError::Invalid(format!("unknown activation tag {t}")).into()),
    };
    Ok(Some(kind))
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_model_to(net: &Network, w: &mut impl Write) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&[kind_tag(Some(net.input_kind()))])?;
    w.write_all(&net.input_kind().sigma_sq().to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&(layer.n_in() as u64).to_le_bytes())?;
        w.write_all(&(layer.n_out() as u64).to_le_bytes())?;
        w.write_all(&[kind_tag(layer.out_activation)])?;
        w.write_all(&layer.out_activation.map_or(1.0, |k| k.sigma_sq()).to_le_bytes())?;
        let tag = match &layer.map {
            LinearMap::Dense(_) => MAP_DENSE,
            LinearMap::TruncatedDct2D(_) => MAP_DCT,
        };
        w.write_all(&[tag])?;
        put_f64s(w, &layer.bias)?;
        w.write_all(&layer.recon_scale.to_le_bytes())?;
        put_f64s(w, &layer.recon_bias)?;
        match &layer.map {
            LinearMap::Dense(m) => put_f64s(w, m.data())?,
            LinearMap::TruncatedDct2D(d) => {
                let (h, wd, kh, kw) = d.params();
                for v in [h, wd, kh, kw] {
                    w.write_all(&(v as u64).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model_to(net, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Counts consumed bytes so truncation errors can say where they happened.
struct Source<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Source<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut buf = [0u8; K];
        let mut filled = 0;
        while filled < K {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(FormatError::Truncated {
                        what: "model file",
                        expected: self.offset + K as u64,
                        found: self.offset + filled as u64,
                    }
                    .into())
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += K as u64;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).ok().filter(|&v| v <= 1 << 32).ok_or_else(|| {
            Error::from(FormatError::Invalid(format!("implausible dimension {v} at byte {}", self.offset - 8)))
        })
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_model_from(r: impl Read) -> Result<Network> {
    let mut src = Source { inner: r, offset: 0 };
    let magic = src.bytes::<4>()?;
    if &magic != MODEL_MAGIC {
        return Err(FormatError::BadMagic {
            what: "model file",
            expected: "\"DPBN\"".into(),
            found: format!("{:?}", String::from_utf8_lossy(&magic)),
        }
        .into());
    }
    let version = src.u32()?;
    if version != MODEL_VERSION {
        return Err(FormatError::UnsupportedVersion { found: version, supported: MODEL_VERSION }.into());
    }
    let tag = src.u8()?;
    let sigma_sq = src.f64()?;
    let input_kind = kind_from_tag(tag, sigma_sq)?
        .ok_or_else(|| Error::from(FormatError::Invalid("model input kind is missing".into())))?;
    let n_layers = src.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        let n_in = src.usize()?;
        let n_out = src.usize()?;
        let out_tag = src.u8()?;
        let out_sigma_sq = src.f64()?;
        let out_activation = kind_from_tag(out_tag, out_sigma_sq)?;
        let map_tag = src.u8()?;
        let bias = src.f64s(n_out)?;
        let recon_scale = src.f64()?;
        let recon_bias = src.f64s(n_in)?;
        let map = match map_tag {
            MAP_DENSE => LinearMap::dense(n_in, n_out, src.f64s(n_in * n_out)?)?,
            MAP_DCT => {
                let (h, w, kh, kw) = (src.usize()?, src.usize()?, src.usize()?, src.usize()?);
                LinearMap::truncated_dct(h, w, kh, kw)?
            }
            t => return Err(FormatError::Invalid(format!("unknown linear map tag {t}")).into()),
        };
        if map.n_in() != n_in || map.n_out() != n_out {
            return Err(FormatError::Invalid("layer dimensions disagree with the stored map".into()).into());
        }
        layers.push(Layer { map, bias, out_activation, recon_scale, recon_bias });
    }
    Network::new(input_kind, layers)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Network> {
    read_model_from(BufReader::new(File::open(path)?))
}
