//! Versioned little-endian binary format for regressor weights.
//!
//! Layout: magic `SPRS`, format version (u32), layer count (u32), then per
//! layer `in, out, stride` (u32), `lambda` (f64), the `(out, in * 9)` kernel
//! matrix row-major and the `out` biases (f64).

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::rsi::regressor::{Conv2d, RsiRegressor};

const MAGIC: &[u8; 4] = b"SPRS";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(reg: &RsiRegressor) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(reg.layers.len() as u32).to_le_bytes());
    for (layer, lam) in reg.layers.iter().zip(reg.lambda) {
        for v in [layer.in_channels, layer.out_channels(), layer.stride] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&lam.to_le_bytes());
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.bytes.read_exact(&mut buf).map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<RsiRegressor> {
    let mut r = Reader { bytes };
    if &r.take::<4>()? != MAGIC {
        return Err(Error::Checkpoint("not a regressor checkpoint".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version} (expected {FORMAT_VERSION})")));
    }
    let n = r.u32()?;
    if n != 3 {
        return Err(Error::Checkpoint(format!("expected 3 layers, found {n}")));
    }
    let mut layers = Vec::with_capacity(3);
    let mut lambda = [0.0; 3];
    for lam in &mut lambda {
        let (cin, cout, stride) = (r.u32()?, r.u32()?, r.u32()?);
        if cin == 0 || cout == 0 || stride == 0 || cin * cout > 1 << 20 {
            return Err(Error::Checkpoint(format!("bad layer header {cin}x{cout} stride {stride}")));
        }
        *lam = r.f64()?;
        let weight = (0..cout * cin * 9).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let bias = (0..cout).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Conv2d {
            weight: Array2::from_shape_vec((cout, cin * 9), weight).expect("sized above"),
            bias: Array1::from(bias),
            in_channels: cin,
            stride,
        });
    }
    if !r.bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.bytes.len())));
    }
    for pair in layers.windows(2) {
        if pair[0].out_channels() != pair[1].in_channels {
            return Err(Error::Checkpoint("layer channel counts do not chain".into()));
        }
    }
    if layers[2].out_channels() != 2 {
        return Err(Error::Checkpoint("last layer must have two channels".into()));
    }
    let reg = RsiRegressor { layers: layers.try_into().expect("three layers"), lambda };
    if !reg.is_finite() {
        return Err(Error::Checkpoint("non-finite weights".into()));
    }
    Ok(reg)
}

pub fn save(reg: &RsiRegressor, path: &Path) -> Result<()> {
    fs::write(path, encode(reg)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<RsiRegressor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
