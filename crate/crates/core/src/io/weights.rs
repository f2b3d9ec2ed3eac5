use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{Linear, Mlp, Tensor};

pub const MAGIC: &[u8; 4] = b"LPKM";
pub const FORMAT_VERSION: u32 = 1;

/// A tensor as it appears in a weight file. Values are held at the stored
/// 32-bit precision.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    /// Narrows `t` to 32 bits.
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        NamedTensor {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Exact widening back to 64 bits.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f64::from(v)).collect())
    }
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32_len(tensors.len(), "tensor count")?.to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::format(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.shape.len())
            .map_err(|_| Error::format(format!("rank of {} exceeds 255", t.name)))?;
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::shape(format!("{}: shape {:?} vs {} values", t.name, t.shape, t.data.len())));
        }
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[rank])?;
        for &d in &t.shape {
            w.write_all(&u32_len(d, "dimension")?.to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(format!("{what} {n} does not fit in u32")))
}

fn read_array<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format(format!("truncated weight file reading {what}: {e}")))?;
    Ok(buf)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let magic: [u8; 4] = read_array(&mut r, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_array(&mut r, "version")?);
    if version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported weight file version {version}")));
    }
    let count = u32::from_le_bytes(read_array(&mut r, "tensor count")?);
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_array(&mut r, "name length")?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::format(format!("truncated tensor name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?;
        let [rank] = read_array::<1, _>(&mut r, "rank")?;
        let shape = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(read_array(&mut r, "dimension")?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(format!("{name}: shape {shape:?} overflows")))?;
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::format(format!("truncated payload of {name}: {e}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedTensor { name, shape, data });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after last tensor"));
    }
    Ok(out)
}

/// `layer{i}.weight` and `layer{i}.bias` for every layer.
pub fn mlp_tensors(mlp: &Mlp) -> Vec<NamedTensor> {
    mlp.layers()
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            [
                NamedTensor::from_tensor(format!("layer{i}.weight"), &l.weight),
                NamedTensor::from_tensor(format!("layer{i}.bias"), &l.bias),
            ]
        })
        .collect()
}

pub fn mlp_from_tensors(tensors: &[NamedTensor]) -> Result<Mlp> {
    if tensors.is_empty() || tensors.len() % 2 != 0 {
        return Err(Error::format(format!(
            "expected weight/bias pairs, got {} tensors",
            tensors.len()
        )));
    }
    let layers = tensors
        .chunks_exact(2)
        .enumerate()
        .map(|(i, pair)| {
            let (w, b) = (&pair[0], &pair[1]);
            if w.name != format!("layer{i}.weight") || b.name != format!("layer{i}.bias") {
                return Err(Error::format(format!(
                    "expected layer{i}.weight and layer{i}.bias, found {} and {}",
                    w.name, b.name
                )));
            }
            Linear::new(w.to_tensor()?, b.to_tensor()?)
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_layers(layers)
}

pub fn save_mlp(path: impl AsRef<Path>, mlp: &Mlp) -> Result<()> {
    write_tensors(BufWriter::new(File::create(path)?), &mlp_tensors(mlp))
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<Mlp> {
    mlp_from_tensors(&read_tensors(BufReader::new(File::open(path)?))?)
}
