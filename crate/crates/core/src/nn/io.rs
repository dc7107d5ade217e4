//! Weights file layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "WNDRNET\0"
//! version    u32      1
//! input_side u32
//! kernel     u32
//! filters    u32      always 32
//! fc1_units  u32
//! fc2_units  u32
//! dropout    f64
//! tensors    u32      always 8
//! per tensor: rank u32, rank × u32 dims, product(dims) × f64 values
//! ```
//!
//! Tensors appear in [`Params::NAMES`] order.

use super::model::{Architecture, CnnModel, Params, CONV_FILTERS};
use super::{NnError, Scalar, Tensor};

pub const WEIGHTS_MAGIC: [u8; 8] = *b"WNDRNET\0";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn save_weights<T: Scalar>(model: &CnnModel<T>) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::with_capacity(64 + arch.param_count() * 8);
    out.extend_from_slice(&WEIGHTS_MAGIC);
    let u32s = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32s(&mut out, WEIGHTS_VERSION as usize);
    u32s(&mut out, arch.input_side);
    u32s(&mut out, arch.kernel);
    u32s(&mut out, CONV_FILTERS);
    u32s(&mut out, arch.fc1_units);
    u32s(&mut out, arch.fc2_units);
    out.extend_from_slice(&arch.dropout.to_le_bytes());
    let tensors = model.params.tensors();
    u32s(&mut out, tensors.len());
    for t in tensors {
        u32s(&mut out, t.shape().len());
        for &d in t.shape() {
            u32s(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_f64().expect("finite").to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Format(format!("file truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Reads a model using the architecture recorded in the file.
pub fn load_weights<T: Scalar>(bytes: &[u8]) -> Result<CnnModel<T>, NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != WEIGHTS_MAGIC {
        return Err(NnError::Format("not a weights file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION as usize {
        return Err(NnError::Format(format!("unsupported weights version {version}")));
    }
    let input_side = r.u32("input side")?;
    let kernel = r.u32("kernel")?;
    let filters = r.u32("filters")?;
    let fc1_units = r.u32("fc1 units")?;
    let fc2_units = r.u32("fc2 units")?;
    let dropout = r.f64("dropout")?;
    if filters != CONV_FILTERS {
        return Err(NnError::Shape(format!(
            "file has {filters} conv filters, expected {CONV_FILTERS}"
        )));
    }
    let arch = Architecture {
        input_side,
        kernel,
        fc1_units,
        fc2_units,
        dropout,
    };
    arch.validate()?;

    let count = r.u32("tensor count")?;
    let expected = arch.param_shapes();
    if count != expected.len() {
        return Err(NnError::Format(format!(
            "file holds {count} tensors, expected {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (i, want) in expected.iter().enumerate() {
        let name = Params::<T>::NAMES[i];
        let rank = r.u32(name)?;
        let shape = (0..rank).map(|_| r.u32(name)).collect::<Result<Vec<_>, _>>()?;
        if &shape != want {
            return Err(NnError::Shape(format!(
                "{name}: file shape {shape:?}, architecture needs {want:?}"
            )));
        }
        let raw = r.take(shape.iter().product::<usize>() * 8, name)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        tensors.push(Tensor::new(shape, values)?);
    }
    if r.pos != bytes.len() {
        return Err(NnError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let tensors: [Tensor<T>; 8] = tensors.try_into().expect("eight tensors");
    Ok(CnnModel::from_parts(arch, Params::from_tensors(tensors)))
}

/// Reads a model and insists its layer shapes match `arch`.
pub fn load_weights_checked<T: Scalar>(bytes: &[u8], arch: &Architecture) -> Result<CnnModel<T>, NnError> {
    let model = load_weights::<T>(bytes)?;
    let file = model.arch();
    if file.param_shapes() != arch.param_shapes() {
        return Err(NnError::Shape(format!(
            "weights were saved for {file:?}, configuration expects {arch:?}"
        )));
    }
    Ok(CnnModel::from_parts(arch.clone(), model.params))
}
