//! Binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ADAH"  u32 version  u32 entry_count
//! per entry: u32 name_len, name bytes (UTF-8), u32 ndim, u64 dim * ndim,
//!            f64 value * product(dims)
//! ```
//!
//! Entry names are `<set>.<layer>.weight` / `<set>.<layer>.bias`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Layer, Model, Network, ParameterSet, Role};
use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};

pub const MAGIC: &[u8; 4] = b"ADAH";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_entries(entries: &[(String, Array)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, a) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(a.shape().len() as u32).to_le_bytes());
        for &d in a.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in a.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<(String, Array)>> {
    let mut r = Reader::new(bytes, "parameter file");
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: u32::from_be_bytes(*MAGIC),
            actual: u32::from_be_bytes(magic.try_into().unwrap()),
        });
    }
    let version = r.u32_le()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported parameter file version {version}"
        )));
    }
    let count = r.u32_le()? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32_le()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let ndim = r.u32_le()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64_le()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.saturating_mul(8) <= r.remaining())
            .ok_or_else(|| {
                Error::Format(format!("entry {name}: data truncated for shape {shape:?}"))
            })?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64_le()?);
        }
        entries.push((name, Array::new(shape, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    Ok(entries)
}

pub fn save_entries(path: &Path, entries: &[(String, Array)]) -> Result<()> {
    fsutil::atomic_write(path, &encode_entries(entries))
}

pub fn load_entries(path: &Path) -> Result<Vec<(String, Array)>> {
    decode_entries(&fsutil::read(path)?)
}

impl ParameterSet {
    pub fn to_entries(&self) -> Vec<(String, Array)> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    (format!("{}.{}.weight", self.name, l.name), l.weight.clone()),
                    (format!("{}.{}.bias", self.name, l.name), l.bias.clone()),
                ]
            })
            .collect()
    }

    /// Groups entries by set name, preserving first-seen order.
    pub fn from_entries(entries: &[(String, Array)]) -> Result<Vec<ParameterSet>> {
        let mut sets: Vec<ParameterSet> = Vec::new();
        let mut pending: BTreeMap<(String, String), (Option<Array>, Option<Array>)> =
            BTreeMap::new();
        let mut order: Vec<(String, String)> = Vec::new();
        for (name, a) in entries {
            let mut parts = name.rsplitn(3, '.');
            let (Some(kind), Some(layer), Some(set)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Format(format!("malformed entry name {name:?}")));
            };
            let key = (set.to_string(), layer.to_string());
            if !pending.contains_key(&key) {
                order.push(key.clone());
            }
            let slot = pending.entry(key).or_default();
            match kind {
                "weight" => slot.0 = Some(a.clone()),
                "bias" => slot.1 = Some(a.clone()),
                _ => return Err(Error::Format(format!("unknown entry kind in {name:?}"))),
            }
        }
        for key in order {
            let (w, b) = pending.remove(&key).unwrap();
            let (Some(weight), Some(bias)) = (w, b) else {
                return Err(Error::Format(format!(
                    "{}.{} lacks weight or bias",
                    key.0, key.1
                )));
            };
            if weight.shape().len() != 2 || bias.len() != weight.cols() {
                return Err(Error::shape(
                    "parameter entry",
                    weight.shape(),
                    bias.shape(),
                ));
            }
            let layer = Layer {
                name: key.1,
                weight,
                bias,
            };
            match sets.iter_mut().find(|s| s.name == key.0) {
                Some(s) => s.layers.push(layer),
                None => sets.push(ParameterSet {
                    name: key.0,
                    layers: vec![layer],
                }),
            }
        }
        for s in &sets {
            if s.layers
                .windows(2)
                .any(|w| w[0].weight.cols() != w[1].weight.rows())
            {
                return Err(Error::Format(format!(
                    "{}: layer widths do not compose",
                    s.name
                )));
            }
        }
        Ok(sets)
    }
}

pub fn save_parameter_set(path: &Path, set: &ParameterSet) -> Result<()> {
    save_entries(path, &set.to_entries())
}

pub fn load_parameter_set(path: &Path) -> Result<ParameterSet> {
    let mut sets = ParameterSet::from_entries(&load_entries(path)?)?;
    if sets.len() != 1 {
        return Err(Error::Format(format!(
            "expected one parameter set, found {}",
            sets.len()
        )));
    }
    Ok(sets.remove(0))
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let entries: Vec<_> = Role::ALL
        .iter()
        .flat_map(|&r| model.network(r).params.to_entries())
        .collect();
    save_entries(path, &entries)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let sets = ParameterSet::from_entries(&load_entries(path)?)?;
    let take = |role: Role| -> Result<Network> {
        let set = sets
            .iter()
            .find(|s| s.name == role.name())
            .cloned()
            .ok_or_else(|| {
                Error::Format(format!("checkpoint has no {} parameters", role.name()))
            })?;
        Network::from_params(role, set)
    };
    let model = Model {
        encoder: take(Role::Encoder)?,
        classifier: take(Role::Classifier)?,
        gen_source: take(Role::SourceGenerator)?,
        gen_target: take(Role::TargetGenerator)?,
        disc_source: take(Role::SourceDiscriminator)?,
        disc_target: take(Role::TargetDiscriminator)?,
    };
    model.validate()?;
    Ok(model)
}
