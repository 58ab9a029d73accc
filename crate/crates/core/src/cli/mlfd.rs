//! Multilevel field dataset: a JSON manifest next to headerless binary blobs.
//!
//! Floats are IEEE-754 float64 little-endian and masks are uint8, both
//! row-major with the shape recorded in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::convnet::BankSegment;
use crate::error::{Error, Result};

pub const FORMAT: &str = "mlfd";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub level: Option<usize>,
    /// What the values mean: `u`, `kappa`, `f`, `eta2`, `mask`, `upsilon` or `kernel-bank`.
    pub channels: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sample: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub segments: Option<Vec<BankSegment>>,
}

impl ArrayEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleInfo {
    pub index: usize,
    pub parameters: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub samples: Vec<SampleInfo>,
    pub arrays: Vec<ArrayEntry>,
}

/// Description of one array to write; the file name is assigned by the writer.
#[derive(Clone, Debug, Default)]
pub struct ArrayMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub level: Option<usize>,
    pub channels: String,
    pub sample: Option<usize>,
    pub segments: Option<Vec<BankSegment>>,
}

pub struct MlfdWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl MlfdWriter {
    pub fn create(dir: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                format: FORMAT.into(),
                version: VERSION,
                config_hash: config_hash.into(),
                seed,
                samples: Vec::new(),
                arrays: Vec::new(),
            },
        })
    }

    pub fn add_sample(&mut self, index: usize, parameters: &[f64]) {
        self.manifest.samples.push(SampleInfo { index, parameters: parameters.to_vec() });
    }

    fn push(&mut self, meta: ArrayMeta, dtype: Dtype, bytes: Vec<u8>) -> Result<()> {
        let len: usize = meta.shape.iter().product();
        if bytes.len() != len * dtype.size() {
            return Err(Error::Shape(format!(
                "array {} has {} bytes for shape {:?}",
                meta.name,
                bytes.len(),
                meta.shape
            )));
        }
        let file = format!("{:05}.bin", self.manifest.arrays.len());
        fs::write(self.dir.join(&file), bytes)?;
        self.manifest.arrays.push(ArrayEntry {
            name: meta.name,
            file,
            shape: meta.shape,
            dtype,
            level: meta.level,
            channels: meta.channels,
            sample: meta.sample,
            segments: meta.segments,
        });
        Ok(())
    }

    pub fn add_f64<'a>(&mut self, meta: ArrayMeta, data: impl IntoIterator<Item = &'a f64>) -> Result<()> {
        let bytes = data.into_iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push(meta, Dtype::F64, bytes)
    }

    pub fn add_mask<'a>(&mut self, meta: ArrayMeta, data: impl IntoIterator<Item = &'a bool>) -> Result<()> {
        let bytes = data.into_iter().map(|&b| u8::from(b)).collect();
        self.push(meta, Dtype::U8, bytes)
    }

    pub fn finish(self) -> Result<Manifest> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.dir.join(MANIFEST), text + "\n")?;
        Ok(self.manifest)
    }
}

pub struct MlfdDataset {
    dir: PathBuf,
    pub manifest: Manifest,
}

impl MlfdDataset {
    /// Reads the manifest and checks every blob against its declared shape.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Format(format!("unsupported dataset {} v{}", manifest.format, manifest.version)));
        }
        for a in &manifest.arrays {
            let bytes = fs::metadata(dir.join(&a.file))?.len() as usize;
            if bytes != a.len() * a.dtype.size() {
                return Err(Error::Format(format!(
                    "{}: {} bytes, shape {:?} needs {}",
                    a.name,
                    bytes,
                    a.shape,
                    a.len() * a.dtype.size()
                )));
            }
        }
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn entry(&self, name: &str) -> Result<&ArrayEntry> {
        self.manifest
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("no array named {name}")))
    }

    pub fn read_f64(&self, name: &str) -> Result<Vec<f64>> {
        let e = self.entry(name)?;
        if e.dtype != Dtype::F64 {
            return Err(Error::Format(format!("{name} is not float64")));
        }
        let bytes = fs::read(self.dir.join(&e.file))?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub fn read_mask(&self, name: &str) -> Result<Vec<bool>> {
        let e = self.entry(name)?;
        if e.dtype != Dtype::U8 {
            return Err(Error::Format(format!("{name} is not uint8")));
        }
        Ok(fs::read(self.dir.join(&e.file))?.into_iter().map(|b| b != 0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MlfdWriter::create(dir.path(), "abc", 7).unwrap();
        let data = [0.1, -2.5e-300, f64::MAX, 1.0 / 3.0];
        let meta = ArrayMeta {
            name: "u/0".into(),
            shape: vec![2, 2],
            level: Some(0),
            channels: "u".into(),
            ..Default::default()
        };
        w.add_f64(meta, &data).unwrap();
        let mask = [true, false, true];
        w.add_mask(
            ArrayMeta { name: "mask/0".into(), shape: vec![3], channels: "mask".into(), ..Default::default() },
            &mask,
        )
        .unwrap();
        assert!(w.add_f64(ArrayMeta { name: "bad".into(), shape: vec![3], ..Default::default() }, &data).is_err());
        w.finish().unwrap();
        let d = MlfdDataset::open(dir.path()).unwrap();
        let back = d.read_f64("u/0").unwrap();
        assert!(back.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(d.read_mask("mask/0").unwrap(), mask);
        assert!(d.read_f64("mask/0").is_err());
        assert_eq!(d.manifest.seed, 7);
    }

    #[test]
    fn truncated_blob_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MlfdWriter::create(dir.path(), "h", 0).unwrap();
        w.add_f64(
            ArrayMeta { name: "x".into(), shape: vec![2], channels: "f".into(), ..Default::default() },
            &[1.0, 2.0],
        )
        .unwrap();
        w.finish().unwrap();
        fs::write(dir.path().join("00000.bin"), [0u8; 8]).unwrap();
        assert!(MlfdDataset::open(dir.path()).is_err());
    }
}
