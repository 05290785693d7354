//! Manifest plus raw blobs: a directory holding `manifest.txt` and one
//! little-endian `<name>.bin` per array, each guarded by a CRC32.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

const MAGIC: &str = "sfm-bundle 1";
pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub enum Data {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Data {
    pub fn len(&self) -> usize {
        match self {
            Data::F32(v) => v.len(),
            Data::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            Data::F32(_) => "f32",
            Data::F64(_) => "f64",
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            Data::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Data::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_bytes(dtype: &str, bytes: &[u8]) -> Option<Data> {
        match dtype {
            "f32" => Some(Data::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())),
            "f64" => Some(Data::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())),
            _ => None,
        }
    }

    fn elem_size(dtype: &str) -> Option<usize> {
        match dtype {
            "f32" => Some(4),
            "f64" => Some(8),
            _ => None,
        }
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Data::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Data::F64(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Data,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorBundle {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<Array>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') && !s.starts_with('.')
}

impl TensorBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> Result<()> {
        let value = value.to_string();
        if !valid_name(key) || value.contains('\n') {
            return Err(CliError::Invalid(format!("bad metadata entry {key:?}")));
        }
        self.meta.insert(key.to_string(), value);
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Data) -> Result<()> {
        if !valid_name(name) || name == "manifest" {
            return Err(CliError::Invalid(format!("bad array name {name:?}")));
        }
        if self.get(name).is_some() {
            return Err(CliError::Invalid(format!("duplicate array {name:?}")));
        }
        if shape.is_empty() || shape.iter().product::<usize>() != data.len() {
            return Err(CliError::Invalid(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        self.arrays.push(Array { name: name.to_string(), shape: shape.to_vec(), data });
        Ok(())
    }

    pub fn push_f32(&mut self, name: &str, shape: &[usize], values: impl IntoIterator<Item = f64>) -> Result<()> {
        self.push(name, shape, Data::F32(values.into_iter().map(|x| x as f32).collect()))
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], values: impl IntoIterator<Item = f64>) -> Result<()> {
        self.push(name, shape, Data::F64(values.into_iter().collect()))
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Array `name`, which must have `dims` dimensions.
    pub fn require(&self, name: &str, dims: usize) -> Result<&Array> {
        let a = self.get(name).ok_or_else(|| CliError::Invalid(format!("bundle lacks array {name:?}")))?;
        if a.shape.len() != dims {
            return Err(CliError::Invalid(format!("array {name:?} has shape {:?}, expected {dims} dimensions", a.shape)));
        }
        Ok(a)
    }

    pub fn manifest(&self) -> String {
        let mut s = String::from(MAGIC);
        s.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for a in &self.arrays {
            let bytes = a.data.to_bytes();
            let shape: Vec<String> = a.shape.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "array {} {} {} {} {:08x}", a.name, a.data.dtype(), shape.join("x"), bytes.len(), crc32fast::hash(&bytes));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        for a in &self.arrays {
            let path = dir.join(format!("{}.bin", a.name));
            fs::write(&path, a.data.to_bytes()).map_err(CliError::io(&path))?;
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, self.manifest()).map_err(CliError::io(&path))
    }

    /// Loads a bundle, checking every blob's length and checksum against
    /// the manifest.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(MAGIC) {
            return Err(CliError::parse(&path, 1, "not a bundle manifest"));
        }
        let mut bundle = TensorBundle::new();
        for (n, line) in lines {
            let bad = |msg: &str| CliError::parse(&path, n + 1, msg);
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                bundle.set_meta(k, v).map_err(|_| bad("bad metadata entry"))?;
                continue;
            }
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() != 6 || f[0] != "array" {
                return Err(bad("expected `array <name> <dtype> <shape> <bytes> <crc32>`"));
            }
            let shape: Vec<usize> = f[3].split('x').map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad shape"))?;
            let bytes: usize = f[4].parse().map_err(|_| bad("bad byte length"))?;
            let crc = u32::from_str_radix(f[5], 16).map_err(|_| bad("bad checksum"))?;
            let size = Data::elem_size(f[2]).ok_or_else(|| bad("unknown element type"))?;
            let count = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or_else(|| bad("shape overflows"))?;
            if count.checked_mul(size) != Some(bytes) {
                return Err(bad("shape disagrees with byte length"));
            }
            let blob = dir.join(format!("{}.bin", f[1]));
            let raw = fs::read(&blob).map_err(CliError::io(&blob))?;
            if raw.len() != bytes {
                return Err(CliError::corrupt(&blob, format!("expected {bytes} bytes, found {}", raw.len())));
            }
            if crc32fast::hash(&raw) != crc {
                return Err(CliError::corrupt(&blob, "checksum mismatch"));
            }
            let data = Data::from_bytes(f[2], &raw).expect("element type checked above");
            bundle.push(f[1], &shape, data).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(bundle)
    }
}
