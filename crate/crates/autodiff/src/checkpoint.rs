//! Parameter checkpoints: a text manifest plus one little-endian blob.
//!
//! ```text
//! tensorgrad-checkpoint 1
//! blob model.bin
//! meta <key> <value to end of line>
//! param <name> <d0xd1x...> <f32|f64> <byte offset>
//! ```
//!
//! Parameters appear in registry order and are laid out back to back in the
//! blob, which is resolved relative to the manifest's directory.

use std::fs;
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

const HEADER: &str = "tensorgrad-checkpoint 1";

fn format_err(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Format(msg.into())
}

/// Writes `manifest_path` and a blob named `blob_name` next to it.
pub fn save<T: Scalar>(
    store: &ParamStore<T>,
    manifest_path: &Path,
    blob_name: &str,
    meta: &[(String, String)],
) -> Result<()> {
    let mut manifest = format!("{HEADER}\nblob {blob_name}\n");
    for (k, v) in meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(format_err(format!("invalid meta entry `{k}`")));
        }
        manifest.push_str(&format!("meta {k} {v}\n"));
    }
    let mut blob = Vec::with_capacity(store.num_scalars() * T::DTYPE.size());
    for (name, t) in store.iter() {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(format_err(format!("invalid parameter name `{name}`")));
        }
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!(
            "param {name} {} {} {}\n",
            shape.join("x"),
            T::DTYPE.name(),
            blob.len()
        ));
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    fs::write(dir.join(blob_name), &blob)?;
    fs::write(manifest_path, manifest)?;
    Ok(())
}

pub struct Loaded<T> {
    pub params: ParamStore<T>,
    pub meta: Vec<(String, String)>,
}

/// Reads a checkpoint, converting stored values to `T`.
pub fn load<T: Scalar>(manifest_path: &Path) -> Result<Loaded<T>> {
    let text = fs::read_to_string(manifest_path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(format_err("missing checkpoint header"));
    }
    let blob_name = lines
        .next()
        .and_then(|l| l.strip_prefix("blob "))
        .ok_or_else(|| format_err("missing blob line"))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let blob = fs::read(dir.join(blob_name))?;
    let mut params = ParamStore::new();
    let mut meta = Vec::new();
    let mut expected_offset = 0usize;
    for line in lines {
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.to_string()));
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [kind, name, shape, dtype, offset] = fields[..] else {
            return Err(format_err(format!("malformed line `{line}`")));
        };
        if kind != "param" {
            return Err(format_err(format!("unknown record `{kind}`")));
        }
        let shape: Vec<usize> = shape
            .split('x')
            .map(|d| {
                d.parse()
                    .map_err(|_| format_err(format!("bad shape for `{name}`")))
            })
            .collect::<Result<_>>()?;
        let dtype =
            DType::parse(dtype).ok_or_else(|| format_err(format!("bad dtype `{dtype}`")))?;
        let offset: usize = offset
            .parse()
            .map_err(|_| format_err(format!("bad offset for `{name}`")))?;
        if offset != expected_offset {
            return Err(format_err(format!("offset of `{name}` is not contiguous")));
        }
        let numel: usize = shape.iter().product();
        let end = offset + numel * dtype.size();
        let bytes = blob
            .get(offset..end)
            .ok_or_else(|| format_err(format!("blob truncated at `{name}`")))?;
        let data: Vec<T> = match dtype {
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|b| T::lit(f32::read_le(b) as f64))
                .collect(),
            DType::F64 => bytes
                .chunks_exact(8)
                .map(|b| T::lit(f64::read_le(b)))
                .collect(),
        };
        params.insert(name, Tensor::new(shape, data)?)?;
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(format_err("blob has trailing bytes"));
    }
    Ok(Loaded { params, meta })
}
