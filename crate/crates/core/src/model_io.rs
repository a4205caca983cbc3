//! Policy files: little-endian binary weights with a shape manifest, plus a
//! JSON sidecar (`<file>.json`) holding the hyperparameter record.
//!
//! Binary layout:
//!
//! ```text
//! magic "HSPOLICY" | format u32 | feature schema u32 | count u32
//! count x (name_len u32 | name utf-8 | rows u32 | cols u32 | rows*cols f64)
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamStore, Tensor};
use crate::graph_state::{MaskRule, MaskVariant, FEATURE_SCHEMA_VERSION};
use crate::policy::{Policy, PolicyConfig, PolicyError};

pub const MAGIC: &[u8; 8] = b"HSPOLICY";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model format version {found} is newer than the supported version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("model was trained with feature schema {found}, this build uses {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Contents of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub feature_schema_version: u32,
    pub layers: usize,
    pub hidden: usize,
    pub mask_variant: MaskVariant,
    /// `None` when the policy masks nothing.
    pub k: Option<usize>,
    /// Free-form record of how the model was produced.
    #[serde(default)]
    pub training: serde_json::Value,
}

impl ModelMeta {
    pub fn from_config(config: &PolicyConfig, training: serde_json::Value) -> Self {
        let k = (config.mask.k != usize::MAX).then_some(config.mask.k);
        Self {
            format_version: FORMAT_VERSION,
            feature_schema_version: FEATURE_SCHEMA_VERSION,
            layers: config.layers,
            hidden: config.hidden,
            mask_variant: config.mask.variant,
            k,
            training,
        }
    }

    pub fn config(&self) -> PolicyConfig {
        let mask = match self.k {
            Some(k) => MaskRule {
                variant: self.mask_variant,
                k,
            },
            None => MaskRule::unrestricted(),
        };
        PolicyConfig {
            layers: self.layers,
            hidden: self.hidden,
            mask,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_params(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&FEATURE_SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                ModelError::Corrupt(format!("truncated at byte {} (wanted {n} more)", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamStore, ModelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(ModelError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version > FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if version == 0 {
        return Err(ModelError::Corrupt("format version 0".into()));
    }
    let schema = r.u32()?;
    if schema != FEATURE_SCHEMA_VERSION {
        return Err(ModelError::SchemaMismatch {
            found: schema,
            expected: FEATURE_SCHEMA_VERSION,
        });
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ModelError::Corrupt("tensor name is not utf-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| {
                ModelError::Corrupt(format!("implausible shape {rows}x{cols} for `{name}`"))
            })?;
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        if store.index_of(&name).is_some() {
            return Err(ModelError::Corrupt(format!("duplicate tensor `{name}`")));
        }
        let t = Tensor::from_vec(rows, cols, data).expect("length checked");
        store.add(name, t);
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ModelError> {
    let io_err = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(contents).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// Saves weights to `path` and the hyperparameter record to its sidecar.
pub fn save_model(
    path: &Path,
    policy: &Policy,
    training: serde_json::Value,
) -> Result<(), ModelError> {
    write_atomic(path, &encode_params(policy.params()))?;
    let meta = ModelMeta::from_config(policy.config(), training);
    write_atomic(
        &sidecar_path(path),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )
}

pub fn load_model(path: &Path) -> Result<(Policy, ModelMeta), ModelError> {
    let read = |p: &Path| {
        fs::read(p).map_err(|source| ModelError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let store = decode_params(&read(path)?)?;
    let meta: ModelMeta = serde_json::from_slice(&read(&sidecar_path(path))?)?;
    if meta.format_version > FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion {
            found: meta.format_version,
            supported: FORMAT_VERSION,
        });
    }
    if meta.feature_schema_version != FEATURE_SCHEMA_VERSION {
        return Err(ModelError::SchemaMismatch {
            found: meta.feature_schema_version,
            expected: FEATURE_SCHEMA_VERSION,
        });
    }
    let policy = Policy::from_params(meta.config(), store)?;
    Ok((policy, meta))
}

/// Every tensor as `{name, shape, values}` for inspection.
pub fn export_params_json(params: &ParamStore) -> serde_json::Value {
    let tensors: Vec<_> = params
        .iter()
        .map(|(name, t)| {
            serde_json::json!({
                "name": name,
                "shape": [t.rows(), t.cols()],
                "values": t.data(),
            })
        })
        .collect();
    serde_json::json!({ "tensors": tensors })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn policy() -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = PolicyConfig {
            layers: 1,
            hidden: 3,
            mask: MaskRule::new(MaskVariant::EarliestFinish, 2),
        };
        Policy::new(cfg, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/policy.bin");
        let p = policy();
        save_model(&path, &p, serde_json::json!({"episodes": 0})).unwrap();
        let (q, meta) = load_model(&path).unwrap();
        assert_eq!(q.params(), p.params());
        assert_eq!(q.config(), p.config());
        assert_eq!(meta.k, Some(2));
        assert!(!dir.path().join("m/policy.bin.tmp").exists());
    }

    #[test]
    fn unrestricted_mask_round_trips() {
        let cfg = PolicyConfig::default();
        let meta = ModelMeta::from_config(&cfg, serde_json::Value::Null);
        assert_eq!(meta.k, None);
        assert_eq!(meta.config(), cfg);
    }

    #[test]
    fn truncated_and_garbled_files_are_corrupt() {
        let bytes = encode_params(policy().params());
        for cut in [0, 5, 12, 20, bytes.len() - 1] {
            assert!(
                matches!(decode_params(&bytes[..cut]), Err(ModelError::Corrupt(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_params(&bad), Err(ModelError::Corrupt(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_params(&long), Err(ModelError::Corrupt(_))));
    }

    #[test]
    fn version_gate() {
        let mut bytes = encode_params(policy().params());
        assert!(decode_params(&bytes).is_ok());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_params(&bytes),
            Err(ModelError::UnsupportedVersion {
                found: 2,
                supported: 1
            })
        ));
        bytes[8..12].copy_from_slice(&1u32.to_le_bytes());
        bytes[12..16].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_params(&bytes),
            Err(ModelError::SchemaMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn json_export_lists_every_tensor() {
        let p = policy();
        let v = export_params_json(p.params());
        assert_eq!(v["tensors"].as_array().unwrap().len(), p.params().len());
    }
}
