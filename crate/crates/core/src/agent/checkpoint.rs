//! Checkpoint directory: `checkpoint.json` manifest plus `params.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderKind, Networks, Policy, SacConfig};
use crate::neural::checkpoint::{decode_params_into, encode_params, CheckpointError, TensorEntry};
use crate::neural::ParamStore;
use crate::rng::rng_for;

pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT: &str = "qrouted-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderKind,
    pub n_experts: usize,
    pub sac: SacConfig,
    pub step: u64,
    pub config_hash: String,
    pub params_file: String,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    dir: &Path,
    policy: &Policy,
    sac: &SacConfig,
    step: u64,
    config_hash: &str,
) -> Result<CheckpointManifest, CheckpointError> {
    fs::create_dir_all(dir)?;
    let (tensors, bytes) = encode_params(&policy.store);
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: 1,
        encoder: policy.nets.kind,
        n_experts: policy.nets.n_experts,
        sac: *sac,
        step,
        config_hash: config_hash.into(),
        params_file: PARAMS_FILE.into(),
        dtype: "f32le".into(),
        tensors,
    };
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Load a checkpoint. When `expected_hash` is given, a mismatching
/// configuration hash is an error unless `force` is set.
pub fn load_checkpoint(
    dir: &Path,
    expected_hash: Option<&str>,
    force: bool,
) -> Result<(Policy, CheckpointManifest), CheckpointError> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT || manifest.dtype != "f32le" {
        return Err(CheckpointError::Layout(format!(
            "unsupported checkpoint {} / {}",
            manifest.format, manifest.dtype
        )));
    }
    if let Some(expected) = expected_hash {
        if expected != manifest.config_hash && !force {
            return Err(CheckpointError::ConfigHash {
                expected: expected.into(),
                found: manifest.config_hash.clone(),
            });
        }
    }
    let bytes = fs::read(dir.join(&manifest.params_file))?;
    let mut store = ParamStore::new();
    let nets = Networks::new(
        &mut store,
        manifest.encoder,
        manifest.n_experts,
        &manifest.sac,
        &mut rng_for(0),
    );
    decode_params_into(&mut store, &manifest.tensors, &bytes)?;
    Ok((Policy { nets, store }, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::SacAgent;
    use crate::neural::checkpoint::round_to_f32;

    #[test]
    fn roundtrip_and_hash_guard() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SacConfig {
            hidden: 16,
            mlp_hidden: 16,
            ..SacConfig::default()
        };
        let mut agent = SacAgent::new(cfg, EncoderKind::Han, 2, 5).unwrap();
        round_to_f32(&mut agent.policy.store);
        save_checkpoint(dir.path(), &agent.policy, &cfg, 42, "abc").unwrap();
        let (p, m) = load_checkpoint(dir.path(), Some("abc"), false).unwrap();
        assert_eq!(p, agent.policy);
        assert_eq!((m.step, m.sac), (42, cfg));
        assert!(matches!(
            load_checkpoint(dir.path(), Some("xyz"), false),
            Err(CheckpointError::ConfigHash { .. })
        ));
        assert!(load_checkpoint(dir.path(), Some("xyz"), true).is_ok());
    }
}
