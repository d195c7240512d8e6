use std::path::Path;

use super::VaeModel;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "vaer-representation";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn save_model(vae: &VaeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_vec_pretty(vae)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VaeModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let vae: VaeModel = serde_json::from_slice(&bytes)?;
    validate(&vae)?;
    Ok(vae)
}

/// Loads a model and checks that it accepts IRs of dimension `input_dim`.
pub fn load_model_for(path: impl AsRef<Path>, input_dim: usize) -> Result<VaeModel> {
    let vae = load_model(path)?;
    vae.check_input_dim(input_dim)?;
    Ok(vae)
}

fn validate(vae: &VaeModel) -> Result<()> {
    if vae.format != MODEL_FORMAT {
        return Err(Error::ModelFormat(format!(
            "format tag `{}`, expected `{MODEL_FORMAT}`",
            vae.format
        )));
    }
    if vae.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "format version {}, this build reads version {MODEL_FORMAT_VERSION}",
            vae.format_version
        )));
    }
    let enc = &vae.encoder;
    let shapes = [
        (
            "encoder trunk",
            enc.trunk.weights.dim(),
            (vae.hidden_dim, vae.input_dim),
        ),
        ("encoder mean", enc.mean.weights.dim(), (vae.latent_dim, vae.hidden_dim)),
        (
            "encoder log-variance",
            enc.log_var.weights.dim(),
            (vae.latent_dim, vae.hidden_dim),
        ),
    ];
    for (name, got, want) in shapes {
        if got != want {
            return Err(Error::ModelFormat(format!("{name} weights {got:?}, expected {want:?}")));
        }
    }
    let dec = &vae.decoder.layers;
    if dec.len() != 2
        || dec[0].weights.dim() != (vae.hidden_dim, vae.latent_dim)
        || dec[1].weights.dim() != (vae.input_dim, vae.hidden_dim)
    {
        return Err(Error::ModelFormat("decoder shape does not match declared dims".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::encode;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_encodes_identically() {
        let mut vae = VaeModel::new(6, 9, 4, &mut ChaCha8Rng::seed_from_u64(1));
        vae.encoder.input_scale = 6f64.sqrt();
        vae.ir_fingerprint = "lsa:6:abc".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&vae, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, vae);
        let ir = Array1::linspace(-1.0, 1.0, 6);
        assert_eq!(encode(&loaded, &ir).unwrap(), encode(&vae, &ir).unwrap());
    }

    #[test]
    fn wrong_dimension_is_named() {
        let vae = VaeModel::new(6, 9, 4, &mut ChaCha8Rng::seed_from_u64(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&vae, &path).unwrap();
        let err = load_model_for(&path, 300).unwrap_err();
        assert_eq!(err.to_string(), "dimension mismatch: expected 6, got 300");
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut vae = VaeModel::new(2, 3, 2, &mut ChaCha8Rng::seed_from_u64(1));
        vae.format_version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&vae, &path).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
    }
}
