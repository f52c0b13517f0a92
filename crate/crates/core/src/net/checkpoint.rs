//! JSON checkpoint format for trained surrogates.
//!
//! Floats are written with enough digits to round-trip bit-exactly, so a
//! saved and re-loaded model evaluates identically.

use serde::{Deserialize, Serialize};

use super::{NetworkModel, Normalizer, Topology, WeightVector};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Provenance of a training run, stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub resample_at: Option<usize>,
    pub n_data: usize,
    pub n_phys: usize,
    pub lambda_phys: f64,
    pub final_loss: f64,
    pub final_l_data: f64,
    pub final_l_phys: f64,
}

/// Serialized form of a [`NetworkModel`] plus training provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub topology: Topology,
    pub activation: String,
    pub input_center: Vec<f64>,
    pub input_half_width: Vec<f64>,
    pub output_center: Vec<f64>,
    pub output_half_width: Vec<f64>,
    pub t_max: f64,
    pub hard_ic: bool,
    pub metadata: TrainingMetadata,
    pub weights: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &NetworkModel, metadata: TrainingMetadata) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            topology: model.topology().clone(),
            activation: "tanh".to_string(),
            input_center: model.input_norm().center.clone(),
            input_half_width: model.input_norm().half_width.clone(),
            output_center: model.output_map().center.clone(),
            output_half_width: model.output_map().half_width.clone(),
            t_max: model.t_max(),
            hard_ic: model.hard_ic(),
            metadata,
            weights: model.weights().0.clone(),
        }
    }

    pub fn into_model(self) -> Result<NetworkModel> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.activation != "tanh" {
            return Err(Error::Checkpoint(format!("unsupported activation `{}`", self.activation)));
        }
        Ok(NetworkModel::new(
            self.topology,
            WeightVector(self.weights),
            Normalizer::new(self.input_center, self.input_half_width)?,
            Normalizer::new(self.output_center, self.output_half_width)?,
            self.t_max,
        )?
        .with_hard_ic(self.hard_ic))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_weights;

    fn metadata() -> TrainingMetadata {
        TrainingMetadata {
            seed: 42,
            epochs: 1000,
            resample_at: Some(500),
            n_data: 100,
            n_phys: 2000,
            lambda_phys: 1.0,
            final_loss: 1.25e-4,
            final_l_data: 2.5e-5,
            final_l_phys: 1.0e-4,
        }
    }

    fn model() -> NetworkModel {
        let topology = Topology::with_hidden(vec![5, 4]);
        let weights = init_weights(&topology, 3);
        NetworkModel::new(
            topology,
            weights,
            Normalizer::new(
                vec![0.125, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                vec![0.125, 3.1, 3.1, 2.5, 2.5, 0.5, 0.5],
            )
            .unwrap(),
            Normalizer::new(vec![0.0; 4], vec![3.1, 3.1, 2.5, 2.5]).unwrap(),
            0.25,
        )
        .unwrap()
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let ckpt = Checkpoint::from_model(&model(), metadata());
        let json = ckpt.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back, ckpt);
        for (a, b) in ckpt.weights.iter().zip(&back.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Two serializations of the same checkpoint are byte-identical.
        assert_eq!(json, back.to_json().unwrap());
    }

    #[test]
    fn model_roundtrip_evaluates_identically() {
        let m = model();
        let ckpt = Checkpoint::from_model(&m, metadata());
        let restored = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap().into_model().unwrap();
        let x0 = nalgebra::Vector4::new(0.2, -0.9, 1.5, -2.0);
        let u = nalgebra::Vector2::new(0.3, -0.3);
        let a = m.forward(0.2, &x0, &u);
        let b = restored.forward(0.2, &x0, &u);
        for i in 0..4 {
            assert_eq!(a[i].to_bits(), b[i].to_bits());
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let ckpt = Checkpoint::from_model(&model(), metadata());
        let mut value: serde_json::Value = serde_json::from_str(&ckpt.to_json().unwrap()).unwrap();
        value.as_object_mut().unwrap().insert("surprise".into(), 1.into());
        let text = serde_json::to_string(&value).unwrap();
        assert!(Checkpoint::from_json(&text).is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut ckpt = Checkpoint::from_model(&model(), metadata());
        ckpt.format_version = 99;
        assert!(ckpt.into_model().is_err());
    }
}
