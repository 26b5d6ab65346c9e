use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Network, NetworkParams, NnError, Real, Tensor};

/// One named tensor in a checkpoint document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON checkpoint: `{"spec": [...], "seed": n, "tensors": [...]}`.
///
/// A checkpoint may hold several networks sharing the chain (online and
/// target Q-networks); tensor names are `<prefix>.<index>`. Free-form
/// metadata (the environment a network was trained on) rides along in
/// `metadata`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: Vec<LayerSpec>,
    pub seed: u64,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new(spec: Vec<LayerSpec>, seed: u64) -> Self {
        Self {
            spec,
            seed,
            tensors: Vec::new(),
            metadata: None,
        }
    }

    pub fn from_network<T: Real>(net: &Network<T>, prefix: &str) -> Self {
        let mut c = Self::new(net.chain().to_vec(), net.params().seed);
        c.push_params(prefix, net.params());
        c
    }

    pub fn push_params<T: Real>(&mut self, prefix: &str, params: &NetworkParams<T>) {
        for (i, t) in params.tensors.iter().enumerate() {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}.{i}"),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.as_f64()).collect(),
            });
        }
    }

    pub fn prefixes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.tensors {
            let p = t.name.rsplit_once('.').map_or(t.name.as_str(), |(p, _)| p);
            if !out.iter().any(|o| o == p) {
                out.push(p.to_string());
            }
        }
        out
    }

    pub fn network<T: Real>(&self, prefix: &str) -> Result<Network<T>, NnError> {
        let mut tensors = Vec::new();
        for (i, nt) in self
            .tensors
            .iter()
            .filter(|t| t.name.rsplit_once('.').is_some_and(|(p, _)| p == prefix))
            .enumerate()
        {
            if nt.name != format!("{prefix}.{i}") {
                return Err(NnError::Checkpoint(format!("tensor {} out of order", nt.name)));
            }
            tensors.push(Tensor::new(
                nt.shape.clone(),
                nt.data.iter().map(|v| T::from_f64(*v)).collect(),
            )?);
        }
        if tensors.is_empty() {
            return Err(NnError::Checkpoint(format!("no tensors with prefix {prefix:?}")));
        }
        Network::from_params(
            self.spec.clone(),
            NetworkParams {
                seed: self.seed,
                tensors,
            },
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let text = serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = fs::read_to_string(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }
}
