//! Peer networks: ReLU multilayer perceptrons whose forward pass exposes the
//! last hidden activation (the embedding used by relational losses) along
//! with the class logits.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    pub init_seed: u64,
}

impl NetworkConfig {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        init_seed: u64,
    ) -> Self {
        Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::config("hidden_dims", "needs at least one layer"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config(
                "hidden_dims",
                "layer widths must be positive",
            ));
        }
        if self.embedding_dim() < 2 {
            return Err(Error::config(
                "hidden_dims",
                "embedding dimension must be at least 2",
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(0)
    }

    /// `(fan_in, fan_out)` of every linear layer, classifier last.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_dims);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Parameter names and shapes in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        dims.iter()
            .enumerate()
            .flat_map(|(i, &(fan_in, fan_out))| {
                let prefix = if i == last {
                    "classifier".to_string()
                } else {
                    format!("hidden{i}")
                };
                [
                    (format!("{prefix}.weight"), vec![fan_in, fan_out]),
                    (format!("{prefix}.bias"), vec![fan_out]),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Frozen,
}

/// Tape handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Last hidden activation, `batch × d`.
    pub embedding: Var,
    /// Unnormalized class scores, `batch × m`.
    pub logits: Var,
}

/// Forward-pass values detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub embedding: Tensor,
    pub logits: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeerNetwork {
    config: NetworkConfig,
    params: Vec<Tensor>,
    mode: Mode,
}

impl PeerNetwork {
    /// Glorot-uniform weights drawn from `config.init_seed`, zero biases.
    pub fn init(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let params = config
            .parameter_shapes()
            .into_iter()
            .map(|(_, shape)| {
                if shape.len() == 2 {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                    let n = shape[0] * shape[1];
                    Tensor::from_parts(shape, (0..n).map(|_| dist.sample(&mut rng)).collect())
                } else {
                    Tensor::zeros(&shape)
                }
            })
            .collect();
        Ok(Self {
            config,
            params,
            mode: Mode::Training,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_frozen(&self) -> bool {
        self.mode == Mode::Frozen
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.config
            .parameter_shapes()
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Replaces all parameters, in canonical order. Frozen networks refuse.
    pub fn set_parameters(&mut self, params: Vec<Tensor>) -> Result<()> {
        if self.is_frozen() {
            return Err(Error::config("mode", "frozen networks cannot be modified"));
        }
        let shapes = self.config.parameter_shapes();
        if params.len() != shapes.len() {
            return Err(Error::config(
                "parameters",
                format!("expected {} tensors, got {}", shapes.len(), params.len()),
            ));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::config(
                    format!("parameters.{name}"),
                    format!("shape {:?} does not match config {:?}", p.shape(), shape),
                ));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Places the parameters on `tape`; they require gradients only while
    /// the network is in training mode.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        let trainable = self.mode == Mode::Training;
        self.params
            .iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect()
    }

    /// Forward pass using parameter handles from [`PeerNetwork::bind`] (or any
    /// tape leaves with matching shapes, in canonical order).
    pub fn forward(&self, tape: &mut Tape, params: &[Var], features: Var) -> Result<ForwardOutput> {
        let xv = tape.value(features);
        let (rows, width) = xv.dims2("forward")?;
        if width != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: vec![rows, self.config.input_dim],
                right: xv.shape().to_vec(),
            });
        }
        let layers = params.len() / 2;
        let mut h = features;
        let mut embedding = features;
        for layer in 0..layers {
            let (w, b) = (params[2 * layer], params[2 * layer + 1]);
            let xw = tape.matmul(h, w)?;
            let bias = tape.broadcast_rows(b, rows)?;
            let z = tape.add(xw, bias)?;
            if layer + 1 == layers {
                return Ok(ForwardOutput {
                    embedding,
                    logits: z,
                });
            }
            h = tape.relu(z)?;
            embedding = h;
        }
        Err(Error::config("parameters", "network has no layers"))
    }

    /// Forward pass on a private tape, returning plain values.
    pub fn predict(&self, features: &Tensor) -> Result<Prediction> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let x = tape.constant(features.clone());
        let out = self.forward(&mut tape, &params, x)?;
        Ok(Prediction {
            embedding: tape.value(out.embedding).clone(),
            logits: tape.value(out.logits).clone(),
        })
    }

    /// Deep copy in frozen mode.
    pub fn snapshot(&self) -> PeerNetwork {
        PeerNetwork {
            config: self.config.clone(),
            params: self.params.clone(),
            mode: Mode::Frozen,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let parameters = self
            .parameter_names()
            .into_iter()
            .zip(&self.params)
            .map(|(name, p)| {
                (
                    name,
                    ParamRecord {
                        shape: p.shape().to_vec(),
                        data: p.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            config: self.config.clone(),
            parameters,
        }
    }

    /// Rebuilds a training-mode network from a checkpoint.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let mut params = Vec::new();
        let mut records = ckpt.parameters;
        for (name, shape) in ckpt.config.parameter_shapes() {
            let rec = records
                .remove(&name)
                .ok_or_else(|| Error::config(format!("parameters.{name}"), "missing"))?;
            if rec.shape != shape {
                return Err(Error::config(
                    format!("parameters.{name}"),
                    format!("shape {:?} does not match config {:?}", rec.shape, shape),
                ));
            }
            params.push(Tensor::new(rec.shape, rec.data)?);
        }
        if let Some(extra) = records.keys().next() {
            return Err(Error::config(
                format!("parameters.{extra}"),
                "unexpected parameter",
            ));
        }
        Ok(Self {
            config: ckpt.config,
            params,
            mode: Mode::Training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk network format: config plus named parameter blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub parameters: BTreeMap<String, ParamRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::softmax_rows;

    fn small(seed: u64) -> NetworkConfig {
        NetworkConfig::new(2, vec![8, 4], 3, seed)
    }

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        let net = PeerNetwork::init(small(1)).unwrap();
        assert_eq!(net.parameter_count(), 2 * 8 + 8 + 8 * 4 + 4 + 4 * 3 + 3);
        assert_eq!(net.parameter_count(), 75);
        assert_eq!(small(1).parameter_count(), 75);
    }

    #[test]
    fn init_is_seeded() {
        let a = PeerNetwork::init(small(1)).unwrap();
        let b = PeerNetwork::init(small(1)).unwrap();
        let c = PeerNetwork::init(small(2)).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn init_respects_glorot_bounds_and_zero_bias() {
        let net = PeerNetwork::init(small(5)).unwrap();
        for ((_, shape), p) in net.config().parameter_shapes().iter().zip(net.parameters()) {
            if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                assert!(p.data().iter().all(|v| v.abs() <= limit));
            } else {
                assert!(p.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::new(2, vec![], 3, 0).validate().is_err());
        assert!(NetworkConfig::new(2, vec![8, 1], 3, 0).validate().is_err());
        assert!(NetworkConfig::new(2, vec![8], 1, 0).validate().is_err());
        assert!(NetworkConfig::new(0, vec![8], 3, 0).validate().is_err());
    }

    #[test]
    fn zero_network_gives_uniform_softmax() {
        let mut net = PeerNetwork::init(small(1)).unwrap();
        let zeros = net
            .config()
            .parameter_shapes()
            .iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        net.set_parameters(zeros).unwrap();
        let x = Tensor::from_rows(&[[0.3, -2.0], [1.0, 1.0]]).unwrap();
        let out = net.predict(&x).unwrap();
        assert!(out.logits.data().iter().all(|&v| v == 0.0));
        let p = softmax_rows(&out.logits, 1.0, false).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn hand_set_single_hidden_layer() {
        // x = [1, 2]; W1 = [[1, -1], [0, 1]], b1 = [0, -0.5]
        //   pre = [1, 0.5], h = [1, 0.5]
        // Wc = [[1, 0], [2, -1]], bc = [0.1, 0.2]
        //   logits = [1 + 1 + 0.1, -0.5 + 0.2] = [2.1, -0.3]
        let mut net = PeerNetwork::init(NetworkConfig::new(2, vec![2], 2, 0)).unwrap();
        net.set_parameters(vec![
            Tensor::from_rows(&[[1.0, -1.0], [0.0, 1.0]]).unwrap(),
            Tensor::vector(vec![0.0, -0.5]).unwrap(),
            Tensor::from_rows(&[[1.0, 0.0], [2.0, -1.0]]).unwrap(),
            Tensor::vector(vec![0.1, 0.2]).unwrap(),
        ])
        .unwrap();
        let out = net
            .predict(&Tensor::from_rows(&[[1.0, 2.0]]).unwrap())
            .unwrap();
        assert_eq!(out.embedding.data(), &[1.0, 0.5]);
        assert!((out.logits.data()[0] - 2.1).abs() < 1e-15);
        assert!((out.logits.data()[1] + 0.3).abs() < 1e-15);

        // ReLU clips the negative pre-activation.
        let out = net
            .predict(&Tensor::from_rows(&[[-1.0, 0.0]]).unwrap())
            .unwrap();
        assert_eq!(out.embedding.data(), &[0.0, 0.5]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = PeerNetwork::init(small(1)).unwrap();
        assert!(matches!(
            net.predict(&Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap()),
            Err(Error::ShapeMismatch { op: "forward", .. })
        ));
    }

    #[test]
    fn embedding_width_is_last_hidden() {
        let net = PeerNetwork::init(small(1)).unwrap();
        for b in [1, 3, 7] {
            let x = Tensor::zeros(&[b, 2]);
            let out = net.predict(&x).unwrap();
            assert_eq!(out.embedding.shape(), &[b, 4]);
            assert_eq!(out.logits.shape(), &[b, 3]);
        }
    }

    #[test]
    fn frozen_network_gets_no_gradients() {
        let net = PeerNetwork::init(small(1)).unwrap().snapshot();
        let mut tape = Tape::new();
        let params = net.bind(&mut tape);
        let x = tape.constant(Tensor::from_rows(&[[0.5, -0.5]]).unwrap());
        let out = net.forward(&mut tape, &params, x).unwrap();
        let loss = tape.sum(out.logits).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(params.iter().all(|p| grads.get(*p).is_none()));
    }

    #[test]
    fn snapshot_is_detached_and_idempotent() {
        let mut net = PeerNetwork::init(small(3)).unwrap();
        let x = Tensor::from_rows(&[[0.1, 0.2], [-0.3, 0.9]]).unwrap();
        let snap = net.snapshot();
        assert!(snap.is_frozen());
        assert_eq!(snap.predict(&x).unwrap(), net.predict(&x).unwrap());
        assert_eq!(
            snap.snapshot().predict(&x).unwrap(),
            snap.predict(&x).unwrap()
        );

        let before = snap.predict(&x).unwrap();
        net.parameters_mut()[0].data_mut()[0] += 1.0;
        assert_eq!(snap.predict(&x).unwrap(), before);
        assert_ne!(net.predict(&x).unwrap(), before);
    }

    #[test]
    fn frozen_network_refuses_new_parameters() {
        let net = PeerNetwork::init(small(1)).unwrap();
        let mut snap = net.snapshot();
        assert!(snap.set_parameters(net.parameters().to_vec()).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = PeerNetwork::init(small(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        let back = PeerNetwork::load(&path).unwrap();
        assert_eq!(back.parameters(), net.parameters());
        assert_eq!(back.config(), net.config());

        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(json["config"]["hidden_dims"].is_array());
        assert_eq!(
            json["parameters"]["hidden0.weight"]["shape"],
            serde_json::json!([2, 8])
        );
        assert_eq!(
            json["parameters"]["classifier.bias"]["shape"],
            serde_json::json!([3])
        );
    }

    #[test]
    fn checkpoint_shape_mismatch_is_rejected() {
        let mut ckpt = PeerNetwork::init(small(9)).unwrap().to_checkpoint();
        ckpt.parameters.get_mut("classifier.bias").unwrap().shape = vec![4];
        assert!(PeerNetwork::from_checkpoint(ckpt).is_err());
    }
}
