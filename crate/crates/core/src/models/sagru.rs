use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{GruLayer, Linear, LstmLayer, MultiHeadAttention};
use crate::models::{Checkpoint, Prediction, PredictionKind};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Hyperparameters of the per-modality self-attention GRU regressors and the
/// late-fusion Bi-LSTM that combines their prediction series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaGruConfig {
    /// Input feature width per modality (e.g. audio, video, bio-signals).
    pub modality_dims: Vec<usize>,
    pub heads: usize,
    pub gru_layers: usize,
    pub hidden: usize,
    pub bidirectional: bool,
    pub fusion_lstm_units: usize,
}

impl SaGruConfig {
    pub fn stress(modality_dims: Vec<usize>) -> Self {
        SaGruConfig {
            modality_dims,
            heads: 2,
            gru_layers: 2,
            hidden: 64,
            bidirectional: true,
            fusion_lstm_units: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality_dims.is_empty() {
            return Err(Error::Config("at least one modality required".into()));
        }
        for &d in &self.modality_dims {
            if self.heads == 0 || d % self.heads != 0 {
                return Err(Error::Config(format!(
                    "heads ({}) must divide every attended dim (got {d})",
                    self.heads
                )));
            }
        }
        if self.gru_layers == 0 || self.hidden == 0 || self.fusion_lstm_units == 0 {
            return Err(Error::Config(
                "gru_layers, hidden and fusion_lstm_units must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One modality's regressor: self-attention over the input sequence (the
/// attended dim equals the feature dim), a stack of GRU layers, and a linear
/// head producing one scalar per timestep.
#[derive(Debug, Clone)]
pub struct SaGruModel {
    pub store: ParamStore,
    pub input_dim: usize,
    attn: MultiHeadAttention,
    grus: Vec<GruLayer>,
    head: Linear,
}

impl SaGruModel {
    pub fn new(cfg: &SaGruConfig, modality: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let input_dim = cfg.modality_dims[modality];
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::new(&mut store, "attn", input_dim, cfg.heads, rng)?;
        let mut grus = Vec::with_capacity(cfg.gru_layers);
        let mut in_dim = input_dim;
        for l in 0..cfg.gru_layers {
            let gru = GruLayer::new(
                &mut store,
                &format!("gru.{l}"),
                in_dim,
                cfg.hidden,
                cfg.bidirectional,
                rng,
            );
            in_dim = gru.out_dim();
            grus.push(gru);
        }
        let head = Linear::new(&mut store, "head", in_dim, 1, rng);
        Ok(SaGruModel {
            store,
            input_dim,
            attn,
            grus,
            head,
        })
    }

    /// Copy of the model reading parameters from `store` (same layout);
    /// used by finite-difference probes.
    pub fn with_store(&self, store: ParamStore) -> Self {
        SaGruModel {
            store,
            ..self.clone()
        }
    }

    /// [T × d] -> per-timestep scalars [T × 1].
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let s = g.value(x).shape().to_vec();
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "sagru_forward",
                lhs: s,
                rhs: vec![0, self.input_dim],
            });
        }
        let (attended, _) = self.attn.self_attention(&self.store, g, x)?;
        let mut h = attended;
        for gru in &self.grus {
            h = gru.forward(&self.store, g, h, None)?;
        }
        self.head.forward(&self.store, g, h)
    }

    /// Eval-mode per-timestep predictions (length = full window T).
    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let xn = g.input(x)?;
        let out = self.forward(&mut g, xn)?;
        Ok(Prediction {
            values: g.value(out).values().to_vec(),
            kind: PredictionKind::PerStep,
        })
    }
}

/// Late fusion: the per-modality prediction series are concatenated into a
/// [T × M] matrix, passed through a Bi-LSTM and mapped back to one scalar
/// per timestep.
#[derive(Debug, Clone)]
pub struct LateFusionModel {
    pub store: ParamStore,
    pub inputs: usize,
    lstm: LstmLayer,
    head: Linear,
}

impl LateFusionModel {
    pub fn new(inputs: usize, lstm_units: usize, rng: &mut Rng) -> Result<Self> {
        if inputs == 0 || lstm_units == 0 {
            return Err(Error::Config(
                "fusion needs at least one input series and one LSTM unit".into(),
            ));
        }
        let mut store = ParamStore::new();
        let lstm = LstmLayer::new(&mut store, "lstm", inputs, lstm_units, true, rng);
        let head = Linear::new(&mut store, "head", lstm.out_dim(), 1, rng);
        Ok(LateFusionModel {
            store,
            inputs,
            lstm,
            head,
        })
    }

    /// [T × inputs] -> [T × 1].
    pub fn forward(&self, g: &mut Graph, fused: NodeId) -> Result<NodeId> {
        let s = g.value(fused).shape().to_vec();
        if s.len() != 2 || s[1] != self.inputs {
            return Err(Error::ShapeMismatch {
                op: "late_fusion_forward",
                lhs: s,
                rhs: vec![0, self.inputs],
            });
        }
        let h = self.lstm.forward(&self.store, g, fused)?;
        self.head.forward(&self.store, g, h)
    }

    /// Stacks equal-length prediction series into the fusion input [T × M].
    pub fn stack_inputs(series: &[Vec<f64>]) -> Result<Tensor> {
        if series.is_empty() {
            return Err(Error::InvalidArgument("fusion: no input series".into()));
        }
        let t = series[0].len();
        if series.iter().any(|s| s.len() != t) {
            return Err(Error::InvalidArgument(format!(
                "fusion: input series lengths differ: {:?}",
                series.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        let mut values = Vec::with_capacity(t * series.len());
        for i in 0..t {
            for s in series {
                values.push(s[i]);
            }
        }
        Tensor::new(vec![t, series.len()], values)
    }

    pub fn predict(&self, series: &[Vec<f64>]) -> Result<Prediction> {
        let fused = Self::stack_inputs(series)?;
        let mut g = Graph::new();
        let xn = g.input(&fused)?;
        let out = self.forward(&mut g, xn)?;
        Ok(Prediction {
            values: g.value(out).values().to_vec(),
            kind: PredictionKind::PerStep,
        })
    }
}

/// The full stress pipeline: independently trained per-modality regressors
/// plus the fusion stage over their frozen outputs.
#[derive(Debug, Clone)]
pub struct StressModel {
    pub cfg: SaGruConfig,
    pub per_modality: Vec<SaGruModel>,
    pub fusion: LateFusionModel,
}

impl StressModel {
    pub fn new(cfg: SaGruConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let per_modality = (0..cfg.modality_dims.len())
            .map(|m| {
                let mut mrng = rng.derive(m as u64 + 1);
                SaGruModel::new(&cfg, m, &mut mrng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut frng = rng.derive(0x66757365);
        let fusion = LateFusionModel::new(
            cfg.modality_dims.len(),
            cfg.fusion_lstm_units,
            &mut frng,
        )?;
        Ok(StressModel {
            cfg,
            per_modality,
            fusion,
        })
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: u64) -> Result<Checkpoint> {
        let mut stores: Vec<ParamStore> =
            self.per_modality.iter().map(|m| m.store.clone()).collect();
        stores.push(self.fusion.store.clone());
        Ok(Checkpoint {
            kind: "stress".into(),
            config_json: serde_json::to_string(&self.cfg)
                .map_err(|e| Error::Checkpoint(e.to_string()))?,
            seed,
            epoch,
            stores,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: SaGruConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.kind != "stress" || ckpt.stores.len() != cfg.modality_dims.len() + 1 {
            return Err(Error::Checkpoint(format!(
                "expected a stress checkpoint with {} stores, found kind {:?} with {}",
                cfg.modality_dims.len() + 1,
                ckpt.kind,
                ckpt.stores.len()
            )));
        }
        let mut model = StressModel::new(cfg, &mut Rng::new(ckpt.seed))?;
        for (m, sub) in model.per_modality.iter_mut().enumerate() {
            crate::models::checkpoint::restore_store(&mut sub.store, &ckpt.stores[m])?;
        }
        crate::models::checkpoint::restore_store(
            &mut model.fusion.store,
            ckpt.stores.last().expect("count checked"),
        )?;
        Ok(model)
    }

    /// End-to-end prediction: per-modality series through the fusion stage.
    pub fn predict(&self, modalities: &[Tensor]) -> Result<Prediction> {
        if modalities.len() != self.per_modality.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} modalities, got {}",
                self.per_modality.len(),
                modalities.len()
            )));
        }
        let series = self
            .per_modality
            .iter()
            .zip(modalities)
            .map(|(m, x)| Ok(m.predict(x)?.values))
            .collect::<Result<Vec<_>>>()?;
        self.fusion.predict(&series)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::grad_check;

    fn tiny_cfg() -> SaGruConfig {
        SaGruConfig {
            modality_dims: vec![4, 6, 2],
            heads: 2,
            gru_layers: 2,
            hidden: 3,
            bidirectional: true,
            fusion_lstm_units: 6,
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_cfg();
        cfg.modality_dims = vec![4, 5];
        assert!(cfg.validate().is_err(), "heads must divide dims");
        assert!(tiny_cfg().validate().is_ok());
        let stress = SaGruConfig::stress(vec![8, 8, 4]);
        assert_eq!(stress.heads, 2);
        assert_eq!(stress.fusion_lstm_units, 6);
        assert!(stress.bidirectional);
    }

    #[test]
    fn output_length_matches_input() {
        let mut rng = Rng::new(0);
        let cfg = tiny_cfg();
        let model = SaGruModel::new(&cfg, 0, &mut rng).unwrap();
        for t in [1, 5, 17] {
            let x = Tensor::uniform(&[t, 4], 1.0, &mut rng);
            let p = model.predict(&x).unwrap();
            assert_eq!(p.values.len(), t);
            assert_eq!(p.kind, PredictionKind::PerStep);
        }
    }

    #[test]
    fn zero_weight_network_outputs_head_bias() {
        let mut rng = Rng::new(1);
        let cfg = tiny_cfg();
        let mut model = SaGruModel::new(&cfg, 2, &mut rng).unwrap();
        for id in model.store.ids().collect::<Vec<_>>() {
            model.store.get_mut(id).apply_update(|_, v| *v = 0.0);
        }
        let bias = 0.37;
        let head_bias = model.store.find("head.bias").unwrap();
        model.store.get_mut(head_bias).apply_update(|_, v| *v = bias);
        let x = Tensor::uniform(&[6, 2], 1.0, &mut rng);
        let p = model.predict(&x).unwrap();
        for v in p.values {
            assert!((v - bias).abs() < 1e-15);
        }
    }

    #[test]
    fn sagru_grad_check() {
        let mut rng = Rng::new(2);
        let cfg = SaGruConfig {
            modality_dims: vec![4],
            heads: 2,
            gru_layers: 2,
            hidden: 2,
            bidirectional: true,
            fusion_lstm_units: 2,
        };
        let model = SaGruModel::new(&cfg, 0, &mut rng).unwrap();
        let x = Tensor::uniform(&[4, 4], 1.0, &mut rng);
        let err = grad_check(
            |store, g| {
                let probe = SaGruModel {
                    store: store.clone(),
                    ..model.clone()
                };
                let xn = g.input(&x)?;
                let out = probe.forward(g, xn)?;
                let sq = g.mul(out, out)?;
                g.sum_all(sq)
            },
            &model.store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "sagru grad error {err}");
    }

    #[test]
    fn fusion_stacks_three_series() {
        let mut rng = Rng::new(3);
        let fusion = LateFusionModel::new(3, 6, &mut rng).unwrap();
        let t = 9;
        let series: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..t).map(|_| rng.normal()).collect())
            .collect();
        let stacked = LateFusionModel::stack_inputs(&series).unwrap();
        assert_eq!(stacked.shape(), &[t, 3]);
        assert_eq!(stacked.row(0), &[series[0][0], series[1][0], series[2][0]]);
        let p = fusion.predict(&series).unwrap();
        assert_eq!(p.values.len(), t);

        // internal Bi-LSTM output is [T × 2*units]
        let mut g = Graph::new();
        let xn = g.input(&stacked).unwrap();
        let h = fusion.lstm.forward(&fusion.store, &mut g, xn).unwrap();
        assert_eq!(g.value(h).shape(), &[t, 12]);
    }

    #[test]
    fn fusion_rejects_mismatched_lengths() {
        assert!(LateFusionModel::stack_inputs(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(LateFusionModel::stack_inputs(&[]).is_err());
    }

    #[test]
    fn zero_weight_fusion_outputs_bias() {
        let mut rng = Rng::new(4);
        let mut fusion = LateFusionModel::new(3, 6, &mut rng).unwrap();
        for id in fusion.store.ids().collect::<Vec<_>>() {
            fusion.store.get_mut(id).apply_update(|_, v| *v = 0.0);
        }
        let b = fusion.store.find("head.bias").unwrap();
        fusion.store.get_mut(b).apply_update(|_, v| *v = -0.25);
        let series = vec![vec![0.5; 4], vec![-0.5; 4], vec![0.1; 4]];
        let p = fusion.predict(&series).unwrap();
        for v in p.values {
            assert!((v + 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn fusion_grad_check() {
        let mut rng = Rng::new(5);
        let fusion = LateFusionModel::new(3, 4, &mut rng).unwrap();
        let x = Tensor::uniform(&[5, 3], 1.0, &mut rng);
        let err = grad_check(
            |store, g| {
                let probe = LateFusionModel {
                    store: store.clone(),
                    ..fusion.clone()
                };
                let xn = g.input(&x)?;
                let out = probe.forward(g, xn)?;
                let sq = g.mul(out, out)?;
                g.sum_all(sq)
            },
            &fusion.store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "fusion grad error {err}");
    }

    #[test]
    fn stress_pipeline_end_to_end_shapes() {
        let mut rng = Rng::new(6);
        let model = StressModel::new(tiny_cfg(), &mut rng).unwrap();
        let t = 7;
        let xs: Vec<Tensor> = [4usize, 6, 2]
            .iter()
            .map(|&d| Tensor::uniform(&[t, d], 1.0, &mut rng))
            .collect();
        let p = model.predict(&xs).unwrap();
        assert_eq!(p.values.len(), t);
        assert!(model.predict(&xs[..2]).is_err());
    }
}
