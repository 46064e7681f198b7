//! Inner-policy networks. These are also what a learned knowledge pack
//! snapshots, so they are kept apart from the key and query heads.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{
    Activation, ConvEncoder, ConvEncoderSpec, ConvLayerSpec, Graph, Mlp, MlpSpec, NodeId, ParameterStore, TensorBuf,
};
use crate::grid::{GridAction, GRID_CHANNELS, VIEW};
use crate::point::POINT_ACTION_DIM;
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// The default gridworld encoder: three 2x2 convolutions over the view, the
/// carrying flag joined before a 64-unit tanh layer.
pub fn default_grid_encoder() -> ConvEncoderSpec {
    let conv = |filters| ConvLayerSpec {
        filters,
        kernel: 2,
        stride: 1,
    };
    ConvEncoderSpec {
        in_h: VIEW,
        in_w: VIEW,
        in_channels: GRID_CHANNELS,
        extra_inputs: 1,
        layers: alloc::vec![conv(16), conv(32), conv(32)],
        head_width: 64,
        head_activation: Activation::Tanh,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerNetSpec {
    Grid { encoder: ConvEncoderSpec },
    Point { mlp: MlpSpec },
}

/// Shared trunk `enc.*` plus the policy head `pi.*`.
#[derive(Debug, Clone)]
pub struct GridInnerNet {
    pub encoder: ConvEncoder,
    pub pi: Mlp,
}

impl GridInnerNet {
    pub const PREFIXES: [&'static str; 2] = ["enc.", "pi."];

    fn head_spec(encoder: &ConvEncoderSpec) -> MlpSpec {
        MlpSpec::new(encoder.head_width, &[], GridAction::COUNT)
    }

    pub fn init<R: Rng + ?Sized>(encoder: &ConvEncoderSpec, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        Ok(Self {
            encoder: ConvEncoder::init(encoder, store, "enc", rng)?,
            pi: Mlp::init(&Self::head_spec(encoder), store, "pi", rng)?,
        })
    }

    pub fn bind(encoder: &ConvEncoderSpec, store: &ParameterStore) -> Result<Self> {
        Ok(Self {
            encoder: ConvEncoder::bind(encoder, store, "enc")?,
            pi: Mlp::bind(&Self::head_spec(encoder), store, "pi")?,
        })
    }

    pub fn trunk(&self, g: &mut Graph, store: &ParameterStore, x: NodeId, trainable: bool) -> Result<NodeId> {
        self.encoder.forward(g, store, x, trainable)
    }

    pub fn logits(&self, g: &mut Graph, store: &ParameterStore, h: NodeId, trainable: bool) -> Result<NodeId> {
        self.pi.forward(g, store, h, trainable)
    }

    /// Action probabilities for a batch of encoded observations.
    pub fn pmf(&self, store: &ParameterStore, x: &TensorBuf) -> Result<TensorBuf> {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let h = self.trunk(&mut g, store, xn, false)?;
        let l = self.logits(&mut g, store, h, false)?;
        let p = g.softmax_rows(l);
        Ok(g.value(p).clone())
    }
}

/// `pi.*`: observation to pre-squash location and clamped log-scale.
#[derive(Debug, Clone)]
pub struct PointInnerNet {
    pub mlp: Mlp,
}

impl PointInnerNet {
    pub const PREFIXES: [&'static str; 1] = ["pi."];

    fn check(spec: &MlpSpec) -> Result<()> {
        if spec.output_dim != 2 * POINT_ACTION_DIM {
            return Err(Error::config(alloc::format!(
                "point policy net must output {} values, got {}",
                2 * POINT_ACTION_DIM,
                spec.output_dim
            )));
        }
        Ok(())
    }

    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        Self::check(spec)?;
        Ok(Self {
            mlp: Mlp::init(spec, store, "pi", rng)?,
        })
    }

    pub fn bind(spec: &MlpSpec, store: &ParameterStore) -> Result<Self> {
        Self::check(spec)?;
        Ok(Self {
            mlp: Mlp::bind(spec, store, "pi")?,
        })
    }

    /// `(loc, log_scale)`, each `batch x 4`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        x: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, NodeId)> {
        let y = self.mlp.forward(g, store, x, trainable)?;
        let loc = g.slice_cols(y, 0, POINT_ACTION_DIM)?;
        let raw = g.slice_cols(y, POINT_ACTION_DIM, POINT_ACTION_DIM)?;
        let log_scale = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        Ok((loc, log_scale))
    }

    /// `batch x 8`: location then log-scale.
    pub fn eval(&self, store: &ParameterStore, x: &TensorBuf) -> Result<TensorBuf> {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let (loc, ls) = self.forward(&mut g, store, xn, false)?;
        let y = g.concat_cols(&[loc, ls])?;
        Ok(g.value(y).clone())
    }
}

#[derive(Debug, Clone)]
pub enum InnerNet {
    Grid(GridInnerNet),
    Point(PointInnerNet),
}

impl InnerNet {
    pub fn bind(spec: &InnerNetSpec, store: &ParameterStore) -> Result<Self> {
        Ok(match spec {
            InnerNetSpec::Grid { encoder } => InnerNet::Grid(GridInnerNet::bind(encoder, store)?),
            InnerNetSpec::Point { mlp } => InnerNet::Point(PointInnerNet::bind(mlp, store)?),
        })
    }

    pub fn prefixes(spec: &InnerNetSpec) -> Vec<&'static str> {
        match spec {
            InnerNetSpec::Grid { .. } => GridInnerNet::PREFIXES.to_vec(),
            InnerNetSpec::Point { .. } => PointInnerNet::PREFIXES.to_vec(),
        }
    }
}
