//! Minimal differentiable function approximation: dense tensors, a tape-based
//! reverse-mode graph, MLP / convolutional encoders, embedding tables, Adam and
//! finite-difference gradient checking.
//!
//! Training computes in `f64`; parameters can be exported to `f32` for
//! serialization.

mod adam;
mod gemm;
mod gradcheck;
mod graph;
mod init;
mod layers;
mod params;
mod tensor;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use gemm::{gemm, matmul_naive};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use init::{orthogonal, unit_sphere_rows};
pub use layers::{Activation, ConvEncoder, ConvEncoderSpec, ConvGeom, ConvLayerSpec, EmbeddingTable, Mlp, MlpSpec};
pub use params::{ParamId, Parameter, ParameterStore};
pub use tensor::TensorBuf;
