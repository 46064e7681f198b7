use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::{orthogonal, unit_sphere_rows};
use super::{Graph, NodeId, ParamId, ParameterStore, TensorBuf};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    #[default]
    None,
}

impl Activation {
    fn gain(self) -> f64 {
        match self {
            Activation::Relu => core::f64::consts::SQRT_2,
            Activation::Tanh | Activation::None => 1.0,
        }
    }

    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::None => x,
        }
    }
}

/// Fully connected network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    /// `(width, activation)` per hidden layer.
    pub hidden: Vec<(usize, Activation)>,
    pub output_dim: usize,
    #[serde(default)]
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[(usize, Activation)], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            output_activation: Activation::None,
        }
    }

    /// `depth` hidden layers of `width` relu units.
    pub fn relu(input_dim: usize, depth: usize, width: usize, output_dim: usize) -> Self {
        Self::new(input_dim, &alloc::vec![(width, Activation::Relu); depth], output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|h| h.0 == 0) {
            return Err(Error::config(format!("all MLP widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<(usize, usize, Activation)> {
        let mut out = Vec::new();
        let mut prev = self.input_dim;
        for &(w, a) in &self.hidden {
            out.push((prev, w, a));
            prev = w;
        }
        out.push((prev, self.output_dim, self.output_activation));
        out
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId, Activation)>,
}

impl Mlp {
    /// Registers `{prefix}.l{i}.w` (`in x out`) and `{prefix}.l{i}.b` in `store`.
    pub fn init<R: Rng + ?Sized>(
        spec: &MlpSpec,
        store: &mut ParameterStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let last = widths.len() - 1;
        let mut layers = Vec::new();
        for (i, &(fan_in, fan_out, act)) in widths.iter().enumerate() {
            let gain = if i == last { 1.0 } else { act.gain() };
            let w = store.insert(&format!("{prefix}.l{i}.w"), orthogonal(fan_in, fan_out, gain, rng))?;
            let b = store.insert(&format!("{prefix}.l{i}.b"), TensorBuf::zeros(&[1, fan_out]))?;
            layers.push((w, b, act));
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Looks up an already-registered network.
    pub fn bind(spec: &MlpSpec, store: &ParameterStore, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (i, &(fan_in, fan_out, act)) in spec.widths().iter().enumerate() {
            let w = store.id(&format!("{prefix}.l{i}.w"))?;
            let b = store.id(&format!("{prefix}.l{i}.b"))?;
            if store.value(w).shape() != [fan_in, fan_out] || store.value(b).len() != fan_out {
                return Err(Error::shape(format!("layer {prefix}.l{i} does not match {spec:?}")));
            }
            layers.push((w, b, act));
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: NodeId, trainable: bool) -> Result<NodeId> {
        if g.value(x).cols() != self.spec.input_dim {
            return Err(Error::shape(format!(
                "MLP expects {} inputs, got {}",
                self.spec.input_dim,
                g.value(x).cols()
            )));
        }
        let mut h = x;
        for &(w, b, act) in &self.layers {
            let (wn, bn) = if trainable {
                (g.param(store, w), g.param(store, b))
            } else {
                (g.frozen_param(store, w), g.frozen_param(store, b))
            };
            let y = g.linear(h, wn, bn)?;
            h = act.apply(g, y);
        }
        Ok(h)
    }

    /// Gradient-free forward pass.
    pub fn eval(&self, store: &ParameterStore, input: &TensorBuf) -> Result<TensorBuf> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, store, x, false)?;
        Ok(g.value(y).clone())
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Geometry of one convolution applied to an HWC image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.in_h - self.kernel) / self.stride + 1,
            (self.in_w - self.kernel) / self.stride + 1,
        )
    }
}

/// Three convolutions (relu) followed by one fully connected layer.
///
/// Input rows are `[image (h*w*c, HWC order) | extra features]`; the extra
/// features bypass the convolutions and join the flattened feature map before
/// the fully connected head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvEncoderSpec {
    pub in_h: usize,
    pub in_w: usize,
    pub in_channels: usize,
    #[serde(default)]
    pub extra_inputs: usize,
    pub layers: Vec<ConvLayerSpec>,
    pub head_width: usize,
    pub head_activation: Activation,
}

impl ConvEncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != 3 {
            return Err(Error::config(format!(
                "conv encoder needs exactly 3 conv layers, got {}",
                self.layers.len()
            )));
        }
        let (mut h, mut w) = (self.in_h, self.in_w);
        for l in &self.layers {
            if l.filters == 0 || l.kernel == 0 || l.stride == 0 || l.kernel > h || l.kernel > w {
                return Err(Error::config(format!("conv layer {l:?} does not fit a {h}x{w} map")));
            }
            h = (h - l.kernel) / l.stride + 1;
            w = (w - l.kernel) / l.stride + 1;
        }
        if self.head_width == 0 || self.in_channels == 0 {
            return Err(Error::config("conv encoder widths must be >= 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.in_h * self.in_w * self.in_channels + self.extra_inputs
    }

    fn geoms(&self) -> Vec<ConvGeom> {
        let (mut h, mut w, mut c) = (self.in_h, self.in_w, self.in_channels);
        let mut out = Vec::new();
        for l in &self.layers {
            let g = ConvGeom {
                in_h: h,
                in_w: w,
                in_channels: c,
                filters: l.filters,
                kernel: l.kernel,
                stride: l.stride,
            };
            (h, w) = g.out_hw();
            c = l.filters;
            out.push(g);
        }
        out
    }

    /// Width of the flattened feature map plus extra inputs.
    pub fn flat_dim(&self) -> usize {
        let g = *self.geoms().last().expect("3 layers");
        let (h, w) = g.out_hw();
        h * w * g.filters + self.extra_inputs
    }
}

#[derive(Debug, Clone)]
pub struct ConvEncoder {
    spec: ConvEncoderSpec,
    geoms: Vec<ConvGeom>,
    convs: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
}

impl ConvEncoder {
    pub fn init<R: Rng + ?Sized>(
        spec: &ConvEncoderSpec,
        store: &mut ParameterStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let geoms = spec.geoms();
        let mut convs = Vec::new();
        for (i, g) in geoms.iter().enumerate() {
            let patch = g.kernel * g.kernel * g.in_channels;
            let w = store.insert(
                &format!("{prefix}.conv{i}.w"),
                orthogonal(patch, g.filters, core::f64::consts::SQRT_2, rng),
            )?;
            let b = store.insert(&format!("{prefix}.conv{i}.b"), TensorBuf::zeros(&[1, g.filters]))?;
            convs.push((w, b));
        }
        let flat = spec.flat_dim();
        let hw = store.insert(
            &format!("{prefix}.fc.w"),
            orthogonal(flat, spec.head_width, spec.head_activation.gain(), rng),
        )?;
        let hb = store.insert(&format!("{prefix}.fc.b"), TensorBuf::zeros(&[1, spec.head_width]))?;
        Ok(Self {
            spec: spec.clone(),
            geoms,
            convs,
            head: (hw, hb),
        })
    }

    pub fn bind(spec: &ConvEncoderSpec, store: &ParameterStore, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let geoms = spec.geoms();
        let mut convs = Vec::new();
        for (i, g) in geoms.iter().enumerate() {
            let w = store.id(&format!("{prefix}.conv{i}.w"))?;
            let b = store.id(&format!("{prefix}.conv{i}.b"))?;
            if store.value(w).shape() != [g.kernel * g.kernel * g.in_channels, g.filters] {
                return Err(Error::shape(format!("conv layer {prefix}.conv{i} does not match spec")));
            }
            convs.push((w, b));
        }
        let head = (
            store.id(&format!("{prefix}.fc.w"))?,
            store.id(&format!("{prefix}.fc.b"))?,
        );
        if store.value(head.0).shape() != [spec.flat_dim(), spec.head_width] {
            return Err(Error::shape(format!("{prefix}.fc does not match spec")));
        }
        Ok(Self {
            spec: spec.clone(),
            geoms,
            convs,
            head,
        })
    }

    pub fn spec(&self) -> &ConvEncoderSpec {
        &self.spec
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: NodeId, trainable: bool) -> Result<NodeId> {
        let image_dim = self.spec.in_h * self.spec.in_w * self.spec.in_channels;
        if g.value(x).cols() != self.spec.input_dim() {
            return Err(Error::shape(format!(
                "conv encoder expects {} inputs, got {}",
                self.spec.input_dim(),
                g.value(x).cols()
            )));
        }
        let bind = |g: &mut Graph, id| {
            if trainable {
                g.param(store, id)
            } else {
                g.frozen_param(store, id)
            }
        };
        let (mut h, extra) = if self.spec.extra_inputs > 0 {
            (
                g.slice_cols(x, 0, image_dim)?,
                Some(g.slice_cols(x, image_dim, self.spec.extra_inputs)?),
            )
        } else {
            (x, None)
        };
        for (geom, &(w, b)) in self.geoms.iter().zip(&self.convs) {
            let wn = bind(g, w);
            let bn = bind(g, b);
            let y = g.conv2d(h, wn, bn, *geom)?;
            h = g.relu(y);
        }
        if let Some(e) = extra {
            h = g.concat_cols(&[h, e])?;
        }
        let wn = bind(g, self.head.0);
        let bn = bind(g, self.head.1);
        let y = g.linear(h, wn, bn)?;
        Ok(self.spec.head_activation.apply(g, y))
    }

    pub fn eval(&self, store: &ParameterStore, input: &TensorBuf) -> Result<TensorBuf> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, store, x, false)?;
        Ok(g.value(y).clone())
    }
}

/// `rows x dim` table of learnable key embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Rows drawn uniformly on the unit sphere, optionally overridden per row.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        preset: &[Option<Vec<f64>>],
        rng: &mut R,
    ) -> Result<Self> {
        let rows = preset.len();
        let mut table = unit_sphere_rows(rows, dim, rng);
        for (i, p) in preset.iter().enumerate() {
            if let Some(v) = p {
                if v.len() != dim {
                    return Err(Error::Layout(format!(
                        "key {i} has dimension {}, actor uses d_k = {dim}",
                        v.len()
                    )));
                }
                table.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(v);
            }
        }
        let id = store.insert(name, table)?;
        Ok(Self { id, rows, dim })
    }

    pub fn row(&self, store: &ParameterStore, i: usize) -> Vec<f64> {
        store.value(self.id).row_slice(i).to_vec()
    }

    pub fn name(&self, store: &ParameterStore) -> String {
        store.get(self.id).name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::matmul_naive;
    use crate::rng::seeded;
    use alloc::vec;

    #[test]
    fn identity_network_passes_input_through() {
        let spec = MlpSpec::new(2, &[], 2);
        let mut store = ParameterStore::new();
        let mlp = Mlp::init(&spec, &mut store, "m", &mut seeded(0)).unwrap();
        *store.value_mut(store.id("m.l0.w").unwrap()) = TensorBuf::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let y = mlp.eval(&store, &TensorBuf::matrix(1, 2, vec![3.0, -1.0])).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);
    }

    #[test]
    fn relu_dead_zone_clamps() {
        let spec = MlpSpec::new(1, &[(1, Activation::Relu)], 1);
        let mut store = ParameterStore::new();
        let mlp = Mlp::init(&spec, &mut store, "m", &mut seeded(0)).unwrap();
        for (name, v) in [("m.l0.w", 1.0), ("m.l0.b", -2.0), ("m.l1.w", 1.0), ("m.l1.b", 0.0)] {
            *store.value_mut(store.id(name).unwrap()) = TensorBuf::matrix(1, 1, vec![v]);
        }
        let y = mlp.eval(&store, &TensorBuf::matrix(1, 1, vec![1.0])).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn random_mlp_matches_dense_algebra_oracle() {
        let spec = MlpSpec::new(4, &[(8, Activation::Relu)], 3);
        let mut store = ParameterStore::new();
        let mut rng = seeded(11);
        let mlp = Mlp::init(&spec, &mut store, "m", &mut rng).unwrap();
        // non-zero biases so they are exercised too
        for name in ["m.l0.b", "m.l1.b"] {
            let id = store.id(name).unwrap();
            let n = store.value(id).len();
            *store.value_mut(id) = TensorBuf::matrix(1, n, (0..n).map(|i| 0.1 * i as f64 - 0.3).collect());
        }
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.77).sin()).collect();
        let got = mlp.eval(&store, &TensorBuf::matrix(3, 4, x.clone())).unwrap();

        let w0 = store.by_name("m.l0.w").unwrap().data();
        let b0 = store.by_name("m.l0.b").unwrap().data();
        let w1 = store.by_name("m.l1.w").unwrap().data();
        let b1 = store.by_name("m.l1.b").unwrap().data();
        let mut h = matmul_naive(3, 4, 8, &x, w0);
        for (i, v) in h.iter_mut().enumerate() {
            *v = (*v + b0[i % 8]).max(0.0);
        }
        let mut y = matmul_naive(3, 8, 3, &h, w1);
        for (i, v) in y.iter_mut().enumerate() {
            *v += b1[i % 3];
        }
        for (a, b) in got.data().iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let spec = MlpSpec::relu(3, 1, 4, 2);
        let mut store = ParameterStore::new();
        let mlp = Mlp::init(&spec, &mut store, "m", &mut seeded(0)).unwrap();
        assert!(matches!(
            mlp.eval(&store, &TensorBuf::matrix(1, 2, vec![0.0, 0.0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_spec_requires_three_layers() {
        let mut spec = ConvEncoderSpec {
            in_h: 5,
            in_w: 5,
            in_channels: 3,
            extra_inputs: 1,
            layers: vec![
                ConvLayerSpec {
                    filters: 4,
                    kernel: 2,
                    stride: 1
                };
                3
            ],
            head_width: 8,
            head_activation: Activation::Tanh,
        };
        assert!(spec.validate().is_ok());
        assert_eq!(spec.flat_dim(), 2 * 2 * 4 + 1);
        spec.layers.pop();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn deterministic_forward() {
        let spec = ConvEncoderSpec {
            in_h: 5,
            in_w: 5,
            in_channels: 3,
            extra_inputs: 1,
            layers: vec![
                ConvLayerSpec {
                    filters: 4,
                    kernel: 2,
                    stride: 1
                };
                3
            ],
            head_width: 8,
            head_activation: Activation::Tanh,
        };
        let mut store = ParameterStore::new();
        let enc = ConvEncoder::init(&spec, &mut store, "enc", &mut seeded(2)).unwrap();
        let x = TensorBuf::matrix(2, 76, (0..152).map(|i| (i % 3) as f64).collect());
        let a = enc.eval(&store, &x).unwrap();
        let b = enc.eval(&store, &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[2, 8]);
    }
}
