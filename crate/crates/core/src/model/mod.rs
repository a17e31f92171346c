//! The distilling-with-residual network.
//!
//! Dataflow for an input `I` with `3` channels:
//!
//! ```text
//! Y0   = conv3x3(I)                       3 -> C
//! Yg   = ELU(Fp(RDB_K(..RDB_1(Yg-1)..))) + Yg-1     for g = 1..G
//! Ydf  = Y0 + YG
//! out  = conv3x3(pixel_shuffle(conv3x3(Ydf), M))    C -> C*M*M -> C -> 3
//! ```

pub mod blocks;
pub mod checkpoint;
mod params;

use serde::{Deserialize, Serialize};

pub use blocks::{Block, BlockTrace, ConvLayer, Group, GroupTrace, RdUnit, RdUnitTrace};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use params::{Param, ParamStore};

use crate::tensor::{self, Axis, ConvSpec, Scalar, Tensor, TensorError};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrnConfig {
    /// Upscaling factor `M`.
    pub scale: usize,
    /// Base feature width `C`; also the RD-unit bottleneck width.
    pub base_channels: usize,
    /// Residual-distilling groups `G`.
    pub groups: usize,
    /// Blocks per group `K`.
    pub blocks_per_group: usize,
    /// RD units per block `L`.
    pub rd_units_per_block: usize,
    /// Channels appended by every RD unit `d`.
    pub distill_width: usize,
    pub elu_alpha: f64,
    /// Close every block with a 1x1 fusion back to `C` channels. When off,
    /// width keeps growing through a group and only the group compression
    /// restores it.
    pub per_block_fusion: bool,
    /// Replace each block body with plain 3x3 convolutions (ablation arm).
    pub ablate_rdb: bool,
}

impl Default for DrnConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            base_channels: 64,
            groups: 6,
            blocks_per_group: 9,
            rd_units_per_block: 2,
            distill_width: 8,
            elu_alpha: 0.2,
            per_block_fusion: true,
            ablate_rdb: false,
        }
    }
}

impl DrnConfig {
    /// The wide variant: 256 base filters, everything else default.
    pub fn plus() -> Self {
        Self {
            base_channels: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("scale", self.scale),
            ("base_channels", self.base_channels),
            ("groups", self.groups),
            ("blocks_per_group", self.blocks_per_group),
            ("rd_units_per_block", self.rd_units_per_block),
            ("distill_width", self.distill_width),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(ModelError::InvalidConfig {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
        }
        if !(self.elu_alpha.is_finite() && self.elu_alpha > 0.0) {
            return Err(ModelError::InvalidConfig {
                field: "elu_alpha",
                reason: format!("must be a positive finite number, got {}", self.elu_alpha),
            });
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {field} {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backward called before a recorded forward pass")]
    BackwardBeforeForward,
}

/// Activations recorded by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct DrnTrace<T> {
    input: Tensor<T>,
    groups: Vec<GroupTrace<T>>,
    features: Tensor<T>,
    shuffled: Tensor<T>,
    output_shape: tensor::Shape,
}

impl<T: Scalar> DrnTrace<T> {
    /// Pre-reconstruction feature `Y0 + Y_G`.
    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }
}

/// The network: its configuration, the parameter table, and the layer graph
/// indexing into it.
#[derive(Debug, Clone)]
pub struct Drn<T = f32> {
    config: DrnConfig,
    params: ParamStore<T>,
    lfe: ConvLayer,
    groups: Vec<Group>,
    head_up: ConvLayer,
    head_out: ConvLayer,
    trace: Option<DrnTrace<T>>,
}

impl<T: Scalar> Drn<T> {
    /// Builds the layer graph with all parameters zero.
    pub fn new(config: DrnConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config.base_channels;
        let a = config.elu_alpha;
        let mut store = ParamStore::new();
        let lfe = ConvLayer::register(&mut store, "lfe", 3, c, ConvSpec::SAME3);
        let mut groups = Vec::with_capacity(config.groups);
        for g in 1..=config.groups {
            let mut blocks = Vec::with_capacity(config.blocks_per_group);
            let mut width = c;
            for k in 1..=config.blocks_per_group {
                let name = format!("g{g}.b{k}");
                let block = if config.ablate_rdb {
                    Block::register_plain(&mut store, &name, width, config.rd_units_per_block, a)
                } else {
                    Block::register_distill(
                        &mut store,
                        &name,
                        width,
                        c,
                        config.rd_units_per_block,
                        config.distill_width,
                        config.per_block_fusion,
                        a,
                    )
                };
                width = block.out_channels();
                blocks.push(block);
            }
            let compress = ConvLayer::register(
                &mut store,
                &format!("g{g}.compress"),
                width,
                c,
                ConvSpec::POINTWISE,
            );
            groups.push(Group::new(blocks, compress, c, a));
        }
        let m2 = config.scale * config.scale;
        let head_up = ConvLayer::register(&mut store, "head.up", c, c * m2, ConvSpec::SAME3);
        let head_out = ConvLayer::register(&mut store, "head.out", c, 3, ConvSpec::SAME3);
        Ok(Self {
            config,
            params: store,
            lfe,
            groups,
            head_up,
            head_out,
            trace: None,
        })
    }

    /// Builds and He-initializes in one go.
    pub fn with_seed(config: DrnConfig, seed: u64) -> Result<Self, ModelError> {
        let mut m = Self::new(config)?;
        m.init_params(seed);
        Ok(m)
    }

    pub fn config(&self) -> &DrnConfig {
        &self.config
    }

    pub fn scale(&self) -> usize {
        self.config.scale
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn head(&self) -> (&ConvLayer, &ConvLayer) {
        (&self.head_up, &self.head_out)
    }

    pub fn lfe(&self) -> &ConvLayer {
        &self.lfe
    }

    /// He fan-in normal kernels, zero biases; see [`ParamStore::init_he`].
    pub fn init_params(&mut self, seed: u64) {
        self.params.init_he(seed);
        self.trace = None;
    }

    /// Total trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Replaces the parameter table with one of identical layout.
    pub fn replace_params(&mut self, params: ParamStore<T>) -> Result<(), ModelError> {
        let same_layout = params.len() == self.params.len()
            && params
                .iter()
                .zip(self.params.iter())
                .all(|(a, b)| a.name() == b.name() && a.dims() == b.dims());
        if !same_layout {
            return Err(ModelError::InvalidConfig {
                field: "params",
                reason: "parameter layout does not match the model configuration".into(),
            });
        }
        self.params = params;
        self.trace = None;
        Ok(())
    }

    /// Element-type conversion of the whole model.
    pub fn cast<U: Scalar>(&self) -> Drn<U> {
        Drn {
            config: self.config.clone(),
            params: self.params.cast(),
            lfe: self.lfe.clone(),
            groups: self.groups.clone(),
            head_up: self.head_up.clone(),
            head_out: self.head_out.clone(),
            trace: None,
        }
    }

    /// Pure forward pass returning the output and the trace for backward.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, DrnTrace<T>), ModelError> {
        if input.shape().c != 3 {
            return Err(TensorError::DimMismatch {
                op: "drn_forward",
                axis: Axis::Channel,
                expected: 3,
                found: input.shape().c,
            }
            .into());
        }
        let p = &self.params;
        let y0 = self.lfe.forward(p, input)?;
        let mut y = y0.clone();
        let mut group_traces = Vec::with_capacity(self.groups.len());
        for group in &self.groups {
            let (next, t) = group.forward(p, &y)?;
            group_traces.push(t);
            y = next;
        }
        let features = tensor::add(&y0, &y)?;
        let up = self.head_up.forward(p, &features)?;
        let shuffled = tensor::pixel_shuffle(&up, self.config.scale)?;
        let out = self.head_out.forward(p, &shuffled)?;
        let trace = DrnTrace {
            input: input.clone(),
            groups: group_traces,
            features,
            shuffled,
            output_shape: out.shape(),
        };
        Ok((out, trace))
    }

    /// Forward pass without keeping a trace.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.forward(input).map(|(out, _)| out)
    }

    /// Forward pass that keeps its trace for a later [`backward`](Self::backward).
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let (out, trace) = self.forward(input)?;
        self.trace = Some(trace);
        Ok(out)
    }

    /// Backpropagates through the last [`forward_train`](Self::forward_train)
    /// and returns the input gradient. Parameter gradients are added to the
    /// parameter table, so callers zero them between steps.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let trace = self.trace.take().ok_or(ModelError::BackwardBeforeForward)?;
        let result = self.backward_with(&trace, grad_out);
        self.trace = Some(trace);
        result
    }

    /// Backpropagates through an explicit trace; returns the input gradient.
    pub fn backward_with(
        &mut self,
        trace: &DrnTrace<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>, ModelError> {
        trace
            .output_shape
            .expect_eq(&grad_out.shape(), "drn_backward")?;
        let p = &mut self.params;
        let g_shuffled = self.head_out.backward(p, &trace.shuffled, grad_out)?;
        let g_up = tensor::pixel_shuffle_backward(&g_shuffled, self.config.scale)?;
        let g_features = self.head_up.backward(p, &trace.features, &g_up)?;
        // Ydf = Y0 + YG: both operands receive the same gradient.
        let (g_y0_direct, mut g) = tensor::add_backward(&g_features);
        for (group, t) in self.groups.iter().zip(&trace.groups).rev() {
            g = group.backward(p, t, &g)?;
        }
        g.add_assign(&g_y0_direct)?;
        Ok(self.lfe.backward(p, &trace.input, &g)?)
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }
}

/// Parameter count of the layer list implied by `config`, computed without
/// building the model.
pub fn expected_param_count(config: &DrnConfig) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    let c = config.base_channels;
    let d = config.distill_width;
    let mut total = conv(3, c, 3);
    for _ in 0..config.groups {
        let mut width = c;
        for _ in 0..config.blocks_per_group {
            if config.ablate_rdb {
                total += config.rd_units_per_block * conv(c, c, 3);
                continue;
            }
            let mut ch = width;
            for _ in 0..config.rd_units_per_block {
                total += conv(ch, c, 1) + conv(c, c, 3) + conv(c, ch + d, 1);
                ch += d;
            }
            if config.per_block_fusion {
                total += conv(ch, width, 1);
            } else {
                width = ch;
            }
        }
        total += conv(width, c, 1);
    }
    let m2 = config.scale * config.scale;
    total + conv(c, c * m2, 3) + conv(c, 3, 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn tiny() -> DrnConfig {
        DrnConfig {
            scale: 2,
            base_channels: 8,
            groups: 1,
            blocks_per_group: 1,
            rd_units_per_block: 1,
            distill_width: 2,
            ..DrnConfig::default()
        }
    }

    #[test]
    fn rejects_zero_fields_by_name() {
        for field in ["scale", "distill_width", "groups"] {
            let mut cfg = tiny();
            match field {
                "scale" => cfg.scale = 0,
                "distill_width" => cfg.distill_width = 0,
                _ => cfg.groups = 0,
            }
            match Drn::<f32>::new(cfg) {
                Err(ModelError::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected rejection of {field}, got {other:?}"),
            }
        }
        let cfg = DrnConfig {
            elu_alpha: -1.0,
            ..tiny()
        };
        assert!(Drn::<f32>::new(cfg).is_err());
    }

    #[test]
    fn smallest_instance_runs() {
        let cfg = DrnConfig {
            groups: 1,
            blocks_per_group: 1,
            rd_units_per_block: 1,
            ..tiny()
        };
        let m = Drn::<f32>::with_seed(cfg, 0).unwrap();
        let x = Tensor::full(Shape::new(1, 3, 8, 8), 0.5).unwrap();
        assert_eq!(m.infer(&x).unwrap().shape(), Shape::new(1, 3, 16, 16));
    }

    #[test]
    fn default_layout_enumerates_every_layer() {
        let cfg = DrnConfig::default();
        let m = Drn::<f32>::new(cfg.clone()).unwrap();
        let names: Vec<&str> = m.params().names().collect();
        let count = |pat: &dyn Fn(&str) -> bool| names.iter().filter(|n| pat(n)).count();
        let (g, k, l) = (cfg.groups, cfg.blocks_per_group, cfg.rd_units_per_block);
        // Each conv contributes a weight and a bias.
        assert_eq!(count(&|n| n.ends_with(".conv1.weight")), g * k * l);
        assert_eq!(count(&|n| n.ends_with(".fuse.weight")), g * k);
        assert_eq!(count(&|n| n.ends_with(".compress.weight")), g);
        assert_eq!(names.len(), 2 * (3 * g * k * l + g * k + g + 3));
        assert!(names.contains(&"g2.b5.u1.conv3.weight"));
        assert_eq!(names[0], "lfe.weight");
        assert_eq!(names[names.len() - 1], "head.out.bias");
        assert_eq!(m.param_count(), expected_param_count(&cfg));
    }

    #[test]
    fn layout_is_a_function_of_config() {
        let a = Drn::<f32>::new(DrnConfig::default()).unwrap();
        let b = Drn::<f64>::new(DrnConfig::default()).unwrap();
        assert!(a.params().names().eq(b.params().names()));
    }

    #[test]
    fn backward_needs_forward() {
        let mut m = Drn::<f32>::with_seed(tiny(), 1).unwrap();
        let g = Tensor::zeros(Shape::new(1, 3, 8, 8)).unwrap();
        assert!(matches!(
            m.backward(&g),
            Err(ModelError::BackwardBeforeForward)
        ));
    }

    #[test]
    fn rejects_non_rgb_input() {
        let m = Drn::<f32>::with_seed(tiny(), 1).unwrap();
        let x = Tensor::zeros(Shape::new(1, 1, 4, 4)).unwrap();
        assert!(m.infer(&x).is_err());
    }

    #[test]
    fn without_block_fusion_width_grows_through_the_group() {
        let cfg = DrnConfig {
            per_block_fusion: false,
            blocks_per_group: 2,
            rd_units_per_block: 2,
            ..tiny()
        };
        let m = Drn::<f64>::with_seed(cfg.clone(), 3).unwrap();
        let compress = &m.groups()[0].compress;
        assert_eq!(compress.c_in, 8 + 2 * 2 * 2);
        assert_eq!(m.param_count(), expected_param_count(&cfg));
        let x = Tensor::full(Shape::new(1, 3, 5, 5), 0.3).unwrap();
        assert_eq!(m.infer(&x).unwrap().shape(), Shape::new(1, 3, 10, 10));
    }
}
