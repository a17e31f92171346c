//! Building blocks of the network: convolution layers bound to parameter
//! slots, residual-distilling units, blocks and groups.
//!
//! Each component registers its parameters in a [`ParamStore`] at
//! construction and afterwards only holds indices into it, so the same
//! component works against any store built the same way. Forward passes
//! return a trace of the activations their backward pass needs; backward
//! passes add parameter gradients into the store and return the gradient
//! with respect to the component input.

use super::params::ParamStore;
use crate::tensor::{self, Axis, ConvSpec, Scalar, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

fn expect_channels<T: Scalar>(op: &'static str, x: &Tensor<T>, expected: usize) -> Result<()> {
    let found = x.shape().c;
    if found != expected {
        return Err(TensorError::DimMismatch {
            op,
            axis: Axis::Channel,
            expected,
            found,
        });
    }
    Ok(())
}

/// A convolution whose kernel and bias live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub spec: ConvSpec,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvLayer {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        spec: ConvSpec,
    ) -> Self {
        let k = spec.kernel;
        let weight = store.register(format!("{name}.weight"), &[c_out, c_in, k, k]);
        let bias = store.register(format!("{name}.bias"), &[c_out]);
        Self {
            weight,
            bias,
            spec,
            c_in,
            c_out,
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::conv2d_forward(
            x,
            store.value(self.weight),
            store.value(self.bias).data(),
            self.spec,
        )
    }

    /// Accumulates kernel and bias gradients; returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let g = tensor::conv2d_backward(grad_out, x, store.value(self.weight), self.spec)?;
        store.accumulate_grad(self.weight, g.weight.data());
        store.accumulate_grad(self.bias, &g.bias);
        Ok(g.input)
    }

    /// Kernel plus bias element count.
    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.spec.kernel * self.spec.kernel + self.c_out
    }
}

/// Residual-distilling unit: a 1x1 -> 3x3 -> 1x1 bottleneck whose output
/// is split into a residual part added back onto the input and `distill`
/// new channels appended after it. `D -> D + distill` channels.
#[derive(Debug, Clone)]
pub struct RdUnit {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub conv3: ConvLayer,
    pub in_channels: usize,
    pub distill: usize,
    alpha: f64,
}

#[derive(Debug, Clone)]
pub struct RdUnitTrace<T> {
    x: Tensor<T>,
    a1: Tensor<T>,
    h1: Tensor<T>,
    a2: Tensor<T>,
    h2: Tensor<T>,
}

impl RdUnit {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        width: usize,
        distill: usize,
        alpha: f64,
    ) -> Self {
        Self {
            conv1: ConvLayer::register(
                store,
                &format!("{name}.conv1"),
                in_channels,
                width,
                ConvSpec::POINTWISE,
            ),
            conv2: ConvLayer::register(
                store,
                &format!("{name}.conv2"),
                width,
                width,
                ConvSpec::SAME3,
            ),
            conv3: ConvLayer::register(
                store,
                &format!("{name}.conv3"),
                width,
                in_channels + distill,
                ConvSpec::POINTWISE,
            ),
            in_channels,
            distill,
            alpha,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.distill
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, RdUnitTrace<T>)> {
        expect_channels("rd_unit_forward", x, self.in_channels)?;
        let alpha = T::from_f64(self.alpha);
        let a1 = self.conv1.forward(store, x)?;
        let h1 = tensor::elu_forward(&a1, alpha);
        let a2 = self.conv2.forward(store, &h1)?;
        let h2 = tensor::elu_forward(&a2, alpha);
        // The projection stays linear: the split happens on its raw output.
        let a3 = self.conv3.forward(store, &h2)?;
        let (residual, distilled) = tensor::split_channels(&a3, self.in_channels)?;
        let out = tensor::concat_channels(&tensor::add(&residual, x)?, &distilled)?;
        let trace = RdUnitTrace {
            x: x.clone(),
            a1,
            h1,
            a2,
            h2,
        };
        Ok((out, trace))
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        trace: &RdUnitTrace<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let alpha = T::from_f64(self.alpha);
        let (g_sum, g_distilled) = tensor::concat_channels_backward(grad_out, self.in_channels)?;
        let (g_residual, g_skip) = tensor::add_backward(&g_sum);
        let g_a3 = tensor::split_channels_backward(&g_residual, &g_distilled)?;
        let g_h2 = self.conv3.backward(store, &trace.h2, &g_a3)?;
        let g_a2 = tensor::elu_backward(&g_h2, &trace.a2, alpha)?;
        let g_h1 = self.conv2.backward(store, &trace.h1, &g_a2)?;
        let g_a1 = tensor::elu_backward(&g_h1, &trace.a1, alpha)?;
        let mut g_x = self.conv1.backward(store, &trace.x, &g_a1)?;
        g_x.add_assign(&g_skip)?;
        Ok(g_x)
    }
}

/// Residual-distilling block, or its plain-convolution control.
#[derive(Debug, Clone)]
pub enum Block {
    /// RD units in series, optionally closed by a 1x1 fusion + ELU back to
    /// the block's base width.
    Distill {
        units: Vec<RdUnit>,
        fusion: Option<ConvLayer>,
        in_channels: usize,
        alpha: f64,
    },
    /// Depth-matched 3x3 + ELU stack with an identity skip.
    Plain {
        convs: Vec<ConvLayer>,
        channels: usize,
        alpha: f64,
    },
}

#[derive(Debug, Clone)]
pub enum BlockTrace<T> {
    Distill {
        units: Vec<RdUnitTrace<T>>,
        fusion: Option<(Tensor<T>, Tensor<T>)>,
    },
    Plain {
        layers: Vec<(Tensor<T>, Tensor<T>)>,
    },
}

impl Block {
    /// A residual-distilling block of `units` RD units starting at
    /// `in_channels`, each bottlenecked at `width`.
    #[allow(clippy::too_many_arguments)]
    pub fn register_distill<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        width: usize,
        units: usize,
        distill: usize,
        fusion: bool,
        alpha: f64,
    ) -> Self {
        let mut rd = Vec::with_capacity(units);
        let mut c = in_channels;
        for u in 1..=units {
            let unit = RdUnit::register(store, &format!("{name}.u{u}"), c, width, distill, alpha);
            c = unit.out_channels();
            assert_eq!(
                c,
                in_channels + u * distill,
                "RD unit {u} of {name} breaks channel growth"
            );
            rd.push(unit);
        }
        let fusion = fusion.then(|| {
            ConvLayer::register(
                store,
                &format!("{name}.fuse"),
                c,
                in_channels,
                ConvSpec::POINTWISE,
            )
        });
        Block::Distill {
            units: rd,
            fusion,
            in_channels,
            alpha,
        }
    }

    pub fn register_plain<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        depth: usize,
        alpha: f64,
    ) -> Self {
        let convs = (1..=depth)
            .map(|l| {
                ConvLayer::register(
                    store,
                    &format!("{name}.plain{l}"),
                    channels,
                    channels,
                    ConvSpec::SAME3,
                )
            })
            .collect();
        Block::Plain {
            convs,
            channels,
            alpha,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Block::Distill { in_channels, .. } => *in_channels,
            Block::Plain { channels, .. } => *channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Block::Distill {
                units,
                fusion,
                in_channels,
                ..
            } => match fusion {
                Some(f) => f.c_out,
                None => units.last().map_or(*in_channels, RdUnit::out_channels),
            },
            Block::Plain { channels, .. } => *channels,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, BlockTrace<T>)> {
        expect_channels("rdb_forward", x, self.in_channels())?;
        match self {
            Block::Distill {
                units,
                fusion,
                alpha,
                ..
            } => {
                let mut h = x.clone();
                let mut traces = Vec::with_capacity(units.len());
                for unit in units {
                    let (next, t) = unit.forward(store, &h)?;
                    traces.push(t);
                    h = next;
                }
                let fusion_trace = match fusion {
                    Some(f) => {
                        let pre = f.forward(store, &h)?;
                        let out = tensor::elu_forward(&pre, T::from_f64(*alpha));
                        let input = std::mem::replace(&mut h, out);
                        Some((input, pre))
                    }
                    None => None,
                };
                Ok((
                    h,
                    BlockTrace::Distill {
                        units: traces,
                        fusion: fusion_trace,
                    },
                ))
            }
            Block::Plain { convs, alpha, .. } => {
                let mut h = x.clone();
                let mut layers = Vec::with_capacity(convs.len());
                for conv in convs {
                    let pre = conv.forward(store, &h)?;
                    let next = tensor::elu_forward(&pre, T::from_f64(*alpha));
                    layers.push((std::mem::replace(&mut h, next), pre));
                }
                Ok((tensor::add(&h, x)?, BlockTrace::Plain { layers }))
            }
        }
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        trace: &BlockTrace<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        match (self, trace) {
            (
                Block::Distill {
                    units,
                    fusion,
                    alpha,
                    ..
                },
                BlockTrace::Distill {
                    units: unit_traces,
                    fusion: fusion_trace,
                },
            ) => {
                let mut g = grad_out.clone();
                if let (Some(f), Some((input, pre))) = (fusion, fusion_trace) {
                    let g_pre = tensor::elu_backward(&g, pre, T::from_f64(*alpha))?;
                    g = f.backward(store, input, &g_pre)?;
                }
                for (unit, t) in units.iter().zip(unit_traces).rev() {
                    g = unit.backward(store, t, &g)?;
                }
                Ok(g)
            }
            (Block::Plain { convs, alpha, .. }, BlockTrace::Plain { layers }) => {
                let mut g = grad_out.clone();
                for (conv, (input, pre)) in convs.iter().zip(layers).rev() {
                    let g_pre = tensor::elu_backward(&g, pre, T::from_f64(*alpha))?;
                    g = conv.backward(store, input, &g_pre)?;
                }
                g.add_assign(grad_out)?;
                Ok(g)
            }
            _ => Err(TensorError::InvalidArgument {
                op: "rdb_backward",
                msg: "trace does not belong to this block kind".into(),
            }),
        }
    }
}

/// Residual-distilling group: `Y = ELU(F_p(blocks(X))) + X`, where `F_p`
/// is a 1x1 compression back to the base width and `+ X` the long skip.
#[derive(Debug, Clone)]
pub struct Group {
    pub blocks: Vec<Block>,
    pub compress: ConvLayer,
    pub channels: usize,
    alpha: f64,
}

#[derive(Debug, Clone)]
pub struct GroupTrace<T> {
    blocks: Vec<BlockTrace<T>>,
    compress_in: Tensor<T>,
    compress_pre: Tensor<T>,
}

impl Group {
    pub fn new(blocks: Vec<Block>, compress: ConvLayer, channels: usize, alpha: f64) -> Self {
        Self {
            blocks,
            compress,
            channels,
            alpha,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, GroupTrace<T>)> {
        expect_channels("rdg_forward", x, self.channels)?;
        let mut h = x.clone();
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, t) = block.forward(store, &h)?;
            traces.push(t);
            h = next;
        }
        let pre = self.compress.forward(store, &h)?;
        let body = tensor::elu_forward(&pre, T::from_f64(self.alpha));
        let out = tensor::add(&body, x)?;
        Ok((
            out,
            GroupTrace {
                blocks: traces,
                compress_in: h,
                compress_pre: pre,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        trace: &GroupTrace<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let (g_body, g_skip) = tensor::add_backward(grad_out);
        let g_pre = tensor::elu_backward(&g_body, &trace.compress_pre, T::from_f64(self.alpha))?;
        let mut g = self.compress.backward(store, &trace.compress_in, &g_pre)?;
        for (block, t) in self.blocks.iter().zip(&trace.blocks).rev() {
            g = block.backward(store, t, &g)?;
        }
        g.add_assign(&g_skip)?;
        Ok(g)
    }
}
