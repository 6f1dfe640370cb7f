use std::ops::Range;
use std::sync::Arc;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{ModelShape, PredictorConfig, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Dense weight or embedding table; Glorot-uniform initialized.
    Weight,
    Bias,
    /// Layer-norm gain, initialized to one.
    Gain,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: BlockKind,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named blocks of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    pub fn new(config: &PredictorConfig, shape: &ModelShape) -> Result<Self> {
        config.validate()?;
        shape.validate()?;
        let h = config.hidden_dim;
        let d = shape.feature_dim;
        let mut b = Builder::default();
        b.push("time.w1", h, h, BlockKind::Weight);
        b.push("time.b1", 1, h, BlockKind::Bias);
        b.push("time.w2", h, h, BlockKind::Weight);
        b.push("time.b2", 1, h, BlockKind::Bias);
        b.push("cond.table", shape.condition_rows, h, BlockKind::Weight);
        b.push("input.w", d, h, BlockKind::Weight);
        b.push("input.b", 1, h, BlockKind::Bias);
        if config.positional_encoding {
            b.push("pos.table", config.max_frames, h, BlockKind::Weight);
        }
        match config.variant {
            Variant::FrameMlp => {
                for l in 0..config.layer_count {
                    b.push(&format!("mlp.{l}.w"), h, h, BlockKind::Weight);
                    b.push(&format!("mlp.{l}.b"), 1, h, BlockKind::Bias);
                }
            }
            Variant::AttentionEncoder => {
                let f = config.ff_dim;
                for l in 0..config.layer_count {
                    let p = format!("attn.{l}");
                    b.push(&format!("{p}.ln1.g"), 1, h, BlockKind::Gain);
                    b.push(&format!("{p}.ln1.b"), 1, h, BlockKind::Bias);
                    for m in ["q", "k", "v", "o"] {
                        b.push(&format!("{p}.w{m}"), h, h, BlockKind::Weight);
                        b.push(&format!("{p}.b{m}"), 1, h, BlockKind::Bias);
                    }
                    b.push(&format!("{p}.ln2.g"), 1, h, BlockKind::Gain);
                    b.push(&format!("{p}.ln2.b"), 1, h, BlockKind::Bias);
                    b.push(&format!("{p}.ff1.w"), h, f, BlockKind::Weight);
                    b.push(&format!("{p}.ff1.b"), 1, f, BlockKind::Bias);
                    b.push(&format!("{p}.ff2.w"), f, h, BlockKind::Weight);
                    b.push(&format!("{p}.ff2.b"), 1, h, BlockKind::Bias);
                }
                b.push("final_ln.g", 1, h, BlockKind::Gain);
                b.push("final_ln.b", 1, h, BlockKind::Bias);
            }
        }
        b.push("output.w", h, d, BlockKind::Weight);
        b.push("output.b", 1, d, BlockKind::Bias);
        Ok(ParamLayout {
            total: b.offset,
            blocks: b.blocks,
        })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> &ParamBlock {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .unwrap_or_else(|| panic!("no parameter block named {name}"))
    }

    pub fn find(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn range(&self, name: &str) -> Range<usize> {
        self.block(name).range()
    }
}

#[derive(Default)]
struct Builder {
    blocks: Vec<ParamBlock>,
    offset: usize,
}

impl Builder {
    fn push(&mut self, name: &str, rows: usize, cols: usize, kind: BlockKind) {
        self.blocks.push(ParamBlock {
            name: name.to_string(),
            rows,
            cols,
            kind,
            offset: self.offset,
        });
        self.offset += rows * cols;
    }
}

/// All learnable parameters as one flat vector with a named block view.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl PredictorParams {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero,
    /// layer-norm gains one.
    pub fn init(config: &PredictorConfig, shape: &ModelShape, rng: &mut Rng) -> Result<Self> {
        let layout = ParamLayout::new(config, shape)?;
        let mut values = vec![0.0; layout.total()];
        for b in layout.blocks() {
            let slot = &mut values[b.range()];
            match b.kind {
                BlockKind::Weight => {
                    let limit = (6.0 / (b.rows + b.cols) as f64).sqrt();
                    for v in slot {
                        *v = rng.gen_range(-limit..limit);
                    }
                }
                BlockKind::Bias => {}
                BlockKind::Gain => slot.fill(1.0),
            }
        }
        Ok(PredictorParams {
            layout: Arc::new(layout),
            values,
        })
    }

    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Shape(format!(
                "{} parameter values for a layout of {}",
                values.len(),
                layout.total()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(PredictorParams {
            layout: Arc::new(layout),
            values,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn block(&self, name: &str) -> &[f64] {
        &self.values[self.layout.range(name)]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.layout.range(name);
        &mut self.values[r]
    }
}

/// Number of scalars in a freshly initialized parameter set.
pub fn count_params(config: &PredictorConfig, shape: &ModelShape) -> Result<usize> {
    Ok(ParamLayout::new(config, shape)?.total())
}
