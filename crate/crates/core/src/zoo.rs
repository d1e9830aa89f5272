//! Miniature backbone families with block-tagged parameters.
//!
//! Every block ends in a 2×2 max pool, so an input needs at least `2^M`
//! pixels per side. Features reach the head through global average pooling.
//!
//! | family     | `b1`                 | `b2..bM`                                   |
//! |------------|----------------------|--------------------------------------------|
//! | MiniVGG    | conv3×3 → relu → pool | same, width = `block_widths[i]`           |
//! | MiniResNet | stem conv → relu → pool | `relu(x + conv(relu(conv(x))))` → pool, width fixed by the stem |
//! | MiniDense  | stem conv → relu → pool | two layers `x = concat(x, relu(conv(x)))` with growth `block_widths[i]` → pool |

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::{BlockTag, Parameter};
use crate::tensor::Tensor;

/// Dense-block depth of MiniDense.
const DENSE_LAYERS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "MiniVGG")]
    MiniVgg,
    #[serde(rename = "MiniResNet")]
    MiniResNet,
    #[serde(rename = "MiniDense")]
    MiniDense,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::MiniVgg, Family::MiniResNet, Family::MiniDense];

    pub fn name(self) -> &'static str {
        match self {
            Family::MiniVgg => "MiniVGG",
            Family::MiniResNet => "MiniResNet",
            Family::MiniDense => "MiniDense",
        }
    }

    pub fn default_widths(self) -> Vec<usize> {
        match self {
            Family::MiniVgg => vec![16, 32, 64, 64],
            Family::MiniResNet => vec![24, 24, 24, 24],
            Family::MiniDense => vec![16, 12, 12, 12],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Spec(format!("unknown model family {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// `[channels, height, width]`
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    /// One entry per backbone block; meaning depends on the family.
    pub block_widths: Vec<usize>,
}

impl ModelSpec {
    pub fn new(family: Family, input_shape: [usize; 3], num_classes: usize) -> Self {
        ModelSpec {
            family,
            input_shape,
            num_classes,
            block_widths: family.default_widths(),
        }
    }

    pub fn mini_vgg(input_shape: [usize; 3], num_classes: usize) -> Self {
        ModelSpec::new(Family::MiniVgg, input_shape, num_classes)
    }

    pub fn mini_resnet(input_shape: [usize; 3], num_classes: usize) -> Self {
        ModelSpec::new(Family::MiniResNet, input_shape, num_classes)
    }

    pub fn mini_dense(input_shape: [usize; 3], num_classes: usize) -> Self {
        ModelSpec::new(Family::MiniDense, input_shape, num_classes)
    }

    pub fn with_widths(mut self, block_widths: Vec<usize>) -> Self {
        self.block_widths = block_widths;
        self
    }

    pub fn num_blocks(&self) -> usize {
        self.block_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_blocks();
        if m < 2 {
            return Err(Error::Spec(format!("need at least 2 blocks, got {m}")));
        }
        if self.num_classes < 2 {
            return Err(Error::Spec(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.block_widths.iter().any(|&w| w == 0) || self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Spec("widths and input dims must be positive".into()));
        }
        let min_side = 1usize << m;
        let [_, h, w] = self.input_shape;
        if h < min_side || w < min_side {
            return Err(Error::Spec(format!(
                "input {h}x{w} too small for {m} pooling stages (need {min_side}x{min_side})"
            )));
        }
        Ok(())
    }

    /// Width of the pooled feature vector fed to the head.
    pub fn feature_dim(&self) -> usize {
        match self.family {
            Family::MiniVgg => *self.block_widths.last().unwrap(),
            Family::MiniResNet => self.block_widths[0],
            Family::MiniDense => {
                self.block_widths[0] + DENSE_LAYERS * self.block_widths[1..].iter().sum::<usize>()
            }
        }
    }

    pub fn blocks(&self) -> Vec<BlockTag> {
        (1..=self.num_blocks())
            .map(BlockTag::Backbone)
            .chain(std::iter::once(BlockTag::Head))
            .collect()
    }

    /// `(id, block, shape)` for every parameter, in canonical order.
    fn layout(&self) -> Vec<(String, BlockTag, Vec<usize>)> {
        let mut out = Vec::new();
        let conv = |out: &mut Vec<_>, name: String, block, f: usize, c: usize| {
            out.push((format!("{name}.weight"), block, vec![f, c, 3, 3]));
            out.push((format!("{name}.bias"), block, vec![f]));
        };
        let c_in = self.input_shape[0];
        let widths = &self.block_widths;
        match self.family {
            Family::MiniVgg => {
                let mut c = c_in;
                for (i, &w) in widths.iter().enumerate() {
                    conv(&mut out, format!("b{}.conv", i + 1), BlockTag::Backbone(i + 1), w, c);
                    c = w;
                }
            }
            Family::MiniResNet => {
                let c = widths[0];
                conv(&mut out, "b1.stem".into(), BlockTag::Backbone(1), c, c_in);
                for i in 2..=widths.len() {
                    let tag = BlockTag::Backbone(i);
                    conv(&mut out, format!("b{i}.conv1"), tag, c, c);
                    conv(&mut out, format!("b{i}.conv2"), tag, c, c);
                }
            }
            Family::MiniDense => {
                let mut c = widths[0];
                conv(&mut out, "b1.stem".into(), BlockTag::Backbone(1), c, c_in);
                for (i, &growth) in widths.iter().enumerate().skip(1) {
                    let tag = BlockTag::Backbone(i + 1);
                    for layer in 1..=DENSE_LAYERS {
                        conv(&mut out, format!("b{}.layer{layer}", i + 1), tag, growth, c);
                        c += growth;
                    }
                }
            }
        }
        out.extend(self.head_layout(self.num_classes));
        out
    }

    fn head_layout(&self, classes: usize) -> [(String, BlockTag, Vec<usize>); 2] {
        [
            (
                "head.weight".into(),
                BlockTag::Head,
                vec![self.feature_dim(), classes],
            ),
            ("head.bias".into(), BlockTag::Head, vec![classes]),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    if shape.len() == 1 {
        return Tensor::zeros(shape);
    }
    let fan_in: usize = if shape.len() == 4 {
        shape[1..].iter().product()
    } else {
        shape[0]
    };
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Builds a model with He-uniform weights and zero biases drawn from `seed`.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spec
        .layout()
        .into_iter()
        .map(|(id, block, shape)| Parameter::new(id, block, he_uniform(&mut rng, &shape)))
        .collect();
    Ok(Model::from_parts(spec.clone(), params))
}

/// Swaps in a freshly initialized head of width `num_classes` and anchors
/// every parameter at its current value.
pub fn replace_head(mut model: Model, num_classes: usize, seed: u64) -> Result<Model> {
    if num_classes < 2 {
        return Err(Error::Spec(format!(
            "head needs at least 2 classes, got {num_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4144);
    let fresh: Vec<Parameter> = model
        .spec
        .head_layout(num_classes)
        .into_iter()
        .map(|(id, block, shape)| Parameter::new(id, block, he_uniform(&mut rng, &shape)))
        .collect();
    model.params.retain(|p| !p.block.is_head());
    model.params.extend(fresh);
    model.spec.num_classes = num_classes;
    for p in &mut model.params {
        p.trainable = true;
        p.set_anchor();
    }
    Ok(Model::from_parts(model.spec, model.params))
}

impl Model {
    pub(crate) fn from_parts(spec: ModelSpec, params: Vec<Parameter>) -> Self {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), i))
            .collect();
        Model {
            spec,
            params,
            index,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, id: &str) -> Option<&Parameter> {
        self.index.get(id).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, id: &str) -> Option<&mut Parameter> {
        self.index.get(id).map(|&i| &mut self.params[i])
    }

    pub fn num_blocks(&self) -> usize {
        self.spec.num_blocks()
    }

    /// True for the convolutions that form residual or dense side branches.
    pub fn is_branch_param(&self, id: &str) -> bool {
        match self.spec.family {
            Family::MiniVgg => false,
            Family::MiniResNet => id.contains(".conv1.") || id.contains(".conv2."),
            Family::MiniDense => id.contains(".layer"),
        }
    }

    /// Zeroes every residual/dense branch weight and bias.
    pub fn zero_branches(&mut self) {
        let ids: Vec<String> = self
            .params
            .iter()
            .map(|p| p.id.clone())
            .filter(|id| self.is_branch_param(id))
            .collect();
        for id in ids {
            if let Some(p) = self.param_mut(&id) {
                p.value.fill(0.0);
            }
        }
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::State(format!(
                "snapshot has {} tensors, model has {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.set_value(v.clone())?;
        }
        Ok(())
    }

    /// Records the forward pass of a `N×C×H×W` batch and returns the logits.
    pub fn forward(&self, tape: &mut Tape, input: Tensor) -> Result<Var> {
        let [c, h, w] = self.spec.input_shape;
        let s = input.shape();
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(Error::dim(format!(
                "model expects N×{c}×{h}×{w} input, got {s:?}"
            )));
        }
        let vars: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p))
            .collect();
        let v = |name: &str| -> Result<Var> {
            self.index
                .get(name)
                .map(|&i| vars[i])
                .ok_or_else(|| Error::State(format!("missing parameter {name}")))
        };
        let conv = |tape: &mut Tape, x: Var, name: &str| -> Result<Var> {
            let k = v(&format!("{name}.weight"))?;
            let b = v(&format!("{name}.bias"))?;
            tape.conv2d(x, k, b, 1, 1)
        };

        let mut x = tape.input(input);
        let m = self.num_blocks();
        match self.spec.family {
            Family::MiniVgg => {
                for i in 1..=m {
                    let y = conv(tape, x, &format!("b{i}.conv"))?;
                    let y = tape.relu(y)?;
                    x = tape.max_pool2x2(y)?;
                }
            }
            Family::MiniResNet => {
                let y = conv(tape, x, "b1.stem")?;
                let y = tape.relu(y)?;
                x = tape.max_pool2x2(y)?;
                for i in 2..=m {
                    let y = conv(tape, x, &format!("b{i}.conv1"))?;
                    let y = tape.relu(y)?;
                    let y = conv(tape, y, &format!("b{i}.conv2"))?;
                    let y = tape.add(x, y)?;
                    let y = tape.relu(y)?;
                    x = tape.max_pool2x2(y)?;
                }
            }
            Family::MiniDense => {
                let y = conv(tape, x, "b1.stem")?;
                let y = tape.relu(y)?;
                x = tape.max_pool2x2(y)?;
                for i in 2..=m {
                    for layer in 1..=DENSE_LAYERS {
                        let y = conv(tape, x, &format!("b{i}.layer{layer}"))?;
                        let y = tape.relu(y)?;
                        x = tape.concat(x, y)?;
                    }
                    x = tape.max_pool2x2(x)?;
                }
            }
        }
        let features = tape.global_avg_pool(x)?;
        tape.dense(features, v("head.weight")?, v("head.bias")?)
    }

    /// Forward pass without keeping the tape.
    pub fn logits(&self, input: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, input)?;
        Ok(tape.value(out).clone())
    }
}
