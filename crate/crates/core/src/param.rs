use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Block membership of a parameter: one of the backbone blocks `b1..bM`
/// (1-based) or the classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockTag {
    Backbone(usize),
    Head,
}

impl BlockTag {
    pub fn is_head(self) -> bool {
        matches!(self, BlockTag::Head)
    }
}

impl fmt::Display for BlockTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockTag::Backbone(i) => write!(f, "b{i}"),
            BlockTag::Head => f.write_str("head"),
        }
    }
}

impl FromStr for BlockTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "head" {
            return Ok(BlockTag::Head);
        }
        s.strip_prefix('b')
            .and_then(|rest| rest.parse::<usize>().ok())
            .filter(|&i| i >= 1)
            .map(BlockTag::Backbone)
            .ok_or_else(|| Error::Spec(format!("invalid block tag {s:?}")))
    }
}

impl Serialize for BlockTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A named weight array with its gradient, trainability and optional
/// starting-point anchor.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub id: String,
    pub block: BlockTag,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
    pub anchor: Option<Tensor>,
}

impl Parameter {
    pub fn new(id: impl Into<String>, block: BlockTag, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            id: id.into(),
            block,
            value,
            grad,
            trainable: true,
            anchor: None,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Snapshots the current value as the starting point.
    pub fn set_anchor(&mut self) {
        self.anchor = Some(self.value.clone());
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::dim(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.id,
                self.value.shape(),
                value.shape()
            )));
        }
        self.value = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_tag_round_trip_and_order() {
        for tag in [BlockTag::Backbone(1), BlockTag::Backbone(12), BlockTag::Head] {
            assert_eq!(tag.to_string().parse::<BlockTag>().unwrap(), tag);
        }
        assert!("b0".parse::<BlockTag>().is_err());
        assert!("x3".parse::<BlockTag>().is_err());
        assert!(BlockTag::Backbone(9) < BlockTag::Head);
        assert!(BlockTag::Backbone(1) < BlockTag::Backbone(2));
    }
}
