//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Every minibatch builds a fresh [`Tape`]: parameters are registered as
//! leaves, the forward pass appends one node per primitive, and
//! [`Tape::backward`] replays the record in reverse to fill leaf gradients.

mod tape;
mod tensor;

use serde::{Deserialize, Serialize};

pub use tape::{Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "identity" | "linear" => Ok(Self::Identity),
            other => Err(crate::error::config(format!("unknown activation `{other}`"))),
        }
    }
}
