use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    /// tanh approximation of GELU.
    GeluTanhApprox,
    Sigmoid,
    Identity,
    /// `sigmoid(x) - 0.5`, an odd function through the origin.
    SigmoidCentered,
}

const GELU_K: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_C: f32 = 0.044_715;

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationKind {
    pub fn eval(self, x: f32) -> f32 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::GeluTanhApprox => {
                0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
            }
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Identity => x,
            ActivationKind::SigmoidCentered => {
                // tanh(x/2)/2 == sigmoid(x) - 0.5, exactly odd in float arithmetic
                0.5 * (0.5 * x).tanh()
            }
        }
    }

    /// df/dx at `x`.
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::GeluTanhApprox => {
                let u = GELU_K * (x + GELU_C * x * x * x);
                let t = u.tanh();
                let du = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Identity => 1.0,
            ActivationKind::SigmoidCentered => {
                let t = (0.5 * x).tanh();
                0.25 * (1.0 - t * t)
            }
        }
    }
}

pub fn activation_apply(input: &Tensor, kind: ActivationKind) -> Tensor {
    if kind == ActivationKind::Identity {
        return input.clone();
    }
    input.map(|v| kind.eval(v))
}
