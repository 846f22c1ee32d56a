//! Model interface used by the training loop, plus the bundled toy model.

mod layers;
mod optim;
mod toy;
mod vocab;

pub use optim::AdamW;
pub use toy::{ToyModelConfig, ToyResModel, ToyTape};
pub use vocab::Vocabulary;

use crate::types::{Expression, Image, PredictionMap, ProbGrad};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A referring-segmentation model: (image, expression) -> per-pixel probabilities.
///
/// Parameters are exposed as one flat vector so optimisers, checkpoints and
/// gradient checks need not know the architecture.
pub trait ResModel {
    /// Activations retained by [`ResModel::forward_with_tape`] for the backward pass.
    type Tape;

    /// Forward pass without recording anything for differentiation.
    fn forward(&self, image: &Image, expression: &Expression) -> PredictionMap;

    fn forward_with_tape(&self, image: &Image, expression: &Expression) -> (PredictionMap, Self::Tape);

    /// Adds `d loss / d parameters` to `param_grads`, given `d loss / d probabilities`.
    fn backward(&self, tape: &Self::Tape, grad: &ProbGrad, param_grads: &mut [f64]);

    fn parameters(&self) -> &[f64];

    fn parameters_mut(&mut self) -> &mut [f64];

    fn mode(&self) -> Mode;

    fn set_mode(&mut self, mode: Mode);

    fn num_parameters(&self) -> usize {
        self.parameters().len()
    }
}
