//! Classifier architectures and the uniform interface attacks depend on.

mod checkpoint;
mod zoo;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use zoo::{build_m_lenet, build_net_a, build_network, build_resnet18, ArchId};

use crate::float::Float;
use crate::nn::loss::{predictions, softmax};
use crate::nn::Network;
use ndarray::{Array2, Array4, ArrayView4};

/// What every attack and evaluation routine needs from a model: the
/// pre-softmax logits g(x), softmax f(x), predicted class c(x), and the
/// gradient of a logit-space objective with respect to the input.
///
/// Implementations must behave as frozen inference-mode models: dropout
/// disabled, batch-norm on stored running statistics.
pub trait Classifier<F: Float>: Sync {
    fn class_count(&self) -> usize;

    /// Pre-softmax logits, shape (batch, classes).
    fn logits_batch(&self, x: &ArrayView4<F>) -> Array2<F>;

    /// d/dx of sum_ij dlogits_ij * g(x)_ij.
    fn input_grad(&self, x: &ArrayView4<F>, dlogits: &Array2<F>) -> Array4<F>;

    /// Fused forward + backward: the callback maps logits to the gradient
    /// of a scalar objective at the logits.
    fn logits_and_input_grad(
        &self,
        x: &ArrayView4<F>,
        dloss: &mut dyn FnMut(&Array2<F>) -> Array2<F>,
    ) -> (Array2<F>, Array4<F>) {
        let logits = self.logits_batch(x);
        let dl = dloss(&logits);
        let g = self.input_grad(x, &dl);
        (logits, g)
    }

    fn probs(&self, x: &ArrayView4<F>) -> Array2<F> {
        softmax(&self.logits_batch(x).view())
    }

    fn predict(&self, x: &ArrayView4<F>) -> Vec<usize> {
        predictions(&self.logits_batch(x).view())
    }
}

impl<F: Float> Classifier<F> for Network<F> {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn logits_batch(&self, x: &ArrayView4<F>) -> Array2<F> {
        self.logits(x)
    }

    fn input_grad(&self, x: &ArrayView4<F>, dlogits: &Array2<F>) -> Array4<F> {
        let (_, caches) = self.forward_eval(x);
        self.backward(&caches, dlogits, None, true)
            .expect("input gradient requested")
    }

    fn logits_and_input_grad(
        &self,
        x: &ArrayView4<F>,
        dloss: &mut dyn FnMut(&Array2<F>) -> Array2<F>,
    ) -> (Array2<F>, Array4<F>) {
        let (logits, caches) = self.forward_eval(x);
        let dl = dloss(&logits);
        let g = self
            .backward(&caches, &dl, None, true)
            .expect("input gradient requested");
        (logits, g)
    }
}
