//! Minimal differentiable operator kernel.
//!
//! Each operator is a pair of functions: a forward pass returning the output
//! (and a cache where needed) and a backward pass that returns the input
//! gradient while accumulating parameter gradients into a caller-supplied
//! structure of the same type as the parameters. There is no tape; the model
//! code chains backward calls explicitly.

mod attention;
mod batchnorm;
mod checkpoint;
mod gradcheck;
mod gru;
mod loss;
pub mod ops;
mod optim;
pub mod params;
mod tensor;

pub use attention::{
    pooled_projection, pooled_projection_backward, self_attention_residual, self_attention_residual_backward, AttentionCache,
    AttentionParams,
};
pub use batchnorm::{
    batchnorm_relu_maxpool_backward, batchnorm_relu_maxpool_eval, batchnorm_relu_maxpool_train, BatchNorm, BatchStats, BlockCache,
    BnCache, BN_EPS, BN_MOMENTUM, POOL_WINDOW,
};
pub use checkpoint::{Checkpoint, CheckpointEntry, Dtype, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_sampled, rel_error, GradCheckReport, GradFailure, REL_ERR_FLOOR};
pub use gru::{gru_backward, gru_forward, GruCache, GruParams};
pub use loss::{softmax_cross_entropy, CrossEntropy, PROB_FLOOR};
pub use optim::{Adam, AdamConfig};
pub use params::Parameters;
pub use tensor::Tensor;

impl Parameters for Tensor {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(prefix.to_string(), self);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(prefix.to_string(), self);
    }
}
