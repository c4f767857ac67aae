//! Denoisers sharing one evaluation contract.

mod attention;
mod dit;
mod oracle;

pub use attention::{cross_attention_node, frame_level_cross_attention, CrossAttentionWeights};
pub use dit::{DenoiserConfig, Dit};
pub use oracle::OracleDenoiser;

use crate::conditioning::PromptTrack;
use crate::error::Result;
use crate::latent::TimestepVector;
use crate::numerics::{Graph, Matrix, NodeId};

/// Predicts clean latents from noisy ones.
///
/// Implementations must be pure: equal inputs give bit-identical outputs
/// and no call changes observable state.
pub trait Denoiser: Sync {
    /// `z_t` is `F×D`; returns the `F×D` x0 prediction.
    fn evaluate(&self, z_t: &Matrix, t_vec: &TimestepVector, prompts: &PromptTrack) -> Result<Matrix>;

    /// Records the prediction on a tape. Models without trainable
    /// parameters enter as a constant.
    fn record(
        &self,
        g: &mut Graph<'_>,
        z_t: &Matrix,
        t_vec: &TimestepVector,
        prompts: &PromptTrack,
    ) -> Result<NodeId> {
        let out = self.evaluate(z_t, t_vec, prompts)?;
        Ok(g.constant(out))
    }
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn evaluate(&self, z_t: &Matrix, t_vec: &TimestepVector, prompts: &PromptTrack) -> Result<Matrix> {
        (**self).evaluate(z_t, t_vec, prompts)
    }

    fn record(
        &self,
        g: &mut Graph<'_>,
        z_t: &Matrix,
        t_vec: &TimestepVector,
        prompts: &PromptTrack,
    ) -> Result<NodeId> {
        (**self).record(g, z_t, t_vec, prompts)
    }
}
