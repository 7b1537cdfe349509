//! Adversarial training: multi-scale patch discriminator, hinge losses,
//! feature matching, Adam, and the training loop.

mod adam;
mod discriminator;
mod loss;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use discriminator::{
    discriminator_backward, discriminator_forward, DiscCache, DiscGrads, DiscOutput,
    DiscriminatorConfig, DiscriminatorParams, ScaleOutput,
};
pub use loss::{
    feature_matching_grads, feature_matching_loss, hinge_d_grads, hinge_d_loss, hinge_g_grads,
    hinge_g_loss, reconstruction_grads, reconstruction_loss,
};
pub use train::{run_training, train_step, StepLosses, TrainOptions, TrainState};
