//! Adam, learning-rate schedules, the photometric loss and image metrics.

mod adam;
mod loss;
mod metrics;
mod schedule;

pub use adam::{AdamConfig, CloudLr, CloudOptimizer, NetOptimizer, ParamGroup};
pub use loss::{photometric_loss, LossValue, SSIM_WEIGHT};
pub use metrics::{psnr, ssim, ssim_with_grad};
pub use schedule::exp_lr;
