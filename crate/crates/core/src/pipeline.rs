//! One frame through deform → offsets → rasterizer, and back. Shared by the
//! trainer and the gradient checker so both exercise the same code.

use crate::deform::{apply_offsets, apply_offsets_backward, CloudGrads, DeformCache, DeformGrads, DeformNet, OffsetGrads, Offsets};
use crate::geom::{Camera, GaussianCloud};
use crate::raster::{
    prepare, rasterize_backward, rasterize_forward, ImageBuffer, RasterConfig, RasterWorkspace, SplatGrads, Splats,
};
use crate::real::Real;

#[derive(Clone, Copy, Debug)]
pub struct FrameSetup<'a, T: Real> {
    pub camera: &'a Camera,
    pub time: T,
    /// Added to `time` before encoding.
    pub time_noise: T,
    pub sh_degree: usize,
    pub background: [T; 3],
    pub raster: RasterConfig,
}

/// Forward state needed by [`backward_frame`].
pub struct Frame<T: Real> {
    pub offsets: Option<Offsets<T>>,
    pub cache: Option<DeformCache<T>>,
    pub splats: Splats<T>,
    pub workspace: RasterWorkspace<T>,
    pub image: ImageBuffer<T>,
}

pub struct FrameGrads<T: Real> {
    pub cloud: CloudGrads<T>,
    pub net: Option<DeformGrads<T>>,
    pub offsets: Option<OffsetGrads<T>>,
    pub splats: SplatGrads<T>,
}

/// Renders `cloud` deformed by `net` (identity when `None`).
pub fn forward_frame<T: Real>(cloud: &GaussianCloud<T>, net: Option<&DeformNet<T>>, setup: &FrameSetup<'_, T>) -> Frame<T> {
    let (offsets, cache) = match net {
        Some(net) => {
            let (o, c) = net.forward(&cloud.positions, setup.time, setup.time_noise);
            (Some(o), Some(c))
        }
        None => (None, None),
    };
    let splats = apply_offsets(cloud, offsets.as_ref(), setup.sh_degree);
    let mut workspace = prepare(&splats, setup.camera, &setup.raster);
    let image = rasterize_forward(&mut workspace, setup.background);
    Frame {
        offsets,
        cache,
        splats,
        workspace,
        image,
    }
}

/// Gradients of a loss with image gradient `image_grad` w.r.t. the cloud
/// and network weights. Canonical positions reach the loss only through
/// the rasterizer; the network's positional input is a constant.
pub fn backward_frame<T: Real>(
    frame: &Frame<T>,
    cloud: &GaussianCloud<T>,
    net: Option<&DeformNet<T>>,
    camera: &Camera,
    image_grad: &[T],
) -> FrameGrads<T> {
    let splats = rasterize_backward(&frame.workspace, &frame.splats, camera, image_grad);
    let (cloud_grads, offset_grads) = apply_offsets_backward(cloud, frame.offsets.as_ref(), &splats);
    let net_grads = match (net, frame.cache.as_ref()) {
        (Some(net), Some(cache)) => Some(net.backward(cache, &offset_grads, false).0),
        _ => None,
    };
    FrameGrads {
        cloud: cloud_grads,
        net: net_grads,
        offsets: net.map(|_| offset_grads),
        splats,
    }
}
