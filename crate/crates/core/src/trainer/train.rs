use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::{active_sh_degree, load_frames, raster_config};
use crate::deform::{ast_sample, AstSchedule, DeformNet};
use crate::density::{densify_and_prune, reset_opacity, DensifyReport, DensifyStats};
use crate::error::{Error, Result};
use crate::geom::{Camera, GaussianCloud, SH_C0};
use crate::optim::{exp_lr, photometric_loss, psnr, ssim, CloudLr, CloudOptimizer, NetOptimizer};
use crate::pipeline::{backward_frame, forward_frame, FrameSetup};
use crate::raster::ImageBuffer;
use crate::real::logit;
use crate::scene::{save_checkpoint, Checkpoint, RngState, SceneDataset, Split};

/// A camera with its target image.
#[derive(Clone, Debug)]
pub struct TrainFrame {
    pub camera: Camera,
    pub image: ImageBuffer<f32>,
}

/// One row of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub frame: usize,
    pub time: f64,
    pub noise_std: f64,
    pub noise: f64,
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub gaussians: usize,
    pub position_lr: f64,
    pub deform_lr: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub frames: Vec<TrainFrame>,
    pub test_frames: Vec<TrainFrame>,
    pub cloud: GaussianCloud<f32>,
    pub net: DeformNet<f32>,
    pub cloud_opt: CloudOptimizer<f32>,
    pub net_opt: NetOptimizer<f32>,
    pub stats: DensifyStats,
    pub rng: ChaCha8Rng,
    /// Completed iterations.
    pub iteration: usize,
    pub scene_extent: f64,
    pub ast: AstSchedule,
    pub log: Vec<IterationLog>,
    pub densify_events: Vec<(usize, DensifyReport)>,
    /// `(iteration, mean PSNR, mean SSIM)` on the test split.
    pub evals: Vec<(usize, f64, f64)>,
    order: Vec<usize>,
    order_pos: usize,
}

/// `sqrt` of the mean squared distance to the three nearest neighbours.
fn neighbour_scales(points: &[[f32; 3]]) -> Vec<f32> {
    use rayon::prelude::*;
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f32::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(f32::total_cmp);
                }
            }
            let finite: Vec<f32> = best.into_iter().filter(|d| d.is_finite()).collect();
            let mean = if finite.is_empty() {
                1e-2
            } else {
                finite.iter().sum::<f32>() / finite.len() as f32
            };
            mean.max(1e-7).sqrt()
        })
        .collect()
}

/// Random initial cloud in the cube `[-e, e]³`, dark colour, low opacity.
pub(crate) fn initial_cloud(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> GaussianCloud<f32> {
    let e = cfg.init_extent as f32;
    let n = cfg.initial_points;
    let mut cloud = GaussianCloud::empty(cfg.sh_degree);
    let points: Vec<[f32; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-e..e))).collect();
    let colors: Vec<[f32; 3]> = (0..n)
        .map(|_| std::array::from_fn(|_| ((rng.random::<f64>() / 255.0 - 0.5) / SH_C0) as f32))
        .collect();
    let scales = neighbour_scales(&points);
    let rest = vec![0.0f32; cloud.rest_stride()];
    let o = logit(cfg.init_opacity as f32);
    for k in 0..n {
        cloud.push(points[k], [1.0, 0.0, 0.0, 0.0], [scales[k].ln(); 3], o, colors[k], &rest);
    }
    cloud
}

/// First gradient tensor holding a NaN or infinity, checked before any
/// optimizer state is touched.
fn non_finite_group(cloud: &GaussianCloud<f32>, net: Option<&DeformNet<f32>>) -> Option<String> {
    let bad = |v: &[f32]| v.iter().any(|x| !x.is_finite());
    let groups: [(&str, &[f32]); 6] = [
        ("positions", cloud.positions.as_flattened()),
        ("rotations", cloud.rotations.as_flattened()),
        ("scales", cloud.log_scales.as_flattened()),
        ("opacities", &cloud.opacity_logits),
        ("sh_dc", cloud.sh_dc.as_flattened()),
        ("sh_rest", &cloud.sh_rest),
    ];
    if let Some((name, _)) = groups.iter().find(|(_, v)| bad(v)) {
        return Some(name.to_string());
    }
    net?.layers()
        .into_iter()
        .find(|(_, l)| bad(&l.weight) || bad(&l.bias))
        .map(|(name, _)| name)
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: &SceneDataset) -> Result<Self> {
        config.validate()?;
        let frames = load_frames(dataset, Split::Train, &config)?;
        if frames.is_empty() {
            return Err(Error::Dataset {
                path: dataset.root.clone(),
                msg: "training split is empty".into(),
            });
        }
        let test_frames = if config.eval_interval > 0 {
            load_frames(dataset, Split::Test, &config)?
        } else {
            Vec::new()
        };
        Self::from_frames(config, frames, test_frames, dataset.scene_extent, dataset.delta_t())
    }

    pub fn from_frames(
        config: TrainConfig,
        frames: Vec<TrainFrame>,
        test_frames: Vec<TrainFrame>,
        scene_extent: f64,
        delta_t: f64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cloud = initial_cloud(&config, &mut rng);
        let net = DeformNet::new(config.net_config(), &mut rng)?;
        let cloud_opt = CloudOptimizer::new(&cloud, config.adam());
        let net_opt = NetOptimizer::new(&net, config.adam());
        let stats = DensifyStats::new(cloud.len());
        let ast = config.ast(delta_t);
        Ok(Trainer {
            order: (0..frames.len()).collect(),
            order_pos: usize::MAX,
            config,
            frames,
            test_frames,
            cloud,
            net,
            cloud_opt,
            net_opt,
            stats,
            rng,
            iteration: 0,
            scene_extent,
            ast,
            log: Vec::new(),
            densify_events: Vec::new(),
            evals: Vec::new(),
        })
    }

    fn next_frame(&mut self) -> usize {
        if self.order_pos >= self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.order_pos = 0;
        }
        let f = self.order[self.order_pos];
        self.order_pos += 1;
        f
    }

    fn cloud_lr(&self, i: usize) -> CloudLr {
        let c = &self.config;
        CloudLr {
            position: exp_lr(
                i,
                c.position_lr_max_steps,
                c.position_lr_init * self.scene_extent,
                c.position_lr_final * self.scene_extent,
            ),
            rotation: c.rotation_lr,
            scale: c.scale_lr,
            opacity: c.opacity_lr,
            sh_dc: c.sh_lr,
            sh_rest: c.sh_lr / c.sh_rest_lr_divisor,
        }
    }

    fn deform_lr(&self, i: usize) -> f64 {
        let c = &self.config;
        exp_lr(
            i.saturating_sub(c.warmup_iterations),
            c.deform_lr_span(),
            c.deform_lr_init,
            c.deform_lr_final,
        )
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.total_iterations
    }

    /// Renders the current model for `camera` with no time noise.
    pub fn render(&self, camera: &Camera) -> ImageBuffer<f32> {
        let setup = FrameSetup {
            camera,
            time: camera.time as f32,
            time_noise: 0.0,
            sh_degree: active_sh_degree(&self.config, self.iteration),
            background: self.config.background.map(|v| v as f32),
            raster: raster_config(),
        };
        forward_frame(&self.cloud, Some(&self.net), &setup).image
    }

    /// One optimisation step.
    pub fn step(&mut self) -> Result<&IterationLog> {
        let i = self.iteration;
        let it = i + 1;
        let cfg = self.config.clone();
        let fidx = self.next_frame();
        let joint = i >= cfg.warmup_iterations;
        let (noise_std, noise) = if joint {
            (self.ast.std(i), ast_sample(i, &self.ast, &mut self.rng))
        } else {
            (0.0, 0.0)
        };
        let frame = &self.frames[fidx];
        let setup = FrameSetup {
            camera: &frame.camera,
            time: frame.camera.time as f32,
            time_noise: noise as f32,
            sh_degree: active_sh_degree(&cfg, i),
            background: cfg.background.map(|v| v as f32),
            raster: raster_config(),
        };
        let net = joint.then_some(&self.net);
        let fwd = forward_frame(&self.cloud, net, &setup);
        let loss = photometric_loss(&fwd.image, &frame.image, cfg.ssim_weight)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: i });
        }
        let grads = backward_frame(&fwd, &self.cloud, net, &frame.camera, &loss.grad);
        let train_psnr = psnr(&fwd.image.rgb, &frame.image.rgb);
        let time = frame.camera.time;
        if it < cfg.densify_until {
            self.stats.accumulate(&fwd.workspace, &grads.splats, &grads.cloud);
        }
        drop(fwd);

        if let Some(group) = non_finite_group(&grads.cloud, grads.net.as_ref()) {
            return Err(Error::NonFiniteGradient { group });
        }
        let lr = self.cloud_lr(i);
        let deform_lr = self.deform_lr(i);
        self.cloud_opt.step(&mut self.cloud, &grads.cloud, &lr)?;
        if let Some(g) = grads.net.as_ref() {
            self.net_opt.step(&mut self.net, g, deform_lr)?;
        }

        if it < cfg.densify_until {
            if it > cfg.densify_from && it.is_multiple_of(cfg.densify_interval) {
                let report = densify_and_prune(
                    &mut self.cloud,
                    &mut self.stats,
                    &mut self.cloud_opt,
                    &cfg.densify(it),
                    self.scene_extent,
                    lr.position,
                    &mut self.rng,
                );
                log::debug!(
                    "iteration {it}: {} clones, {} splits, {} pruned, N = {}",
                    report.clones,
                    report.splits,
                    report.pruned,
                    report.count
                );
                self.densify_events.push((it, report));
            }
            if it.is_multiple_of(cfg.opacity_reset_interval) {
                reset_opacity(&mut self.cloud, &mut self.cloud_opt, 0.01);
            }
        }

        self.iteration = it;
        if cfg.eval_interval > 0 && it.is_multiple_of(cfg.eval_interval) && !self.test_frames.is_empty() {
            let (p, s) = self.evaluate_test();
            log::info!("iteration {it}: test PSNR {p:.2} dB, SSIM {s:.4}, N = {}", self.cloud.len());
            self.evals.push((it, p, s));
        }
        self.log.push(IterationLog {
            iteration: i,
            frame: fidx,
            time,
            noise_std,
            noise,
            loss: loss.total,
            l1: loss.l1,
            ssim: loss.ssim,
            psnr: train_psnr,
            gaussians: self.cloud.len(),
            position_lr: lr.position,
            deform_lr: if joint { deform_lr } else { 0.0 },
        });
        Ok(self.log.last().expect("just pushed"))
    }

    /// Mean PSNR (finite rows) and SSIM over the held-out frames.
    pub fn evaluate_test(&self) -> (f64, f64) {
        let mut ps = Vec::new();
        let mut ss = 0.0;
        for f in &self.test_frames {
            let img = self.render(&f.camera);
            let p = psnr(&img.rgb, &f.image.rgb);
            if p.is_finite() {
                ps.push(p);
            }
            ss += ssim(&img.rgb, &f.image.rgb, img.width, img.height, 3);
        }
        let n = self.test_frames.len().max(1) as f64;
        let mp = if ps.is_empty() {
            f64::INFINITY
        } else {
            ps.iter().sum::<f64>() / ps.len() as f64
        };
        (mp, ss / n)
    }

    /// The echoed config has `workers` reset to 0, so the bytes do not
    /// depend on the thread count.
    pub fn checkpoint(&self) -> Checkpoint {
        let config = TrainConfig {
            workers: 0,
            ..self.config.clone()
        };
        Checkpoint {
            iteration: self.iteration as u64,
            config: config.to_toml(),
            scene_extent: self.scene_extent,
            cloud: self.cloud.clone(),
            net: self.net.clone(),
            cloud_opt: self.cloud_opt.clone(),
            net_opt: self.net_opt.clone(),
            rng: RngState::capture(&self.rng),
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<IterationLog>,
    pub evals: Vec<(usize, f64, f64)>,
    pub densify_events: Vec<(usize, DensifyReport)>,
}

fn write_log(path: &Path, log: &[IterationLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs the whole schedule. With `out_dir`, writes `config.toml`,
/// `train_log.csv`, periodic `checkpoint_<it>.dgs` snapshots and
/// `final.dgs`; a non-finite loss leaves `last_good.dgs` behind.
pub fn train(config: &TrainConfig, dataset: &SceneDataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let pool = thread_pool(config.workers)?;
    pool.install(|| {
        let trainer = Trainer::new(config.clone(), dataset)?;
        run(trainer, out_dir)
    })
}

/// Drives an already constructed trainer to completion on the current
/// rayon pool. See [`train`] for the files written.
pub fn run(mut trainer: Trainer, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let config = trainer.config.clone();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("config.toml");
        fs::write(&p, config.to_toml()).map_err(|e| Error::io(&p, e))?;
    }
    while !trainer.is_done() {
        if let Err(e) = trainer.step() {
            if let Some(dir) = out_dir {
                save_checkpoint(&trainer.checkpoint(), &dir.join("last_good.dgs"))?;
                write_log(&dir.join("train_log.csv"), &trainer.log)?;
            }
            return Err(e);
        }
        let it = trainer.iteration;
        if it.is_multiple_of(500) {
            let row = trainer.log.last().expect("stepped");
            log::info!("iteration {it}: loss {:.4}, PSNR {:.2} dB, N = {}", row.loss, row.psnr, row.gaussians);
        }
        if let Some(dir) = out_dir {
            if config.snapshot_interval > 0 && it.is_multiple_of(config.snapshot_interval) && !trainer.is_done() {
                save_checkpoint(&trainer.checkpoint(), &dir.join(format!("checkpoint_{it}.dgs")))?;
            }
        }
    }
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = out_dir {
        save_checkpoint(&checkpoint, &dir.join("final.dgs"))?;
        write_log(&dir.join("train_log.csv"), &trainer.log)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        log: trainer.log,
        evals: trainer.evals,
        densify_events: trainer.densify_events,
    })
}
