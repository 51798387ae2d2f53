use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deform::{AstSchedule, DeformNetConfig};
use crate::density::DensifyConfig;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, SSIM_WEIGHT};

/// Every training knob. Parsed from a flat `key = value` TOML file in which
/// all keys are optional and unknown keys are rejected. The `profile` key
/// picks the defaults the remaining keys override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// `desk` (10k iterations, small cloud) or `paper` (published constants).
    pub profile: String,
    pub seed: u64,
    pub total_iterations: usize,
    pub warmup_iterations: usize,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Longest image side used for training; 0 keeps the dataset resolution.
    pub resolution: u32,
    pub background: [f64; 3],

    pub initial_points: usize,
    /// Half-size of the cube the initial points are drawn from.
    pub init_extent: f64,
    pub init_opacity: f64,
    pub sh_degree: usize,
    /// Iterations between SH degree increments.
    pub sh_increase_interval: usize,

    pub ssim_weight: f64,
    pub ast_enabled: bool,
    pub ast_beta: f64,
    pub ast_tau: usize,

    pub pos_levels: usize,
    pub time_levels: usize,
    pub net_depth: usize,
    pub net_width: usize,
    /// Hidden layer that re-reads the encoded input; negative disables it.
    pub net_skip_layer: i64,

    /// Scaled by the scene extent.
    pub position_lr_init: f64,
    pub position_lr_final: f64,
    pub position_lr_max_steps: usize,
    pub sh_lr: f64,
    /// Divisor applied to `sh_lr` for the higher-order coefficients.
    pub sh_rest_lr_divisor: f64,
    pub opacity_lr: f64,
    pub scale_lr: f64,
    pub rotation_lr: f64,
    pub deform_lr_init: f64,
    pub deform_lr_final: f64,
    /// Decay length counted from the end of warm-up; 0 means up to
    /// `total_iterations`.
    pub deform_lr_max_steps: usize,
    pub adam_eps: f64,

    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub opacity_reset_interval: usize,
    pub max_screen_radius: f64,
    pub max_gaussians: usize,

    /// Checkpoint every this many iterations; 0 only at the end.
    pub snapshot_interval: usize,
    /// Test-split evaluation every this many iterations; 0 disables.
    pub eval_interval: usize,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            profile: "paper".into(),
            seed: 0,
            total_iterations: 40_000,
            warmup_iterations: 3000,
            workers: 0,
            resolution: 0,
            background: [0.0; 3],
            initial_points: 10_000,
            init_extent: 1.3,
            init_opacity: 0.1,
            sh_degree: 3,
            sh_increase_interval: 1000,
            ssim_weight: SSIM_WEIGHT,
            ast_enabled: true,
            ast_beta: 0.1,
            ast_tau: 20_000,
            pos_levels: 10,
            time_levels: 6,
            net_depth: 8,
            net_width: 256,
            net_skip_layer: 4,
            position_lr_init: 1.6e-4,
            position_lr_final: 1.6e-6,
            position_lr_max_steps: 30_000,
            sh_lr: 2.5e-3,
            sh_rest_lr_divisor: 20.0,
            opacity_lr: 0.05,
            scale_lr: 5e-3,
            rotation_lr: 1e-3,
            deform_lr_init: 8e-4,
            deform_lr_final: 1.6e-6,
            deform_lr_max_steps: 0,
            adam_eps: 1e-15,
            densify_from: 500,
            densify_until: 15_000,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            opacity_reset_interval: 3000,
            max_screen_radius: 20.0,
            max_gaussians: 1_000_000,
            snapshot_interval: 0,
            eval_interval: 0,
        }
    }

    /// Desk-scale profile: 10k iterations, τ at half the run, densification
    /// window scaled by a quarter.
    pub fn desk() -> Self {
        TrainConfig {
            profile: "desk".into(),
            total_iterations: 10_000,
            initial_points: 2000,
            ast_tau: 5000,
            position_lr_max_steps: 10_000,
            densify_from: 125,
            densify_until: 3750,
            opacity_reset_interval: 1500,
            max_gaussians: 3_000,
            eval_interval: 2000,
            ..Self::paper()
        }
    }

    pub fn for_profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }

    /// Applies `text` on top of its profile's defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = match user.get("profile") {
            None => "desk".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::Config("`profile` must be a string".into())),
        };
        let base = Self::for_profile(&profile)?;
        let mut table = toml::Table::try_from(&base).expect("config serialises");
        for (k, v) in user {
            if !table.contains_key(&k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            table.insert(k, v);
        }
        let cfg: TrainConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.total_iterations > 0 && self.warmup_iterations >= self.total_iterations {
            return fail(format!(
                "warmup_iterations ({}) must be below total_iterations ({})",
                self.warmup_iterations, self.total_iterations
            ));
        }
        if self.ast_enabled && self.ast_tau > self.total_iterations {
            return fail(format!("ast_tau ({}) exceeds total_iterations", self.ast_tau));
        }
        if self.ast_tau == 0 && self.ast_enabled {
            return fail("ast_tau must be positive when AST is enabled".into());
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return fail("ssim_weight must lie in [0, 1]".into());
        }
        if self.sh_degree > crate::geom::MAX_SH_DEGREE {
            return fail(format!("sh_degree must be ≤ {}", crate::geom::MAX_SH_DEGREE));
        }
        for (name, v) in [
            ("position_lr_init", self.position_lr_init),
            ("position_lr_final", self.position_lr_final),
            ("sh_lr", self.sh_lr),
            ("sh_rest_lr_divisor", self.sh_rest_lr_divisor),
            ("opacity_lr", self.opacity_lr),
            ("scale_lr", self.scale_lr),
            ("rotation_lr", self.rotation_lr),
            ("deform_lr_init", self.deform_lr_init),
            ("deform_lr_final", self.deform_lr_final),
            ("adam_eps", self.adam_eps),
            ("init_extent", self.init_extent),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive"));
            }
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return fail("init_opacity must lie in (0, 1)".into());
        }
        if self.initial_points == 0 {
            return fail("initial_points must be positive".into());
        }
        if self.densify_interval == 0 || self.opacity_reset_interval == 0 || self.sh_increase_interval == 0 {
            return fail("densify, opacity-reset and SH intervals must be positive".into());
        }
        if self.initial_points > self.max_gaussians {
            return fail("initial_points exceeds max_gaussians".into());
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return fail("background components must lie in [0, 1]".into());
        }
        self.net_config().validate()
    }

    pub fn net_config(&self) -> DeformNetConfig {
        DeformNetConfig {
            depth: self.net_depth,
            width: self.net_width,
            skip_layer: usize::try_from(self.net_skip_layer).ok(),
            pos_levels: self.pos_levels,
            time_levels: self.time_levels,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            eps: self.adam_eps,
            ..Default::default()
        }
    }

    pub fn ast(&self, delta_t: f64) -> AstSchedule {
        AstSchedule {
            beta: self.ast_beta,
            tau: self.ast_tau,
            delta_t,
            enabled: self.ast_enabled,
        }
    }

    /// Density settings for 1-based iteration `it`.
    pub fn densify(&self, it: usize) -> DensifyConfig {
        DensifyConfig {
            grad_threshold: self.densify_grad_threshold,
            percent_dense: self.percent_dense,
            prune_opacity: self.prune_opacity,
            max_screen_radius: (it > self.opacity_reset_interval).then_some(self.max_screen_radius),
            max_gaussians: self.max_gaussians,
            ..Default::default()
        }
    }

    pub fn deform_lr_span(&self) -> usize {
        if self.deform_lr_max_steps > 0 {
            self.deform_lr_max_steps
        } else {
            self.total_iterations.saturating_sub(self.warmup_iterations)
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_and_overrides() {
        let c = TrainConfig::from_toml("").unwrap();
        assert_eq!(c, TrainConfig::desk());
        let c = TrainConfig::from_toml("profile = \"paper\"\nseed = 5\n").unwrap();
        assert_eq!((c.total_iterations, c.ast_tau, c.initial_points, c.seed), (40_000, 20_000, 10_000, 5));
        assert_eq!(c.warmup_iterations, 3000);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(TrainConfig::from_toml("iterations = 5\n").is_err());
        assert!(TrainConfig::from_toml("profile = \"huge\"\n").is_err());
        assert!(TrainConfig::from_toml("warmup_iterations = 20000\n").is_err());
        assert!(TrainConfig::from_toml("seed = \"x\"\n").is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let c = TrainConfig::desk();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
