//! `DGS1` container: magic, little-endian `u32` version, then a sequence of
//! sections. Each section is
//!
//! ```text
//! u16 name length | name (UTF-8) | u8 dtype | u8 ndim | u64 × ndim shape | u64 byte length | data
//! ```
//!
//! with dtype 0 = u8, 1 = u64, 2 = f32, 3 = f64. All values little-endian.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::deform::{DeformNet, DeformNetConfig, Linear};
use crate::error::{Error, Result};
use crate::geom::GaussianCloud;
use crate::optim::{AdamConfig, CloudOptimizer, NetOptimizer, ParamGroup};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DGS1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    U8 = 0,
    U64 = 1,
    F32 = 2,
    F64 = 3,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U64 | Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Dtype::U8,
            1 => Dtype::U64,
            2 => Dtype::F32,
            3 => Dtype::F64,
            _ => return None,
        })
    }
}

struct Section {
    name: String,
    dtype: Dtype,
    data: Vec<u8>,
}

/// Serialisable generator position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    /// Training configuration as written in the config file format.
    pub config: String,
    pub scene_extent: f64,
    pub cloud: GaussianCloud<f32>,
    pub net: DeformNet<f32>,
    pub cloud_opt: CloudOptimizer<f32>,
    pub net_opt: NetOptimizer<f32>,
    pub rng: RngState,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn section(&mut self, name: &str, dtype: Dtype, shape: &[usize], data: &[u8]) {
        debug_assert_eq!(shape.iter().product::<usize>() * dtype.size(), data.len());
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(dtype as u8);
        self.buf.push(shape.len() as u8);
        for &d in shape {
            self.buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        self.buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(data);
    }

    fn f32s(&mut self, name: &str, shape: &[usize], v: &[f32]) {
        let data: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.section(name, Dtype::F32, shape, &data);
    }

    fn u64s(&mut self, name: &str, v: &[u64]) {
        let data: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.section(name, Dtype::U64, &[v.len()], &data);
    }

    fn f64s(&mut self, name: &str, v: &[f64]) {
        let data: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.section(name, Dtype::F64, &[v.len()], &data);
    }

    fn group(&mut self, prefix: &str, g: &ParamGroup<f32>) {
        self.f32s(&format!("{prefix}.{}.m", g.name), &[g.m.len()], &g.m);
        self.f32s(&format!("{prefix}.{}.v", g.name), &[g.v.len()], &g.v);
        self.u64s(&format!("{prefix}.{}.step", g.name), &[g.step]);
    }
}

fn skip_code(skip: Option<usize>) -> u64 {
    skip.map_or(u64::MAX, |s| s as u64)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(CHECKPOINT_MAGIC);
        w.buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.u64s("iteration", &[self.iteration]);
        w.section("config", Dtype::U8, &[self.config.len()], self.config.as_bytes());
        w.f64s("scene_extent", &[self.scene_extent]);

        let c = &self.cloud;
        let n = c.len();
        w.u64s("cloud.sh_degree", &[c.sh_degree as u64]);
        w.f32s("cloud.positions", &[n, 3], c.positions.as_flattened());
        w.f32s("cloud.rotations", &[n, 4], c.rotations.as_flattened());
        w.f32s("cloud.log_scales", &[n, 3], c.log_scales.as_flattened());
        w.f32s("cloud.opacity_logits", &[n], &c.opacity_logits);
        w.f32s("cloud.sh_dc", &[n, 3], c.sh_dc.as_flattened());
        w.f32s("cloud.sh_rest", &[n, c.sh_stride() - 1, 3], &c.sh_rest);

        let cfg = self.net.config;
        w.u64s(
            "net.config",
            &[
                cfg.depth as u64,
                cfg.width as u64,
                skip_code(cfg.skip_layer),
                cfg.pos_levels as u64,
                cfg.time_levels as u64,
            ],
        );
        for (name, l) in self.net.layers() {
            w.f32s(&format!("net.{name}.weight"), &[l.out_dim, l.in_dim], &l.weight);
            w.f32s(&format!("net.{name}.bias"), &[l.out_dim], &l.bias);
        }

        let ac = self.cloud_opt.config;
        w.f64s("adam.cloud.config", &[ac.beta1, ac.beta2, ac.eps]);
        for g in self.cloud_opt.groups() {
            w.group("adam.cloud", g);
        }
        let an = self.net_opt.config;
        w.f64s("adam.net.config", &[an.beta1, an.beta2, an.eps]);
        for g in &self.net_opt.groups {
            w.group("adam.net", g);
        }

        w.section("rng.seed", Dtype::U8, &[32], &self.rng.seed);
        w.u64s(
            "rng.position",
            &[self.rng.stream, self.rng.word_pos as u64, (self.rng.word_pos >> 64) as u64],
        );
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let r = Reader::parse(bytes)?;
        let iteration = r.u64_scalar("iteration")?;
        let config = String::from_utf8(r.get("config", Dtype::U8)?.data.clone()).map_err(|_| Error::Checkpoint {
            section: "config".into(),
            msg: "not valid UTF-8".into(),
        })?;
        let scene_extent = r.f64s("scene_extent", Some(1))?[0];

        let sh_degree = r.u64_scalar("cloud.sh_degree")? as usize;
        if sh_degree > crate::geom::MAX_SH_DEGREE {
            return Err(Error::Checkpoint {
                section: "cloud.sh_degree".into(),
                msg: format!("SH degree {sh_degree} is unsupported"),
            });
        }
        let positions = r.f32s("cloud.positions", None)?;
        let n = positions.len() / 3;
        let mut cloud = GaussianCloud::empty(sh_degree);
        let rest = cloud.rest_stride();
        cloud.positions = chunks::<3>(&positions);
        cloud.rotations = chunks::<4>(&r.f32s("cloud.rotations", Some(4 * n))?);
        cloud.log_scales = chunks::<3>(&r.f32s("cloud.log_scales", Some(3 * n))?);
        cloud.opacity_logits = r.f32s("cloud.opacity_logits", Some(n))?;
        cloud.sh_dc = chunks::<3>(&r.f32s("cloud.sh_dc", Some(3 * n))?);
        cloud.sh_rest = r.f32s("cloud.sh_rest", Some(rest * n))?;

        let nc = r.u64s("net.config", Some(5))?;
        let config_net = DeformNetConfig {
            depth: nc[0] as usize,
            width: nc[1] as usize,
            skip_layer: (nc[2] != u64::MAX).then_some(nc[2] as usize),
            pos_levels: nc[3] as usize,
            time_levels: nc[4] as usize,
        };
        config_net.validate().map_err(|e| Error::Checkpoint {
            section: "net.config".into(),
            msg: e.to_string(),
        })?;
        let load_layer = |name: &str, in_dim: usize, out_dim: usize| -> Result<Linear<f32>> {
            Ok(Linear {
                in_dim,
                out_dim,
                weight: r.f32s(&format!("net.{name}.weight"), Some(in_dim * out_dim))?,
                bias: r.f32s(&format!("net.{name}.bias"), Some(out_dim))?,
            })
        };
        let hidden = (0..config_net.depth)
            .map(|l| load_layer(&format!("hidden{l}"), config_net.layer_input_dim(l), config_net.width))
            .collect::<Result<Vec<_>>>()?;
        let net = DeformNet {
            config: config_net,
            hidden,
            head_xyz: load_layer("head_xyz", config_net.width, 3)?,
            head_rot: load_layer("head_rot", config_net.width, 4)?,
            head_scale: load_layer("head_scale", config_net.width, 3)?,
        };

        let adam_cfg = |name: &str| -> Result<AdamConfig> {
            let v = r.f64s(name, Some(3))?;
            Ok(AdamConfig {
                beta1: v[0],
                beta2: v[1],
                eps: v[2],
            })
        };
        let mut cloud_opt = CloudOptimizer::new(&cloud, adam_cfg("adam.cloud.config")?);
        for g in cloud_opt.groups_mut() {
            r.fill_group("adam.cloud", g)?;
        }
        let mut net_opt = NetOptimizer::new(&net, adam_cfg("adam.net.config")?);
        for g in net_opt.groups.iter_mut() {
            r.fill_group("adam.net", g)?;
        }

        let seed_bytes = &r.get("rng.seed", Dtype::U8)?.data;
        let seed: [u8; 32] = seed_bytes.as_slice().try_into().map_err(|_| Error::Checkpoint {
            section: "rng.seed".into(),
            msg: "expected 32 bytes".into(),
        })?;
        let pos = r.u64s("rng.position", Some(3))?;
        let rng = RngState {
            seed,
            stream: pos[0],
            word_pos: pos[1] as u128 | ((pos[2] as u128) << 64),
        };

        Ok(Checkpoint {
            iteration,
            config,
            scene_extent,
            cloud,
            net,
            cloud_opt,
            net_opt,
            rng,
        })
    }
}

fn chunks<const K: usize>(v: &[f32]) -> Vec<[f32; K]> {
    v.chunks_exact(K).map(|c| c.try_into().expect("exact chunk")).collect()
}

struct Reader {
    sections: Vec<Section>,
}

fn truncated(section: &str) -> Error {
    Error::Checkpoint {
        section: section.into(),
        msg: "file is truncated".into(),
    }
}

impl Reader {
    fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint {
                section: "header".into(),
                msg: "bad magic bytes (not a DGS1 checkpoint)".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint {
                section: "header".into(),
                msg: format!("unsupported version {version} (this build reads {CHECKPOINT_VERSION})"),
            });
        }
        let mut at = 8;
        let mut sections = Vec::new();
        let mut prev = String::from("header");
        while at < bytes.len() {
            let take = |at: &mut usize, n: usize, who: &str| -> Result<&[u8]> {
                if bytes.len() - *at < n {
                    return Err(truncated(who));
                }
                let s = &bytes[*at..*at + n];
                *at += n;
                Ok(s)
            };
            let after = format!("section following `{prev}`");
            let len = u16::from_le_bytes(take(&mut at, 2, &after)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(take(&mut at, len, &after)?.to_vec()).map_err(|_| Error::Checkpoint {
                section: after.clone(),
                msg: "section name is not UTF-8".into(),
            })?;
            let code = take(&mut at, 1, &name)?[0];
            let dtype = Dtype::from_code(code).ok_or_else(|| Error::Checkpoint {
                section: name.clone(),
                msg: format!("unknown dtype code {code}"),
            })?;
            let ndim = take(&mut at, 1, &name)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut at, 8, &name)?.try_into().expect("8 bytes")));
            }
            let byte_len = u64::from_le_bytes(take(&mut at, 8, &name)?.try_into().expect("8 bytes"));
            let expected = shape.iter().try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d));
            if expected != Some(byte_len) {
                return Err(Error::Checkpoint {
                    section: name,
                    msg: format!("shape {shape:?} does not match {byte_len} data bytes"),
                });
            }
            let data = take(&mut at, byte_len as usize, &name)?.to_vec();
            prev = name.clone();
            sections.push(Section {
                name,
                dtype,
                data,
            });
        }
        Ok(Reader { sections })
    }

    fn get(&self, name: &str, dtype: Dtype) -> Result<&Section> {
        let s = self.sections.iter().find(|s| s.name == name).ok_or_else(|| Error::Checkpoint {
            section: name.into(),
            msg: "missing".into(),
        })?;
        if s.dtype != dtype {
            return Err(Error::Checkpoint {
                section: name.into(),
                msg: format!("expected dtype {dtype:?}, found {:?}", s.dtype),
            });
        }
        Ok(s)
    }

    fn check_len(name: &str, got: usize, want: Option<usize>) -> Result<()> {
        match want {
            Some(w) if w != got => Err(Error::Checkpoint {
                section: name.into(),
                msg: format!("expected {w} elements, found {got}"),
            }),
            _ => Ok(()),
        }
    }

    fn f32s(&self, name: &str, len: Option<usize>) -> Result<Vec<f32>> {
        let s = self.get(name, Dtype::F32)?;
        let v: Vec<f32> = s.data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
        Self::check_len(name, v.len(), len)?;
        Ok(v)
    }

    fn f64s(&self, name: &str, len: Option<usize>) -> Result<Vec<f64>> {
        let s = self.get(name, Dtype::F64)?;
        let v: Vec<f64> = s.data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
        Self::check_len(name, v.len(), len)?;
        Ok(v)
    }

    fn u64s(&self, name: &str, len: Option<usize>) -> Result<Vec<u64>> {
        let s = self.get(name, Dtype::U64)?;
        let v: Vec<u64> = s.data.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8"))).collect();
        Self::check_len(name, v.len(), len)?;
        Ok(v)
    }

    fn u64_scalar(&self, name: &str) -> Result<u64> {
        Ok(self.u64s(name, Some(1))?[0])
    }

    fn fill_group(&self, prefix: &str, g: &mut ParamGroup<f32>) -> Result<()> {
        let len = g.m.len();
        g.m = self.f32s(&format!("{prefix}.{}.m", g.name), Some(len))?;
        g.v = self.f32s(&format!("{prefix}.{}.v", g.name), Some(len))?;
        g.step = self.u64_scalar(&format!("{prefix}.{}.step", g.name))?;
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    // Write-then-rename so an interrupted save never clobbers the last good file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cloud = GaussianCloud::<f32>::empty(1);
        for _ in 0..5 {
            let mut r = || rng.random_range(-1.0f32..1.0);
            cloud.push([r(), r(), r()], [r(), r(), r(), 1.0], [r(); 3], r(), [r(), r(), r()], &[r(); 9]);
        }
        let cfg = DeformNetConfig {
            depth: 3,
            width: 8,
            skip_layer: Some(1),
            pos_levels: 2,
            time_levels: 2,
        };
        let net = DeformNet::new(cfg, &mut rng).unwrap();
        let mut cloud_opt = CloudOptimizer::new(&cloud, AdamConfig::default());
        cloud_opt.positions.m[3] = 0.25;
        cloud_opt.sh_rest.step = 17;
        let net_opt = NetOptimizer::new(&net, AdamConfig::default());
        let _: u32 = rng.random();
        Checkpoint {
            iteration: 1234,
            config: "seed = 1\n".into(),
            scene_extent: 4.4,
            cloud,
            net,
            cloud_opt,
            net_opt,
            rng: RngState::capture(&rng),
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        let mut a = c.rng.restore();
        let mut b = back.rng.restore();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn truncation_names_section() {
        let bytes = sample().to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("rng.position"), "{err}");
        let cut = bytes.windows(15).position(|w| w == b"cloud.rotations").unwrap() - 2;
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err().to_string();
        assert!(err.contains("cloud.rotations") && err.contains("missing"), "{err}");
    }

    #[test]
    fn rejects_bad_header() {
        let mut bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(b"XXXX\x01\0\0\0").is_err());
        bytes[4] = 2;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
