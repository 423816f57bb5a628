//! U-net construction and parameter management.
//!
//! All networks share one generic encoder/decoder: stride-2 3×3 convolutions
//! down, nearest ×2 upsampling with concatenated 1×1 skip projections up,
//! instance norm and leaky-relu after every convolution, and one sigmoid
//! head per named output. The input is a fixed noise tensor generated once
//! from the network seed; optimization touches only the parameters.

pub mod snapshot;

use crate::tensor::{Element, Shape, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const LEAKY_SLOPE: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;
pub const NOISE_AMPLITUDE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadConfig {
    pub name: String,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub channels: Vec<usize>,
    pub skip_channels: usize,
    pub input_noise_channels: usize,
    pub heads: Vec<HeadConfig>,
}

impl UNetConfig {
    /// Default architecture sized for CPU runs at ≤ 128×128.
    pub fn desk_default(heads: Vec<HeadConfig>) -> Self {
        UNetConfig {
            depth: 4,
            channels: vec![16, 32, 64, 128],
            skip_channels: 4,
            input_noise_channels: 32,
            heads,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.depth < 1 {
            return Err(NnError::BadConfig("depth must be >= 1".into()));
        }
        if self.channels.len() != self.depth {
            return Err(NnError::BadConfig(format!(
                "channels has {} entries but depth is {}",
                self.channels.len(),
                self.depth
            )));
        }
        if self.channels.contains(&0) || self.skip_channels == 0 {
            return Err(NnError::BadConfig("channel counts must be >= 1".into()));
        }
        if self.input_noise_channels == 0 {
            return Err(NnError::BadConfig("noise channels must be >= 1".into()));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.channels == 0) {
            return Err(NnError::BadConfig(
                "every head needs >= 1 channel".into(),
            ));
        }
        Ok(())
    }

    /// Channel count entering down block `i` (block 0 sees the noise input).
    fn enc_in(&self, i: usize) -> usize {
        if i == 0 {
            self.input_noise_channels
        } else {
            self.channels[i - 1]
        }
    }

    /// Channel count arriving from below at decoder level `r`.
    fn dec_below(&self, r: usize) -> usize {
        self.channels[(r + 1).min(self.depth - 1)]
    }
}

#[derive(Clone, Debug)]
pub struct Param<E: Element> {
    pub name: String,
    pub shape: Shape,
    pub value: Vec<E>,
}

/// A built U-net: fixed noise input plus named parameters.
#[derive(Clone, Debug)]
pub struct Network<E: Element> {
    pub config: UNetConfig,
    /// Output (image) size.
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    noise: Tensor<E>,
    params: Vec<Param<E>>,
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    pub heads: BTreeMap<String, Var>,
    /// One Var per parameter, in `Network::params` order.
    pub param_vars: Vec<Var>,
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Builds a network with deterministic parameters and noise for a seed.
pub fn build_unet<E: Element>(
    config: &UNetConfig,
    image_size: (usize, usize),
    seed: u64,
) -> Result<Network<E>, NnError> {
    config.validate()?;
    let (h, w) = image_size;
    let min_side = 1usize << config.depth;
    if h < min_side || w < min_side {
        return Err(NnError::ImageTooSmall {
            h,
            w,
            depth: config.depth,
        });
    }
    let (inner_h, inner_w) = (round_up(h, min_side), round_up(w, min_side));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<Param<E>> = Vec::new();
    fn conv<E: Element>(
        params: &mut Vec<Param<E>>,
        name: String,
        c_out: usize,
        c_in: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) {
        let fan_in = c_in * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let value: Vec<E> = (0..c_out * fan_in)
            .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        params.push(Param {
            name,
            shape: Shape(vec![c_out, c_in, k, k]),
            value,
        });
    }

    for i in 0..config.depth {
        let ch = config.channels[i];
        conv(&mut params, format!("enc{i}.conv1"), ch, config.enc_in(i), 3, &mut rng);
        conv(&mut params, format!("enc{i}.conv2"), ch, ch, 3, &mut rng);
    }
    for i in 0..config.depth {
        conv(
            &mut params,
            format!("skip{i}"),
            config.skip_channels,
            config.enc_in(i),
            1,
            &mut rng,
        );
    }
    for r in (0..config.depth).rev() {
        let ch = config.channels[r];
        let c_in = config.dec_below(r) + config.skip_channels;
        conv(&mut params, format!("dec{r}.conv1"), ch, c_in, 3, &mut rng);
        conv(&mut params, format!("dec{r}.conv2"), ch, ch, 3, &mut rng);
    }
    for head in &config.heads {
        conv(
            &mut params,
            format!("head_{}.weight", head.name),
            head.channels,
            config.channels[0],
            3,
            &mut rng,
        );
        params.push(Param {
            name: format!("head_{}.bias", head.name),
            shape: Shape(vec![head.channels]),
            value: vec![E::zero(); head.channels],
        });
    }

    let noise_shape = Shape::chw(config.input_noise_channels, inner_h, inner_w);
    let noise_data: Vec<E> = (0..noise_shape.numel())
        .map(|_| E::from_f64(rng.gen_range(0.0..NOISE_AMPLITUDE)))
        .collect();
    let noise = Tensor::new(noise_shape, noise_data).expect("noise shape");

    Ok(Network {
        config: config.clone(),
        height: h,
        width: w,
        seed,
        noise,
        params,
    })
}

impl<E: Element> Network<E> {
    pub fn params(&self) -> &[Param<E>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<E>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<E>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn noise(&self) -> &Tensor<E> {
        &self.noise
    }

    /// FNV-1a over the bit patterns of parameters and noise.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |bits: u64| {
            for byte in bits.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for p in &self.params {
            for &v in &p.value {
                eat(v.to_f64().to_bits());
            }
        }
        for &v in &self.noise.data {
            eat(v.to_f64().to_bits());
        }
        hash
    }

    /// Runs the network on a tape; returns one cropped output per head.
    pub fn forward(&self, tape: &mut Tape<E>) -> Result<ForwardPass, NnError> {
        let mut param_vars = Vec::with_capacity(self.params.len());
        let mut by_name: BTreeMap<&str, Var> = BTreeMap::new();
        for p in &self.params {
            let v = tape.param(p.shape.clone(), p.value.clone())?;
            param_vars.push(v);
            by_name.insert(&p.name, v);
        }
        let noise = tape.leaf(self.noise.clone());

        let slope = E::from_f64(LEAKY_SLOPE);
        let eps = E::from_f64(NORM_EPS);
        let block = |tape: &mut Tape<E>, x: Var, w: Var, stride: usize| -> Result<Var, TensorError> {
            let y = tape.conv2d(x, w, stride)?;
            let y = tape.instance_norm(y, eps)?;
            tape.leaky_relu(y, slope)
        };

        // Encoder. enc[i] is the input of down block i.
        let mut enc = vec![noise];
        for i in 0..self.config.depth {
            let x = *enc.last().unwrap();
            let y = block(tape, x, by_name[format!("enc{i}.conv1").as_str()], 2)?;
            let y = block(tape, y, by_name[format!("enc{i}.conv2").as_str()], 1)?;
            enc.push(y);
        }
        // Skip projections at each resolution, including full resolution.
        let mut skips = Vec::with_capacity(self.config.depth);
        for i in 0..self.config.depth {
            skips.push(block(tape, enc[i], by_name[format!("skip{i}").as_str()], 1)?);
        }
        // Decoder.
        let mut cur = *enc.last().unwrap();
        for r in (0..self.config.depth).rev() {
            let up = tape.upsample_nearest(cur, 2)?;
            let cat = tape.concat_channels(&[up, skips[r]])?;
            let y = block(tape, cat, by_name[format!("dec{r}.conv1").as_str()], 1)?;
            cur = block(tape, y, by_name[format!("dec{r}.conv2").as_str()], 1)?;
        }

        let mut heads = BTreeMap::new();
        for head in &self.config.heads {
            let w = by_name[format!("head_{}.weight", head.name).as_str()];
            let b = by_name[format!("head_{}.bias", head.name).as_str()];
            let y = tape.conv2d(cur, w, 1)?;
            let y = tape.bias_add(y, b)?;
            let y = tape.sigmoid(y);
            let y = tape.crop(y, 0, 0, self.height, self.width)?;
            heads.insert(head.name.clone(), y);
        }
        Ok(ForwardPass { heads, param_vars })
    }
}

/// Copies all parameters from `src` into `dst`. Configs and sizes must match.
pub fn copy_weights<E: Element>(src: &Network<E>, dst: &mut Network<E>) -> Result<(), NnError> {
    if src.config != dst.config || (src.height, src.width) != (dst.height, dst.width) {
        return Err(NnError::ConfigMismatch);
    }
    for (s, d) in src.params.iter().zip(dst.params.iter_mut()) {
        d.value.clone_from(&s.value);
    }
    Ok(())
}

#[derive(thiserror::Error, Debug)]
pub enum NnError {
    #[error("invalid network config: {0}")]
    BadConfig(String),
    #[error("image {h}x{w} too small for depth {depth}; reduce depth so 2^depth fits")]
    ImageTooSmall { h: usize, w: usize, depth: usize },
    #[error("network configs or image sizes do not match")]
    ConfigMismatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
