use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    concat_channels, maxpool2, maxpool2_backward, relu_backward_inplace, relu_inplace, split_channels, upsample2,
    upsample2_backward, Conv2d,
};
use crate::error::{Error, Result};
use crate::raster::Planes;

/// Width of the shared feature map.
pub const FEATURES: usize = 16;
pub const LANDCOVER_CLASSES: usize = 11;
/// Spatial sides must be multiples of this (three pooling stages).
pub const SIDE_MULTIPLE: usize = 8;

const RELU_GAIN: f64 = 2.449_489_742_783_178; // sqrt(6)
const HEAD_GAIN: f64 = 1.0;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Delineation head only.
    Stl,
    /// Delineation plus the auxiliary land-cover head.
    Mtl,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Stl => "stl",
            Mode::Mtl => "mtl",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stl" => Ok(Mode::Stl),
            "mtl" => Ok(Mode::Mtl),
            _ => Err(Error::Argument(format!("unknown mode {s:?}, expected stl or mtl"))),
        }
    }
}

const LAYER_NAMES: [&str; 8] = ["enc1", "enc2", "enc3", "dec1", "dec2", "feat", "head_d", "head_lc"];

/// Small encoder-decoder with a delineation head and an optional land-cover head.
///
/// Encoder: three stages of 3x3 conv + ReLU + 2x2 max-pool (16, 32, 64 channels).
/// Decoder: two stages of x2 upsample, skip concat, 3x3 conv + ReLU (32, 16),
/// then x2 upsample and a 3x3 conv + ReLU giving the shared features.
#[derive(Debug)]
pub struct MtlNetwork {
    in_channels: usize,
    layers: Vec<Conv2d>,
    version: u64,
}

impl Clone for MtlNetwork {
    fn clone(&self) -> Self {
        Self {
            in_channels: self.in_channels,
            layers: self.layers.clone(),
            version: fresh_version(),
        }
    }
}

impl PartialEq for MtlNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.in_channels == other.in_channels && self.layers == other.layers
    }
}

/// Intermediates of one forward pass, consumed by [`MtlNetwork::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    x: Planes,
    e1: Planes,
    arg1: Vec<u8>,
    p1: Planes,
    e2: Planes,
    arg2: Vec<u8>,
    p2: Planes,
    e3: Planes,
    arg3: Vec<u8>,
    cat1: Planes,
    d1: Planes,
    cat2: Planes,
    d2: Planes,
    u: Planes,
    phi: Planes,
}

impl ForwardCache {
    /// Shared feature map feeding both heads.
    pub fn features(&self) -> &Planes {
        &self.phi
    }
}

#[derive(Debug, Clone)]
pub struct Output {
    /// 1 x H x W.
    pub logits_d: Planes,
    /// 11 x H x W, present when requested and the network has the head.
    pub logits_lc: Option<Planes>,
}

/// Gradients (or any per-parameter tensors) in [`MtlNetwork::param_names`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &MtlNetwork) -> Self {
        Self {
            tensors: net.param_shapes().iter().map(|s| vec![0.0; s.iter().product()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flatten().copied()
    }
}

impl MtlNetwork {
    /// Fan-in scaled uniform weights, zero biases. Shared layers and `h_D`
    /// draw from one stream and `h_LC` from another, so STL and MTL networks
    /// built from the same seed share every common parameter.
    pub fn new(in_channels: usize, mode: Mode, seed: u64) -> Self {
        let f = FEATURES;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![
            Conv2d::init_uniform(in_channels, 16, 3, RELU_GAIN, &mut rng),
            Conv2d::init_uniform(16, 32, 3, RELU_GAIN, &mut rng),
            Conv2d::init_uniform(32, 64, 3, RELU_GAIN, &mut rng),
            Conv2d::init_uniform(64 + 64, 32, 3, RELU_GAIN, &mut rng),
            Conv2d::init_uniform(32 + 32, 16, 3, RELU_GAIN, &mut rng),
            Conv2d::init_uniform(16, f, 3, RELU_GAIN, &mut rng),
            Conv2d::init_uniform(f, 1, 1, HEAD_GAIN, &mut rng),
        ];
        if mode == Mode::Mtl {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            layers.push(Conv2d::init_uniform(f, LANDCOVER_CLASSES, 1, HEAD_GAIN, &mut rng));
        }
        Self {
            in_channels,
            layers,
            version: fresh_version(),
        }
    }

    /// All-zero parameters with the given layout.
    pub fn zeros(in_channels: usize, mode: Mode) -> Self {
        let mut net = Self::new(in_channels, mode, 0);
        for p in net.params_mut() {
            p.fill(0.0);
        }
        net
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn mode(&self) -> Mode {
        if self.layers.len() == 8 {
            Mode::Mtl
        } else {
            Mode::Stl
        }
    }

    pub fn has_landcover_head(&self) -> bool {
        self.mode() == Mode::Mtl
    }

    /// Removes `h_LC`, as done before deployment.
    pub fn drop_landcover_head(&mut self) {
        self.layers.truncate(7);
        self.version = fresh_version();
    }

    pub fn layers(&self) -> &[Conv2d] {
        &self.layers
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .zip(LAYER_NAMES)
            .flat_map(|(_, n)| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| [vec![l.cout, l.cin, l.k, l.k], vec![l.cout]])
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [&l.weight[..], &l.bias[..]]).collect()
    }

    /// Mutable parameter views; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = fresh_version();
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight[..], &mut l.bias[..]])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv2d::param_count).sum()
    }

    /// Rebuilds a network from tensors in [`param_names`](Self::param_names) order.
    pub fn from_params(in_channels: usize, mode: Mode, tensors: Vec<Vec<f64>>) -> Result<Self> {
        let mut net = Self::zeros(in_channels, mode);
        let shapes = net.param_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, got {}", shapes.len(), tensors.len())));
        }
        for ((dst, src), shape) in net.params_mut().into_iter().zip(&tensors).zip(&shapes) {
            if dst.len() != src.len() {
                return Err(Error::Checkpoint(format!("tensor of shape {shape:?} has {} values", src.len())));
            }
            dst.copy_from_slice(src);
        }
        Ok(net)
    }

    fn check_input(&self, x: &Planes) -> Result<()> {
        if x.channels != self.in_channels {
            return Err(Error::Shape(format!("input has {} channels, network expects {}", x.channels, self.in_channels)));
        }
        if x.height == 0 || x.width == 0 || !x.height.is_multiple_of(SIDE_MULTIPLE) || !x.width.is_multiple_of(SIDE_MULTIPLE) {
            return Err(Error::Shape(format!(
                "input {}x{} is not a non-empty multiple of {SIDE_MULTIPLE} on both sides",
                x.height, x.width
            )));
        }
        Ok(())
    }

    /// Forward pass for one item, keeping what backward needs.
    pub fn forward_item(&self, x: &Planes, with_landcover: bool) -> Result<(Output, ForwardCache)> {
        self.check_input(x)?;
        let l = &self.layers;
        let conv_relu = |i: usize, input: &Planes| {
            let mut y = l[i].forward(input);
            relu_inplace(&mut y);
            y
        };
        let e1 = conv_relu(0, x);
        let (p1, arg1) = maxpool2(&e1);
        let e2 = conv_relu(1, &p1);
        let (p2, arg2) = maxpool2(&e2);
        let e3 = conv_relu(2, &p2);
        let (p3, arg3) = maxpool2(&e3);
        let cat1 = concat_channels(&upsample2(&p3), &e3);
        let d1 = conv_relu(3, &cat1);
        let cat2 = concat_channels(&upsample2(&d1), &e2);
        let d2 = conv_relu(4, &cat2);
        let u = upsample2(&d2);
        let phi = conv_relu(5, &u);
        let logits_d = l[6].forward(&phi);
        let logits_lc = match l.get(7) {
            Some(head) if with_landcover => Some(head.forward(&phi)),
            _ => None,
        };
        let cache = ForwardCache {
            version: self.version,
            x: x.clone(),
            e1,
            arg1,
            p1,
            e2,
            arg2,
            p2,
            e3,
            arg3,
            cat1,
            d1,
            cat2,
            d2,
            u,
            phi,
        };
        Ok((Output { logits_d, logits_lc }, cache))
    }

    /// Batch forward; items are independent.
    pub fn forward(&self, xs: &[Planes]) -> Result<Vec<(Output, ForwardCache)>> {
        xs.iter().map(|x| self.forward_item(x, true)).collect()
    }

    /// Exact reverse-mode gradients for one item. `grad_lc` may be omitted,
    /// which is equivalent to a zero upstream gradient for `h_LC`.
    pub fn backward(&self, cache: &ForwardCache, grad_d: &Planes, grad_lc: Option<&Planes>) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::Cache("parameters changed since the forward pass".into()));
        }
        let (h, w) = (cache.phi.height, cache.phi.width);
        if (grad_d.channels, grad_d.height, grad_d.width) != (1, h, w) {
            return Err(Error::Shape("delineation gradient does not match the logits".into()));
        }
        let mut g = Gradients::zeros_like(self);
        let l = &self.layers;
        let grad_for = |i: usize, input: &Planes, out_grad: &Planes, need: bool, g: &mut Gradients| {
            let (gw, rest) = g.tensors[2 * i..].split_at_mut(1);
            l[i].backward(input, out_grad, &mut gw[0], &mut rest[0], need)
        };

        let mut g_phi = grad_for(6, &cache.phi, grad_d, true, &mut g).expect("input gradient");
        if let Some(glc) = grad_lc {
            if l.len() < 8 {
                return Err(Error::Shape("network has no land-cover head".into()));
            }
            if (glc.channels, glc.height, glc.width) != (LANDCOVER_CLASSES, h, w) {
                return Err(Error::Shape("land-cover gradient does not match the logits".into()));
            }
            let g_lc = grad_for(7, &cache.phi, glc, true, &mut g).expect("input gradient");
            g_phi.data.iter_mut().zip(&g_lc.data).for_each(|(a, b)| *a += b);
        }
        relu_backward_inplace(&mut g_phi, &cache.phi);
        let g_u = grad_for(5, &cache.u, &g_phi, true, &mut g).expect("input gradient");
        let mut g_d2 = upsample2_backward(&g_u);
        relu_backward_inplace(&mut g_d2, &cache.d2);
        let g_cat2 = grad_for(4, &cache.cat2, &g_d2, true, &mut g).expect("input gradient");
        let (g_up1, g_e2_skip) = split_channels(g_cat2, cache.d1.channels);
        let mut g_d1 = upsample2_backward(&g_up1);
        relu_backward_inplace(&mut g_d1, &cache.d1);
        let g_cat1 = grad_for(3, &cache.cat1, &g_d1, true, &mut g).expect("input gradient");
        let (g_up3, g_e3_skip) = split_channels(g_cat1, cache.e3.channels);
        let g_p3 = upsample2_backward(&g_up3);

        let mut g_e3 = maxpool2_backward(&g_p3, &cache.arg3, cache.e3.height, cache.e3.width);
        g_e3.data.iter_mut().zip(&g_e3_skip.data).for_each(|(a, b)| *a += b);
        relu_backward_inplace(&mut g_e3, &cache.e3);
        let g_p2 = grad_for(2, &cache.p2, &g_e3, true, &mut g).expect("input gradient");

        let mut g_e2 = maxpool2_backward(&g_p2, &cache.arg2, cache.e2.height, cache.e2.width);
        g_e2.data.iter_mut().zip(&g_e2_skip.data).for_each(|(a, b)| *a += b);
        relu_backward_inplace(&mut g_e2, &cache.e2);
        let g_p1 = grad_for(1, &cache.p1, &g_e2, true, &mut g).expect("input gradient");

        let mut g_e1 = maxpool2_backward(&g_p1, &cache.arg1, cache.e1.height, cache.e1.width);
        relu_backward_inplace(&mut g_e1, &cache.e1);
        grad_for(0, &cache.x, &g_e1, false, &mut g);
        Ok(g)
    }
}
