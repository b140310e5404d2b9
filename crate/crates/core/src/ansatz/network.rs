use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ops::{self, Tensor};
use crate::error::{FwiError, Result};
use crate::fields::{Grid, ScalarField};

/// Shape of the generator: latent size, one entry of output channels per
/// upsampling block (each block is two convolutions with PReLU), and the
/// interior grid the output is cropped to.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub latent_channels: usize,
    pub latent_dims: Vec<usize>,
    pub block_channels: Vec<usize>,
    pub output_dims: Vec<usize>,
    pub pixel_norm: bool,
    pub eps: f64,
}

impl NetworkConfig {
    /// The 2D plate generator: latent 128×8×4, five blocks, output 252×124.
    pub fn plate_2d() -> Self {
        Self {
            latent_channels: 128,
            latent_dims: vec![8, 4],
            block_channels: vec![128, 64, 64, 32, 32],
            output_dims: vec![252, 124],
            pixel_norm: false,
            eps: 1e-5,
        }
    }

    /// The 3D cube generator: latent 256×3×3×3, twice the 2D filters,
    /// output 92³.
    pub fn volume_3d() -> Self {
        Self {
            latent_channels: 256,
            latent_dims: vec![3, 3, 3],
            block_channels: vec![256, 128, 128, 64, 64],
            output_dims: vec![92, 92, 92],
            pixel_norm: true,
            eps: 1e-5,
        }
    }

    /// Smallest latent that covers `output_dims` after the blocks and the
    /// final valid convolution.
    pub fn for_grid(output_dims: &[usize], latent_channels: usize, block_channels: Vec<usize>, eps: f64) -> Self {
        let factor = 1usize << block_channels.len();
        let latent_dims = output_dims.iter().map(|&n| (n + 2).div_ceil(factor)).collect();
        Self {
            latent_channels,
            latent_dims,
            block_channels,
            output_dims: output_dims.to_vec(),
            pixel_norm: false,
            eps,
        }
    }

    pub fn with_pixel_norm(mut self, on: bool) -> Self {
        self.pixel_norm = on;
        self
    }

    pub fn ndim(&self) -> usize {
        self.output_dims.len()
    }

    /// Spatial size before the central crop.
    pub fn generated_dims(&self) -> Vec<usize> {
        let factor = 1usize << self.block_channels.len();
        self.latent_dims.iter().map(|&n| n * factor - 2).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let nd = self.ndim();
        if !(2..=3).contains(&nd) || self.latent_dims.len() != nd {
            return Err(FwiError::param(
                "network.latent_dims",
                format!("latent has {} axes, output has {nd}", self.latent_dims.len()),
            ));
        }
        if self.latent_channels == 0 || self.block_channels.contains(&0) {
            return Err(FwiError::param("network.block_channels", "channel counts must be positive"));
        }
        if self.block_channels.is_empty() {
            return Err(FwiError::param("network.block_channels", "at least one block is required"));
        }
        if self.latent_dims.contains(&0) {
            return Err(FwiError::param("network.latent_dims", "latent sizes must be positive"));
        }
        let gen = self.generated_dims();
        if gen.iter().zip(&self.output_dims).any(|(g, o)| g < o) {
            return Err(FwiError::param(
                "network.latent_dims",
                format!("generated size {gen:?} is smaller than the grid {:?}", self.output_dims),
            ));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(FwiError::param("network.eps", format!("need 0 < eps < 1, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    cin: usize,
    cout: usize,
    pad: usize,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
enum Layer {
    Upsample,
    Conv(usize),
    Prelu(usize),
    PixelNorm,
}

/// Offsets of every parameter block inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    ndim: usize,
    layers: Vec<Layer>,
    convs: Vec<ConvSlot>,
    slopes: Vec<usize>,
    final_conv: ConvSlot,
    sigmoid: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let nk = ops::kernel_len(cfg.ndim());
        let mut next = 0;
        let conv = |cin: usize, cout: usize, pad: usize, next: &mut usize| {
            let slot = ConvSlot {
                cin,
                cout,
                pad,
                weight: *next,
                bias: *next + cin * cout * nk,
            };
            *next += cin * cout * nk + cout;
            slot
        };
        let mut layers = Vec::new();
        let mut convs = Vec::new();
        let mut slopes = Vec::new();
        let mut cin = cfg.latent_channels;
        for &cout in &cfg.block_channels {
            layers.push(Layer::Upsample);
            for c_in in [cin, cout] {
                convs.push(conv(c_in, cout, 1, &mut next));
                layers.push(Layer::Conv(convs.len() - 1));
                slopes.push(next);
                next += 1;
                layers.push(Layer::Prelu(slopes.len() - 1));
                if cfg.pixel_norm {
                    layers.push(Layer::PixelNorm);
                }
            }
            cin = cout;
        }
        let final_conv = conv(cin, 1, 0, &mut next);
        let sigmoid = next;
        Self {
            ndim: cfg.ndim(),
            layers,
            convs,
            slopes,
            final_conv,
            sigmoid,
            total: sigmoid + 1,
        }
    }

    fn conv_len(&self, c: &ConvSlot) -> usize {
        c.cin * c.cout * ops::kernel_len(self.ndim)
    }
}

/// Named contiguous range of the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Activations the reverse pass needs, one entry per layer input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Option<Tensor>>,
    final_input: Tensor,
    pre_sigmoid: Tensor,
}

/// One cotangent per network parameter, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradient(Vec<f64>);

impl NetworkGradient {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorNetwork {
    config: NetworkConfig,
    layout: Layout,
    latent: Tensor,
    params: Vec<f64>,
}

impl GeneratorNetwork {
    /// Glorot-uniform weights, zero biases, PReLU slopes 0.25, sigmoid slope
    /// 1 and a standard-normal latent, all drawn from one seeded stream.
    pub fn glorot_init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latent_len = config.latent_channels * config.latent_dims.iter().product::<usize>();
        let latent_data: Vec<f64> = (0..latent_len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let latent = Tensor::new(config.latent_channels, config.latent_dims.clone(), latent_data)?;
        let mut params = vec![0.0; layout.total];
        let nk = ops::kernel_len(layout.ndim) as f64;
        for slot in layout.convs.iter().chain(std::iter::once(&layout.final_conv)) {
            let limit = (6.0 / ((slot.cin as f64 + slot.cout as f64) * nk)).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let n = layout.conv_len(slot);
            for w in &mut params[slot.weight..slot.weight + n] {
                *w = dist.sample(&mut rng);
            }
        }
        for &s in &layout.slopes {
            params[s] = 0.25;
        }
        params[layout.sigmoid] = 1.0;
        Ok(Self {
            config,
            layout,
            latent,
            params,
        })
    }

    /// Rebuilds a network from stored latent and parameters.
    pub fn from_parts(config: NetworkConfig, latent: Vec<f64>, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(FwiError::ShapeMismatch(format!(
                "network needs {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        let latent = Tensor::new(config.latent_channels, config.latent_dims.clone(), latent)?;
        Ok(Self {
            config,
            layout,
            latent,
            params,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn latent(&self) -> &[f64] {
        self.latent.data()
    }

    /// Named parameter blocks in storage order.
    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        let conv_blocks = |name: &str, slot: &ConvSlot, out: &mut Vec<ParamBlock>| {
            out.push(ParamBlock {
                name: format!("{name}.weight"),
                start: slot.weight,
                len: self.layout.conv_len(slot),
            });
            out.push(ParamBlock {
                name: format!("{name}.bias"),
                start: slot.bias,
                len: slot.cout,
            });
        };
        for (i, slot) in self.layout.convs.iter().enumerate() {
            conv_blocks(&format!("conv{i}"), slot, &mut out);
            out.push(ParamBlock {
                name: format!("prelu{i}.slope"),
                start: self.layout.slopes[i],
                len: 1,
            });
        }
        conv_blocks("final", &self.layout.final_conv, &mut out);
        out.push(ParamBlock {
            name: "sigmoid.slope".into(),
            start: self.layout.sigmoid,
            len: 1,
        });
        out
    }

    fn conv_params(&self, slot: &ConvSlot) -> (&[f64], &[f64]) {
        let n = self.layout.conv_len(slot);
        (
            &self.params[slot.weight..slot.weight + n],
            &self.params[slot.bias..slot.bias + slot.cout],
        )
    }

    /// Evaluates `γ̂ = ε + (1−ε)·σ(a·z)` cropped to `grid`.
    pub fn forward(&self, grid: &Grid) -> Result<(ScalarField, ForwardCache)> {
        if grid.dims() != self.config.output_dims.as_slice() {
            return Err(FwiError::GridMismatch(format!(
                "network produces {:?}, grid is {:?}",
                self.config.output_dims,
                grid.dims()
            )));
        }
        if let Some(p) = self.params.iter().position(|v| !v.is_finite()) {
            return Err(FwiError::Divergence(format!("network parameter {p} is not finite")));
        }
        let mut inputs = Vec::with_capacity(self.layout.layers.len());
        let mut x = self.latent.clone();
        for layer in &self.layout.layers {
            let y = match *layer {
                Layer::Upsample => {
                    inputs.push(None);
                    ops::upsample(&x)
                }
                Layer::Conv(i) => {
                    let slot = &self.layout.convs[i];
                    let (w, b) = self.conv_params(slot);
                    let y = ops::conv_forward(&x, w, b, slot.pad);
                    inputs.push(Some(x));
                    y
                }
                Layer::Prelu(i) => {
                    let y = ops::prelu(&x, self.params[self.layout.slopes[i]]);
                    inputs.push(Some(x));
                    y
                }
                Layer::PixelNorm => {
                    let y = ops::pixel_norm(&x);
                    inputs.push(Some(x));
                    y
                }
            };
            x = y;
        }
        let slot = &self.layout.final_conv;
        let (w, b) = self.conv_params(slot);
        let pre_sigmoid = ops::conv_forward(&x, w, b, slot.pad);
        let a = self.params[self.layout.sigmoid];
        let eps = self.config.eps;
        let mut full = pre_sigmoid.clone();
        for v in full.data_mut() {
            *v = eps + (1.0 - eps) * ops::sigmoid(a * *v);
        }
        let cropped = ops::crop(&full, &self.config.output_dims);
        if cropped.data().iter().any(|v| !v.is_finite()) {
            return Err(FwiError::Divergence("network output is not finite".into()));
        }
        let field = ScalarField::new(grid.clone(), cropped.into_data())?;
        Ok((
            field,
            ForwardCache {
                inputs,
                final_input: x,
                pre_sigmoid,
            },
        ))
    }

    /// Gradient of `⟨upstream, γ̂(θ)⟩` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, upstream: &ScalarField) -> Result<NetworkGradient> {
        if upstream.grid().dims() != self.config.output_dims.as_slice() {
            return Err(FwiError::GridMismatch("upstream field does not match network output".into()));
        }
        if cache.inputs.len() != self.layout.layers.len() {
            return Err(FwiError::ShapeMismatch("cache belongs to a different network".into()));
        }
        let mut grad = vec![0.0; self.layout.total];
        let up = Tensor::new(1, self.config.output_dims.clone(), upstream.values().to_vec())?;
        let mut g = ops::crop_adjoint(&up, cache.pre_sigmoid.dims());

        let a = self.params[self.layout.sigmoid];
        let scale = 1.0 - self.config.eps;
        let mut grad_a = 0.0;
        for (gv, &z) in g.data_mut().iter_mut().zip(cache.pre_sigmoid.data()) {
            let s = ops::sigmoid(a * z);
            let ds = scale * s * (1.0 - s);
            grad_a += *gv * ds * z;
            *gv *= ds * a;
        }
        grad[self.layout.sigmoid] = grad_a;

        let slot = &self.layout.final_conv;
        let (w, _) = self.conv_params(slot);
        ops::check_same(&cache.pre_sigmoid, &g, "final convolution")?;
        let (gx, gw, gb) = ops::conv_backward(&cache.final_input, w, &g, slot.pad);
        grad[slot.weight..slot.weight + gw.len()].copy_from_slice(&gw);
        grad[slot.bias..slot.bias + gb.len()].copy_from_slice(&gb);
        g = gx;

        for (layer, input) in self.layout.layers.iter().zip(&cache.inputs).rev() {
            g = match (*layer, input) {
                (Layer::Upsample, _) => ops::upsample_adjoint(&g),
                (Layer::Conv(i), Some(x)) => {
                    let slot = &self.layout.convs[i];
                    let (w, _) = self.conv_params(slot);
                    let (gx, gw, gb) = ops::conv_backward(x, w, &g, slot.pad);
                    grad[slot.weight..slot.weight + gw.len()].copy_from_slice(&gw);
                    grad[slot.bias..slot.bias + gb.len()].copy_from_slice(&gb);
                    gx
                }
                (Layer::Prelu(i), Some(x)) => {
                    ops::check_same(x, &g, "PReLU")?;
                    let (gx, gs) = ops::prelu_backward(x, self.params[self.layout.slopes[i]], &g);
                    grad[self.layout.slopes[i]] = gs;
                    gx
                }
                (Layer::PixelNorm, Some(x)) => {
                    ops::check_same(x, &g, "pixel norm")?;
                    ops::pixel_norm_backward(x, &g)
                }
                _ => return Err(FwiError::ShapeMismatch("cache is missing an activation".into())),
            };
        }
        Ok(NetworkGradient(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            latent_channels: 4,
            latent_dims: vec![3, 3],
            block_channels: vec![4, 4],
            output_dims: vec![8, 8],
            pixel_norm: false,
            eps: 1e-5,
        }
    }

    fn grid(dims: &[usize]) -> Grid {
        Grid::with_spacing(dims, &vec![1e-3; dims.len()], 1).unwrap()
    }

    #[test]
    fn reference_parameter_counts() {
        assert_eq!(NetworkConfig::plate_2d().param_count(), 526_252);
        assert_eq!(NetworkConfig::volume_3d().param_count(), 6_306_764);
        assert_eq!(NetworkConfig::plate_2d().with_pixel_norm(true).param_count(), 526_252);
        assert_eq!(NetworkConfig::volume_3d().with_pixel_norm(false).param_count(), 6_306_764);
    }

    #[test]
    fn reference_shapes() {
        assert_eq!(NetworkConfig::plate_2d().generated_dims(), vec![254, 126]);
        assert_eq!(NetworkConfig::volume_3d().generated_dims(), vec![94, 94, 94]);
        let c = NetworkConfig::for_grid(&[64, 32], 8, vec![8, 8, 8], 1e-5);
        assert_eq!(c.latent_dims, vec![9, 5]);
        c.validate().unwrap();
    }

    #[test]
    fn zero_weights_give_half_sigmoid() {
        let cfg = tiny();
        let mut net = GeneratorNetwork::glorot_init(cfg.clone(), 1).unwrap();
        let sig = net.layout.sigmoid;
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            if i != sig {
                *p = 0.0;
            }
        }
        let (f, _) = net.forward(&grid(&[8, 8])).unwrap();
        let expected = cfg.eps + (1.0 - cfg.eps) * 0.5;
        assert!(f.values().iter().all(|v| *v == expected));
    }

    #[test]
    fn same_seed_same_network() {
        let a = GeneratorNetwork::glorot_init(tiny(), 7).unwrap();
        let b = GeneratorNetwork::glorot_init(tiny(), 7).unwrap();
        let c = GeneratorNetwork::glorot_init(tiny(), 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.latent(), b.latent());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn output_inside_open_range() {
        let net = GeneratorNetwork::glorot_init(tiny().with_pixel_norm(true), 3).unwrap();
        let (f, _) = net.forward(&grid(&[8, 8])).unwrap();
        assert!(f.values().iter().all(|&v| v > 1e-5 && v < 1.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = GeneratorNetwork::glorot_init(tiny(), 3).unwrap();
        let g = grid(&[8, 8]);
        let (_, cache) = net.forward(&g).unwrap();
        let grad = net.backward(&cache, &ScalarField::zeros(&g)).unwrap();
        assert!(grad.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn final_bias_gradient_closed_form() {
        let net = GeneratorNetwork::glorot_init(tiny(), 5).unwrap();
        let g = grid(&[8, 8]);
        let (_, cache) = net.forward(&g).unwrap();
        let upstream = ScalarField::from_fn(&g, |c| (c[0] as f64 - c[1] as f64) * 0.1);
        let grad = net.backward(&cache, &upstream).unwrap();
        // crop offset is 1 on both axes of the 10×10 generated field
        let a = net.params()[net.layout.sigmoid];
        let mut expected = 0.0;
        for x in 0..8 {
            for y in 0..8 {
                let z = cache.pre_sigmoid.data()[(x + 1) * 10 + y + 1];
                let s = ops::sigmoid(a * z);
                expected += upstream.get(&[x, y]).unwrap() * (1.0 - 1e-5) * s * (1.0 - s) * a;
            }
        }
        let got = grad.values()[net.layout.final_conv.bias];
        assert!((got - expected).abs() < 1e-14 * expected.abs().max(1.0));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let net = GeneratorNetwork::glorot_init(tiny(), 1).unwrap();
        assert!(net.forward(&grid(&[8, 9])).is_err());
    }
}
