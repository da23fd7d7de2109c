use rayon::prelude::*;

use super::{NetworkConfig, SkipSource, SpectralInit};
use crate::error::{shape_err, Result};
use crate::tensor::kernels::retained_modes;
use crate::tensor::{Complex, ComplexGrid, Graph, Padding, ParamId, ParamStore, RealGrid, RngState, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormParams {
    pub gain: ParamId,
    pub shift: ParamId,
}

/// Complex `(k_h, k_w, c_in, c_out)` weights over the retained modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralWeights {
    pub r: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderBlock {
    pub conv1: ConvParams,
    pub norm1: NormParams,
    pub conv2: ConvParams,
    pub norm2: NormParams,
    pub spectral: Option<SpectralWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BottleneckBlock {
    pub conv: ConvParams,
    pub norm: NormParams,
    pub spectral: Option<SpectralWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderBlock {
    pub upconv: ConvParams,
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    pub norm: NormParams,
    pub spectral: Option<SpectralWeights>,
}

/// Parameter handles of every block. `decoders[i]` pairs with `encoders[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub encoders: Vec<EncoderBlock>,
    pub bottleneck: BottleneckBlock,
    pub decoders: Vec<DecoderBlock>,
    pub head: ConvParams,
}

/// All trainable parameters plus the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Scalar> {
    pub config: NetworkConfig,
    pub store: ParamStore<T>,
    pub layout: Layout,
}

struct Builder<'r, T: Scalar> {
    store: ParamStore<T>,
    rng: &'r mut RngState,
    init: SpectralInit,
}

impl<T: Scalar> Builder<'_, T> {
    fn uniform(&mut self, name: String, dims: &[usize], bound: f64) -> ParamId {
        let g = RealGrid::from_fn(dims, |_| T::lit(self.rng.uniform_range(-bound, bound)));
        self.store.add(name, Tensor::Real(g))
    }

    fn zeros(&mut self, name: String, n: usize) -> ParamId {
        self.store.add(name, Tensor::Real(RealGrid::zeros(&[n])))
    }

    /// LeCun-uniform kernel, zero bias.
    fn conv(&mut self, name: &str, k: usize, ci: usize, co: usize) -> ConvParams {
        let bound = (3.0 / (k * k * ci) as f64).sqrt();
        ConvParams {
            kernel: self.uniform(format!("{name}.kernel"), &[k, k, ci, co], bound),
            bias: self.zeros(format!("{name}.bias"), co),
        }
    }

    /// Each output pixel of a stride-2 transpose conv sees one tap per input channel.
    fn upconv(&mut self, name: &str, ci: usize, co: usize) -> ConvParams {
        let bound = (3.0 / ci as f64).sqrt();
        ConvParams {
            kernel: self.uniform(format!("{name}.kernel"), &[2, 2, ci, co], bound),
            bias: self.zeros(format!("{name}.bias"), co),
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> NormParams {
        NormParams {
            gain: self.store.add(format!("{name}.gain"), Tensor::Real(RealGrid::filled(&[c], T::one()))),
            shift: self.zeros(format!("{name}.shift"), c),
        }
    }

    fn spectral(&mut self, name: &str, on: bool, kh: usize, kw: usize, c: usize) -> Option<SpectralWeights> {
        if !on {
            return None;
        }
        let std = match self.init {
            SpectralInit::ModeScaled => 1.0 / (c as f64 * ((kh * kw) as f64).sqrt()),
            SpectralInit::FanIn => 1.0 / (c as f64).sqrt(),
        };
        // Complex Gaussian: E|R|² = std², split evenly between parts.
        let part = std / 2f64.sqrt();
        let data = (0..kh * kw * c * c)
            .map(|_| Complex::new(T::lit(part * self.rng.normal()), T::lit(part * self.rng.normal())))
            .collect();
        let g = ComplexGrid::from_vec(&[kh, kw, c, c], data).expect("volume matches");
        Some(SpectralWeights {
            r: self.store.add(format!("{name}.spectral"), Tensor::Complex(g)),
        })
    }
}

/// Fresh parameters for `cfg`, drawn from `rng`.
pub fn init_params<T: Scalar>(cfg: &NetworkConfig, rng: &mut RngState) -> Result<ModelState<T>> {
    cfg.validate()?;
    let mut b = Builder { store: ParamStore::new(), rng, init: cfg.spectral_init };
    let modes = |level: usize| {
        let (h, w) = cfg.resolution(level);
        (cfg.modes(h), cfg.modes(w))
    };

    let mut encoders = Vec::with_capacity(cfg.depth);
    let mut c_in = 1;
    for i in 0..cfg.depth {
        let c = cfg.stage_filters(i);
        let name = format!("enc{}", i + 1);
        let (kh, kw) = modes(i + 1);
        encoders.push(EncoderBlock {
            conv1: b.conv(&format!("{name}.conv1"), 3, c_in, c),
            norm1: b.norm(&format!("{name}.norm1"), c),
            conv2: b.conv(&format!("{name}.conv2"), 3, c, c),
            norm2: b.norm(&format!("{name}.norm2"), c),
            spectral: b.spectral(&name, cfg.spectral, kh, kw, c),
        });
        c_in = c;
    }
    let cb = cfg.bottleneck_filters;
    let (kh, kw) = modes(cfg.depth);
    let bottleneck = BottleneckBlock {
        conv: b.conv("bottleneck.conv", 3, c_in, cb),
        norm: b.norm("bottleneck.norm", cb),
        spectral: b.spectral("bottleneck", cfg.spectral, kh, kw, cb),
    };
    let mut decoders = Vec::with_capacity(cfg.depth);
    let mut below = cb;
    for i in (0..cfg.depth).rev() {
        let c = cfg.stage_filters(i);
        let name = format!("dec{}", i + 1);
        let (kh, kw) = modes(i);
        decoders.push(DecoderBlock {
            upconv: b.upconv(&format!("{name}.upconv"), below, c),
            conv1: b.conv(&format!("{name}.conv1"), 3, 2 * c, c),
            conv2: b.conv(&format!("{name}.conv2"), 3, c, c),
            norm: b.norm(&format!("{name}.norm"), c),
            spectral: b.spectral(&name, cfg.spectral, kh, kw, c),
        });
        below = c;
    }
    decoders.reverse();
    let head = b.conv("head", 1, cfg.base_filters, cfg.output_channels);
    Ok(ModelState {
        config: cfg.clone(),
        store: b.store,
        layout: Layout { encoders, bottleneck, decoders, head },
    })
}

fn conv<T: Scalar>(g: &mut Graph<T>, x: Var, p: ConvParams) -> Result<Var> {
    let (k, b) = (g.param(p.kernel), g.param(p.bias));
    g.conv2d(x, k, b, Padding::Same)
}

fn norm<T: Scalar>(g: &mut Graph<T>, x: Var, p: NormParams, cfg: &NetworkConfig) -> Result<Var> {
    let c = *g.value(x).dims().last().unwrap_or(&1);
    let (gain, shift) = (g.param(p.gain), g.param(p.shift));
    g.group_norm(x, cfg.groups(c), gain, shift, cfg.norm_eps)
}

/// `|ifft2(R · truncate(fft2(x)))|`: mode-truncated per-mode channel mixing,
/// zero-padded back to the full spectrum, then the elementwise magnitude.
/// The retained mode counts are read from `R`'s leading dims.
pub fn spectral_layer<T: Scalar>(g: &mut Graph<T>, x: Var, r: Var) -> Result<Var> {
    let dims = g.value(x).dims().to_vec();
    if dims.len() != 4 {
        return shape_err(format!("spectral layer expects (batch, h, w, c), got {dims:?}"));
    }
    let rd = g.value(r).dims().to_vec();
    if rd.len() != 4 || rd[0] > dims[1] || rd[1] > dims[2] {
        return shape_err(format!("spectral weights {rd:?} do not fit a {}×{} layer", dims[1], dims[2]));
    }
    let rows = retained_modes(dims[1], rd[0]);
    let cols = retained_modes(dims[2], rd[1]);
    let f = g.fft2(x)?;
    let z = g.spectral_mix(f, r, rows, cols)?;
    let y = g.ifft2(z)?;
    g.magnitude(y)
}

/// Grid-level spectral layer on a rank-3 `(h, w, c_in)` input.
pub fn apply_spectral<T: Scalar>(x: &RealGrid<T>, r: &ComplexGrid<T>) -> Result<RealGrid<T>> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let xv = g.input(x.clone());
    let rv = g.constant(Tensor::Complex(r.clone()));
    let out = spectral_layer(&mut g, xv, rv)?;
    let (h, w, _) = x.hwc();
    let y = g.real_value(out)?.clone();
    let c = y.dims()[3];
    y.reshape(&[h, w, c])
}

fn maybe_spectral<T: Scalar>(g: &mut Graph<T>, x: Var, s: Option<SpectralWeights>) -> Result<Var> {
    match s {
        Some(s) => {
            let r = g.param(s.r);
            spectral_layer(g, x, r)
        }
        None => Ok(x),
    }
}

/// Returns `(output, skip)`: conv→tanh→norm→dropout→conv→tanh→norm is the
/// skip; the output is the spectral layer applied to its 2×2 max-pool.
pub fn encoder_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    block: &EncoderBlock,
    cfg: &NetworkConfig,
    rng: &mut RngState,
    training: bool,
) -> Result<(Var, Var)> {
    let h = conv(g, x, block.conv1)?;
    let h = g.tanh(h)?;
    let h = norm(g, h, block.norm1, cfg)?;
    let h = g.dropout(h, cfg.dropout_rate, rng, training)?;
    let h = conv(g, h, block.conv2)?;
    let h = g.tanh(h)?;
    let skip = norm(g, h, block.norm2, cfg)?;
    let pooled = g.maxpool2(skip)?;
    let out = maybe_spectral(g, pooled, block.spectral)?;
    let skip = match cfg.skip_source {
        SkipSource::PrePool => skip,
        SkipSource::PostSpectral => g.upsample2(out)?,
    };
    Ok((out, skip))
}

pub fn bottleneck_forward<T: Scalar>(g: &mut Graph<T>, x: Var, block: &BottleneckBlock, cfg: &NetworkConfig) -> Result<Var> {
    let h = conv(g, x, block.conv)?;
    let h = g.tanh(h)?;
    let h = norm(g, h, block.norm, cfg)?;
    maybe_spectral(g, h, block.spectral)
}

/// Transpose-conv upsample, concat with `skip`, conv→ReLU→dropout→conv→ReLU→norm,
/// then the spectral layer.
pub fn decoder_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    skip: Var,
    block: &DecoderBlock,
    cfg: &NetworkConfig,
    rng: &mut RngState,
    training: bool,
) -> Result<Var> {
    let (xd, sd) = (g.value(x).dims().to_vec(), g.value(skip).dims().to_vec());
    if xd.len() != 4 || sd.len() != 4 || sd[1] != 2 * xd[1] || sd[2] != 2 * xd[2] {
        return shape_err(format!("decoder input {xd:?} does not upsample onto skip {sd:?}"));
    }
    let (k, b) = (g.param(block.upconv.kernel), g.param(block.upconv.bias));
    let up = g.conv_transpose2(x, k, b)?;
    let h = g.concat_channels(up, skip)?;
    let h = conv(g, h, block.conv1)?;
    let h = g.relu(h)?;
    let h = g.dropout(h, cfg.dropout_rate, rng, training)?;
    let h = conv(g, h, block.conv2)?;
    let h = g.relu(h)?;
    let h = norm(g, h, block.norm, cfg)?;
    maybe_spectral(g, h, block.spectral)
}

impl<T: Scalar> ModelState<T> {
    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Records the network on `g`. `x` is `(batch, H, W, 1)`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, rng: &mut RngState, training: bool) -> Result<Var> {
        let cfg = &self.config;
        let d = g.value(x).dims().to_vec();
        if d.len() != 4 || (d[1], d[2]) != cfg.input_size || d[3] != 1 {
            return shape_err(format!(
                "network expects (batch, {}, {}, 1) input, got {d:?}",
                cfg.input_size.0, cfg.input_size.1
            ));
        }
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut h = x;
        for block in &self.layout.encoders {
            let (out, skip) = encoder_block_forward(g, h, block, cfg, rng, training)?;
            skips.push(skip);
            h = out;
        }
        h = bottleneck_forward(g, h, &self.layout.bottleneck, cfg)?;
        for (block, skip) in self.layout.decoders.iter().zip(skips).rev() {
            h = decoder_block_forward(g, h, skip, block, cfg, rng, training)?;
        }
        let y = conv(g, h, self.layout.head)?;
        if cfg.final_softmax {
            g.softmax_channels(y)
        } else {
            Ok(y)
        }
    }

    /// `l1_coefficient · Σ|kernel|` over every conv and transpose-conv kernel.
    pub fn l1_penalty(&self, g: &mut Graph<T>) -> Result<Option<Var>> {
        if self.config.l1_coefficient == 0.0 {
            return Ok(None);
        }
        let mut total: Option<Var> = None;
        for id in self.kernel_ids() {
            let k = g.param(id);
            let s = g.abs_sum(k)?;
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        match total {
            Some(t) => Ok(Some(g.scale(t, self.config.l1_coefficient)?)),
            None => Ok(None),
        }
    }

    pub fn kernel_ids(&self) -> Vec<ParamId> {
        let l = &self.layout;
        let mut ids = Vec::new();
        for e in &l.encoders {
            ids.extend([e.conv1.kernel, e.conv2.kernel]);
        }
        ids.push(l.bottleneck.conv.kernel);
        for d in &l.decoders {
            ids.extend([d.upconv.kernel, d.conv1.kernel, d.conv2.kernel]);
        }
        ids.push(l.head.kernel);
        ids
    }

    /// Inference on one `(H, W, 1)` patch.
    pub fn predict(&self, x: &RealGrid<T>) -> Result<RealGrid<T>> {
        let mut g = Graph::new(&self.store);
        let xv = g.input(x.clone());
        let mut rng = RngState::new(0);
        let y = self.forward(&mut g, xv, &mut rng, false)?;
        let out = g.real_value(y)?.clone();
        let d = out.dims().to_vec();
        out.reshape(&d[1..])
    }

    /// Inference on many patches, one graph per patch in parallel; the
    /// result does not depend on the worker count.
    pub fn predict_many(&self, xs: &[RealGrid<T>]) -> Result<Vec<RealGrid<T>>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }
}
