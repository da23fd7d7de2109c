//! Tape-based reverse-mode differentiation over the network's op set.
//!
//! A [`Graph`] records every op applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! returns the gradient of every reachable leaf and parameter.
//!
//! Complex nodes carry gradients as `∂L/∂re + i·∂L/∂im`.

use rustfft::num_complex::Complex;
use rustfft::FftDirection;

use super::fft::{nhwc, FftEngine};
use super::kernels::{self, ConvGeom, GroupStats, MixGeom, Padding, UpGeom};
use super::{ComplexGrid, ParamId, ParamStore, RealGrid, RngState, Scalar, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A scalar loss between a prediction and a target of equal shape.
pub trait PairLoss<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn value(&self, pred: &RealGrid<T>, target: &RealGrid<T>) -> Result<T>;

    /// Gradients of the loss with respect to `pred` and `target`.
    fn grad(&self, pred: &RealGrid<T>, target: &RealGrid<T>) -> (Vec<T>, Vec<T>);
}

/// Activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

enum Op<T: Scalar> {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    ConvTranspose { x: Var, k: Var, b: Var, geom: UpGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample { x: Var },
    Act { x: Var, kind: Activation },
    Dropout { x: Var, mask: Vec<T> },
    GroupNorm { x: Var, gain: Var, shift: Var, groups: usize, stats: GroupStats<T> },
    Concat { a: Var, b: Var },
    Fft2 { x: Var },
    Ifft2 { x: Var },
    SpectralMix { f: Var, r: Var, geom: MixGeom },
    Magnitude { z: Var },
    Softmax { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Scale { x: Var, c: T },
    Add { a: Var, b: Var },
    AbsSum { x: Var },
    Loss { a: Var, b: Var, loss: Box<dyn PairLoss<T>> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf or parameter node, if the loss reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    /// Per-parameter gradients indexed like the store; `None` when unreached.
    pub fn params(&self) -> &[Option<Tensor<T>>] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.index()).and_then(|g| g.as_ref())
    }
}

/// Recorded forward computation.
pub struct Graph<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
    fft: FftEngine<T>,
}

fn real_of<T: Scalar>(t: &Tensor<T>) -> &RealGrid<T> {
    t.as_real().expect("real tensor")
}

fn complex_of<T: Scalar>(t: &Tensor<T>) -> &ComplexGrid<T> {
    t.as_complex().expect("complex tensor")
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            fft: FftEngine::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown graph node {}", v.0)))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn real(&self, v: Var) -> Result<&RealGrid<T>> {
        self.node(v)?
            .value
            .as_real()
            .ok_or_else(|| Error::Shape(format!("node {} is complex, expected real", v.0)))
    }

    fn complex(&self, v: Var) -> Result<&ComplexGrid<T>> {
        self.node(v)?
            .value
            .as_complex()
            .ok_or_else(|| Error::Shape(format!("node {} is real, expected complex", v.0)))
    }

    /// Real value of a node, e.g. a network output.
    pub fn real_value(&self, v: Var) -> Result<&RealGrid<T>> {
        self.real(v)
    }

    /// Value of a single-element real node.
    pub fn scalar(&self, v: Var) -> Result<T> {
        let g = self.real(v)?;
        if g.len() != 1 {
            return shape_err(format!("node {} holds {} values, not a scalar", v.0, g.len()));
        }
        Ok(g.data()[0])
    }

    fn act_dims(&self, v: Var) -> Result<(usize, usize, usize, usize)> {
        let dims = self.node(v)?.value.dims();
        if dims.len() != 4 {
            return shape_err(format!("expected (batch, h, w, c) activation, got {dims:?}"));
        }
        Ok((dims[0], dims[1], dims[2], dims[3]))
    }

    /// Constant input. Rank-3 grids gain a batch axis of 1.
    pub fn input(&mut self, grid: RealGrid<T>) -> Var {
        let grid = if grid.rank() == 3 {
            let d = grid.dims().to_vec();
            grid.reshape(&[1, d[0], d[1], d[2]]).expect("same volume")
        } else {
            grid
        };
        self.push(Tensor::Real(grid), Op::Leaf)
    }

    /// Constant leaf holding any tensor (real or complex), dims untouched.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Bind a stored parameter into the graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.get(id).value.clone();
        self.push(value, Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, padding: Padding) -> Result<Var> {
        let (n, h, w, c) = self.act_dims(x)?;
        let kd = self.real(k)?.dims().to_vec();
        if kd.len() != 4 || kd[0] != kd[1] || kd[0] % 2 == 0 {
            return shape_err(format!("conv kernel must be (k, k, c_in, c_out) with odd k, got {kd:?}"));
        }
        if kd[2] != c {
            return shape_err(format!("conv kernel expects {} input channels, input has {c}", kd[2]));
        }
        if self.real(b)?.len() != kd[3] {
            return shape_err(format!("conv bias length {} != {} output channels", self.real(b)?.len(), kd[3]));
        }
        if padding == Padding::Valid && (h < kd[0] || w < kd[0]) {
            return shape_err(format!("valid conv with {}×{} kernel on {h}×{w} input", kd[0], kd[0]));
        }
        let geom = ConvGeom::new(n, h, w, c, kd[0], kd[3], padding);
        let y = kernels::conv2d_forward(
            self.real(x)?.data(),
            self.real(k)?.data(),
            self.real(b)?.data(),
            &geom,
        );
        let out = RealGrid::from_vec(&[n, geom.ho, geom.wo, geom.co], y)?;
        Ok(self.push(Tensor::Real(out), Op::Conv2d { x, k, b, geom }))
    }

    /// Stride-2 transpose convolution with a `(2, 2, c_in, c_out)` kernel.
    pub fn conv_transpose2(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (n, h, w, c) = self.act_dims(x)?;
        let kd = self.real(k)?.dims().to_vec();
        if kd.len() != 4 || kd[0] != 2 || kd[1] != 2 {
            return shape_err(format!("transpose kernel must be (2, 2, c_in, c_out), got {kd:?}"));
        }
        if kd[2] != c {
            return shape_err(format!("transpose kernel expects {} input channels, input has {c}", kd[2]));
        }
        if self.real(b)?.len() != kd[3] {
            return shape_err("transpose conv bias length mismatch".to_string());
        }
        let geom = UpGeom { n, h, w, ci: c, co: kd[3] };
        let y = kernels::conv_transpose_forward(
            self.real(x)?.data(),
            self.real(k)?.data(),
            self.real(b)?.data(),
            &geom,
        );
        let out = RealGrid::from_vec(&[n, 2 * h, 2 * w, kd[3]], y)?;
        Ok(self.push(Tensor::Real(out), Op::ConvTranspose { x, k, b, geom }))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (n, h, w, c) = self.act_dims(x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("maxpool2 needs even spatial dims, got {h}×{w}"));
        }
        let (y, argmax) = kernels::maxpool2_forward(self.real(x)?.data(), (n, h, w, c));
        let out = RealGrid::from_vec(&[n, h / 2, w / 2, c], y)?;
        Ok(self.push(Tensor::Real(out), Op::MaxPool { x, argmax }))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, h, w, c) = self.act_dims(x)?;
        let y = kernels::upsample2_forward(self.real(x)?.data(), (n, h, w, c));
        let out = RealGrid::from_vec(&[n, 2 * h, 2 * w, c], y)?;
        Ok(self.push(Tensor::Real(out), Op::Upsample { x }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = match kind {
            Activation::Tanh => self.real(x)?.map(|v| v.tanh()),
            Activation::Relu => self.real(x)?.map(|v| v.max(T::zero())),
        };
        Ok(self.push(Tensor::Real(out), Op::Act { x, kind }))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`.
    /// Inference mode (or `rate == 0`) is the identity and records nothing.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngState, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return invalid(format!("dropout rate {rate} outside [0, 1)"));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let len = self.real(x)?.len();
        let mask: Vec<T> = (0..len)
            .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with an explicit, already-scaled mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let xv = self.real(x)?;
        if mask.len() != xv.len() {
            return shape_err(format!("dropout mask has {} entries for {} values", mask.len(), xv.len()));
        }
        let data = xv.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let out = RealGrid::from_vec(xv.dims(), data)?;
        Ok(self.push(Tensor::Real(out), Op::Dropout { x, mask }))
    }

    pub fn group_norm(&mut self, x: Var, groups: usize, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let shape = self.act_dims(x)?;
        let c = shape.3;
        if groups == 0 || c % groups != 0 {
            return invalid(format!("{c} channels cannot be split into {groups} groups"));
        }
        if self.real(gain)?.len() != c || self.real(shift)?.len() != c {
            return shape_err(format!("group norm affine params must have {c} entries"));
        }
        let (y, stats) = kernels::group_norm_forward(
            self.real(x)?.data(),
            shape,
            groups,
            self.real(gain)?.data(),
            self.real(shift)?.data(),
            T::lit(eps),
        );
        let out = RealGrid::from_vec(self.real(x)?.dims(), y)?;
        Ok(self.push(Tensor::Real(out), Op::GroupNorm { x, gain, shift, groups, stats }))
    }

    /// Channel concatenation, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, h, w, ca) = self.act_dims(a)?;
        let (nb, hb, wb, cb) = self.act_dims(b)?;
        if (n, h, w) != (nb, hb, wb) {
            return shape_err(format!("concat of {n}×{h}×{w} with {nb}×{hb}×{wb}"));
        }
        let (av, bv) = (self.real(a)?.data(), self.real(b)?.data());
        let mut data = Vec::with_capacity(n * h * w * (ca + cb));
        for px in 0..n * h * w {
            data.extend_from_slice(&av[px * ca..(px + 1) * ca]);
            data.extend_from_slice(&bv[px * cb..(px + 1) * cb]);
        }
        let out = RealGrid::from_vec(&[n, h, w, ca + cb], data)?;
        Ok(self.push(Tensor::Real(out), Op::Concat { a, b }))
    }

    /// Forward 2D DFT of a real node, normalized by `1/(H·W)`.
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let z = ComplexGrid::from_real(self.real(x)?);
        let out = self.fft.fft2(&z)?;
        Ok(self.push(Tensor::Complex(out), Op::Fft2 { x }))
    }

    /// Unnormalized inverse 2D DFT of a complex node.
    pub fn ifft2(&mut self, x: Var) -> Result<Var> {
        let z = self.complex(x)?.clone();
        let out = self.fft.ifft2(&z)?;
        Ok(self.push(Tensor::Complex(out), Op::Ifft2 { x }))
    }

    /// Per-mode channel mixing of a spectrum by complex weights
    /// `r: (k_rows, k_cols, c_in, c_out)` on the retained `rows × cols` modes.
    pub fn spectral_mix(&mut self, f: Var, r: Var, rows: Vec<usize>, cols: Vec<usize>) -> Result<Var> {
        let (n, h, w, ci) = nhwc(self.complex(f)?.dims())?;
        let rd = self.complex(r)?.dims().to_vec();
        if rd.len() != 4 || rd[0] != rows.len() || rd[1] != cols.len() || rd[2] != ci {
            return shape_err(format!(
                "spectral weights {rd:?} incompatible with {} × {} modes and {ci} input channels",
                rows.len(),
                cols.len()
            ));
        }
        if rows.iter().any(|&r| r >= h) || cols.iter().any(|&c| c >= w) {
            return shape_err(format!("retained modes exceed the {h}×{w} spectrum"));
        }
        let geom = MixGeom { n, h, w, ci, co: rd[3], rows, cols };
        let z = kernels::spectral_mix_forward(self.complex(f)?.data(), self.complex(r)?.data(), &geom);
        let out = ComplexGrid::from_vec(&[n, h, w, geom.co], z)?;
        Ok(self.push(Tensor::Complex(out), Op::SpectralMix { f, r, geom }))
    }

    /// Elementwise complex magnitude `|z|`.
    pub fn magnitude(&mut self, z: Var) -> Result<Var> {
        let out = self.complex(z)?.abs();
        Ok(self.push(Tensor::Real(out), Op::Magnitude { z }))
    }

    /// Softmax across the channel axis at every pixel.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (_, _, _, c) = self.act_dims(x)?;
        let xv = self.real(x)?;
        let mut data = xv.data().to_vec();
        for px in data.chunks_exact_mut(c) {
            let m = px.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in px.iter_mut() {
                *v = (*v - m).exp();
                s = s + *v;
            }
            for v in px.iter_mut() {
                *v = *v / s;
            }
        }
        let out = RealGrid::from_vec(xv.dims(), data)?;
        Ok(self.push(Tensor::Real(out), Op::Softmax { x }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.real(x)?.sum();
        Ok(self.push(Tensor::Real(RealGrid::filled(&[1], s)), Op::Sum { x }))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let g = self.real(x)?;
        if g.is_empty() {
            return invalid("mean of an empty grid");
        }
        let m = g.sum() / T::lit(g.len() as f64);
        Ok(self.push(Tensor::Real(RealGrid::filled(&[1], m)), Op::Mean { x }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let out = self.real(x)?.map(|v| v * c);
        Ok(self.push(Tensor::Real(out), Op::Scale { x, c }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.real(a)?, self.real(b)?);
        if av.dims() != bv.dims() {
            return shape_err(format!("add of {:?} and {:?}", av.dims(), bv.dims()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| *x + *y).collect();
        let out = RealGrid::from_vec(av.dims(), data)?;
        Ok(self.push(Tensor::Real(out), Op::Add { a, b }))
    }

    /// `Σ|x|`, the L1 penalty.
    pub fn abs_sum(&mut self, x: Var) -> Result<Var> {
        let s = self.real(x)?.data().iter().map(|v| v.abs()).sum();
        Ok(self.push(Tensor::Real(RealGrid::filled(&[1], s)), Op::AbsSum { x }))
    }

    pub fn pair_loss(&mut self, a: Var, b: Var, loss: Box<dyn PairLoss<T>>) -> Result<Var> {
        let (av, bv) = (self.real(a)?, self.real(b)?);
        if av.dims() != bv.dims() {
            return shape_err(format!("{} between {:?} and {:?}", loss.name(), av.dims(), bv.dims()));
        }
        let v = loss.value(av, bv)?;
        Ok(self.push(Tensor::Real(RealGrid::filled(&[1], v)), Op::Loss { a, b, loss }))
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Backward("no forward pass has been recorded".into()));
        }
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Backward(format!("node {} was not recorded on this graph", loss.0)))?;
        match &root.value {
            Tensor::Real(g) if g.len() == 1 => {}
            _ => return Err(Error::Backward("loss must be a single real scalar".into())),
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::Real(RealGrid::filled(&[1], T::one())));
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        let mut fft = FftEngine::<T>::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => leaves[i] = Some(g),
                Op::Param(id) => {
                    match &mut params[id.index()] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g.clone()),
                    }
                    leaves[i] = Some(g);
                }
                op => {
                    for (target, contrib) in self.backward_op(op, &node.value, g, &mut fft)? {
                        accumulate(&mut grads[target.0], contrib);
                    }
                }
            }
        }
        Ok(Gradients { leaves, params })
    }

    fn backward_op(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: Tensor<T>,
        fft: &mut FftEngine<T>,
    ) -> Result<Vec<(Var, Tensor<T>)>> {
        let real = |v: Var| real_of(&self.nodes[v.0].value);
        let rgrid = |dims: &[usize], data: Vec<T>| Tensor::Real(RealGrid::from_vec(dims, data).expect("dims"));
        let gr = || real_of(&g).data();
        let contribs = match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Conv2d { x, k, b, geom } => {
                let (dx, dk, db) = kernels::conv2d_backward(real(*x).data(), real(*k).data(), gr(), geom);
                vec![
                    (*x, rgrid(real(*x).dims(), dx)),
                    (*k, rgrid(real(*k).dims(), dk)),
                    (*b, rgrid(real(*b).dims(), db)),
                ]
            }
            Op::ConvTranspose { x, k, b, geom } => {
                let (dx, dk, db) =
                    kernels::conv_transpose_backward(real(*x).data(), real(*k).data(), gr(), geom);
                vec![
                    (*x, rgrid(real(*x).dims(), dx)),
                    (*k, rgrid(real(*k).dims(), dk)),
                    (*b, rgrid(real(*b).dims(), db)),
                ]
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); real(*x).len()];
                for (&src, &d) in argmax.iter().zip(gr()) {
                    dx[src] = dx[src] + d;
                }
                vec![(*x, rgrid(real(*x).dims(), dx))]
            }
            Op::Upsample { x } => {
                let shape = nhwc(real(*x).dims())?;
                vec![(*x, rgrid(real(*x).dims(), kernels::upsample2_backward(gr(), shape)))]
            }
            Op::Act { x, kind } => {
                let y = real_of(out).data();
                let dx = match kind {
                    Activation::Tanh => gr().iter().zip(y).map(|(d, t)| *d * (T::one() - *t * *t)).collect(),
                    Activation::Relu => gr()
                        .iter()
                        .zip(y)
                        .map(|(d, t)| if *t > T::zero() { *d } else { T::zero() })
                        .collect(),
                };
                vec![(*x, rgrid(real(*x).dims(), dx))]
            }
            Op::Dropout { x, mask } => {
                let dx = gr().iter().zip(mask).map(|(d, m)| *d * *m).collect();
                vec![(*x, rgrid(real(*x).dims(), dx))]
            }
            Op::GroupNorm { x, gain, shift, groups, stats } => {
                let shape = nhwc(real(*x).dims())?;
                let (dx, dgain, dshift) = kernels::group_norm_backward(
                    real(*x).data(),
                    gr(),
                    shape,
                    *groups,
                    real(*gain).data(),
                    stats,
                );
                vec![
                    (*x, rgrid(real(*x).dims(), dx)),
                    (*gain, rgrid(real(*gain).dims(), dgain)),
                    (*shift, rgrid(real(*shift).dims(), dshift)),
                ]
            }
            Op::Concat { a, b } => {
                let ca = nhwc(real(*a).dims())?.3;
                let cb = nhwc(real(*b).dims())?.3;
                let mut da = Vec::with_capacity(real(*a).len());
                let mut db = Vec::with_capacity(real(*b).len());
                for px in gr().chunks_exact(ca + cb) {
                    da.extend_from_slice(&px[..ca]);
                    db.extend_from_slice(&px[ca..]);
                }
                vec![(*a, rgrid(real(*a).dims(), da)), (*b, rgrid(real(*b).dims(), db))]
            }
            Op::Fft2 { x } => {
                // y = (1/N)·F x for real x  ⇒  dx = Re(Fᴴ g) / N.
                let mut gz = complex_of(&g).clone();
                let shape = nhwc(gz.dims())?;
                let scale = T::one() / T::lit((shape.1 * shape.2) as f64);
                fft.transform(gz.data_mut(), shape, FftDirection::Inverse, scale);
                vec![(*x, Tensor::Real(gz.re()))]
            }
            Op::Ifft2 { x } => {
                // y = Fᴴ z  ⇒  dz = F g.
                let mut gz = complex_of(&g).clone();
                let shape = nhwc(gz.dims())?;
                fft.transform(gz.data_mut(), shape, FftDirection::Forward, T::one());
                vec![(*x, Tensor::Complex(gz))]
            }
            Op::SpectralMix { f, r, geom } => {
                let fv = complex_of(&self.nodes[f.0].value);
                let rv = complex_of(&self.nodes[r.0].value);
                let (df, dr) = kernels::spectral_mix_backward(fv.data(), rv.data(), complex_of(&g).data(), geom);
                vec![
                    (*f, Tensor::Complex(ComplexGrid::from_vec(fv.dims(), df)?)),
                    (*r, Tensor::Complex(ComplexGrid::from_vec(rv.dims(), dr)?)),
                ]
            }
            Op::Magnitude { z } => {
                // Subgradient 0 at the origin.
                let zv = complex_of(&self.nodes[z.0].value);
                let mags = real_of(out).data();
                let dz = zv
                    .data()
                    .iter()
                    .zip(mags)
                    .zip(gr())
                    .map(|((zc, m), d)| {
                        if *m > T::zero() {
                            *zc * (*d / *m)
                        } else {
                            Complex::new(T::zero(), T::zero())
                        }
                    })
                    .collect();
                vec![(*z, Tensor::Complex(ComplexGrid::from_vec(zv.dims(), dz)?))]
            }
            Op::Softmax { x } => {
                let c = nhwc(real(*x).dims())?.3;
                let s = real_of(out).data();
                let mut dx = vec![T::zero(); s.len()];
                for ((sp, dp), out) in s.chunks_exact(c).zip(gr().chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
                    let dot: T = sp.iter().zip(dp).map(|(a, b)| *a * *b).sum();
                    for ((o, sv), dv) in out.iter_mut().zip(sp).zip(dp) {
                        *o = *sv * (*dv - dot);
                    }
                }
                vec![(*x, rgrid(real(*x).dims(), dx))]
            }
            Op::Sum { x } => {
                let d = gr()[0];
                vec![(*x, Tensor::Real(RealGrid::filled(real(*x).dims(), d)))]
            }
            Op::Mean { x } => {
                let d = gr()[0] / T::lit(real(*x).len() as f64);
                vec![(*x, Tensor::Real(RealGrid::filled(real(*x).dims(), d)))]
            }
            Op::Scale { x, c } => {
                let dx = gr().iter().map(|d| *d * *c).collect();
                vec![(*x, rgrid(real(*x).dims(), dx))]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g)],
            Op::AbsSum { x } => {
                let d = gr()[0];
                let dx = real(*x)
                    .data()
                    .iter()
                    .map(|v| {
                        if *v > T::zero() {
                            d
                        } else if *v < T::zero() {
                            -d
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![(*x, rgrid(real(*x).dims(), dx))]
            }
            Op::Loss { a, b, loss } => {
                let d = gr()[0];
                let (da, db) = loss.grad(real(*a), real(*b));
                vec![
                    (*a, rgrid(real(*a).dims(), da.into_iter().map(|v| v * d).collect())),
                    (*b, rgrid(real(*b).dims(), db.into_iter().map(|v| v * d).collect())),
                ]
            }
        };
        Ok(contribs)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, contrib: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&contrib),
        None => *slot = Some(contrib),
    }
}
