//! Gradient-free evaluation of single ops on rank-3 grids.
//!
//! Each function records the op on a throwaway [`Graph`] and returns the
//! result with the batch axis removed.

use super::{Activation, Graph, Padding, ParamStore, RealGrid, RngState, Scalar, Tensor, Var};
use crate::error::Result;

fn run<T: Scalar>(f: impl FnOnce(&mut Graph<T>) -> Result<Var>) -> Result<RealGrid<T>> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let out = f(&mut g)?;
    let grid = g.real_value(out)?.clone();
    let dims = grid.dims().to_vec();
    if dims.len() == 4 && dims[0] == 1 {
        grid.reshape(&dims[1..])
    } else {
        Ok(grid)
    }
}

fn constant<T: Scalar>(g: &mut Graph<T>, t: &RealGrid<T>) -> Var {
    g.constant(Tensor::Real(t.clone()))
}

pub fn conv2d<T: Scalar>(x: &RealGrid<T>, kernel: &RealGrid<T>, bias: &RealGrid<T>, padding: Padding) -> Result<RealGrid<T>> {
    run(|g| {
        let xv = g.input(x.clone());
        let (k, b) = (constant(g, kernel), constant(g, bias));
        g.conv2d(xv, k, b, padding)
    })
}

pub fn conv2d_transpose<T: Scalar>(x: &RealGrid<T>, kernel: &RealGrid<T>, bias: &RealGrid<T>) -> Result<RealGrid<T>> {
    run(|g| {
        let xv = g.input(x.clone());
        let (k, b) = (constant(g, kernel), constant(g, bias));
        g.conv_transpose2(xv, k, b)
    })
}

pub fn maxpool2<T: Scalar>(x: &RealGrid<T>) -> Result<RealGrid<T>> {
    run(|g| {
        let xv = g.input(x.clone());
        g.maxpool2(xv)
    })
}

pub fn activation<T: Scalar>(x: &RealGrid<T>, kind: Activation) -> Result<RealGrid<T>> {
    run(|g| {
        let xv = g.input(x.clone());
        g.activation(xv, kind)
    })
}

pub fn dropout<T: Scalar>(x: &RealGrid<T>, rate: f64, rng: &mut RngState, training: bool) -> Result<RealGrid<T>> {
    run(|g| {
        let xv = g.input(x.clone());
        g.dropout(xv, rate, rng, training)
    })
}

pub fn group_norm<T: Scalar>(
    x: &RealGrid<T>,
    groups: usize,
    gain: &RealGrid<T>,
    shift: &RealGrid<T>,
    eps: f64,
) -> Result<RealGrid<T>> {
    run(|g| {
        let xv = g.input(x.clone());
        let (a, b) = (constant(g, gain), constant(g, shift));
        g.group_norm(xv, groups, a, b, eps)
    })
}

pub fn concat_channels<T: Scalar>(a: &RealGrid<T>, b: &RealGrid<T>) -> Result<RealGrid<T>> {
    run(|g| {
        let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
        g.concat_channels(av, bv)
    })
}
