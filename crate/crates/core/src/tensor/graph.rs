//! Reverse-mode tape over [`Array`] values.
//!
//! A [`Graph`] is an append-only tape: every operation evaluates eagerly and
//! records how to push gradients back to its parents. `backward` walks the
//! tape once in reverse creation order, so execution is deterministic and
//! gradients of repeated uses accumulate in a fixed order.
//!
//! The op set is intentionally closed: exactly what the detection pipeline
//! needs, nothing more. There is no broadcasting; shape mismatches are
//! rejected with the offending dimension named.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::array::{strides_for, Array};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct BackwardCtx<'a> {
    pub values: &'a [Array],
    pub grads: &'a mut [Option<Array>],
    pub requires: &'a [bool],
}

impl BackwardCtx<'_> {
    pub fn value(&self, v: Var) -> &Array {
        &self.values[v.0]
    }

    /// Accumulate a gradient contribution into `v` (no-op when `v` does not
    /// require gradients).
    pub fn accum(&mut self, v: Var, contrib: Array) {
        if !self.requires[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                debug_assert_eq!(g.shape(), contrib.shape());
                for (a, b) in g.data_mut().iter_mut().zip(contrib.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }
}

pub(crate) trait Backward: Send {
    /// Push `out_grad` (the gradient of the node that recorded this op)
    /// back to the parents.
    fn backward(&self, ctx: &mut BackwardCtx<'_>, out_value: &Array, out_grad: &Array);
}

/// Append-only autodiff tape.
#[derive(Default)]
pub struct Graph {
    values: Vec<Array>,
    grads: Vec<Option<Array>>,
    requires: Vec<bool>,
    backs: Vec<Option<Box<dyn Backward>>>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.values[v.0]
    }

    /// Gradient of a node after `backward`. Present for leaves on the
    /// differentiated path; intermediate gradients are consumed during the
    /// sweep.
    pub fn grad(&self, v: Var) -> Option<&Array> {
        self.grads[v.0].as_ref()
    }

    pub fn leaf(&mut self, value: Array, requires_grad: bool) -> Var {
        self.push(value, requires_grad, None)
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array::scalar(value))
    }

    fn push(&mut self, value: Array, requires: bool, back: Option<Box<dyn Backward>>) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.backs.push(if requires { back } else { None });
        Var(id)
    }

    /// Record an op node. `requires` is inherited from the parents.
    pub(crate) fn op(&mut self, value: Array, parents: &[Var], back: Box<dyn Backward>) -> Var {
        let requires = parents.iter().any(|p| self.requires[p.0]);
        self.push(value, requires, Some(back))
    }

    /// Reverse sweep from a scalar root. Leaf gradients survive the sweep;
    /// intermediate gradients are consumed. One backward per graph.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.values[root.0].numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "root must be scalar, got shape {:?}",
                    self.values[root.0].shape()
                ),
            ));
        }
        if !self.requires[root.0] {
            return Ok(());
        }
        let root_shape = self.values[root.0].shape().to_vec();
        self.grads[root.0] = Some(Array::filled(&root_shape, 1.0));
        for id in (0..=root.0).rev() {
            if self.backs[id].is_none() {
                continue;
            }
            let Some(out_grad) = self.grads[id].take() else {
                continue;
            };
            let (done, rest_values) = self.values.split_at(id);
            let out_value = &rest_values[0];
            let mut ctx = BackwardCtx {
                values: done,
                grads: &mut self.grads[..id],
                requires: &self.requires[..id],
            };
            self.backs[id]
                .as_ref()
                .unwrap()
                .backward(&mut ctx, out_value, &out_grad);
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa != sb {
            return Err(Error::shape(op, format!("lhs {:?} vs rhs {:?}", sa, sb)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

struct AddBack {
    a: Var,
    b: Var,
}

impl Backward for AddBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        ctx.accum(self.a, g.clone());
        ctx.accum(self.b, g.clone());
    }
}

struct SubBack {
    a: Var,
    b: Var,
}

impl Backward for SubBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        ctx.accum(self.a, g.clone());
        ctx.accum(self.b, g.map(|x| -x));
    }
}

struct MulBack {
    a: Var,
    b: Var,
}

impl Backward for MulBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        if ctx.wants(self.a) {
            let b = ctx.value(self.b);
            let mut da = g.clone();
            for (x, y) in da.data_mut().iter_mut().zip(b.data()) {
                *x *= y;
            }
            ctx.accum(self.a, da);
        }
        if ctx.wants(self.b) {
            let a = ctx.value(self.a);
            let mut db = g.clone();
            for (x, y) in db.data_mut().iter_mut().zip(a.data()) {
                *x *= y;
            }
            ctx.accum(self.b, db);
        }
    }
}

struct DivBack {
    a: Var,
    b: Var,
}

impl Backward for DivBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, out: &Array, g: &Array) {
        if ctx.wants(self.a) {
            let b = ctx.value(self.b);
            let mut da = g.clone();
            for (x, y) in da.data_mut().iter_mut().zip(b.data()) {
                *x /= y;
            }
            ctx.accum(self.a, da);
        }
        if ctx.wants(self.b) {
            let b = ctx.value(self.b);
            let mut db = g.clone();
            for ((x, o), y) in db.data_mut().iter_mut().zip(out.data()).zip(b.data()) {
                *x *= -o / y;
            }
            ctx.accum(self.b, db);
        }
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Array::from_vec(self.values[a.0].shape(), data)?;
        Ok(self.op(value, &[a, b], Box::new(AddBack { a, b })))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Array::from_vec(self.values[a.0].shape(), data)?;
        Ok(self.op(value, &[a, b], Box::new(SubBack { a, b })))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Array::from_vec(self.values[a.0].shape(), data)?;
        Ok(self.op(value, &[a, b], Box::new(MulBack { a, b })))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x / y)
            .collect();
        let value = Array::from_vec(self.values[a.0].shape(), data)?;
        Ok(self.op(value, &[a, b], Box::new(DivBack { a, b })))
    }
}

// ---------------------------------------------------------------------------
// Scalar and unary ops
// ---------------------------------------------------------------------------

struct PassBack {
    a: Var,
}

impl Backward for PassBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        ctx.accum(self.a, g.clone());
    }
}

struct MulScalarBack {
    a: Var,
    s: f64,
}

impl Backward for MulScalarBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        ctx.accum(self.a, g.map(|x| x * self.s));
    }
}

/// Unary op whose input-gradient factor is computable from input and output.
struct UnaryBack {
    a: Var,
    dfactor: fn(x: f64, y: f64) -> f64,
}

impl Backward for UnaryBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, out: &Array, g: &Array) {
        if !ctx.wants(self.a) {
            return;
        }
        let x = ctx.value(self.a);
        let mut da = g.clone();
        for ((d, &xi), &yi) in da.data_mut().iter_mut().zip(x.data()).zip(out.data()) {
            *d *= (self.dfactor)(xi, yi);
        }
        ctx.accum(self.a, da);
    }
}

struct ClampBack {
    a: Var,
    lo: f64,
    hi: f64,
}

impl Backward for ClampBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        if !ctx.wants(self.a) {
            return;
        }
        let x = ctx.value(self.a);
        let mut da = g.clone();
        for (d, &xi) in da.data_mut().iter_mut().zip(x.data()) {
            if xi < self.lo || xi > self.hi {
                *d = 0.0;
            }
        }
        ctx.accum(self.a, da);
    }
}

impl Graph {
    fn unary(&mut self, a: Var, f: fn(f64) -> f64, dfactor: fn(f64, f64) -> f64) -> Var {
        let value = self.values[a.0].map(f);
        self.op(value, &[a], Box::new(UnaryBack { a, dfactor }))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.values[a.0].map(|x| x + s);
        self.op(value, &[a], Box::new(PassBack { a }))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.values[a.0].map(|x| x * s);
        self.op(value, &[a], Box::new(MulScalarBack { a, s }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.values[a.0].map(|x| x.clamp(lo, hi));
        self.op(value, &[a], Box::new(ClampBack { a, lo, hi }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.values[a.0].clone().reshaped(shape)?;
        let a_shape = self.values[a.0].shape().to_vec();
        Ok(self.op(value, &[a], Box::new(ReshapeBack { a, a_shape })))
    }
}

struct ReshapeBack {
    a: Var,
    a_shape: Vec<usize>,
}

impl Backward for ReshapeBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        let da = g.clone().reshaped(&self.a_shape).expect("reshape grad");
        ctx.accum(self.a, da);
    }
}

// ---------------------------------------------------------------------------
// Gather (flat index map): covers transpose, window partition, cyclic shift,
// row/column selection and repetition. Gradient scatter-adds, so repeated
// indices are fine.
// ---------------------------------------------------------------------------

struct GatherBack {
    a: Var,
    map: Arc<Vec<usize>>,
    a_shape: Vec<usize>,
}

impl Backward for GatherBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        if !ctx.wants(self.a) {
            return;
        }
        let mut da = Array::zeros(&self.a_shape);
        let dd = da.data_mut();
        for (i, &src) in self.map.iter().enumerate() {
            dd[src] += g.data()[i];
        }
        ctx.accum(self.a, da);
    }
}

impl Graph {
    /// `out[i] = a.data[map[i]]`, viewed with `out_shape`.
    pub fn gather(&mut self, a: Var, map: Arc<Vec<usize>>, out_shape: &[usize]) -> Result<Var> {
        let numel: usize = out_shape.iter().product();
        if numel != map.len() {
            return Err(Error::shape(
                "gather",
                format!("map has {} entries, out shape {:?}", map.len(), out_shape),
            ));
        }
        let src = self.values[a.0].data();
        let n = src.len();
        if let Some(&bad) = map.iter().find(|&&ix| ix >= n) {
            return Err(Error::shape(
                "gather",
                format!("index {} out of range for input of {} elements", bad, n),
            ));
        }
        let data: Vec<f64> = map.iter().map(|&ix| src[ix]).collect();
        let value = Array::from_vec(out_shape, data)?;
        let a_shape = self.values[a.0].shape().to_vec();
        Ok(self.op(value, &[a], Box::new(GatherBack { a, map, a_shape })))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose2d(&mut self, a: Var) -> Result<Var> {
        let shape = self.values[a.0].shape();
        if shape.len() != 2 {
            return Err(Error::shape(
                "transpose2d",
                format!("expected rank 2, got {:?}", shape),
            ));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let map = Arc::new(transpose_map(rows, cols));
        self.gather(a, map, &[cols, rows])
    }
}

/// Flat map that turns `[rows, cols]` into `[cols, rows]`.
pub fn transpose_map(rows: usize, cols: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            map.push(r * cols + c);
        }
    }
    map
}

/// General axis permutation: returns (out_shape, flat gather map).
/// `perm[j]` is the input axis landing at output position `j`.
pub fn permute_map(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    assert_eq!(shape.len(), perm.len());
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_for(shape);
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut out_idx = vec![0usize; perm.len()];
    for _ in 0..numel {
        let mut flat = 0;
        for (j, &ix) in out_idx.iter().enumerate() {
            flat += ix * in_strides[perm[j]];
        }
        map.push(flat);
        // increment out_idx, row-major
        for j in (0..out_idx.len()).rev() {
            out_idx[j] += 1;
            if out_idx[j] < out_shape[j] {
                break;
            }
            out_idx[j] = 0;
        }
    }
    (out_shape, map)
}

// ---------------------------------------------------------------------------
// Row slicing / concatenation of 2-D token matrices
// ---------------------------------------------------------------------------

struct SliceRowsBack {
    a: Var,
    start: usize,
    rows: usize,
    cols: usize,
    a_rows: usize,
}

impl Backward for SliceRowsBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        if !ctx.wants(self.a) {
            return;
        }
        let mut da = Array::zeros(&[self.a_rows, self.cols]);
        da.data_mut()[self.start * self.cols..(self.start + self.rows) * self.cols]
            .copy_from_slice(g.data());
        ctx.accum(self.a, da);
    }
}

struct ConcatRowsBack {
    parents: Vec<(Var, usize)>, // (var, rows)
    cols: usize,
}

impl Backward for ConcatRowsBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        let mut row = 0;
        for &(p, rows) in &self.parents {
            if ctx.wants(p) {
                let slice = g.data()[row * self.cols..(row + rows) * self.cols].to_vec();
                ctx.accum(p, Array::from_vec(&[rows, self.cols], slice).unwrap());
            }
            row += rows;
        }
    }
}

impl Graph {
    /// Contiguous row range of a 2-D matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, rows: usize) -> Result<Var> {
        let shape = self.values[a.0].shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::shape(
                "slice_rows",
                format!("expected rank 2, got {:?}", shape),
            ));
        }
        let (a_rows, cols) = (shape[0], shape[1]);
        if start + rows > a_rows {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} out of range for {a_rows}", start + rows),
            ));
        }
        let data = self.values[a.0].data()[start * cols..(start + rows) * cols].to_vec();
        let value = Array::from_vec(&[rows, cols], data)?;
        Ok(self.op(
            value,
            &[a],
            Box::new(SliceRowsBack {
                a,
                start,
                rows,
                cols,
                a_rows,
            }),
        ))
    }

    /// Stack 2-D matrices with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs".to_string()));
        }
        let cols = self.values[parts[0].0].shape().get(1).copied().ok_or_else(|| {
            Error::shape("concat_rows", "inputs must be rank 2".to_string())
        })?;
        let mut total_rows = 0;
        let mut parents = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.values[p.0].shape();
            if s.len() != 2 || s[1] != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("input {:?} vs expected columns {}", s, cols),
                ));
            }
            parents.push((p, s[0]));
            total_rows += s[0];
        }
        let mut data = Vec::with_capacity(total_rows * cols);
        for &p in parts {
            data.extend_from_slice(self.values[p.0].data());
        }
        let value = Array::from_vec(&[total_rows, cols], data)?;
        Ok(self.op(value, parts, Box::new(ConcatRowsBack { parents, cols })))
    }
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// out[m,n] = a[m,k] * b[k,n]
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// out[m,p] = a[m,n] * b[p,n]^T
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * p..(i + 1) * p];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o = acc;
        }
    }
    out
}

/// out[k,n] = a[m,k]^T * b[m,n]
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

struct MatMulBack {
    a: Var,
    b: Var,
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for MatMulBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        if ctx.wants(self.a) {
            let b = ctx.value(self.b);
            let da = mm_nt(g.data(), b.data(), self.m, self.n, self.k);
            ctx.accum(self.a, Array::from_vec(&[self.m, self.k], da).unwrap());
        }
        if ctx.wants(self.b) {
            let a = ctx.value(self.a);
            let db = mm_tn(a.data(), g.data(), self.m, self.k, self.n);
            ctx.accum(self.b, Array::from_vec(&[self.k, self.n], db).unwrap());
        }
    }
}

struct MatMulNtBack {
    a: Var,
    b: Var,
    m: usize,
    d: usize,
    n: usize,
}

impl Backward for MatMulNtBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        // out[m,n] = a[m,d] * b[n,d]^T
        if ctx.wants(self.a) {
            let b = ctx.value(self.b);
            let da = mm_nn(g.data(), b.data(), self.m, self.n, self.d);
            ctx.accum(self.a, Array::from_vec(&[self.m, self.d], da).unwrap());
        }
        if ctx.wants(self.b) {
            let a = ctx.value(self.a);
            let db = mm_tn(g.data(), a.data(), self.m, self.n, self.d);
            ctx.accum(self.b, Array::from_vec(&[self.n, self.d], db).unwrap());
        }
    }
}

impl Graph {
    /// 2-D matrix product `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("expected rank-2 operands, got {:?} and {:?}", sa, sb),
            ));
        }
        if sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: lhs cols {} vs rhs rows {}", sa[1], sb[0]),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = mm_nn(self.values[a.0].data(), self.values[b.0].data(), m, k, n);
        let value = Array::from_vec(&[m, n], data)?;
        Ok(self.op(value, &[a, b], Box::new(MatMulBack { a, b, m, k, n })))
    }

    /// `a[m,d] · b[n,d]ᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("expected rank-2 operands, got {:?} and {:?}", sa, sb),
            ));
        }
        if sa[1] != sb[1] {
            return Err(Error::shape(
                "matmul_nt",
                format!("feature dims differ: lhs {} vs rhs {}", sa[1], sb[1]),
            ));
        }
        let (m, d, n) = (sa[0], sa[1], sb[0]);
        let data = mm_nt(self.values[a.0].data(), self.values[b.0].data(), m, d, n);
        let value = Array::from_vec(&[m, n], data)?;
        Ok(self.op(value, &[a, b], Box::new(MatMulNtBack { a, b, m, d, n })))
    }
}

// ---------------------------------------------------------------------------
// Linear layer (x[m,k] · w[n,k]^T + bias[n])
// ---------------------------------------------------------------------------

struct LinearBack {
    x: Var,
    w: Var,
    b: Var,
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for LinearBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        if ctx.wants(self.x) {
            let w = ctx.value(self.w);
            let dx = mm_nn(g.data(), w.data(), self.m, self.n, self.k);
            ctx.accum(self.x, Array::from_vec(&[self.m, self.k], dx).unwrap());
        }
        if ctx.wants(self.w) {
            let x = ctx.value(self.x);
            let dw = mm_tn(g.data(), x.data(), self.m, self.n, self.k);
            ctx.accum(self.w, Array::from_vec(&[self.n, self.k], dw).unwrap());
        }
        if ctx.wants(self.b) {
            let mut db = vec![0.0; self.n];
            for i in 0..self.m {
                for (d, &gv) in db.iter_mut().zip(&g.data()[i * self.n..(i + 1) * self.n]) {
                    *d += gv;
                }
            }
            ctx.accum(self.b, Array::from_vec(&[self.n], db).unwrap());
        }
    }
}

impl Graph {
    /// Fully connected layer: `x[m,k] · w[n,k]ᵀ + b[n]`, bias added per row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.values[x.0].shape(),
            self.values[w.0].shape(),
            self.values[b.0].shape(),
        );
        if sx.len() != 2 || sw.len() != 2 {
            return Err(Error::shape(
                "linear",
                format!("expected rank-2 x and w, got {:?} and {:?}", sx, sw),
            ));
        }
        if sx[1] != sw[1] {
            return Err(Error::shape(
                "linear",
                format!("in-features differ: x has {}, w has {}", sx[1], sw[1]),
            ));
        }
        if sb != [sw[0]] {
            return Err(Error::shape(
                "linear",
                format!("bias shape {:?} vs out-features {}", sb, sw[0]),
            ));
        }
        let (m, k, n) = (sx[0], sx[1], sw[0]);
        let mut data = mm_nt(self.values[x.0].data(), self.values[w.0].data(), m, k, n);
        let bias = self.values[b.0].data();
        for i in 0..m {
            for (o, &bv) in data[i * n..(i + 1) * n].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let value = Array::from_vec(&[m, n], data)?;
        Ok(self.op(value, &[x, w, b], Box::new(LinearBack { x, w, b, m, k, n })))
    }
}

// ---------------------------------------------------------------------------
// Layer-scale residual: out[m,c] = x[m,c] + y[m,c] * s[c]
// ---------------------------------------------------------------------------

struct ScaleAddColsBack {
    x: Var,
    y: Var,
    s: Var,
    rows: usize,
    cols: usize,
}

impl Backward for ScaleAddColsBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        ctx.accum(self.x, g.clone());
        if ctx.wants(self.y) {
            let s = ctx.value(self.s).data().to_vec();
            let mut dy = g.clone();
            for i in 0..self.rows {
                for (d, &sv) in dy.data_mut()[i * self.cols..(i + 1) * self.cols]
                    .iter_mut()
                    .zip(&s)
                {
                    *d *= sv;
                }
            }
            ctx.accum(self.y, dy);
        }
        if ctx.wants(self.s) {
            let y = ctx.value(self.y);
            let mut ds = vec![0.0; self.cols];
            for i in 0..self.rows {
                let grow = &g.data()[i * self.cols..(i + 1) * self.cols];
                let yrow = &y.data()[i * self.cols..(i + 1) * self.cols];
                for ((d, &gv), &yv) in ds.iter_mut().zip(grow).zip(yrow) {
                    *d += gv * yv;
                }
            }
            ctx.accum(self.s, Array::from_vec(&[self.cols], ds).unwrap());
        }
    }
}

impl Graph {
    /// Residual add with a learned per-column scale: `x + y ⊙ s`.
    pub fn layer_scale_add(&mut self, x: Var, y: Var, s: Var) -> Result<Var> {
        self.same_shape("layer_scale_add", x, y)?;
        let shape = self.values[x.0].shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::shape(
                "layer_scale_add",
                format!("expected rank-2 tokens, got {:?}", shape),
            ));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if self.values[s.0].shape() != [cols] {
            return Err(Error::shape(
                "layer_scale_add",
                format!(
                    "scale shape {:?} vs token width {}",
                    self.values[s.0].shape(),
                    cols
                ),
            ));
        }
        let sd = self.values[s.0].data();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let xrow = &self.values[x.0].data()[i * cols..(i + 1) * cols];
            let yrow = &self.values[y.0].data()[i * cols..(i + 1) * cols];
            for j in 0..cols {
                data.push(xrow[j] + yrow[j] * sd[j]);
            }
        }
        let value = Array::from_vec(&shape, data)?;
        Ok(self.op(
            value,
            &[x, y, s],
            Box::new(ScaleAddColsBack { x, y, s, rows, cols }),
        ))
    }
}

// ---------------------------------------------------------------------------
// Rigid 2-D transform of a point set (constant rotation/offset)
// ---------------------------------------------------------------------------

struct RigidBack {
    points: Var,
    rot: [f64; 4],
    m: usize,
}

impl Backward for RigidBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        if !ctx.wants(self.points) {
            return;
        }
        let [r00, r01, r10, r11] = self.rot;
        let mut dp = Array::zeros(&[2, self.m]);
        let gd = g.data();
        let dd = dp.data_mut();
        for i in 0..self.m {
            let gx = gd[i];
            let gy = gd[self.m + i];
            dd[i] = r00 * gx + r10 * gy;
            dd[self.m + i] = r01 * gx + r11 * gy;
        }
        ctx.accum(self.points, dp);
    }
}

impl Graph {
    /// Apply `p ↦ R·p + offset` to each column of a `2×M` point set.
    pub fn rigid_points(&mut self, points: Var, rot: [f64; 4], offset: [f64; 2]) -> Result<Var> {
        let shape = self.values[points.0].shape();
        if shape.len() != 2 || shape[0] != 2 {
            return Err(Error::shape(
                "rigid_points",
                format!("expected 2×M points, got {:?}", shape),
            ));
        }
        let m = shape[1];
        let src = self.values[points.0].data();
        let [r00, r01, r10, r11] = rot;
        let mut data = vec![0.0; 2 * m];
        for i in 0..m {
            let (x, y) = (src[i], src[m + i]);
            data[i] = r00 * x + r01 * y + offset[0];
            data[m + i] = r10 * x + r11 * y + offset[1];
        }
        let value = Array::from_vec(&[2, m], data)?;
        Ok(self.op(value, &[points], Box::new(RigidBack { points, rot, m })))
    }
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

struct SumAllBack {
    a: Var,
    scale: f64,
    a_shape: Vec<usize>,
}

impl Backward for SumAllBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        let gv = g.item() * self.scale;
        ctx.accum(self.a, Array::filled(&self.a_shape, gv));
    }
}

struct L1Back {
    a: Var,
    b: Var,
}

impl Backward for L1Back {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        let gv = g.item();
        let a = ctx.value(self.a);
        let b = ctx.value(self.b);
        let shape = a.shape().to_vec();
        let n = a.numel() as f64;
        let signs: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).signum() * f64::from(u8::from(x != y)))
            .collect();
        if ctx.wants(self.a) {
            let da: Vec<f64> = signs.iter().map(|s| gv * s / n).collect();
            ctx.accum(self.a, Array::from_vec(&shape, da).unwrap());
        }
        if ctx.wants(self.b) {
            let db: Vec<f64> = signs.iter().map(|s| -gv * s / n).collect();
            ctx.accum(self.b, Array::from_vec(&shape, db).unwrap());
        }
    }
}

impl Graph {
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.values[a.0].data().iter().sum();
        let a_shape = self.values[a.0].shape().to_vec();
        self.op(
            Array::scalar(s),
            &[a],
            Box::new(SumAllBack { a, scale: 1.0, a_shape }),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.values[a.0].numel() as f64;
        let s: f64 = self.values[a.0].data().iter().sum::<f64>() / n;
        let a_shape = self.values[a.0].shape().to_vec();
        self.op(
            Array::scalar(s),
            &[a],
            Box::new(SumAllBack { a, scale: 1.0 / n, a_shape }),
        )
    }

    /// Mean absolute error over all entries. Subgradient 0 where `a == b`.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_loss", a, b)?;
        let n = self.values[a.0].numel() as f64;
        let s: f64 = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
        Ok(self.op(Array::scalar(s), &[a, b], Box::new(L1Back { a, b })))
    }
}
