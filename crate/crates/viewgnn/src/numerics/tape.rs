//! The differentiation tape and its operation set.
//!
//! Ops validate shapes, compute the forward value with the deterministic
//! kernels, reject non-finite results, and (when any input is attached)
//! record a backward rule. A tape is single-use: `backward` consumes the
//! recorded program and further recording is refused.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use super::kernels;
use super::{finite_check, GradTensor, NodeRef};
use crate::error::{Error, Result};

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

type BackwardFn = Box<dyn Fn(&Array2<f64>, &mut GradSink)>;

struct OpRecord {
    out_slot: usize,
    backward: BackwardFn,
}

struct Inner {
    num_slots: usize,
    ops: Vec<OpRecord>,
    consumed: bool,
}

/// Accumulates gradient contributions per tape slot during backward.
pub(crate) struct GradSink {
    slots: Vec<Option<Array2<f64>>>,
}

impl GradSink {
    fn add(&mut self, slot: usize, delta: Array2<f64>) {
        match &mut self.slots[slot] {
            Some(g) => *g += &delta,
            empty => *empty = Some(delta),
        }
    }
}

/// Gradients produced by one backward pass, keyed by recorded tensor.
pub struct Gradients {
    token: u64,
    slots: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// `dLoss/dTensor`, or `None` when the tensor was not recorded on the
    /// tape that produced these gradients or no gradient reached it.
    pub fn get(&self, t: &GradTensor) -> Option<&Array2<f64>> {
        let node = t.node()?;
        if node.token != self.token {
            return None;
        }
        self.slots.get(node.slot)?.as_ref()
    }
}

/// Records a forward program for one backward pass.
pub struct Tape {
    token: u64,
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            token: NEXT_TOKEN.fetch_add(1, Ordering::Relaxed),
            inner: RefCell::new(Inner { num_slots: 0, ops: Vec::new(), consumed: false }),
        }
    }

    /// Registers `values` as a differentiable input and returns its handle.
    pub fn leaf(&self, values: Array2<f64>) -> Result<GradTensor> {
        finite_check("leaf", &values)?;
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::State("tape already consumed by backward".into()));
        }
        let slot = inner.num_slots;
        inner.num_slots += 1;
        Ok(GradTensor::with_node(
            Arc::new(super::standardize(values)),
            Some(NodeRef { token: self.token, slot }),
        ))
    }

    fn input_slot(&self, t: &GradTensor) -> Result<Option<usize>> {
        match t.node() {
            None => Ok(None),
            Some(n) if n.token == self.token => Ok(Some(n.slot)),
            Some(_) => Err(Error::State("tensor belongs to a different tape".into())),
        }
    }

    fn push(&self, values: Arc<Array2<f64>>, backward: Option<BackwardFn>) -> Result<GradTensor> {
        let Some(backward) = backward else {
            return Ok(GradTensor::with_node(values, None));
        };
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::State("tape already consumed by backward".into()));
        }
        let slot = inner.num_slots;
        inner.num_slots += 1;
        inner.ops.push(OpRecord { out_slot: slot, backward });
        Ok(GradTensor::with_node(values, Some(NodeRef { token: self.token, slot })))
    }

    /// Runs reverse accumulation from a scalar loss. Consumes the recorded
    /// program; the tape refuses further use afterwards.
    pub fn backward(&self, loss: &GradTensor) -> Result<Gradients> {
        let loss_slot = self
            .input_slot(loss)?
            .ok_or_else(|| Error::State("loss is not attached to this tape".into()))?;
        if loss.dim() != (1, 1) {
            return Err(Error::Shape(format!("loss must be 1x1, got {:?}", loss.dim())));
        }
        let (ops, num_slots) = {
            let mut inner = self.inner.borrow_mut();
            if inner.consumed {
                return Err(Error::State("backward already ran on this tape".into()));
            }
            inner.consumed = true;
            (std::mem::take(&mut inner.ops), inner.num_slots)
        };
        let mut sink = GradSink { slots: vec![None; num_slots] };
        sink.slots[loss_slot] = Some(Array2::ones((1, 1)));
        for rec in ops.iter().rev() {
            let Some(g) = sink.slots[rec.out_slot].take() else { continue };
            (rec.backward)(&g, &mut sink);
            sink.slots[rec.out_slot] = Some(g);
        }
        Ok(Gradients { token: self.token, slots: sink.slots })
    }

    // ---- binary ops ----

    /// Matrix product `a · b`.
    pub fn matmul(&self, a: &GradTensor, b: &GradTensor) -> Result<GradTensor> {
        let ((_, ka), (kb, _)) = (a.dim(), b.dim());
        if ka != kb {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", a.dim(), b.dim())));
        }
        let a_slot = self.input_slot(a)?;
        let b_slot = self.input_slot(b)?;
        let out = kernels::matmul_nn(a.values(), b.values());
        finite_check("matmul", &out)?;
        let backward = (a_slot.is_some() || b_slot.is_some()).then(|| -> BackwardFn {
            let (av, bv) = (a.values_arc(), b.values_arc());
            Box::new(move |g, sink| {
                if let Some(s) = a_slot {
                    sink.add(s, kernels::matmul_nt(g, &bv));
                }
                if let Some(s) = b_slot {
                    sink.add(s, kernels::matmul_tn(&av, g));
                }
            })
        });
        self.push(Arc::new(out), backward)
    }

    /// Elementwise `a + b` (same shape).
    pub fn add(&self, a: &GradTensor, b: &GradTensor) -> Result<GradTensor> {
        self.zip_same_shape("add", a, b, |x, y| x + y, |_, _, _| 1.0, |_, _, _| 1.0)
    }

    /// Elementwise `a - b` (same shape).
    pub fn sub(&self, a: &GradTensor, b: &GradTensor) -> Result<GradTensor> {
        self.zip_same_shape("sub", a, b, |x, y| x - y, |_, _, _| 1.0, |_, _, _| -1.0)
    }

    /// Elementwise `a * b` (same shape).
    pub fn multiply(&self, a: &GradTensor, b: &GradTensor) -> Result<GradTensor> {
        self.zip_same_shape("multiply", a, b, |x, y| x * y, |_, y, _| y, |x, _, _| x)
    }

    /// Shared shape-checked elementwise binary op with pointwise partials
    /// `d out/d a` and `d out/d b` as functions of `(a, b, out)`.
    #[allow(clippy::type_complexity)]
    fn zip_same_shape(
        &self,
        name: &'static str,
        a: &GradTensor,
        b: &GradTensor,
        f: fn(f64, f64) -> f64,
        da: fn(f64, f64, f64) -> f64,
        db: fn(f64, f64, f64) -> f64,
    ) -> Result<GradTensor> {
        if a.dim() != b.dim() {
            return Err(Error::Shape(format!("{name} {:?} vs {:?}", a.dim(), b.dim())));
        }
        let a_slot = self.input_slot(a)?;
        let b_slot = self.input_slot(b)?;
        let mut out = Array2::zeros(a.dim());
        ndarray::Zip::from(&mut out)
            .and(a.values())
            .and(b.values())
            .for_each(|o, &x, &y| *o = f(x, y));
        finite_check(name, &out)?;
        let arc = Arc::new(out);
        let backward = (a_slot.is_some() || b_slot.is_some()).then(|| -> BackwardFn {
            let (av, bv, ov) = (a.values_arc(), b.values_arc(), Arc::clone(&arc));
            Box::new(move |g, sink| {
                if let Some(s) = a_slot {
                    let mut delta = Array2::zeros(g.dim());
                    ndarray::Zip::from(&mut delta)
                        .and(g)
                        .and(av.as_ref())
                        .and(bv.as_ref())
                        .and(ov.as_ref())
                        .for_each(|d, &gv, &x, &y, &o| *d = gv * da(x, y, o));
                    sink.add(s, delta);
                }
                if let Some(s) = b_slot {
                    let mut delta = Array2::zeros(g.dim());
                    ndarray::Zip::from(&mut delta)
                        .and(g)
                        .and(av.as_ref())
                        .and(bv.as_ref())
                        .and(ov.as_ref())
                        .for_each(|d, &gv, &x, &y, &o| *d = gv * db(x, y, o));
                    sink.add(s, delta);
                }
            })
        });
        self.push(arc, backward)
    }

    /// `a [m×n] + bias [1×n]`, broadcast over rows.
    pub fn add_bias(&self, a: &GradTensor, bias: &GradTensor) -> Result<GradTensor> {
        let ((_m, n), (br, bc)) = (a.dim(), bias.dim());
        if br != 1 || bc != n {
            return Err(Error::Shape(format!("add_bias {:?} + {:?}", a.dim(), bias.dim())));
        }
        let a_slot = self.input_slot(a)?;
        let b_slot = self.input_slot(bias)?;
        let mut out = a.values().clone();
        for mut row in out.rows_mut() {
            row += &bias.values().row(0);
        }
        finite_check("add_bias", &out)?;
        let backward = (a_slot.is_some() || b_slot.is_some()).then(|| -> BackwardFn {
            Box::new(move |g, sink| {
                if let Some(s) = a_slot {
                    sink.add(s, g.clone());
                }
                if let Some(s) = b_slot {
                    sink.add(s, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            })
        });
        self.push(Arc::new(out), backward)
    }

    /// `a [m×n] * col [m×1]`, broadcast over columns.
    pub fn mul_col(&self, a: &GradTensor, col: &GradTensor) -> Result<GradTensor> {
        let ((m, _n), (cr, cc)) = (a.dim(), col.dim());
        if cr != m || cc != 1 {
            return Err(Error::Shape(format!("mul_col {:?} * {:?}", a.dim(), col.dim())));
        }
        let a_slot = self.input_slot(a)?;
        let c_slot = self.input_slot(col)?;
        let mut out = a.values().clone();
        for (mut row, &c) in out.rows_mut().into_iter().zip(col.values().column(0)) {
            row *= c;
        }
        finite_check("mul_col", &out)?;
        let backward = (a_slot.is_some() || c_slot.is_some()).then(|| -> BackwardFn {
            let (av, cv) = (a.values_arc(), col.values_arc());
            Box::new(move |g, sink| {
                if let Some(s) = a_slot {
                    let mut delta = g.clone();
                    for (mut row, &c) in delta.rows_mut().into_iter().zip(cv.column(0)) {
                        row *= c;
                    }
                    sink.add(s, delta);
                }
                if let Some(s) = c_slot {
                    let prods = g * av.as_ref();
                    sink.add(s, prods.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            })
        });
        self.push(Arc::new(out), backward)
    }

    // ---- elementwise unary ops ----

    /// `k * a`.
    pub fn scale(&self, a: &GradTensor, k: f64) -> Result<GradTensor> {
        self.map_unary("scale", a, move |x| k * x, move |_, _| k)
    }

    pub fn relu(&self, a: &GradTensor) -> Result<GradTensor> {
        self.map_unary("relu", a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, a: &GradTensor, slope: f64) -> Result<GradTensor> {
        self.map_unary(
            "leaky_relu",
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn elu(&self, a: &GradTensor) -> Result<GradTensor> {
        self.map_unary(
            "elu",
            a,
            |x| if x > 0.0 { x } else { x.exp() - 1.0 },
            |x, o| if x > 0.0 { 1.0 } else { o + 1.0 },
        )
    }

    pub fn exp(&self, a: &GradTensor) -> Result<GradTensor> {
        self.map_unary("exp", a, f64::exp, |_, o| o)
    }

    /// Natural logarithm. Non-positive entries yield a non-finite error.
    pub fn log(&self, a: &GradTensor) -> Result<GradTensor> {
        self.map_unary("log", a, f64::ln, |x, _| 1.0 / x)
    }

    /// Elementwise `a^p`. `p == 1` is an exact identity (same buffer).
    pub fn pow(&self, a: &GradTensor, p: f64) -> Result<GradTensor> {
        if p == 1.0 {
            return Ok(a.clone());
        }
        self.map_unary("pow", a, move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    /// `max(a, lo)` elementwise; gradient passes where `a >= lo`.
    pub fn clamp_min(&self, a: &GradTensor, lo: f64) -> Result<GradTensor> {
        self.map_unary(
            "clamp_min",
            a,
            move |x| x.max(lo),
            move |x, _| if x >= lo { 1.0 } else { 0.0 },
        )
    }

    /// Shared elementwise unary op with pointwise derivative `d(x, out)`.
    fn map_unary(
        &self,
        name: &'static str,
        a: &GradTensor,
        f: impl Fn(f64) -> f64,
        d: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<GradTensor> {
        let a_slot = self.input_slot(a)?;
        let out = a.values().mapv(&f);
        finite_check(name, &out)?;
        let arc = Arc::new(out);
        let backward = a_slot.map(|s| -> BackwardFn {
            let (av, ov) = (a.values_arc(), Arc::clone(&arc));
            Box::new(move |g, sink| {
                let mut delta = Array2::zeros(g.dim());
                ndarray::Zip::from(&mut delta)
                    .and(g)
                    .and(av.as_ref())
                    .and(ov.as_ref())
                    .for_each(|dd, &gv, &x, &o| *dd = gv * d(x, o));
                sink.add(s, delta);
            })
        });
        self.push(arc, backward)
    }

    // ---- structural ops ----

    /// Concatenates tensors with equal row counts along columns.
    pub fn concat_cols(&self, parts: &[GradTensor]) -> Result<GradTensor> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of zero tensors".into()));
        }
        let m = parts[0].dim().0;
        let mut widths = Vec::with_capacity(parts.len());
        let mut slots = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for p in parts {
            let (r, c) = p.dim();
            if r != m {
                return Err(Error::Shape(format!("concat_cols rows {r} != {m}")));
            }
            widths.push(c);
            total += c;
            slots.push(self.input_slot(p)?);
        }
        let mut out = Array2::zeros((m, total));
        let mut at = 0;
        for p in parts {
            let c = p.dim().1;
            out.slice_mut(s![.., at..at + c]).assign(p.values());
            at += c;
        }
        finite_check("concat_cols", &out)?;
        let backward = slots.iter().any(Option::is_some).then(|| -> BackwardFn {
            Box::new(move |g, sink| {
                let mut at = 0;
                for (slot, &w) in slots.iter().zip(&widths) {
                    if let Some(s_id) = slot {
                        sink.add(*s_id, g.slice(s![.., at..at + w]).to_owned());
                    }
                    at += w;
                }
            })
        });
        self.push(Arc::new(out), backward)
    }

    /// Row gather: `out[r] = a[indices[r]]`. Duplicate indices accumulate
    /// their gradients.
    pub fn gather_rows(&self, a: &GradTensor, indices: &[usize]) -> Result<GradTensor> {
        let (m, n) = a.dim();
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Index(format!("gather_rows index {bad} >= {m} rows")));
        }
        let a_slot = self.input_slot(a)?;
        let mut out = Array2::zeros((indices.len(), n));
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).assign(&a.values().row(i));
        }
        // Source rows are finite by induction; no re-check needed, but kept
        // for uniformity with every other op.
        finite_check("gather_rows", &out)?;
        let backward = a_slot.map(|s_id| -> BackwardFn {
            let indices = indices.to_vec();
            Box::new(move |g, sink| {
                let mut delta = Array2::zeros((m, n));
                for (r, &i) in indices.iter().enumerate() {
                    let mut dst = delta.row_mut(i);
                    dst += &g.row(r);
                }
                sink.add(s_id, delta);
            })
        });
        self.push(Arc::new(out), backward)
    }

    /// Segment sum: `out[s] = Σ values[e]` over `e` with `segment_ids[e] = s`,
    /// accumulated in input row order. Empty segments are zero rows.
    pub fn segment_sum(
        &self,
        values: &GradTensor,
        segment_ids: &[usize],
        num_segments: usize,
    ) -> Result<GradTensor> {
        self.segment_reduce("segment_sum", values, segment_ids, num_segments, false)
    }

    /// Segment mean; empty segments are zero rows.
    pub fn segment_mean(
        &self,
        values: &GradTensor,
        segment_ids: &[usize],
        num_segments: usize,
    ) -> Result<GradTensor> {
        self.segment_reduce("segment_mean", values, segment_ids, num_segments, true)
    }

    fn segment_reduce(
        &self,
        name: &'static str,
        values: &GradTensor,
        segment_ids: &[usize],
        num_segments: usize,
        mean: bool,
    ) -> Result<GradTensor> {
        let (e, d) = values.dim();
        if segment_ids.len() != e {
            return Err(Error::Shape(format!(
                "{name}: {} segment ids for {e} rows",
                segment_ids.len()
            )));
        }
        if let Some(&bad) = segment_ids.iter().find(|&&s| s >= num_segments) {
            return Err(Error::Index(format!("{name}: segment id {bad} >= {num_segments}")));
        }
        let v_slot = self.input_slot(values)?;
        let mut counts = vec![0usize; num_segments];
        for &s_id in segment_ids {
            counts[s_id] += 1;
        }
        let mut out = Array2::zeros((num_segments, d));
        for (row, &s_id) in values.values().rows().into_iter().zip(segment_ids) {
            let mut dst = out.row_mut(s_id);
            dst += &row;
        }
        if mean {
            for (mut row, &c) in out.rows_mut().into_iter().zip(&counts) {
                if c > 0 {
                    row /= c as f64;
                }
            }
        }
        finite_check(name, &out)?;
        let backward = v_slot.map(|s_id| -> BackwardFn {
            let segment_ids = segment_ids.to_vec();
            Box::new(move |g, sink| {
                let mut delta = Array2::zeros((e, d));
                for (mut row, &seg) in delta.rows_mut().into_iter().zip(&segment_ids) {
                    let scale = if mean { 1.0 / counts[seg] as f64 } else { 1.0 };
                    row.assign(&g.row(seg));
                    if mean {
                        row *= scale;
                    }
                }
                sink.add(s_id, delta);
            })
        });
        self.push(Arc::new(out), backward)
    }

    /// Row-wise softmax with max-subtraction. Outputs are floored at the
    /// smallest positive normal so rows stay strictly positive even when an
    /// entry underflows.
    pub fn softmax_rows(&self, a: &GradTensor) -> Result<GradTensor> {
        let (m, n) = a.dim();
        if m == 0 || n == 0 {
            return Err(Error::Shape("softmax_rows of an empty tensor".into()));
        }
        let a_slot = self.input_slot(a)?;
        let mut out = Array2::zeros((m, n));
        for (mut orow, arow) in out.rows_mut().into_iter().zip(a.values().rows()) {
            let max = arow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in orow.iter_mut().zip(arow) {
                *o = (x - max).exp().max(f64::MIN_POSITIVE);
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        finite_check("softmax_rows", &out)?;
        let arc = Arc::new(out);
        let backward = a_slot.map(|s_id| -> BackwardFn {
            let ov = Arc::clone(&arc);
            Box::new(move |g, sink| {
                let mut delta = Array2::zeros((m, n));
                for ((mut drow, grow), srow) in
                    delta.rows_mut().into_iter().zip(g.rows()).zip(ov.rows())
                {
                    let mut dot = 0.0;
                    for (&gv, &sv) in grow.iter().zip(&srow) {
                        dot += gv * sv;
                    }
                    for ((d, &gv), &sv) in drow.iter_mut().zip(&grow).zip(&srow) {
                        *d = sv * (gv - dot);
                    }
                }
                sink.add(s_id, delta);
            })
        });
        self.push(arc, backward)
    }

    // ---- reductions ----

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum_all(&self, a: &GradTensor) -> Result<GradTensor> {
        let a_slot = self.input_slot(a)?;
        let total: f64 = a.values().iter().sum();
        let out = Array2::from_elem((1, 1), total);
        finite_check("sum_all", &out)?;
        let dim = a.dim();
        let backward = a_slot.map(|s_id| -> BackwardFn {
            Box::new(move |g, sink| {
                sink.add(s_id, Array2::from_elem(dim, g[[0, 0]]));
            })
        });
        self.push(Arc::new(out), backward)
    }

    /// Row sums as an `[m×1]` tensor.
    pub fn sum_rows(&self, a: &GradTensor) -> Result<GradTensor> {
        let a_slot = self.input_slot(a)?;
        let (m, n) = a.dim();
        let mut out = Array2::zeros((m, 1));
        for (o, row) in out.column_mut(0).iter_mut().zip(a.values().rows()) {
            *o = row.iter().sum();
        }
        finite_check("sum_rows", &out)?;
        let backward = a_slot.map(|s_id| -> BackwardFn {
            Box::new(move |g, sink| {
                let mut delta = Array2::zeros((m, n));
                for (mut row, &gv) in delta.rows_mut().into_iter().zip(g.column(0)) {
                    row.fill(gv);
                }
                sink.add(s_id, delta);
            })
        });
        self.push(Arc::new(out), backward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream_rng;
    use crate::testing::{check_gradients, random_matrix};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn scalar(tape: &Tape, x: f64) -> GradTensor {
        tape.leaf(Array2::from_elem((1, 1), x)).unwrap()
    }

    /// Uniform magnitudes in [0.25, 1.75] with random signs: safe distance
    /// from the kinks of relu/leaky_relu/elu/clamp for finite differencing.
    fn kink_safe(rng: &mut rand_chacha::ChaCha20Rng, rows: usize, cols: usize) -> Array2<f64> {
        let mut m = random_matrix(rng, rows, cols, 0.25, 1.75);
        for v in m.iter_mut() {
            if rand::Rng::random::<bool>(rng) {
                *v = -*v;
            }
        }
        m
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let tape = Tape::new();
        let i2 = GradTensor::constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let a = GradTensor::constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let out = tape.matmul(&i2, &a).unwrap();
        assert_eq!(out.values(), &array![[1.0, 2.0], [3.0, 4.0]]);

        let r = GradTensor::constant(array![[1.0, 2.0]]);
        let c = GradTensor::constant(array![[3.0], [4.0]]);
        assert_eq!(tape.matmul(&r, &c).unwrap().values(), &array![[11.0]]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let tape = Tape::new();
        let a = GradTensor::constant(Array2::zeros((2, 3)));
        let b = GradTensor::constant(Array2::zeros((2, 3)));
        assert!(matches!(tape.matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = substream_rng(11, "test-matmul", &[]);
        let a = random_matrix(&mut rng, 4, 3, -1.0, 1.0);
        let b = random_matrix(&mut rng, 3, 5, -1.0, 1.0);
        let err = check_gradients(&[a, b], &|tape, xs| tape.matmul(&xs[0], &xs[1]));
        assert!(err < 1e-6, "matmul rel err {err}");
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let x = GradTensor::constant(array![[0.0, 0.0], [1.0f64.ln(), 3.0f64.ln()], [1000.0, 0.0]]);
        let s = tape.softmax_rows(&x).unwrap();
        assert_abs_diff_eq!(s.values()[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.values()[[0, 1]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.values()[[1, 0]], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values()[[1, 1]], 0.75, epsilon = 1e-12);
        assert!(s.values()[[2, 0]] > 1.0 - 1e-12);
        assert!(s.values()[[2, 1]] > 0.0, "strictly positive even after underflow");
        assert!(s.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rejects_empty() {
        let tape = Tape::new();
        let x = GradTensor::constant(Array2::zeros((0, 3)));
        assert!(matches!(tape.softmax_rows(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn segment_mean_examples() {
        let tape = Tape::new();
        let v = GradTensor::constant(array![[1.0], [3.0], [5.0]]);
        let out = tape.segment_mean(&v, &[0, 0, 1], 2).unwrap();
        assert_eq!(out.values(), &array![[2.0], [5.0]]);

        // Single segment holding everything reduces to the column mean.
        let all = tape.segment_mean(&v, &[0, 0, 0], 1).unwrap();
        assert_eq!(all.values(), &array![[3.0]]);

        // Empty segment stays a zero row.
        let gap = tape.segment_mean(&v, &[0, 0, 2], 3).unwrap();
        assert_eq!(gap.values(), &array![[2.0], [0.0], [5.0]]);

        let bad = tape.segment_mean(&v, &[0, 0, 5], 2);
        assert!(matches!(bad, Err(Error::Index(_))));
    }

    #[test]
    fn segment_mean_centering_is_zero() {
        // segment_mean then broadcast-subtract leaves zero segment means.
        let mut rng = substream_rng(12, "test-segmean", &[]);
        let v = random_matrix(&mut rng, 10, 4, -2.0, 2.0);
        let ids = [0usize, 1, 0, 2, 1, 0, 2, 2, 1, 0];
        let tape = Tape::new();
        let vt = GradTensor::constant(v);
        let means = tape.segment_mean(&vt, &ids, 3).unwrap();
        let spread = tape.gather_rows(&means, &ids).unwrap();
        let centered = tape.sub(&vt, &spread).unwrap();
        let re_mean = tape.segment_mean(&centered, &ids, 3).unwrap();
        for v in re_mean.values() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, -2.0], [3.0, 0.5]]).unwrap();
        let loss = tape.sum_all(&x).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &Array2::<f64>::ones((2, 2)));

        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, -2.0], [3.0, 0.5]]).unwrap();
        let sq = tape.multiply(&x, &x).unwrap();
        let loss = tape.sum_all(&sq).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &array![[2.0, -4.0], [6.0, 1.0]]);
    }

    #[test]
    fn backward_state_errors() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]]).unwrap();
        assert!(matches!(tape.backward(&x), Err(Error::Shape(_))), "non-scalar loss");

        let loss = tape.sum_all(&x).unwrap();
        tape.backward(&loss).unwrap();
        assert!(matches!(tape.backward(&loss), Err(Error::State(_))), "second backward");
        assert!(matches!(tape.sum_all(&x), Err(Error::State(_))), "record after backward");
        assert!(matches!(tape.leaf(array![[1.0]]), Err(Error::State(_))), "leaf after backward");

        let other = Tape::new();
        assert!(matches!(other.sum_all(&x), Err(Error::State(_))), "cross-tape input");
        let detached_loss = GradTensor::constant(array![[1.0]]);
        assert!(matches!(other.backward(&detached_loss), Err(Error::State(_))));
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let tape = Tape::new();
        let x = tape.leaf(array![[2.0, 3.0]]).unwrap();
        let d = x.detach();
        assert!(!d.is_attached());
        let prod = tape.multiply(&x, &d).unwrap();
        let loss = tape.sum_all(&prod).unwrap();
        let grads = tape.backward(&loss).unwrap();
        // d(x*const)/dx = const, not 2x.
        assert_eq!(grads.get(&x).unwrap(), &array![[2.0, 3.0]]);
        assert!(grads.get(&d).is_none());
    }

    #[test]
    fn constant_only_ops_stay_detached() {
        let tape = Tape::new();
        let a = GradTensor::constant(array![[1.0, 2.0]]);
        let out = tape.scale(&a, 3.0).unwrap();
        assert!(!out.is_attached());
    }

    #[test]
    fn gather_duplicates_accumulate() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0], [2.0]]).unwrap();
        let g = tape.gather_rows(&x, &[0, 0, 1]).unwrap();
        let loss = tape.sum_all(&g).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &array![[2.0], [1.0]]);

        let tape = Tape::new();
        let x = tape.leaf(array![[1.0], [2.0]]).unwrap();
        assert!(matches!(tape.gather_rows(&x, &[2]), Err(Error::Index(_))));
    }

    #[test]
    fn exp_overflow_is_an_error() {
        let tape = Tape::new();
        let x = GradTensor::constant(array![[1000.0]]);
        assert!(matches!(tape.exp(&x), Err(Error::NonFinite { op: "exp" })));
        let z = GradTensor::constant(array![[0.0]]);
        assert!(matches!(tape.log(&z), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn pow_one_is_exact_identity() {
        let tape = Tape::new();
        let x = tape.leaf(array![[0.3, 0.7]]).unwrap();
        let y = tape.pow(&x, 1.0).unwrap();
        assert!(std::ptr::eq(x.values(), y.values()), "same buffer, no copy");
    }

    #[test]
    fn composite_chain_matches_finite_differences() {
        // matmul -> relu -> softmax -> log, as one randomized program.
        let mut rng = substream_rng(13, "test-chain", &[]);
        let x = kink_safe(&mut rng, 5, 4);
        let w = kink_safe(&mut rng, 4, 3);
        let err = check_gradients(&[x, w], &|tape, xs| {
            let h = tape.matmul(&xs[0], &xs[1])?;
            let r = tape.relu(&h)?;
            let s = tape.softmax_rows(&r)?;
            tape.log(&s)
        });
        assert!(err < 1e-5, "composite rel err {err}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = substream_rng(14, "test-ops", &[]);
        type Case<'a> = (&'a str, Vec<Array2<f64>>, Box<crate::testing::LossBuilder<'a>>);
        let mut cases: Vec<Case> = Vec::new();

        let dims = |rng: &mut rand_chacha::ChaCha20Rng| {
            (2 + (rng.next_u32() % 15) as usize, 2 + (rng.next_u32() % 15) as usize)
        };
        use rand_chacha::rand_core::RngCore;

        let (m, n) = dims(&mut rng);
        let k = 3;
        cases.push((
            "matmul",
            vec![
                random_matrix(&mut rng, m, k, -1.0, 1.0),
                random_matrix(&mut rng, k, n, -1.0, 1.0),
            ],
            Box::new(|t, xs| t.matmul(&xs[0], &xs[1])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "add",
            vec![
                random_matrix(&mut rng, m, n, -1.0, 1.0),
                random_matrix(&mut rng, m, n, -1.0, 1.0),
            ],
            Box::new(|t, xs| t.add(&xs[0], &xs[1])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "sub",
            vec![
                random_matrix(&mut rng, m, n, -1.0, 1.0),
                random_matrix(&mut rng, m, n, -1.0, 1.0),
            ],
            Box::new(|t, xs| t.sub(&xs[0], &xs[1])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "multiply",
            vec![
                random_matrix(&mut rng, m, n, -1.0, 1.0),
                random_matrix(&mut rng, m, n, -1.0, 1.0),
            ],
            Box::new(|t, xs| t.multiply(&xs[0], &xs[1])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "add_bias",
            vec![
                random_matrix(&mut rng, m, n, -1.0, 1.0),
                random_matrix(&mut rng, 1, n, -1.0, 1.0),
            ],
            Box::new(|t, xs| t.add_bias(&xs[0], &xs[1])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "mul_col",
            vec![
                random_matrix(&mut rng, m, n, -1.0, 1.0),
                random_matrix(&mut rng, m, 1, -1.0, 1.0),
            ],
            Box::new(|t, xs| t.mul_col(&xs[0], &xs[1])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "scale",
            vec![random_matrix(&mut rng, m, n, -1.0, 1.0)],
            Box::new(|t, xs| t.scale(&xs[0], -1.7)),
        ));
        let (m, n) = dims(&mut rng);
        cases.push(("relu", vec![kink_safe(&mut rng, m, n)], Box::new(|t, xs| t.relu(&xs[0]))));
        let (m, n) = dims(&mut rng);
        cases.push((
            "leaky_relu",
            vec![kink_safe(&mut rng, m, n)],
            Box::new(|t, xs| t.leaky_relu(&xs[0], 0.2)),
        ));
        let (m, n) = dims(&mut rng);
        cases.push(("elu", vec![kink_safe(&mut rng, m, n)], Box::new(|t, xs| t.elu(&xs[0]))));
        let (m, n) = dims(&mut rng);
        cases.push((
            "exp",
            vec![random_matrix(&mut rng, m, n, -1.0, 1.0)],
            Box::new(|t, xs| t.exp(&xs[0])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "log",
            vec![random_matrix(&mut rng, m, n, 0.3, 2.0)],
            Box::new(|t, xs| t.log(&xs[0])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "pow",
            vec![random_matrix(&mut rng, m, n, 0.3, 2.0)],
            Box::new(|t, xs| t.pow(&xs[0], 2.5)),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "pow_reciprocal",
            vec![random_matrix(&mut rng, m, n, 0.5, 2.0)],
            Box::new(|t, xs| t.pow(&xs[0], -1.0)),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "clamp_min",
            vec![kink_safe(&mut rng, m, n)],
            Box::new(|t, xs| t.clamp_min(&xs[0], 0.5001)),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "concat_cols",
            vec![
                random_matrix(&mut rng, m, n, -1.0, 1.0),
                random_matrix(&mut rng, m, 3, -1.0, 1.0),
            ],
            Box::new(|t, xs| t.concat_cols(xs)),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "gather_rows",
            vec![random_matrix(&mut rng, m, n, -1.0, 1.0)],
            Box::new(move |t, xs| t.gather_rows(&xs[0], &[0, m - 1, 0, 1])),
        ));
        let (_, n) = dims(&mut rng);
        cases.push((
            "segment_sum",
            vec![random_matrix(&mut rng, 6, n, -1.0, 1.0)],
            Box::new(|t, xs| t.segment_sum(&xs[0], &[0, 2, 0, 2, 3, 0], 4)),
        ));
        let (_, n) = dims(&mut rng);
        cases.push((
            "segment_mean",
            vec![random_matrix(&mut rng, 6, n, -1.0, 1.0)],
            Box::new(|t, xs| t.segment_mean(&xs[0], &[0, 2, 0, 2, 3, 0], 4)),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "softmax_rows",
            vec![random_matrix(&mut rng, m, n, -2.0, 2.0)],
            Box::new(|t, xs| t.softmax_rows(&xs[0])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "sum_rows",
            vec![random_matrix(&mut rng, m, n, -1.0, 1.0)],
            Box::new(|t, xs| t.sum_rows(&xs[0])),
        ));
        let (m, n) = dims(&mut rng);
        cases.push((
            "sum_all",
            vec![random_matrix(&mut rng, m, n, -1.0, 1.0)],
            Box::new(|t, xs| t.sum_all(&xs[0])),
        ));
        // Weighted loss so softmax/segment grads are not structurally zero
        // (a plain sum has zero gradient through any row-normalized output).
        let (m, n) = dims(&mut rng);
        let weights = GradTensor::constant(random_matrix(&mut rng, m, n, 0.2, 1.0));
        cases.push((
            "softmax_rows_weighted",
            vec![random_matrix(&mut rng, m, n, -2.0, 2.0)],
            Box::new(move |t, xs| {
                let s = t.softmax_rows(&xs[0])?;
                t.multiply(&s, &weights)
            }),
        ));

        for (name, inputs, build) in &cases {
            let err = check_gradients(inputs, build.as_ref());
            assert!(err < 1e-5, "{name}: rel err {err}");
        }
    }

    #[test]
    fn scalar_helper_roundtrip() {
        let tape = Tape::new();
        let s = scalar(&tape, 4.5);
        assert_eq!(s.item().unwrap(), 4.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_rows_on_simplex(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let mut rng = substream_rng(seed, "prop-softmax", &[]);
            let x = random_matrix(&mut rng, rows, cols, -30.0, 30.0);
            let tape = Tape::new();
            let s = tape.softmax_rows(&GradTensor::constant(x)).unwrap();
            for row in s.values().rows() {
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn replay_is_bit_identical(seed in 0u64..1000) {
            let mut rng = substream_rng(seed, "prop-replay", &[]);
            let x = random_matrix(&mut rng, 4, 3, -1.0, 1.0);
            let w = random_matrix(&mut rng, 3, 2, -1.0, 1.0);
            let run = |x: &Array2<f64>, w: &Array2<f64>| {
                let tape = Tape::new();
                let xt = tape.leaf(x.clone()).unwrap();
                let wt = tape.leaf(w.clone()).unwrap();
                let h = tape.matmul(&xt, &wt).unwrap();
                let r = tape.relu(&h).unwrap();
                let s = tape.softmax_rows(&r).unwrap();
                let loss = tape.sum_all(&tape.multiply(&s, &s).unwrap()).unwrap();
                let grads = tape.backward(&loss).unwrap();
                (s.values().clone(), grads.get(&wt).unwrap().clone())
            };
            let (s1, g1) = run(&x, &w);
            let (s2, g2) = run(&x, &w);
            prop_assert_eq!(s1, s2);
            prop_assert_eq!(g1, g2);
        }
    }
}
