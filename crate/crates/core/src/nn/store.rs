//! Named parameter storage with gradients and ADAM moment buffers.

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Row-major matrix; vectors are 1 x n.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row r as a contiguous slice.
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Handle into a [`ParamStore`]; cheap to copy, valid for the store that
/// issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Param<S> {
    name: String,
    value: Tensor<S>,
    grad: Tensor<S>,
    m: Tensor<S>,
    v: Tensor<S>,
}

/// All learnable tensors of a model, in registration order.
///
/// Registration order is part of the contract: checkpoints, flattening and
/// the deterministic reductions in training all iterate in this order.
#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Registers a tensor under a unique name and returns its handle.
    pub fn register(&mut self, name: &str, value: Tensor<S>) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidInput(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        let (r, c) = (value.rows, value.cols);
        self.params.push(Param {
            name: name.to_string(),
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            value,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].grad
    }

    /// Simultaneous access to one parameter's value and gradient.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&Tensor<S>, &mut Tensor<S>) {
        let p = &mut self.params[id.0];
        (&p.value, &mut p.grad)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn tensor_count(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    /// Adds `other`'s gradients into this store's. Both stores must share the
    /// registration layout; used by the deterministic batch reduction.
    pub fn accumulate_grads_from(&mut self, other: &ParamStore<S>) {
        assert_eq!(self.params.len(), other.params.len(), "store layout mismatch");
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            debug_assert_eq!(dst.name, src.name);
            for (d, s) in dst.grad.data.iter_mut().zip(&src.grad.data) {
                *d += *s;
            }
        }
    }

    /// Adds a flat gradient buffer into this store's gradients.
    pub fn add_grads(&mut self, buf: &GradBuffer<S>) {
        assert_eq!(
            buf.offsets.len(),
            self.params.len() + 1,
            "grad buffer layout mismatch"
        );
        for (i, p) in self.params.iter_mut().enumerate() {
            let src = &buf.flat[buf.offsets[i]..buf.offsets[i + 1]];
            debug_assert_eq!(src.len(), p.grad.len());
            for (d, s) in p.grad.data.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    pub fn scale_grads(&mut self, factor: S) {
        for p in &mut self.params {
            for g in &mut p.grad.data {
                *g *= factor;
            }
        }
    }

    /// Flattened copy of all values, registration order.
    pub fn flatten_values(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(&p.value.data);
        }
        out
    }

    /// Overwrites all values from a flat buffer laid out like
    /// [`Self::flatten_values`].
    pub fn load_values(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension {
                what: "parameter buffer".into(),
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Snapshot of (name, rows, cols, values, m, v) for checkpointing.
    pub fn export(&self) -> Vec<(String, usize, usize, Vec<S>, Vec<S>, Vec<S>)> {
        self.params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    p.value.rows,
                    p.value.cols,
                    p.value.data.clone(),
                    p.m.data.clone(),
                    p.v.data.clone(),
                )
            })
            .collect()
    }

    /// Restores values and moments exported by [`Self::export`]. Names and
    /// shapes must match the current registration exactly.
    pub fn import(&mut self, entries: &[(String, usize, usize, Vec<S>, Vec<S>, Vec<S>)]) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::Dimension {
                what: "checkpoint tensor count".into(),
                expected: self.params.len(),
                got: entries.len(),
            });
        }
        for (p, (name, rows, cols, val, m, v)) in self.params.iter_mut().zip(entries) {
            if &p.name != name || p.value.rows != *rows || p.value.cols != *cols {
                return Err(Error::InvalidInput(format!(
                    "checkpoint tensor `{name}` ({rows}x{cols}) does not match model tensor `{}` ({}x{})",
                    p.name, p.value.rows, p.value.cols
                )));
            }
            p.value.data.copy_from_slice(val);
            p.m.data.copy_from_slice(m);
            p.v.data.copy_from_slice(v);
        }
        Ok(())
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Flat gradient accumulator mirroring a store's tensor layout. Parallel
/// workers each fill a private buffer; folding the buffers into the store
/// in a fixed order keeps training bit-identical across thread counts.
#[derive(Debug, Clone)]
pub struct GradBuffer<S> {
    /// `offsets[i]..offsets[i+1]` is tensor `i`'s slice of `flat`.
    offsets: Vec<usize>,
    flat: Vec<S>,
}

impl<S: Scalar> GradBuffer<S> {
    pub fn zeros(store: &ParamStore<S>) -> GradBuffer<S> {
        let mut offsets = Vec::with_capacity(store.params.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for p in &store.params {
            total += p.value.len();
            offsets.push(total);
        }
        GradBuffer {
            offsets,
            flat: vec![S::zero(); total],
        }
    }

    pub fn reset(&mut self) {
        self.flat.fill(S::zero());
    }

    pub fn grad(&self, id: ParamId) -> &[S] {
        &self.flat[self.offsets[id.0]..self.offsets[id.0 + 1]]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.flat[self.offsets[id.0]..self.offsets[id.0 + 1]]
    }

    /// Adds another buffer of the same layout into this one.
    pub fn add_from(&mut self, other: &GradBuffer<S>) {
        assert_eq!(self.offsets, other.offsets, "grad buffer layout mismatch");
        for (d, s) in self.flat.iter_mut().zip(&other.flat) {
            *d += *s;
        }
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.flat.iter().all(|g| g.is_finite())
    }
}

/// ADAM optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    /// Completed steps; bias correction uses step + 1.
    pub step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new() -> Self {
        Adam {
            beta1: S::c(0.9),
            beta2: S::c(0.999),
            epsilon: S::c(1e-8),
            step: 0,
        }
    }

    /// One update over every parameter in the store, then zeroes gradients.
    ///
    /// If any gradient element is non-finite the step is refused and no
    /// parameter or moment changes; training treats that as divergence.
    pub fn step(&mut self, store: &mut ParamStore<S>, lr: S) -> Result<()> {
        for p in &store.params {
            if p.grad.data.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        let t = self.step + 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = S::one() - b1.powi(t as i32);
        let bc2 = S::one() - b2.powi(t as i32);
        for p in &mut store.params {
            for i in 0..p.grad.data.len() {
                let g = p.grad.data[i];
                p.m.data[i] = b1 * p.m.data[i] + (S::one() - b1) * g;
                p.v.data[i] = b2 * p.v.data[i] + (S::one() - b2) * g * g;
                let m_hat = p.m.data[i] / bc1;
                let v_hat = p.v.data[i] / bc2;
                p.value.data[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.grad.fill(S::zero());
        }
        self.step = t;
        Ok(())
    }
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self::new()
    }
}
