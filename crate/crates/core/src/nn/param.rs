//! Flat parameter storage with named tensor views.
//!
//! All trainable parameters of a model live in one `Vec<f64>`; gradients
//! use a second vector with the same layout. This makes the optimizer,
//! checkpoint I/O, and finite-difference probing of individual parameters
//! trivial.

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, IxDyn};

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a tensor and fills it from `init`.
    pub fn add(&mut self, name: &str, shape: &[usize], mut init: impl FnMut() -> f64) -> Tensor {
        let len: usize = shape.iter().product();
        let offset = self.data.len();
        self.data.extend(std::iter::repeat_with(&mut init).take(len));
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        Tensor(self.entries.len() - 1)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Tensor {
        self.add(name, shape, || 0.0)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor_count(&self) -> usize {
        self.entries.len()
    }

    pub fn name(&self, t: Tensor) -> &str {
        &self.entries[t.0].name
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.entries[t.0].shape
    }

    pub fn range(&self, t: Tensor) -> std::ops::Range<usize> {
        let e = &self.entries[t.0];
        e.offset..e.offset + e.len
    }

    pub fn slice(&self, t: Tensor) -> &[f64] {
        &self.data[self.range(t)]
    }

    pub fn slice_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.range(t);
        &mut self.data[r]
    }

    pub fn view1(&self, t: Tensor) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.slice(t))
    }

    pub fn view2(&self, t: Tensor) -> ArrayView2<'_, f64> {
        let e = &self.entries[t.0];
        assert_eq!(e.shape.len(), 2, "{} is not rank 2", e.name);
        ArrayView2::from_shape((e.shape[0], e.shape[1]), self.slice(t)).unwrap()
    }

    pub fn view_mut1(&mut self, t: Tensor) -> ArrayViewMut1<'_, f64> {
        let r = self.range(t);
        ArrayViewMut1::from(&mut self.data[r])
    }

    /// The tensor as an owned dynamic-rank array (checkpoint I/O).
    pub fn to_array(&self, t: Tensor) -> ArrayD<f64> {
        let e = &self.entries[t.0];
        ArrayD::from_shape_vec(IxDyn(&e.shape), self.slice(t).to_vec()).unwrap()
    }

    /// Overwrites a tensor from an array of matching shape.
    pub fn load_array(&mut self, t: Tensor, arr: &ArrayD<f64>) -> crate::Result<()> {
        let e = &self.entries[t.0];
        if arr.shape() != e.shape.as_slice() {
            return Err(crate::Error::shape(format!(
                "parameter {}: shape {:?} does not match checkpoint {:?}",
                e.name,
                e.shape,
                arr.shape()
            )));
        }
        let r = self.range(t);
        let std = arr.as_standard_layout();
        self.data[r].copy_from_slice(std.as_slice().unwrap());
        Ok(())
    }

    /// Iterates `(handle, name)` pairs in registration order.
    pub fn tensors(&self) -> impl Iterator<Item = (Tensor, &str)> {
        self.entries.iter().enumerate().map(|(i, e)| (Tensor(i), e.name.as_str()))
    }

    /// A zeroed gradient buffer with this store's layout.
    pub fn grad_buffer(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }
}

/// Gradient views use the same registry but borrow an external buffer.
pub struct GradView<'a> {
    store: &'a ParamStore,
    pub buf: &'a mut [f64],
}

impl<'a> GradView<'a> {
    pub fn new(store: &'a ParamStore, buf: &'a mut [f64]) -> Self {
        assert_eq!(store.len(), buf.len());
        GradView { store, buf }
    }

    pub fn view2_mut(&mut self, t: Tensor) -> ArrayViewMut2<'_, f64> {
        let e = &self.store.entries[t.0];
        assert_eq!(e.shape.len(), 2, "{} is not rank 2", e.name);
        ArrayViewMut2::from_shape(
            (e.shape[0], e.shape[1]),
            &mut self.buf[e.offset..e.offset + e.len],
        )
        .unwrap()
    }

    pub fn view1_mut(&mut self, t: Tensor) -> ArrayViewMut1<'_, f64> {
        let e = &self.store.entries[t.0];
        ArrayViewMut1::from(&mut self.buf[e.offset..e.offset + e.len])
    }

    pub fn slice_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.store.range(t);
        &mut self.buf[r]
    }
}
