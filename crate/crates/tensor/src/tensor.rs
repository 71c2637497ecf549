//! The [`Tensor`] handle and the recording hook every op goes through.

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::element::Element;
use crate::error::{arg_err, shape_err, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any op on the tape.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Vector-Jacobian product of one recorded op.
///
/// Called with the gradient flowing into the op output, the op inputs and the
/// op output values. Returns one entry per input; `None` means no gradient.
pub type BackwardFn<E> = dyn Fn(&[E], &[Tensor<E>], &[E]) -> Vec<Option<Vec<E>>>;

pub(crate) struct Node<E: Element> {
    pub(crate) name: &'static str,
    pub(crate) inputs: Vec<Tensor<E>>,
    pub(crate) backward: Box<BackwardFn<E>>,
}

pub(crate) struct Inner<E: Element> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RefCell<Vec<E>>,
    pub(crate) grad: RefCell<Option<Vec<E>>>,
    pub(crate) requires_grad: bool,
    pub(crate) node: Option<Node<E>>,
}

/// Dense row-major tensor. Cloning is cheap and shares storage.
pub struct Tensor<E: Element = f32>(pub(crate) Rc<Inner<E>>);

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<E> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("dtype", &E::NAME)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Element> Tensor<E> {
    fn make(
        shape: Vec<usize>,
        data: Vec<E>,
        requires_grad: bool,
        node: Option<Node<E>>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            node,
        }))
    }

    /// Constant tensor. Every extent must be positive.
    pub fn from_vec(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return arg_err("from_vec", format!("zero extent in shape {shape:?}"));
        }
        if numel_of(shape) != data.len() {
            return shape_err(
                "from_vec",
                format!("shape {shape:?} needs {} values, got {}", numel_of(shape), data.len()),
            );
        }
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(t.into_param())
    }

    pub fn scalar(v: E) -> Self {
        Self::make(Vec::new(), vec![v], false, None)
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        Self::make(shape.to_vec(), vec![v; numel_of(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    /// Copies values into a fresh gradient-accumulating leaf.
    pub fn into_param(self) -> Self {
        let data = self.to_vec();
        Self::make(self.0.shape.clone(), data, true, None)
    }

    /// Copies values into a fresh constant, cutting the graph.
    pub fn detach(&self) -> Self {
        Self::make(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Constant copy in another precision.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data = self.0.data.borrow().iter().map(|v| F::lit(v.widen())).collect();
        Tensor::make(self.0.shape.clone(), data, false, None)
    }

    /// Records the result of a custom op.
    ///
    /// `backward` receives `(grad_out, inputs, out_values)`. Nothing is recorded
    /// when no input requires a gradient or recording is disabled.
    pub fn from_op<F>(
        name: &'static str,
        data: Vec<E>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<E>>,
        backward: F,
    ) -> Self
    where
        F: Fn(&[E], &[Tensor<E>], &[E]) -> Vec<Option<Vec<E>>> + 'static,
    {
        assert_eq!(
            numel_of(&shape),
            data.len(),
            "{name}: output shape {shape:?} does not match {} values",
            data.len()
        );
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if !track {
            return Self::make(shape, data, false, None);
        }
        let node = Node {
            name,
            inputs,
            backward: Box::new(backward),
        };
        Self::make(shape, data, true, Some(node))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn op_name(&self) -> &'static str {
        self.0.node.as_ref().map_or("leaf", |n| n.name)
    }

    pub fn data(&self) -> Ref<'_, Vec<E>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        let data = self.0.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        data[0]
    }

    /// Mutates leaf values in place, e.g. an optimizer update.
    pub fn update_data(&self, f: impl FnOnce(&mut [E])) {
        assert!(self.is_leaf(), "update_data on a non-leaf tensor");
        f(&mut self.0.data.borrow_mut());
    }

    /// Replaces leaf values; length must match.
    pub fn set_data(&self, values: &[E]) -> Result<()> {
        if values.len() != self.numel() {
            return shape_err(
                "set_data",
                format!("expected {} values, got {}", self.numel(), values.len()),
            );
        }
        self.update_data(|d| d.copy_from_slice(values));
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.0.grad.borrow().clone()
    }

    pub fn with_grad<T>(&self, f: impl FnOnce(Option<&[E]>) -> T) -> T {
        f(self.0.grad.borrow().as_deref())
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn node(&self) -> Option<&Node<E>> {
        self.0.node.as_ref()
    }
}
