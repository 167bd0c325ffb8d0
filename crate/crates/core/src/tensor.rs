//! Dense f64 tensors with reverse-mode gradients.
//!
//! Values are row-major. Every operation that involves at least one
//! gradient-tracked input records itself on an implicit graph (handles
//! are reference-counted nodes); [`Tensor::backward`] replays that graph
//! in reverse topological order and accumulates `d loss / d parameter`
//! into each parameter's grad buffer. The graph is rebuilt from scratch
//! on every forward pass, so parameters may be mutated freely between
//! steps.
//!
//! Shape mismatches in the arithmetic below are programmer errors and
//! panic; data-dependent contract violations (temperatures, dropout
//! rates, NaN inputs) return [`CoreError`].

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, Ref, RefCell};

use crate::error::{CoreError, Result};
use crate::rng::Rng;

type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

struct Node {
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    consumed: Cell<bool>,
}

/// Cheaply cloneable handle to one tensor in the recorded graph.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl core::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let v = self.node.values.borrow();
        let head: Vec<f64> = v.iter().take(6).copied().collect();
        write!(
            f,
            "Tensor{{shape: {:?}, requires_grad: {}, values: {:?}{}}}",
            self.node.shape,
            self.node.requires_grad,
            head,
            if v.len() > 6 { ", .." } else { "" }
        )
    }
}

fn product(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    // ---- construction ---------------------------------------------------

    fn leaf(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(
            product(&shape),
            values.len(),
            "value buffer does not match shape {shape:?}"
        );
        let grad = if requires_grad {
            vec![0.0; values.len()]
        } else {
            Vec::new()
        };
        Tensor {
            node: Rc::new(Node {
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(grad),
                requires_grad,
                parents: Vec::new(),
                backward: None,
                consumed: Cell::new(false),
            }),
        }
    }

    /// Constant (no gradient) tensor from raw values.
    pub fn constant(shape: &[usize], values: Vec<f64>) -> Tensor {
        Tensor::leaf(shape.to_vec(), values, false)
    }

    /// Constant rank-1 tensor.
    pub fn vector(values: Vec<f64>) -> Tensor {
        let n = values.len();
        Tensor::leaf(vec![n], values, false)
    }

    /// Constant scalar, shape `[1]`.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![value], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![0.0; product(shape)], false)
    }

    /// Gradient-tracked parameter with explicit initial values.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Tensor {
        Tensor::leaf(shape.to_vec(), values, true)
    }

    /// Gradient-tracked parameter drawn uniformly from
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`.
    pub fn param_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let values = (0..product(shape))
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Tensor::param(shape, values)
    }

    fn make(
        op: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64], &[Tensor]) + 'static,
    ) -> Tensor {
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite value produced by `{op}`"
        );
        let _ = op;
        if !parents.iter().any(|p| p.requires_grad()) {
            return Tensor::leaf(shape, values, false);
        }
        let grad = vec![0.0; values.len()];
        Tensor {
            node: Rc::new(Node {
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(grad),
                requires_grad: true,
                parents,
                backward: Some(Box::new(backward)),
                consumed: Cell::new(false),
            }),
        }
    }

    // ---- access ----------------------------------------------------------

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn len(&self) -> usize {
        product(&self.node.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows of a rank-2 tensor (rank-1 counts as a single row).
    pub fn rows(&self) -> usize {
        match self.node.shape.len() {
            1 => 1,
            2 => self.node.shape[0],
            r => panic!("rows() on rank-{r} tensor"),
        }
    }

    /// Columns of a rank-2 tensor (length for rank-1).
    pub fn cols(&self) -> usize {
        match self.node.shape.len() {
            1 => self.node.shape[0],
            2 => self.node.shape[1],
            r => panic!("cols() on rank-{r} tensor"),
        }
    }

    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.node.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.values.borrow().clone()
    }

    pub fn value_at(&self, i: usize) -> f64 {
        self.node.values.borrow()[i]
    }

    /// Value of a scalar tensor. Panics when not length one.
    pub fn item(&self) -> f64 {
        let v = self.node.values.borrow();
        assert_eq!(v.len(), 1, "item() on tensor of length {}", v.len());
        v[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Current gradient buffer (zeros-length when not tracked).
    pub fn grad(&self) -> Vec<f64> {
        self.node.grad.borrow().clone()
    }

    pub fn grad_at(&self, i: usize) -> f64 {
        self.node.grad.borrow()[i]
    }

    pub fn zero_grad(&self) {
        for g in self.node.grad.borrow_mut().iter_mut() {
            *g = 0.0;
        }
    }

    /// Mutate raw values in place (optimizer steps, EMA updates).
    pub fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(self.node.values.borrow_mut().as_mut_slice());
    }

    /// Same values, detached from the graph, no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.node.shape.clone(), self.to_vec(), false)
    }

    fn add_grad(&self, f: impl FnOnce(&mut [f64])) {
        if self.node.requires_grad {
            f(self.node.grad.borrow_mut().as_mut_slice());
        }
    }

    fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Accumulates into the grad
    /// buffer of every reachable gradient-tracked tensor; a second call
    /// through the same graph is an error.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(CoreError::LossNotScalar {
                shape: self.node.shape.clone(),
            });
        }
        if self.node.consumed.get() {
            return Err(CoreError::GraphConsumed);
        }
        self.node.consumed.set(true);
        if !self.node.requires_grad {
            return Ok(());
        }

        // Iterative post-order DFS; reversed it yields every consumer
        // before the node it consumes.
        enum Frame {
            Enter(Tensor),
            Exit(Tensor),
        }
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut stack = vec![Frame::Enter(self.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    let key = Rc::as_ptr(&t.node) as usize;
                    if !seen.insert(key) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    for p in &t.node.parents {
                        if p.requires_grad() {
                            stack.push(Frame::Enter(p.clone()));
                        }
                    }
                }
                Frame::Exit(t) => order.push(t),
            }
        }

        self.node.grad.borrow_mut()[0] = 1.0;
        for t in order.iter().rev() {
            if let Some(bw) = &t.node.backward {
                let g = t.node.grad.borrow().clone();
                bw(&g, &t.node.parents);
            }
        }
        Ok(())
    }

    // ---- elementwise binary ----------------------------------------------

    fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        backward: impl Fn(&[f64], &[Tensor]) + 'static,
    ) -> Tensor {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let values = {
            let a = self.values();
            let b = other.values();
            a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
        };
        Tensor::make(
            op,
            self.node.shape.clone(),
            values,
            vec![self.clone(), other.clone()],
            backward,
        )
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_with(other, "add", |a, b| a + b, |g, ps| {
            ps[0].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d += g });
            ps[1].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d += g });
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_with(other, "sub", |a, b| a - b, |g, ps| {
            ps[0].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d += g });
            ps[1].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d -= g });
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        // A node multiplied by itself would deadlock on the second
        // values borrow inside backward; route x*x through read-once.
        if self.same_node(other) {
            let x = self.to_vec();
            let values = x.iter().map(|v| v * v).collect();
            return Tensor::make(
                "square",
                self.node.shape.clone(),
                values,
                vec![self.clone()],
                move |g, ps| {
                    ps[0].add_grad(|d| {
                        for i in 0..g.len() {
                            d[i] += 2.0 * x[i] * g[i];
                        }
                    });
                },
            );
        }
        self.zip_with(other, "mul", |a, b| a * b, |g, ps| {
            let (a, b) = (ps[0].values(), ps[1].values());
            ps[0].add_grad(|d| for i in 0..g.len() { d[i] += g[i] * b[i] });
            ps[1].add_grad(|d| for i in 0..g.len() { d[i] += g[i] * a[i] });
        })
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        assert!(!self.same_node(other), "div: dividing a node by itself");
        self.zip_with(other, "div", |a, b| a / b, |g, ps| {
            let (a, b) = (ps[0].values(), ps[1].values());
            ps[0].add_grad(|d| for i in 0..g.len() { d[i] += g[i] / b[i] });
            ps[1].add_grad(|d| {
                for i in 0..g.len() {
                    d[i] -= g[i] * a[i] / (b[i] * b[i]);
                }
            });
        })
    }

    // ---- scalar-constant and scalar-tensor broadcasts ---------------------

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let values = self.values().iter().map(|v| v + c).collect();
        Tensor::make(
            "add_scalar",
            self.node.shape.clone(),
            values,
            vec![self.clone()],
            |g, ps| ps[0].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d += g }),
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let values = self.values().iter().map(|v| v * c).collect();
        Tensor::make(
            "mul_scalar",
            self.node.shape.clone(),
            values,
            vec![self.clone()],
            move |g, ps| {
                ps[0].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d += c * g })
            },
        )
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    /// Broadcast-multiply by a scalar tensor (gradient flows to both).
    pub fn scale_by(&self, s: &Tensor) -> Tensor {
        assert_eq!(s.len(), 1, "scale_by needs a scalar tensor");
        let sv = s.item();
        let values = self.values().iter().map(|v| v * sv).collect();
        Tensor::make(
            "scale_by",
            self.node.shape.clone(),
            values,
            vec![self.clone(), s.clone()],
            |g, ps| {
                let sv = ps[1].item();
                let x = ps[0].values();
                let mut ds = 0.0;
                for i in 0..g.len() {
                    ds += g[i] * x[i];
                }
                drop(x);
                ps[0].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d += sv * g });
                ps[1].add_grad(|d| d[0] += ds);
            },
        )
    }

    /// Broadcast-divide by a scalar tensor.
    pub fn div_by(&self, s: &Tensor) -> Tensor {
        assert_eq!(s.len(), 1, "div_by needs a scalar tensor");
        let sv = s.item();
        let values = self.values().iter().map(|v| v / sv).collect();
        Tensor::make(
            "div_by",
            self.node.shape.clone(),
            values,
            vec![self.clone(), s.clone()],
            |g, ps| {
                let sv = ps[1].item();
                let x = ps[0].values();
                let mut ds = 0.0;
                for i in 0..g.len() {
                    ds -= g[i] * x[i] / (sv * sv);
                }
                drop(x);
                ps[0].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d += g / sv });
                ps[1].add_grad(|d| d[0] += ds);
            },
        )
    }

    // ---- elementwise unary -------------------------------------------------

    fn map_with(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        // dx given (x, y, upstream)
        df: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let values: Vec<f64> = self.values().iter().map(|&x| f(x)).collect();
        let saved = values.clone();
        Tensor::make(
            op,
            self.node.shape.clone(),
            values,
            vec![self.clone()],
            move |g, ps| {
                let x = ps[0].values();
                let contrib: Vec<f64> = (0..g.len())
                    .map(|i| df(x[i], saved[i], g[i]))
                    .collect();
                drop(x);
                ps[0].add_grad(|d| for (d, c) in d.iter_mut().zip(&contrib) { *d += c });
            },
        )
    }

    pub fn exp(&self) -> Tensor {
        self.map_with("exp", libm::exp, |_, y, g| g * y)
    }

    pub fn ln(&self) -> Tensor {
        self.map_with("ln", libm::log, |x, _, g| g / x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.map_with("sqrt", libm::sqrt, |_, y, g| g / (2.0 * y))
    }

    pub fn sin(&self) -> Tensor {
        self.map_with("sin", libm::sin, |x, _, g| g * libm::cos(x))
    }

    pub fn cos(&self) -> Tensor {
        self.map_with("cos", libm::cos, |x, _, g| -g * libm::sin(x))
    }

    pub fn relu(&self) -> Tensor {
        self.map_with("relu", |x| if x > 0.0 { x } else { 0.0 }, |x, _, g| {
            if x > 0.0 {
                g
            } else {
                0.0
            }
        })
    }

    /// Numerically symmetric logistic: `sigmoid(-x) == 1 - sigmoid(x)`.
    pub fn sigmoid(&self) -> Tensor {
        self.map_with("sigmoid", sigmoid_scalar, |_, y, g| g * y * (1.0 - y))
    }

    /// Lower clamp; gradient passes only where the input is above `c`.
    pub fn clamp_min(&self, c: f64) -> Tensor {
        self.map_with("clamp_min", move |x| x.max(c), move |x, _, g| {
            if x > c {
                g
            } else {
                0.0
            }
        })
    }

    // ---- matrix ops --------------------------------------------------------

    /// `(m x k) . (k x n)` matrix product.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape().len(), 2, "matmul lhs must be rank-2");
        assert_eq!(other.shape().len(), 2, "matmul rhs must be rank-2");
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let mut values = vec![0.0; m * n];
        {
            let a = self.values();
            let b = other.values();
            for i in 0..m {
                for l in 0..k {
                    let av = a[i * k + l];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[l * n..(l + 1) * n];
                    let orow = &mut values[i * n..(i + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        Tensor::make(
            "matmul",
            vec![m, n],
            values,
            vec![self.clone(), other.clone()],
            move |g, ps| {
                let a = ps[0].values();
                let b = ps[1].values();
                // dA = G . B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for l in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * b[l * n + j];
                        }
                        da[i * k + l] = acc;
                    }
                }
                // dB = A^T . G
                let mut db = vec![0.0; k * n];
                for l in 0..k {
                    for i in 0..m {
                        let av = a[i * k + l];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[l * n + j] += av * g[i * n + j];
                        }
                    }
                }
                drop(a);
                drop(b);
                ps[0].add_grad(|d| for (d, c) in d.iter_mut().zip(&da) { *d += c });
                ps[1].add_grad(|d| for (d, c) in d.iter_mut().zip(&db) { *d += c });
            },
        )
    }

    /// `(m x k) . (k)` matrix-vector product, yielding a rank-1 tensor.
    pub fn matvec(&self, v: &Tensor) -> Tensor {
        assert_eq!(self.shape().len(), 2, "matvec lhs must be rank-2");
        assert_eq!(v.shape().len(), 1, "matvec rhs must be rank-1");
        let (m, k) = (self.shape()[0], self.shape()[1]);
        assert_eq!(k, v.len(), "matvec: inner dims {k} vs {}", v.len());
        let values: Vec<f64> = {
            let a = self.values();
            let x = v.values();
            (0..m)
                .map(|i| {
                    let mut acc = 0.0;
                    for l in 0..k {
                        acc += a[i * k + l] * x[l];
                    }
                    acc
                })
                .collect()
        };
        Tensor::make(
            "matvec",
            vec![m],
            values,
            vec![self.clone(), v.clone()],
            move |g, ps| {
                let a = ps[0].values();
                let x = ps[1].values();
                let mut da = vec![0.0; m * k];
                let mut dx = vec![0.0; k];
                for i in 0..m {
                    let gi = g[i];
                    if gi == 0.0 {
                        continue;
                    }
                    for l in 0..k {
                        da[i * k + l] += gi * x[l];
                        dx[l] += gi * a[i * k + l];
                    }
                }
                drop(a);
                drop(x);
                ps[0].add_grad(|d| for (d, c) in d.iter_mut().zip(&da) { *d += c });
                ps[1].add_grad(|d| for (d, c) in d.iter_mut().zip(&dx) { *d += c });
            },
        )
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.shape().len(), 2, "transpose needs rank-2");
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let mut values = vec![0.0; m * n];
        {
            let a = self.values();
            for i in 0..m {
                for j in 0..n {
                    values[j * m + i] = a[i * n + j];
                }
            }
        }
        Tensor::make(
            "transpose",
            vec![n, m],
            values,
            vec![self.clone()],
            move |g, ps| {
                ps[0].add_grad(|d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += g[j * m + i];
                        }
                    }
                });
            },
        )
    }

    // ---- reductions ---------------------------------------------------------

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.values().iter().sum();
        Tensor::make("sum", vec![1], vec![total], vec![self.clone()], |g, ps| {
            let g0 = g[0];
            ps[0].add_grad(|d| for d in d.iter_mut() { *d += g0 });
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len();
        assert!(n > 0, "mean of empty tensor");
        let total: f64 = self.values().iter().sum();
        Tensor::make(
            "mean",
            vec![1],
            vec![total / n as f64],
            vec![self.clone()],
            move |g, ps| {
                let g0 = g[0] / n as f64;
                ps[0].add_grad(|d| for d in d.iter_mut() { *d += g0 });
            },
        )
    }

    /// Inner product of two equal-length rank-1 tensors, scalar output.
    pub fn dot(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape().len(), 1, "dot lhs must be rank-1");
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        if self.same_node(other) {
            let x = self.to_vec();
            let total: f64 = x.iter().map(|v| v * v).sum();
            return Tensor::make(
                "dot_self",
                vec![1],
                vec![total],
                vec![self.clone()],
                move |g, ps| {
                    let g0 = g[0];
                    ps[0].add_grad(|d| {
                        for i in 0..d.len() {
                            d[i] += 2.0 * g0 * x[i];
                        }
                    });
                },
            );
        }
        let total: f64 = {
            let a = self.values();
            let b = other.values();
            a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
        };
        Tensor::make(
            "dot",
            vec![1],
            vec![total],
            vec![self.clone(), other.clone()],
            |g, ps| {
                let g0 = g[0];
                let a = ps[0].values().clone();
                let b = ps[1].values().clone();
                ps[0].add_grad(|d| for i in 0..d.len() { d[i] += g0 * b[i] });
                ps[1].add_grad(|d| for i in 0..d.len() { d[i] += g0 * a[i] });
            },
        )
    }

    /// Stable `log(sum(exp(x)))` of a rank-1 tensor.
    pub fn logsumexp(&self) -> Tensor {
        assert_eq!(self.shape().len(), 1, "logsumexp needs rank-1");
        assert!(!self.is_empty(), "logsumexp of empty tensor");
        let (value, softmax) = {
            let x = self.values();
            let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = x.iter().map(|&v| libm::exp(v - mx)).collect();
            let s: f64 = exps.iter().sum();
            (mx + libm::log(s), exps.iter().map(|e| e / s).collect::<Vec<f64>>())
        };
        Tensor::make(
            "logsumexp",
            vec![1],
            vec![value],
            vec![self.clone()],
            move |g, ps| {
                let g0 = g[0];
                ps[0].add_grad(|d| {
                    for (d, s) in d.iter_mut().zip(&softmax) {
                        *d += g0 * s;
                    }
                });
            },
        )
    }

    /// Per-row mean of a rank-2 tensor, rank-1 output of length `rows`.
    pub fn row_mean(&self) -> Tensor {
        assert_eq!(self.shape().len(), 2, "row_mean needs rank-2");
        let (m, n) = (self.shape()[0], self.shape()[1]);
        assert!(n > 0, "row_mean of zero-width tensor");
        let values: Vec<f64> = {
            let x = self.values();
            (0..m)
                .map(|i| x[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
                .collect()
        };
        Tensor::make(
            "row_mean",
            vec![m],
            values,
            vec![self.clone()],
            move |g, ps| {
                ps[0].add_grad(|d| {
                    for i in 0..m {
                        let gi = g[i] / n as f64;
                        for j in 0..n {
                            d[i * n + j] += gi;
                        }
                    }
                });
            },
        )
    }

    // ---- row/column broadcasts ------------------------------------------------

    /// Add a length-`cols` vector to every row.
    pub fn add_vec_row(&self, v: &Tensor) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(v.len(), n, "add_vec_row: width mismatch");
        let values: Vec<f64> = {
            let x = self.values();
            let b = v.values();
            (0..m * n).map(|i| x[i] + b[i % n]).collect()
        };
        Tensor::make(
            "add_vec_row",
            self.node.shape.clone(),
            values,
            vec![self.clone(), v.clone()],
            move |g, ps| {
                ps[0].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d += g });
                ps[1].add_grad(|d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[j] += g[i * n + j];
                        }
                    }
                });
            },
        )
    }

    /// Multiply every row elementwise by a length-`cols` vector.
    pub fn mul_vec_row(&self, v: &Tensor) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(v.len(), n, "mul_vec_row: width mismatch");
        let values: Vec<f64> = {
            let x = self.values();
            let b = v.values();
            (0..m * n).map(|i| x[i] * b[i % n]).collect()
        };
        Tensor::make(
            "mul_vec_row",
            self.node.shape.clone(),
            values,
            vec![self.clone(), v.clone()],
            move |g, ps| {
                let x = ps[0].values().clone();
                let b = ps[1].values().clone();
                ps[0].add_grad(|d| for i in 0..m * n { d[i] += g[i] * b[i % n] });
                ps[1].add_grad(|d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[j] += g[i * n + j] * x[i * n + j];
                        }
                    }
                });
            },
        )
    }

    /// Subtract a length-`rows` column vector from every column.
    pub fn sub_col(&self, c: &Tensor) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(c.len(), m, "sub_col: height mismatch");
        let values: Vec<f64> = {
            let x = self.values();
            let col = c.values();
            (0..m * n).map(|i| x[i] - col[i / n]).collect()
        };
        Tensor::make(
            "sub_col",
            self.node.shape.clone(),
            values,
            vec![self.clone(), c.clone()],
            move |g, ps| {
                ps[0].add_grad(|d| for (d, g) in d.iter_mut().zip(g) { *d += g });
                ps[1].add_grad(|d| {
                    for i in 0..m {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j];
                        }
                        d[i] -= acc;
                    }
                });
            },
        )
    }

    /// Divide every row by the matching entry of a length-`rows` column.
    pub fn div_col(&self, c: &Tensor) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(c.len(), m, "div_col: height mismatch");
        let values: Vec<f64> = {
            let x = self.values();
            let col = c.values();
            (0..m * n).map(|i| x[i] / col[i / n]).collect()
        };
        Tensor::make(
            "div_col",
            self.node.shape.clone(),
            values,
            vec![self.clone(), c.clone()],
            move |g, ps| {
                let x = ps[0].values().clone();
                let col = ps[1].values().clone();
                ps[0].add_grad(|d| for i in 0..m * n { d[i] += g[i] / col[i / n] });
                ps[1].add_grad(|d| {
                    for i in 0..m {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * x[i * n + j];
                        }
                        d[i] -= acc / (col[i] * col[i]);
                    }
                });
            },
        )
    }

    // ---- structure -------------------------------------------------------------

    /// Stack equal-length rank-1 tensors into a rank-2 tensor.
    pub fn stack_rows(rows: &[Tensor]) -> Tensor {
        assert!(!rows.is_empty(), "stack_rows of nothing");
        let n = rows[0].len();
        let mut values = Vec::with_capacity(rows.len() * n);
        for r in rows {
            assert_eq!(r.shape().len(), 1, "stack_rows expects rank-1 rows");
            assert_eq!(r.len(), n, "stack_rows: ragged rows");
            values.extend_from_slice(&r.values());
        }
        Tensor::make(
            "stack_rows",
            vec![rows.len(), n],
            values,
            rows.to_vec(),
            move |g, ps| {
                for (i, p) in ps.iter().enumerate() {
                    p.add_grad(|d| {
                        for j in 0..n {
                            d[j] += g[i * n + j];
                        }
                    });
                }
            },
        )
    }

    /// Concatenate rank-1 tensors end to end.
    pub fn concat(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut values = Vec::new();
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            assert_eq!(p.shape().len(), 1, "concat expects rank-1 parts");
            lens.push(p.len());
            values.extend_from_slice(&p.values());
        }
        let total = values.len();
        Tensor::make(
            "concat",
            vec![total],
            values,
            parts.to_vec(),
            move |g, ps| {
                let mut off = 0;
                for (p, &l) in ps.iter().zip(&lens) {
                    p.add_grad(|d| {
                        for j in 0..l {
                            d[j] += g[off + j];
                        }
                    });
                    off += l;
                }
            },
        )
    }

    /// Row `i` of a rank-2 tensor as a rank-1 tensor.
    pub fn select_row(&self, i: usize) -> Tensor {
        assert_eq!(self.shape().len(), 2, "select_row needs rank-2");
        let (m, n) = (self.shape()[0], self.shape()[1]);
        assert!(i < m, "select_row: row {i} of {m}");
        let values = self.values()[i * n..(i + 1) * n].to_vec();
        Tensor::make(
            "select_row",
            vec![n],
            values,
            vec![self.clone()],
            move |g, ps| {
                ps[0].add_grad(|d| {
                    for j in 0..n {
                        d[i * n + j] += g[j];
                    }
                });
            },
        )
    }

    /// Element `i` of a rank-1 tensor as a scalar tensor.
    pub fn element(&self, i: usize) -> Tensor {
        assert_eq!(self.shape().len(), 1, "element needs rank-1");
        assert!(i < self.len(), "element: index {i} of {}", self.len());
        let v = self.value_at(i);
        Tensor::make("element", vec![1], vec![v], vec![self.clone()], move |g, ps| {
            ps[0].add_grad(|d| d[i] += g[0]);
        })
    }

    /// Gather rows of an embedding table; gradient scatter-adds back.
    pub fn embedding_rows(table: &Tensor, ids: &[usize]) -> Tensor {
        assert_eq!(table.shape().len(), 2, "embedding_rows needs a rank-2 table");
        let (v, d) = (table.shape()[0], table.shape()[1]);
        let mut values = Vec::with_capacity(ids.len() * d);
        {
            let t = table.values();
            for &id in ids {
                assert!(id < v, "embedding id {id} out of table of {v}");
                values.extend_from_slice(&t[id * d..(id + 1) * d]);
            }
        }
        let ids = ids.to_vec();
        Tensor::make(
            "embedding_rows",
            vec![ids.len(), d],
            values,
            vec![table.clone()],
            move |g, ps| {
                ps[0].add_grad(|dt| {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += g[row * d + j];
                        }
                    }
                });
            },
        )
    }

    // ---- softmax / dropout / attention -------------------------------------------

    /// Temperature softmax over each row (a rank-1 tensor is one row).
    /// Rows sum to one; the per-row argmax is invariant to temperature.
    pub fn softmax_rows(&self, temperature: f64) -> Result<Tensor> {
        if !(temperature > 0.0) {
            return Err(CoreError::NonPositiveTemperature { got: temperature });
        }
        if self.values().iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFiniteInput {
                context: "softmax_rows",
            });
        }
        let (m, n) = (self.rows(), self.cols());
        assert!(n > 0, "softmax_rows of zero-width tensor");
        let mut values = vec![0.0; m * n];
        {
            let x = self.values();
            for i in 0..m {
                let row = &x[i * n..(i + 1) * n];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let out = &mut values[i * n..(i + 1) * n];
                let mut s = 0.0;
                for j in 0..n {
                    let e = libm::exp((row[j] - mx) / temperature);
                    out[j] = e;
                    s += e;
                }
                for o in out.iter_mut() {
                    *o /= s;
                }
            }
        }
        let saved = values.clone();
        Ok(Tensor::make(
            "softmax_rows",
            self.node.shape.clone(),
            values,
            vec![self.clone()],
            move |g, ps| {
                ps[0].add_grad(|d| {
                    for i in 0..m {
                        let y = &saved[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let inner: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..n {
                            d[i * n + j] += y[j] * (gr[j] - inner) / temperature;
                        }
                    }
                });
            },
        ))
    }

    /// Inverted dropout. Disabled or `p == 0` returns the input
    /// unchanged; enabled zeroes entries independently with probability
    /// `p` and scales survivors by `1/(1-p)`.
    pub fn dropout(&self, p: f64, rng: &mut Rng, enabled: bool) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(CoreError::InvalidDropoutRate { got: p });
        }
        if !enabled || p == 0.0 {
            return Ok(self.clone());
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.len())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep_scale })
            .collect();
        let values = self
            .values()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        Ok(Tensor::make(
            "dropout",
            self.node.shape.clone(),
            values,
            vec![self.clone()],
            move |g, ps| {
                ps[0].add_grad(|d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * mask[i];
                    }
                });
            },
        ))
    }

    /// Multi-head scaled dot-product self-attention under a strict
    /// causal mask. Row `t` of the output is computed from rows
    /// `0..=t` of `k`/`v` only — future rows are never read, so
    /// causality holds bitwise, not just numerically.
    pub fn causal_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Tensor {
        let (t_len, d) = (q.shape()[0], q.shape()[1]);
        assert_eq!(k.shape(), q.shape(), "causal_attention: k shape");
        assert_eq!(v.shape(), q.shape(), "causal_attention: v shape");
        assert!(heads > 0 && d % heads == 0, "heads must divide width");
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);

        let mut values = vec![0.0; t_len * d];
        // Attention weights per (head, row), triangle-packed.
        let mut weights: Vec<f64> = Vec::with_capacity(heads * t_len * (t_len + 1) / 2);
        {
            let qv = q.values();
            let kv = k.values();
            let vv = v.values();
            for h in 0..heads {
                let c0 = h * dh;
                for t in 0..t_len {
                    let mut scores = vec![0.0; t + 1];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for c in 0..dh {
                            acc += qv[t * d + c0 + c] * kv[j * d + c0 + c];
                        }
                        *s = acc * scale;
                    }
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for s in scores.iter_mut() {
                        *s = libm::exp(*s - mx);
                        z += *s;
                    }
                    for s in scores.iter_mut() {
                        *s /= z;
                    }
                    for (j, w) in scores.iter().enumerate() {
                        for c in 0..dh {
                            values[t * d + c0 + c] += w * vv[j * d + c0 + c];
                        }
                    }
                    weights.extend_from_slice(&scores);
                }
            }
        }

        Tensor::make(
            "causal_attention",
            vec![t_len, d],
            values,
            vec![q.clone(), k.clone(), v.clone()],
            move |g, ps| {
                let qv = ps[0].values().clone();
                let kv = ps[1].values().clone();
                let vv = ps[2].values().clone();
                let mut dq = vec![0.0; t_len * d];
                let mut dk = vec![0.0; t_len * d];
                let mut dv = vec![0.0; t_len * d];
                let tri = t_len * (t_len + 1) / 2;
                for h in 0..heads {
                    let c0 = h * dh;
                    let mut off = h * tri;
                    for t in 0..t_len {
                        let w = &weights[off..off + t + 1];
                        off += t + 1;
                        // dL/dw_j and the softmax pullback
                        let mut dw = vec![0.0; t + 1];
                        for (j, dwj) in dw.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for c in 0..dh {
                                acc += g[t * d + c0 + c] * vv[j * d + c0 + c];
                            }
                            *dwj = acc;
                        }
                        let inner: f64 = w.iter().zip(&dw).map(|(w, dw)| w * dw).sum();
                        for j in 0..=t {
                            let ds = w[j] * (dw[j] - inner) * scale;
                            for c in 0..dh {
                                dq[t * d + c0 + c] += ds * kv[j * d + c0 + c];
                                dk[j * d + c0 + c] += ds * qv[t * d + c0 + c];
                                dv[j * d + c0 + c] += w[j] * g[t * d + c0 + c];
                            }
                        }
                    }
                }
                ps[0].add_grad(|d| for (d, c) in d.iter_mut().zip(&dq) { *d += c });
                ps[1].add_grad(|d| for (d, c) in d.iter_mut().zip(&dk) { *d += c });
                ps[2].add_grad(|d| for (d, c) in d.iter_mut().zip(&dv) { *d += c });
            },
        )
    }

    // ---- composites ---------------------------------------------------------------

    /// L2-normalize a rank-1 tensor; errors on the zero vector.
    pub fn l2_normalize(&self) -> Result<Tensor> {
        assert_eq!(self.shape().len(), 1, "l2_normalize needs rank-1");
        let norm_sq: f64 = self.values().iter().map(|v| v * v).sum();
        if norm_sq == 0.0 {
            return Err(CoreError::ZeroVector("l2_normalize"));
        }
        Ok(self.div_by(&self.dot(self).sqrt()))
    }
}

/// Stable logistic on plain values; exactly satisfies
/// `sigmoid_scalar(-x) == 1 - sigmoid_scalar(x)` for finite `x`.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn softmax_symmetry_and_analytic_rows() {
        let m = Tensor::constant(&[3, 2], vec![0.0, 0.0, 1.0, 0.0, core::f64::consts::LN_2, 0.0]);
        let s = m.softmax_rows(1.0).unwrap();
        let v = s.to_vec();
        assert_close(v[0], 0.5, 1e-15);
        assert_close(v[1], 0.5, 1e-15);
        assert_close(v[2], 0.731058578630, 1e-9);
        assert_close(v[3], 0.268941421369, 1e-9);
        assert_close(v[4], 2.0 / 3.0, 1e-12);
        assert_close(v[5], 1.0 / 3.0, 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_argmax_stable() {
        let mut rng = Rng::new(99);
        for _ in 0..1000 {
            let row: Vec<f64> = (0..7).map(|_| rng.uniform(-30.0, 30.0)).collect();
            let t = Tensor::vector(row.clone());
            let temps = [0.5, 1.0, 2.0, 10.0];
            let base_argmax = {
                let s = t.softmax_rows(1.0).unwrap().to_vec();
                let sum: f64 = s.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
                s.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            for temp in temps {
                let s = t.softmax_rows(temp).unwrap().to_vec();
                let am = s
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                assert_eq!(am, base_argmax);
            }
        }
    }

    #[test]
    fn softmax_rejects_bad_inputs() {
        let t = Tensor::vector(vec![1.0, 2.0]);
        assert!(matches!(
            t.softmax_rows(0.0),
            Err(CoreError::NonPositiveTemperature { .. })
        ));
        let nan = Tensor::vector(vec![f64::NAN, 0.0]);
        assert!(matches!(
            nan.softmax_rows(1.0),
            Err(CoreError::NonFiniteInput { .. })
        ));
    }

    #[test]
    fn sigmoid_examples() {
        let t = Tensor::vector(vec![0.0, 20.0, -3.0, 3.0]);
        let s = t.sigmoid().to_vec();
        assert_close(s[0], 0.5, 1e-15);
        assert!((s[1] - 1.0).abs() < 1e-8);
        assert_close(s[2] + s[3], 1.0, 1e-15);
        // symmetry identity across a sweep
        for i in 0..100 {
            let x = -8.0 + i as f64 * 0.16;
            assert_close(sigmoid_scalar(-x), 1.0 - sigmoid_scalar(x), 1e-15);
        }
    }

    #[test]
    fn backward_square_and_constant() {
        let x = Tensor::param(&[1], vec![3.0]);
        let loss = x.mul(&x);
        loss.backward().unwrap();
        assert_close(x.grad_at(0), 6.0, 1e-12);

        let y = Tensor::param(&[1], vec![5.0]);
        let c = Tensor::scalar(2.0);
        let loss2 = c.mul_scalar(4.0);
        loss2.backward().unwrap();
        assert_close(y.grad_at(0), 0.0, 0.0);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let x = Tensor::param(&[1], vec![2.0]);
        let loss = x.mul(&x);
        loss.backward().unwrap();
        assert!(matches!(loss.backward(), Err(CoreError::GraphConsumed)));
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = x.add_scalar(1.0);
        assert!(matches!(
            y.backward(),
            Err(CoreError::LossNotScalar { .. })
        ));
    }

    #[test]
    fn diamond_graph_accumulates() {
        // loss = (x + x) * x = 2x^2 -> dloss/dx = 4x
        let x = Tensor::param(&[1], vec![1.5]);
        let s = x.add(&x);
        let loss = s.mul(&x);
        loss.backward().unwrap();
        assert_close(x.grad_at(0), 6.0, 1e-12);
    }

    #[test]
    fn dropout_contracts() {
        let mut rng = Rng::new(5);
        let x = Tensor::vector(vec![1.0; 8]);
        let off = x.dropout(0.5, &mut rng, false).unwrap();
        assert_eq!(off.to_vec(), x.to_vec());
        let p0 = x.dropout(0.0, &mut rng, true).unwrap();
        assert_eq!(p0.to_vec(), x.to_vec());
        assert!(matches!(
            x.dropout(1.0, &mut rng, true),
            Err(CoreError::InvalidDropoutRate { .. })
        ));

        let big = Tensor::vector(vec![1.0; 100_000]);
        let d = big.dropout(0.5, &mut rng, true).unwrap();
        let mean: f64 = d.to_vec().iter().sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.02, "dropout mean {mean}");
    }

    #[test]
    fn matmul_matches_hand_case() {
        let a = Tensor::constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::constant(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.to_vec(), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn causal_attention_never_reads_future() {
        let mut rng = Rng::new(17);
        let mk = |rng: &mut Rng| {
            Tensor::constant(&[4, 8], (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect())
        };
        let (q, k, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let out = Tensor::causal_attention(&q, &k, &v, 2);

        // Perturb the last row of k and v; earlier output rows must be
        // bit-identical.
        let mut k2v = k.to_vec();
        let mut v2v = v.to_vec();
        for j in 24..32 {
            k2v[j] += 100.0;
            v2v[j] -= 55.0;
        }
        let out2 = Tensor::causal_attention(
            &q,
            &Tensor::constant(&[4, 8], k2v),
            &Tensor::constant(&[4, 8], v2v),
            2,
        );
        let (a, b) = (out.to_vec(), out2.to_vec());
        for i in 0..24 {
            assert!(a[i].to_bits() == b[i].to_bits(), "row leak at {i}");
        }
    }

    #[test]
    fn logsumexp_is_stable_and_exact() {
        let t = Tensor::vector(vec![1000.0, 1000.0]);
        let l = t.logsumexp().item();
        assert_close(l, 1000.0 + core::f64::consts::LN_2, 1e-9);
    }

    #[test]
    fn l2_normalize_rejects_zero() {
        let z = Tensor::vector(vec![0.0, 0.0]);
        assert!(matches!(z.l2_normalize(), Err(CoreError::ZeroVector(_))));
        let v = Tensor::vector(vec![3.0, 4.0]);
        let n = v.l2_normalize().unwrap().to_vec();
        assert_close(n[0], 0.6, 1e-12);
        assert_close(n[1], 0.8, 1e-12);
    }

    #[test]
    fn determinism_through_a_pipeline() {
        let run = || {
            let mut rng = Rng::new(1234);
            let w = Tensor::param_uniform(&[8, 8], 8, &mut rng);
            let x = Tensor::constant(&[8], (0..8).map(|i| i as f64 * 0.1).collect());
            let h = w.matvec(&x).relu();
            let out = h.dot(&h);
            out.item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
