//! Reverse-mode automatic differentiation over dense row-major f64 tensors.
//!
//! The graph is define-by-run: every operation allocates a fresh node holding
//! its value, its parent handles and a closure that pushes the output gradient
//! to the parents. [`Tensor::backward`] walks the recorded nodes once in
//! reverse topological order, so a tensor feeding several consumers has its
//! gradient contributions summed. Graphs are rebuilt on every forward pass and
//! freed when the loss handle is dropped; only leaf parameters outlive a step.
//!
//! Contract violations (shape mismatch, log of a non-positive value, pooling
//! an empty sequence, cosine of a zero vector, backward from a non-scalar)
//! panic with a message naming the offending shapes or values.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Shared handle to a node of the differentiation graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("data", &inner.data)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: None,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    /// Result node of an operation: requires grad iff any parent does, and
    /// only then records the backward closure.
    fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) + 'static,
    ) -> Tensor {
        let requires = parents.iter().any(|p| p.requires_grad());
        let t = Tensor::make(shape, data, requires);
        if requires {
            let mut inner = t.inner.borrow_mut();
            inner.parents = parents;
            inner.backward = Some(Box::new(backward));
        }
        t
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::make(vec![], vec![v], false)
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::make(vec![n], data, false)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::make(vec![rows, cols], data, false)
    }

    pub fn from_shape(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::make(shape.to_vec(), data, false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::make(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    /// Leaf tensor that participates in gradient computation.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::make(shape.to_vec(), data, true)
    }

    pub fn with_grad(self) -> Tensor {
        self.inner.borrow_mut().requires_grad = true;
        self
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar shape {:?}", inner.shape);
        inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn clear_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the stored values in place (used by the optimizer).
    pub fn set_data(&self, data: Vec<f64>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data = data;
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn accum_grad(&self, delta: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        if !inner.requires_grad {
            return;
        }
        let n = inner.data.len();
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        debug_assert_eq!(grad.len(), delta.len());
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.clone(), other.clone());
        let out: Vec<f64> = {
            let (da, db) = (a.data(), b.data());
            assert_eq!(
                *a.inner.borrow().shape,
                *b.inner.borrow().shape,
                "add shape mismatch: {:?} vs {:?}",
                a.shape(),
                b.shape()
            );
            da.iter().zip(db.iter()).map(|(x, y)| x + y).collect()
        };
        let shape = a.shape();
        let (pa, pb) = (a.clone(), b.clone());
        Tensor::from_op(shape, out, vec![a, b], move |g| {
            pa.accum_grad(g);
            pb.accum_grad(g);
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.clone(), other.clone());
        assert_eq!(
            a.shape(),
            b.shape(),
            "mul shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
        let shape = a.shape();
        let (pa, pb) = (a.clone(), b.clone());
        Tensor::from_op(shape, out, vec![a, b], move |g| {
            let da: Vec<f64> = g.iter().zip(pb.data().iter()).map(|(gi, y)| gi * y).collect();
            let db: Vec<f64> = g.iter().zip(pa.data().iter()).map(|(gi, x)| gi * x).collect();
            pa.accum_grad(&da);
            pb.accum_grad(&db);
        })
    }

    pub fn neg(&self) -> Tensor {
        let a = self.clone();
        let out: Vec<f64> = a.data().iter().map(|x| -x).collect();
        let shape = a.shape();
        let pa = a.clone();
        Tensor::from_op(shape, out, vec![a], move |g| {
            let da: Vec<f64> = g.iter().map(|gi| -gi).collect();
            pa.accum_grad(&da);
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let a = self.clone();
        let out: Vec<f64> = a.data().iter().map(|x| x * c).collect();
        let shape = a.shape();
        let pa = a.clone();
        Tensor::from_op(shape, out, vec![a], move |g| {
            let da: Vec<f64> = g.iter().map(|gi| gi * c).collect();
            pa.accum_grad(&da);
        })
    }

    pub fn exp(&self) -> Tensor {
        let a = self.clone();
        let out: Vec<f64> = a.data().iter().map(|x| x.exp()).collect();
        let shape = a.shape();
        let (pa, saved) = (a.clone(), out.clone());
        Tensor::from_op(shape, out, vec![a], move |g| {
            let da: Vec<f64> = g.iter().zip(saved.iter()).map(|(gi, e)| gi * e).collect();
            pa.accum_grad(&da);
        })
    }

    pub fn log(&self) -> Tensor {
        let a = self.clone();
        let out: Vec<f64> = a
            .data()
            .iter()
            .map(|&x| {
                assert!(x > 0.0, "log domain error: input {x} is not strictly positive");
                x.ln()
            })
            .collect();
        let shape = a.shape();
        let pa = a.clone();
        Tensor::from_op(shape, out, vec![a], move |g| {
            let da: Vec<f64> = g.iter().zip(pa.data().iter()).map(|(gi, x)| gi / x).collect();
            pa.accum_grad(&da);
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        let a = self.clone();
        let out: Vec<f64> = a.data().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let shape = a.shape();
        let (pa, saved) = (a.clone(), out.clone());
        Tensor::from_op(shape, out, vec![a], move |g| {
            let da: Vec<f64> = g
                .iter()
                .zip(saved.iter())
                .map(|(gi, s)| gi * s * (1.0 - s))
                .collect();
            pa.accum_grad(&da);
        })
    }

    pub fn tanh(&self) -> Tensor {
        let a = self.clone();
        let out: Vec<f64> = a.data().iter().map(|x| x.tanh()).collect();
        let shape = a.shape();
        let (pa, saved) = (a.clone(), out.clone());
        Tensor::from_op(shape, out, vec![a], move |g| {
            let da: Vec<f64> = g
                .iter()
                .zip(saved.iter())
                .map(|(gi, t)| gi * (1.0 - t * t))
                .collect();
            pa.accum_grad(&da);
        })
    }

    pub fn relu(&self) -> Tensor {
        let a = self.clone();
        let out: Vec<f64> = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = a.shape();
        let pa = a.clone();
        Tensor::from_op(shape, out, vec![a], move |g| {
            let da: Vec<f64> = g
                .iter()
                .zip(pa.data().iter())
                .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                .collect();
            pa.accum_grad(&da);
        })
    }

    // ── linear algebra ──────────────────────────────────────────────

    /// [m,k] x [k,n] -> [m,n].
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.clone(), other.clone());
        let (sa, sb) = (a.shape(), b.shape());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shape mismatch: {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let (da, db) = (a.data(), b.data());
            for i in 0..m {
                for p in 0..k {
                    let aip = da[i * k + p];
                    for j in 0..n {
                        out[i * n + j] += aip * db[p * n + j];
                    }
                }
            }
        }
        let (pa, pb) = (a.clone(), b.clone());
        Tensor::from_op(vec![m, n], out, vec![a, b], move |g| {
            // dA = g . B^T ; dB = A^T . g
            let mut da = vec![0.0; m * k];
            let mut db = vec![0.0; k * n];
            {
                let bd = pb.data();
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        for p in 0..k {
                            da[i * k + p] += gij * bd[p * n + j];
                        }
                    }
                }
            }
            {
                let ad = pa.data();
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
            }
            pa.accum_grad(&da);
            pb.accum_grad(&db);
        })
    }

    /// [n,d] x [d] -> [n].
    pub fn matvec(&self, v: &Tensor) -> Tensor {
        let (m, x) = (self.clone(), v.clone());
        let (sm, sv) = (m.shape(), x.shape());
        assert!(
            sm.len() == 2 && sv.len() == 1 && sm[1] == sv[0],
            "matvec shape mismatch: {sm:?} x {sv:?}"
        );
        let (n, d) = (sm[0], sm[1]);
        let out: Vec<f64> = {
            let (md, vd) = (m.data(), x.data());
            (0..n)
                .map(|i| (0..d).map(|j| md[i * d + j] * vd[j]).sum())
                .collect()
        };
        let (pm, pv) = (m.clone(), x.clone());
        Tensor::from_op(vec![n], out, vec![m, x], move |g| {
            let mut dm = vec![0.0; n * d];
            let mut dv = vec![0.0; d];
            {
                let (md, vd) = (pm.data(), pv.data());
                for i in 0..n {
                    for j in 0..d {
                        dm[i * d + j] += g[i] * vd[j];
                        dv[j] += g[i] * md[i * d + j];
                    }
                }
            }
            pm.accum_grad(&dm);
            pv.accum_grad(&dv);
        })
    }

    /// [n] x [n,d] -> [d] (row vector times matrix).
    pub fn vecmat(&self, m: &Tensor) -> Tensor {
        let (v, mat) = (self.clone(), m.clone());
        let (sv, sm) = (v.shape(), mat.shape());
        assert!(
            sv.len() == 1 && sm.len() == 2 && sv[0] == sm[0],
            "vecmat shape mismatch: {sv:?} x {sm:?}"
        );
        let (n, d) = (sm[0], sm[1]);
        let out: Vec<f64> = {
            let (vd, md) = (v.data(), mat.data());
            (0..d)
                .map(|j| (0..n).map(|i| vd[i] * md[i * d + j]).sum())
                .collect()
        };
        let (pv, pm) = (v.clone(), mat.clone());
        Tensor::from_op(vec![d], out, vec![v, mat], move |g| {
            let mut dv = vec![0.0; n];
            let mut dm = vec![0.0; n * d];
            {
                let (vd, md) = (pv.data(), pm.data());
                for i in 0..n {
                    for j in 0..d {
                        dv[i] += g[j] * md[i * d + j];
                        dm[i * d + j] += vd[i] * g[j];
                    }
                }
            }
            pv.accum_grad(&dv);
            pm.accum_grad(&dm);
        })
    }

    // ── softmax family ──────────────────────────────────────────────

    /// Max-subtracted softmax. Vectors use axis 0; matrices support axis 1
    /// (row-wise).
    pub fn softmax(&self, axis: usize) -> Tensor {
        let a = self.clone();
        let shape = a.shape();
        let (rows, cols) = match (shape.len(), axis) {
            (1, 0) => (1, shape[0]),
            (2, 1) => (shape[0], shape[1]),
            _ => panic!("softmax: unsupported shape {shape:?} with axis {axis}"),
        };
        let mut out = vec![0.0; rows * cols];
        {
            let d = a.data();
            for r in 0..rows {
                let row = &d[r * cols..(r + 1) * cols];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (j, &x) in row.iter().enumerate() {
                    let e = (x - m).exp();
                    out[r * cols + j] = e;
                    z += e;
                }
                for j in 0..cols {
                    out[r * cols + j] /= z;
                }
            }
        }
        let (pa, saved) = (a.clone(), out.clone());
        Tensor::from_op(shape, out, vec![a], move |g| {
            let mut da = vec![0.0; rows * cols];
            for r in 0..rows {
                let s = &saved[r * cols..(r + 1) * cols];
                let gr = &g[r * cols..(r + 1) * cols];
                let dot: f64 = gr.iter().zip(s.iter()).map(|(gi, si)| gi * si).sum();
                for j in 0..cols {
                    da[r * cols + j] = s[j] * (gr[j] - dot);
                }
            }
            pa.accum_grad(&da);
        })
    }

    /// Numerically stable log(softmax(x)) for a vector.
    pub fn log_softmax(&self) -> Tensor {
        let a = self.clone();
        let shape = a.shape();
        assert_eq!(shape.len(), 1, "log_softmax expects a vector, got {shape:?}");
        let n = shape[0];
        let out: Vec<f64> = {
            let d = a.data();
            let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + d.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            d.iter().map(|x| x - lse).collect()
        };
        let (pa, saved) = (a.clone(), out.clone());
        Tensor::from_op(shape, out, vec![a], move |g| {
            let gsum: f64 = g.iter().sum();
            let da: Vec<f64> = (0..n).map(|j| g[j] - saved[j].exp() * gsum).collect();
            pa.accum_grad(&da);
        })
    }

    /// Stable log(sum(exp(x))) of a vector, as a scalar.
    pub fn log_sum_exp(&self) -> Tensor {
        let a = self.clone();
        assert_eq!(a.shape().len(), 1, "log_sum_exp expects a vector");
        let (val, softmax) = {
            let d = a.data();
            let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = d.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            (m + z.ln(), exps.iter().map(|e| e / z).collect::<Vec<f64>>())
        };
        let pa = a.clone();
        Tensor::from_op(vec![], vec![val], vec![a], move |g| {
            let da: Vec<f64> = softmax.iter().map(|s| g[0] * s).collect();
            pa.accum_grad(&da);
        })
    }

    // ── pooling and reductions ──────────────────────────────────────

    /// Per-dimension mean over the rows of an [n,d] matrix.
    pub fn pool_avg(&self) -> Tensor {
        let a = self.clone();
        let shape = a.shape();
        assert_eq!(shape.len(), 2, "pool expects a matrix, got {shape:?}");
        let (n, d) = (shape[0], shape[1]);
        assert!(n >= 1, "pool of an empty sequence");
        let out: Vec<f64> = {
            let dat = a.data();
            (0..d)
                .map(|j| (0..n).map(|i| dat[i * d + j]).sum::<f64>() / n as f64)
                .collect()
        };
        let pa = a.clone();
        Tensor::from_op(vec![d], out, vec![a], move |g| {
            let mut da = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    da[i * d + j] = g[j] / n as f64;
                }
            }
            pa.accum_grad(&da);
        })
    }

    /// Per-dimension max over the rows of an [n,d] matrix. Gradient routes to
    /// the first row attaining the max.
    pub fn pool_max(&self) -> Tensor {
        let a = self.clone();
        let shape = a.shape();
        assert_eq!(shape.len(), 2, "pool expects a matrix, got {shape:?}");
        let (n, d) = (shape[0], shape[1]);
        assert!(n >= 1, "pool of an empty sequence");
        let mut out = vec![f64::NEG_INFINITY; d];
        let mut argmax = vec![0usize; d];
        {
            let dat = a.data();
            for j in 0..d {
                for i in 0..n {
                    let x = dat[i * d + j];
                    if x > out[j] {
                        out[j] = x;
                        argmax[j] = i;
                    }
                }
            }
        }
        let pa = a.clone();
        Tensor::from_op(vec![d], out, vec![a], move |g| {
            let mut da = vec![0.0; n * d];
            for j in 0..d {
                da[argmax[j] * d + j] = g[j];
            }
            pa.accum_grad(&da);
        })
    }

    pub fn sum(&self) -> Tensor {
        let a = self.clone();
        let val: f64 = a.data().iter().sum();
        let n = a.numel();
        let pa = a.clone();
        Tensor::from_op(vec![], vec![val], vec![a], move |g| {
            let da = vec![g[0]; n];
            pa.accum_grad(&da);
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Cosine similarity of two vectors, in [-1, 1].
    pub fn cosine(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.clone(), other.clone());
        assert_eq!(
            a.shape(),
            b.shape(),
            "cosine shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        assert_eq!(a.shape().len(), 1, "cosine expects vectors");
        let (val, na, nb) = {
            let (da, db) = (a.data(), b.data());
            let na = da.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = db.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(
                na > 0.0 && nb > 0.0,
                "cosine degenerate vector: zero norm operand (|a|={na}, |b|={nb})"
            );
            let dot: f64 = da.iter().zip(db.iter()).map(|(x, y)| x * y).sum();
            (dot / (na * nb), na, nb)
        };
        let (pa, pb) = (a.clone(), b.clone());
        Tensor::from_op(vec![], vec![val], vec![a, b], move |g| {
            let (da, db): (Vec<f64>, Vec<f64>) = {
                let (xa, xb) = (pa.data(), pb.data());
                let da = xa
                    .iter()
                    .zip(xb.iter())
                    .map(|(ai, bi)| g[0] * (bi / (na * nb) - val * ai / (na * na)))
                    .collect();
                let db = xa
                    .iter()
                    .zip(xb.iter())
                    .map(|(ai, bi)| g[0] * (ai / (na * nb) - val * bi / (nb * nb)))
                    .collect();
                (da, db)
            };
            pa.accum_grad(&da);
            pb.accum_grad(&db);
        })
    }

    // ── indexing and assembly ───────────────────────────────────────

    /// Row i of an [n,d] matrix as a [d] vector.
    pub fn row(&self, i: usize) -> Tensor {
        let a = self.clone();
        let shape = a.shape();
        assert_eq!(shape.len(), 2, "row expects a matrix, got {shape:?}");
        let (n, d) = (shape[0], shape[1]);
        assert!(i < n, "row index {i} out of range for {n} rows");
        let out = a.data()[i * d..(i + 1) * d].to_vec();
        let pa = a.clone();
        Tensor::from_op(vec![d], out, vec![a], move |g| {
            let mut da = vec![0.0; n * d];
            da[i * d..(i + 1) * d].copy_from_slice(g);
            pa.accum_grad(&da);
        })
    }

    /// Gather rows of an [n,d] matrix into a [k,d] matrix; gradient
    /// scatter-adds into the source rows.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let a = self.clone();
        let shape = a.shape();
        assert_eq!(shape.len(), 2, "gather_rows expects a matrix, got {shape:?}");
        let (n, d) = (shape[0], shape[1]);
        let idx = indices.to_vec();
        let mut out = Vec::with_capacity(idx.len() * d);
        {
            let dat = a.data();
            for &i in &idx {
                assert!(i < n, "gather index {i} out of range for {n} rows");
                out.extend_from_slice(&dat[i * d..(i + 1) * d]);
            }
        }
        let k = idx.len();
        let pa = a.clone();
        Tensor::from_op(vec![k, d], out, vec![a], move |g| {
            let mut da = vec![0.0; n * d];
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..d {
                    da[i * d + j] += g[r * d + j];
                }
            }
            pa.accum_grad(&da);
        })
    }

    /// Row w of the output is the mean of the rows of `self` listed in
    /// `groups[w]`; an empty group yields a zero row and receives no gradient.
    pub fn group_mean_rows(&self, groups: &[Vec<usize>]) -> Tensor {
        let a = self.clone();
        let shape = a.shape();
        assert_eq!(shape.len(), 2, "group_mean_rows expects a matrix");
        let (n, d) = (shape[0], shape[1]);
        let groups = groups.to_vec();
        let v = groups.len();
        let mut out = vec![0.0; v * d];
        {
            let dat = a.data();
            for (w, group) in groups.iter().enumerate() {
                if group.is_empty() {
                    continue;
                }
                let inv = 1.0 / group.len() as f64;
                for &s in group {
                    assert!(s < n, "subword index {s} out of range for {n} rows");
                    for j in 0..d {
                        out[w * d + j] += dat[s * d + j] * inv;
                    }
                }
            }
        }
        let pa = a.clone();
        Tensor::from_op(vec![v, d], out, vec![a], move |g| {
            let mut da = vec![0.0; n * d];
            for (w, group) in groups.iter().enumerate() {
                if group.is_empty() {
                    continue;
                }
                let inv = 1.0 / group.len() as f64;
                for &s in group {
                    for j in 0..d {
                        da[s * d + j] += g[w * d + j] * inv;
                    }
                }
            }
            pa.accum_grad(&da);
        })
    }

    /// Concatenate two vectors.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.clone(), other.clone());
        assert!(
            a.shape().len() == 1 && b.shape().len() == 1,
            "concat expects vectors: {:?}, {:?}",
            a.shape(),
            b.shape()
        );
        let (p, q) = (a.numel(), b.numel());
        let mut out = a.to_vec();
        out.extend_from_slice(&b.data());
        let (pa, pb) = (a.clone(), b.clone());
        Tensor::from_op(vec![p + q], out, vec![a, b], move |g| {
            pa.accum_grad(&g[..p]);
            pb.accum_grad(&g[p..]);
        })
    }

    /// Contiguous sub-vector [lo, hi).
    pub fn slice(&self, lo: usize, hi: usize) -> Tensor {
        let a = self.clone();
        let shape = a.shape();
        assert_eq!(shape.len(), 1, "slice expects a vector, got {shape:?}");
        let n = shape[0];
        assert!(lo < hi && hi <= n, "slice [{lo}, {hi}) out of range for length {n}");
        let out = a.data()[lo..hi].to_vec();
        let pa = a.clone();
        Tensor::from_op(vec![hi - lo], out, vec![a], move |g| {
            let mut da = vec![0.0; n];
            da[lo..hi].copy_from_slice(g);
            pa.accum_grad(&da);
        })
    }

    /// Element i of a vector as a scalar.
    pub fn get(&self, i: usize) -> Tensor {
        let a = self.clone();
        let shape = a.shape();
        assert_eq!(shape.len(), 1, "get expects a vector, got {shape:?}");
        let n = shape[0];
        assert!(i < n, "get index {i} out of range for length {n}");
        let val = a.data()[i];
        let pa = a.clone();
        Tensor::from_op(vec![], vec![val], vec![a], move |g| {
            let mut da = vec![0.0; n];
            da[i] = g[0];
            pa.accum_grad(&da);
        })
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(rows: &[Tensor]) -> Tensor {
        assert!(!rows.is_empty(), "stack_rows of an empty list");
        let d = rows[0].numel();
        let n = rows.len();
        let mut out = Vec::with_capacity(n * d);
        for r in rows {
            assert_eq!(
                r.shape(),
                vec![d],
                "stack_rows expects [{}]-vectors, got {:?}",
                d,
                r.shape()
            );
            out.extend_from_slice(&r.data());
        }
        let parents: Vec<Tensor> = rows.to_vec();
        let captured = parents.clone();
        Tensor::from_op(vec![n, d], out, parents, move |g| {
            for (i, r) in captured.iter().enumerate() {
                r.accum_grad(&g[i * d..(i + 1) * d]);
            }
        })
    }

    /// Stack scalars into a vector.
    pub fn stack_scalars(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "stack_scalars of an empty list");
        let out: Vec<f64> = items
            .iter()
            .map(|t| {
                assert_eq!(t.numel(), 1, "stack_scalars expects scalars, got {:?}", t.shape());
                t.item()
            })
            .collect();
        let parents: Vec<Tensor> = items.to_vec();
        let captured = parents.clone();
        Tensor::from_op(vec![items.len()], out, parents, move |g| {
            for (i, t) in captured.iter().enumerate() {
                t.accum_grad(&g[i..i + 1]);
            }
        })
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-topological gradient accumulation from a scalar loss. The
    /// gradient of the loss with respect to itself is 1.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.shape()
        );
        let order = topo_order(self);
        {
            let mut inner = self.inner.borrow_mut();
            let n = inner.data.len();
            let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
            grad[0] += 1.0;
        }
        // Post-order DFS puts parents before consumers; walk it backwards so
        // each node's gradient is complete before it pushes to its parents.
        for node in order.iter().rev() {
            let grad = {
                let mut inner = node.inner.borrow_mut();
                if inner.backward.is_none() {
                    continue;
                }
                let n = inner.data.len();
                inner.grad.get_or_insert_with(|| vec![0.0; n]).clone()
            };
            let inner = node.inner.borrow();
            if let Some(f) = &inner.backward {
                f(&grad);
            }
        }
    }
}

/// Iterative post-order DFS over the parent DAG.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    // (node, next-parent index) emulates the recursion stack.
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.inner.borrow().id);
    while let Some((node, pi)) = stack.pop() {
        let parent = {
            let inner = node.inner.borrow();
            inner.parents.get(pi).cloned()
        };
        match parent {
            Some(p) => {
                stack.push((node, pi + 1));
                let id = p.inner.borrow().id;
                if visited.insert(id) {
                    stack.push((p, 0));
                }
            }
            None => order.push(node),
        }
    }
    order
}

/// Maximum relative disagreement between analytic gradients of `f` and
/// central finite differences, over every element of every input.
///
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// A non-finite value anywhere propagates to the returned maximum.
pub fn check_gradients<F>(f: F, inputs: &[(Vec<usize>, Vec<f64>)], eps: f64) -> f64
where
    F: Fn(&[Tensor]) -> Tensor,
{
    assert!(eps > 0.0 && eps <= 1e-2, "eps {eps} outside (0, 1e-2]");
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| Tensor::param(shape, data.clone()))
        .collect();
    let loss = f(&leaves);
    loss.backward();
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let eval = |datasets: &[Vec<f64>]| -> f64 {
        let plain: Vec<Tensor> = inputs
            .iter()
            .zip(datasets)
            .map(|((shape, _), data)| Tensor::from_shape(shape, data.clone()))
            .collect();
        f(&plain).item()
    };

    let mut max_rel: f64 = 0.0;
    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    for (ti, (_, data)) in inputs.iter().enumerate() {
        for j in 0..data.len() {
            let mut plus = base.clone();
            plus[ti][j] += eps;
            let mut minus = base.clone();
            minus[ti][j] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if !rel.is_finite() {
                return rel;
            }
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}
