//! Tape-based reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`]. Nodes
//! are stored in creation order, which is a topological order, so
//! [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use codesign::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(array![[1.0, 2.0]]);
//! let y = tape.tanh(x);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss);
//! assert!(grads.get(x).is_some());
//! ```

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous run of rows `[start, start + len)` normalized together by
/// [`Tape::segment_softmax`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

/// Directed edges grouped by destination, as consumed by
/// [`Tape::attention_aggregate`]. `segments` tile the edges in order and every
/// edge in a segment shares its destination.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `E × k` per-edge features.
    pub features: Array2<f64>,
    pub segments: Vec<Segment>,
}

/// Values kept from the forward pass of an attention aggregate.
#[derive(Debug, Clone)]
struct AttentionCache {
    edges: EdgeList,
    slope: f64,
    messages: Array2<f64>,
    alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    SegmentSoftmax(Var, Vec<Segment>),
    Attention([Var; 3], Box<AttentionCache>),
    MeanRows(Var),
    SumCols(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Smallest argument passed to `ln`; keeps `log` finite on non-positive input.
const LOG_FLOOR: f64 = 1e-300;
/// Largest argument passed to `exp`; keeps `exp` finite.
const EXP_CEIL: f64 = 700.0;

/// Recorded computation. One tape per forward/backward pass; not shared
/// across threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled with `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on non-scalar node");
        val[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => parents(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul shape mismatch");
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.ncols(), "matmul_t shape mismatch");
        let out = va.dot(&vb.t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a 1×c row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert!(
            vr.nrows() == 1 && vr.ncols() == va.ncols(),
            "add_row shape mismatch"
        );
        let out = va + vr;
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a 1×c row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert!(
            vr.nrows() == 1 && vr.ncols() == va.ncols(),
            "mul_row shape mismatch"
        );
        let out = va * vr;
        self.push(out, Op::MulRow(a, row))
    }

    /// Multiplies every column of `a` elementwise by an r×1 column vector.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (va, vc) = (self.value(a), self.value(col));
        assert!(
            vc.ncols() == 1 && vc.nrows() == va.nrows(),
            "mul_col shape mismatch"
        );
        let out = va * vc;
        self.push(out, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) + s;
        self.push(out, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.shape(parts[0]).1;
        let views: Vec<_> = parts
            .iter()
            .map(|p| {
                let v = self.value(*p);
                assert_eq!(v.ncols(), cols, "concat_rows column mismatch");
                v.view()
            })
            .collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("checked shapes");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.nrows(), vb.nrows(), "concat_cols row mismatch");
        let out = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).expect("checked shapes");
        self.push(out, Op::ConcatCols(a, b))
    }

    /// Output row `k` is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Var {
        let va = self.value(a);
        let mut out = Array2::zeros((index.len(), va.ncols()));
        for (k, &i) in index.iter().enumerate() {
            out.row_mut(k).assign(&va.row(i));
        }
        self.push(out, Op::GatherRows(a, index.to_vec()))
    }

    /// Output has `rows` rows; row `index[k]` accumulates row `k` of `a`.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], rows: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.nrows(), index.len(), "scatter_add_rows index length");
        let mut out = Array2::zeros((rows, va.ncols()));
        for (k, &i) in index.iter().enumerate() {
            let mut dst = out.row_mut(i);
            dst += &va.row(k);
        }
        self.push(out, Op::ScatterAddRows(a, index.to_vec()))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.min(EXP_CEIL).exp());
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(LOG_FLOOR).ln());
        self.push(out, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Elementwise clamp; gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "minimum shape mismatch");
        let mut out = self.value(a).clone();
        out.zip_mut_with(self.value(b), |x, &y| *x = x.min(y));
        self.push(out, Op::Minimum(a, b))
    }

    /// Softmax of an r×1 column within each segment. Segments must tile the
    /// rows contiguously.
    pub fn segment_softmax(&mut self, a: Var, segments: &[Segment]) -> Var {
        let va = self.value(a);
        assert_eq!(va.ncols(), 1, "segment_softmax expects a column");
        let mut out = Array2::zeros(va.dim());
        let mut covered = 0;
        for seg in segments {
            assert_eq!(seg.start, covered, "segments must tile rows in order");
            assert!(seg.len > 0, "empty segment");
            covered += seg.len;
            let rows = seg.start..seg.start + seg.len;
            let max = rows
                .clone()
                .map(|r| va[[r, 0]])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for r in rows.clone() {
                let e = (va[[r, 0]] - max).exp();
                out[[r, 0]] = e;
                total += e;
            }
            for r in rows {
                out[[r, 0]] /= total;
            }
        }
        assert_eq!(covered, va.nrows(), "segments must cover every row");
        self.push(out, Op::SegmentSoftmax(a, segments.to_vec()))
    }

    /// One round of single-head attention message passing, fused.
    ///
    /// With `p = proj` (`N × H`), `w = w_edge` (`k × H`) and
    /// `attention = [a_dst; a_msg]` (`2H × 1`), each edge `s -> d` carries the
    /// message `m = leaky_relu(p[s] + f·w)` scored by `a_dst·p[d] + a_msg·m`.
    /// Scores are softmax-normalized per segment and row `d` of the `N × H`
    /// output is the weighted sum of its incoming messages. Rows with no
    /// incoming edges are zero.
    pub fn attention_aggregate(&mut self, proj: Var, w_edge: Var, attention: Var, edges: &EdgeList, slope: f64) -> Var {
        let (p, w, a) = (self.value(proj), self.value(w_edge), self.value(attention));
        let (n, h) = p.dim();
        let e = edges.src.len();
        assert_eq!(w.ncols(), h, "edge kernel width");
        assert_eq!(edges.features.dim(), (e, w.nrows()), "edge feature shape");
        assert_eq!(a.dim(), (2 * h, 1), "attention vector shape");
        assert_eq!(edges.dst.len(), e, "edge endpoint lengths");
        let a = a.column(0);
        let (a_dst, a_msg) = a.split_at(Axis(0), h);

        let mut messages = edges.features.dot(w);
        let mut scores = vec![0.0; e];
        for k in 0..e {
            let mut m = messages.row_mut(k);
            m += &p.row(edges.src[k]);
            m.mapv_inplace(|x| if x > 0.0 { x } else { slope * x });
            scores[k] = a_dst.dot(&p.row(edges.dst[k])) + a_msg.dot(&m);
        }
        let mut alpha = vec![0.0; e];
        let mut out = Array2::zeros((n, h));
        let mut covered = 0;
        for seg in &edges.segments {
            assert_eq!(seg.start, covered, "segments must tile edges in order");
            assert!(seg.len > 0, "empty segment");
            covered += seg.len;
            let rows = seg.start..seg.start + seg.len;
            let d = edges.dst[seg.start];
            let max = rows.clone().map(|k| scores[k]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = rows.clone().map(|k| (scores[k] - max).exp()).sum();
            let mut row = out.row_mut(d);
            for k in rows {
                assert_eq!(edges.dst[k], d, "segment mixes destinations");
                alpha[k] = (scores[k] - max).exp() / total;
                row.scaled_add(alpha[k], &messages.row(k));
            }
        }
        assert_eq!(covered, e, "segments must cover every edge");
        let cache = AttentionCache {
            edges: edges.clone(),
            slope,
            messages,
            alpha,
        };
        self.push(out, Op::Attention([proj, w_edge, attention], Box::new(cache)))
    }

    /// 1×c mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        assert!(va.nrows() > 0, "mean_rows of empty matrix");
        let out = va.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    /// r×1 sum over columns of each row.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(a))
    }

    /// 1×1 sum of every entry.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a))
    }

    /// 1×1 mean of every entry.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Array2<f64>,
        g: &Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
    ) {
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g.dot(&vb.t()));
                acc(*b, va.t().dot(g));
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g.dot(vb));
                acc(*b, g.t().dot(va));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g * vb);
                acc(*b, g * va);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, row) => {
                let (va, vr) = (self.value(*a), self.value(*row));
                acc(*a, g * vr);
                acc(*row, (g * va).sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulCol(a, col) => {
                let (va, vc) = (self.value(*a), self.value(*col));
                acc(*a, g * vc);
                acc(*col, (g * va).sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Scale(a, s) => acc(*a, g * *s),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.shape(*p).0;
                    acc(*p, g.slice(ndarray::s![start..start + rows, ..]).to_owned());
                    start += rows;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                acc(*a, g.slice(ndarray::s![.., ..ca]).to_owned());
                acc(*b, g.slice(ndarray::s![.., ca..]).to_owned());
            }
            Op::GatherRows(a, index) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, &i) in index.iter().enumerate() {
                    let mut row = d.row_mut(i);
                    row += &g.row(k);
                }
                acc(*a, d);
            }
            Op::ScatterAddRows(a, index) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, &i) in index.iter().enumerate() {
                    d.row_mut(k).assign(&g.row(i));
                }
                acc(*a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                let mut d = g.clone();
                d.zip_mut_with(va, |gd, &x| {
                    if x <= 0.0 {
                        *gd *= slope;
                    }
                });
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                d.zip_mut_with(out, |gd, &y| *gd *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::Exp(a) => {
                let va = self.value(*a);
                let mut d = g * out;
                d.zip_mut_with(va, |gd, &x| {
                    if x > EXP_CEIL {
                        *gd = 0.0;
                    }
                });
                acc(*a, d);
            }
            Op::Log(a) => {
                let va = self.value(*a);
                let mut d = g.clone();
                d.zip_mut_with(va, |gd, &x| {
                    *gd = if x > LOG_FLOOR { *gd / x } else { 0.0 };
                });
                acc(*a, d);
            }
            Op::Square(a) => {
                let va = self.value(*a);
                acc(*a, g * va * 2.0);
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a);
                let mut d = g.clone();
                d.zip_mut_with(va, |gd, &x| {
                    if x < *lo || x > *hi {
                        *gd = 0.0;
                    }
                });
                acc(*a, d);
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                let mut db = g.clone();
                ndarray::Zip::from(&mut da)
                    .and(&mut db)
                    .and(va)
                    .and(vb)
                    .for_each(|ga, gb, &x, &y| {
                        if x <= y {
                            *gb = 0.0;
                        } else {
                            *ga = 0.0;
                        }
                    });
                acc(*a, da);
                acc(*b, db);
            }
            Op::SegmentSoftmax(a, segments) => {
                let mut d = Array2::zeros(out.dim());
                for seg in segments {
                    let rows = seg.start..seg.start + seg.len;
                    let dot: f64 = rows.clone().map(|r| out[[r, 0]] * g[[r, 0]]).sum();
                    for r in rows {
                        d[[r, 0]] = out[[r, 0]] * (g[[r, 0]] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::Attention([proj, w_edge, attention], cache) => {
                let p = self.value(*proj);
                let h = p.ncols();
                let a = self.value(*attention).column(0).to_owned();
                let (a_dst, a_msg) = a.view().split_at(Axis(0), h);
                let AttentionCache {
                    edges,
                    slope,
                    messages,
                    alpha,
                } = &**cache;
                let mut dp = Array2::zeros(p.dim());
                let mut da = Array2::zeros((2 * h, 1));
                let mut dpre = Array2::zeros(messages.dim());
                for seg in &edges.segments {
                    let rows = seg.start..seg.start + seg.len;
                    let d = edges.dst[seg.start];
                    let gd = g.row(d);
                    let dalpha: Vec<f64> = rows.clone().map(|k| gd.dot(&messages.row(k))).collect();
                    let mean: f64 = rows.clone().zip(&dalpha).map(|(k, x)| alpha[k] * x).sum();
                    for (k, dak) in rows.zip(dalpha) {
                        let ds = alpha[k] * (dak - mean);
                        let m = messages.row(k);
                        {
                            let (mut da_dst, mut da_msg) = da.column_mut(0).split_at(Axis(0), h);
                            da_dst.scaled_add(ds, &p.row(d));
                            da_msg.scaled_add(ds, &m);
                        }
                        dp.row_mut(d).scaled_add(ds, &a_dst);
                        let mut dm = dpre.row_mut(k);
                        dm.scaled_add(alpha[k], &gd);
                        dm.scaled_add(ds, &a_msg);
                        dm.zip_mut_with(&m, |x, &mv| {
                            if mv <= 0.0 {
                                *x *= slope;
                            }
                        });
                    }
                }
                for (k, &s) in edges.src.iter().enumerate() {
                    dp.row_mut(s).scaled_add(1.0, &dpre.row(k));
                }
                let dw = edges.features.t().dot(&dpre);
                acc(*proj, dp);
                acc(*w_edge, dw);
                acc(*attention, da);
            }
            Op::MeanRows(a) => {
                let (rows, cols) = self.shape(*a);
                let row = g / rows as f64;
                let d = row.broadcast((rows, cols)).expect("1×c row").to_owned();
                acc(*a, d);
            }
            Op::SumCols(a) => {
                let shape = self.shape(*a);
                acc(*a, g.broadcast(shape).expect("r×1 column").to_owned());
            }
            Op::Sum(a) => {
                acc(*a, Array2::from_elem(self.shape(*a), g[[0, 0]]));
            }
        }
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Constant => vec![],
        Op::MatMul(a, b)
        | Op::MatMulT(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b)
        | Op::MulRow(a, b)
        | Op::MulCol(a, b)
        | Op::ConcatCols(a, b)
        | Op::Minimum(a, b) => vec![*a, *b],
        Op::ConcatRows(parts) => parts.clone(),
        Op::Attention(vars, _) => vars.to_vec(),
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::GatherRows(a, _)
        | Op::ScatterAddRows(a, _)
        | Op::LeakyRelu(a, _)
        | Op::Tanh(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Square(a)
        | Op::Clamp(a, _, _)
        | Op::SegmentSoftmax(a, _)
        | Op::MeanRows(a)
        | Op::SumCols(a)
        | Op::Sum(a) => vec![*a],
    }
}

/// Central finite-difference gradient of `f` at `x`, entry by entry.
pub fn finite_difference<F>(x: &Array2<f64>, h: f64, mut f: F) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut grad = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let plus = f(&probe);
        probe[idx] = orig - h;
        let minus = f(&probe);
        probe[idx] = orig;
        grad[idx] = (plus - minus) / (2.0 * h);
    }
    grad
}
