//! Recorded computation graph with reverse accumulation.
//!
//! A [`Graph`] is built per loss evaluation: every operation appends a node
//! holding its forward value, and [`Graph::backward`] walks the nodes in reverse
//! to accumulate derivatives into a [`Gradients`] buffer aligned with the
//! borrowed [`ParamStore`]. Parameter leaves never copy their tensors.

use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Result, UnmixError};
use crate::special::digamma;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    /// `W x + b`, `W` row-major `rows × cols`.
    Affine {
        w: Var,
        b: Option<Var>,
        x: Var,
        rows: usize,
        cols: usize,
    },
    /// `Wᵀ x`, `W` row-major `rows × cols`, `x` of length `rows`.
    MatTVec {
        w: Var,
        x: Var,
        rows: usize,
        cols: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddConst(Var),
    /// scalar node times vector node
    ScaleBy {
        s: Var,
        v: Var,
    },
    /// scalar node repeated `len` times
    Broadcast(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    LnGamma(Var),
    Sum(Var),
    Dot(Var, Var),
    LogSumExp(Var),
    Concat(Vec<Var>),
    Slice {
        src: Var,
        start: usize,
    },
    /// columns → row-major `rows × cols` matrix
    StackColumns(Vec<Var>),
    /// Output value supplied by the caller; derivative is `jac` (row-major
    /// `out × in`).
    LinearMap {
        input: Var,
        jac: Vec<f64>,
    },
    /// Euclidean norm of all entries; zero subgradient at the origin.
    Norm(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Values that enter a graph as data although they were computed from other
/// node values. Recording them on one pass and replaying them on another
/// lets finite differences hold them fixed, as the analytic gradient does.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetachedValues {
    values: Vec<Tensor>,
}

#[derive(Debug)]
enum Detached {
    Off,
    Record(Vec<Tensor>),
    Replay(Vec<Tensor>, usize),
}

/// Single-use tape of recorded operations.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    detached: Detached,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; store.len()],
            detached: Detached::Off,
        }
    }

    /// A graph that remembers every [`Graph::detached`] value.
    pub fn recording(store: &'s ParamStore) -> Self {
        Graph {
            detached: Detached::Record(Vec::new()),
            ..Graph::new(store)
        }
    }

    /// A graph whose [`Graph::detached`] calls return the recorded values
    /// in order instead of the freshly computed ones.
    pub fn replaying(store: &'s ParamStore, tape: DetachedValues) -> Self {
        Graph {
            detached: Detached::Replay(tape.values, 0),
            ..Graph::new(store)
        }
    }

    /// Values recorded so far by a [`Graph::recording`] graph.
    pub fn detached_values(&self) -> DetachedValues {
        match &self.detached {
            Detached::Record(v) => DetachedValues { values: v.clone() },
            _ => DetachedValues::default(),
        }
    }

    /// Constant leaf for a value derived from other nodes but treated as data.
    pub fn detached(&mut self, t: Tensor) -> Var {
        let t = match &mut self.detached {
            Detached::Off => t,
            Detached::Record(v) => {
                v.push(t.clone());
                t
            }
            Detached::Replay(v, cursor) => {
                let r = v
                    .get(*cursor)
                    .filter(|r| r.shape() == t.shape())
                    .cloned()
                    .expect("detached replay out of sync with the recording");
                *cursor += 1;
                r
            }
        };
        self.constant(&t)
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert!(
            matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len()
        );
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.get(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn len(&self, v: Var) -> usize {
        self.value(v).len()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .unwrap_or_else(|_| Tensor::zeros(self.shape(v).to_vec()))
    }

    // ---- leaves -----------------------------------------------------------

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Constant)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        self.push(vec![data.len()], data, Op::Constant)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.push(vec![], vec![v], Op::Constant)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.store.get(id).shape().to_vec();
        let v = self.push(shape, Vec::new(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    // ---- linear algebra ---------------------------------------------------

    fn check_len(&self, v: Var, expected: usize, context: &'static str) -> Result<()> {
        let got = self.len(v);
        if got != expected {
            return Err(UnmixError::dim(context, expected, got));
        }
        Ok(())
    }

    fn matrix_dims(&self, w: Var, context: &'static str) -> Result<(usize, usize)> {
        match *self.shape(w) {
            [r, c] => Ok((r, c)),
            _ => Err(UnmixError::Contract(format!(
                "{context}: expected a matrix, got shape {:?}",
                self.shape(w)
            ))),
        }
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: Var, b: Option<Var>, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(w, "affine")?;
        self.check_len(x, cols, "affine input")?;
        if let Some(b) = b {
            self.check_len(b, rows, "affine bias")?;
        }
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out = match b {
            Some(b) => self.value(b).to_vec(),
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wv[r * cols..(r + 1) * cols];
            *o += dot(row, xv);
        }
        Ok(self.push(
            vec![rows],
            out,
            Op::Affine {
                w,
                b,
                x,
                rows,
                cols,
            },
        ))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.affine(w, None, x)
    }

    /// `Wᵀ x`.
    pub fn mat_t_vec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(w, "mat_t_vec")?;
        self.check_len(x, rows, "mat_t_vec input")?;
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out = vec![0.0; cols];
        for (r, &xr) in xv.iter().enumerate() {
            let row = &wv[r * cols..(r + 1) * cols];
            for (o, &wrc) in out.iter_mut().zip(row) {
                *o += wrc * xr;
            }
        }
        Ok(self.push(vec![cols], out, Op::MatTVec { w, x, rows, cols }))
    }

    // ---- elementwise ------------------------------------------------------

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let n = self.len(a);
        self.check_len(b, n, context)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn ln_gamma(&mut self, a: Var) -> Var {
        self.unary(a, crate::special::ln_gamma, Op::LnGamma(a))
    }

    /// Forward identity that blocks derivative flow.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        self.unary(a, |x| x, Op::Constant)
    }

    /// Scalar node `s` times every entry of `v`.
    pub fn scale_by(&mut self, s: Var, v: Var) -> Result<Var> {
        self.check_len(s, 1, "scale_by scalar")?;
        let sv = self.scalar_value(s);
        let out: Vec<f64> = self.value(v).iter().map(|&x| sv * x).collect();
        let shape = self.shape(v).to_vec();
        Ok(self.push(shape, out, Op::ScaleBy { s, v }))
    }

    pub fn broadcast(&mut self, s: Var, len: usize) -> Result<Var> {
        self.check_len(s, 1, "broadcast scalar")?;
        let sv = self.scalar_value(s);
        Ok(self.push(vec![len], vec![sv; len], Op::Broadcast(s)))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![], vec![s], Op::Sum(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.len(a);
        self.check_len(b, n, "dot")?;
        let s = dot(self.value(a), self.value(b));
        Ok(self.push(vec![], vec![s], Op::Dot(a, b)))
    }

    /// Euclidean (Frobenius for matrices) norm.
    pub fn norm(&mut self, a: Var) -> Var {
        let s = dot(self.value(a), self.value(a)).sqrt();
        self.push(vec![], vec![s], Op::Norm(a))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let s = log_sum_exp(self.value(a));
        self.push(vec![], vec![s], Op::LogSumExp(a))
    }

    /// Sum of a list of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = terms.split_first() else {
            return Ok(self.constant_scalar(0.0));
        };
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    // ---- structure --------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(vec![out.len()], out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.len(src);
        if start + len > n {
            return Err(UnmixError::dim("slice bounds", n, start + len));
        }
        let out = self.value(src)[start..start + len].to_vec();
        Ok(self.push(vec![len], out, Op::Slice { src, start }))
    }

    /// Builds a row-major `rows × cols` matrix whose columns are `cols`.
    pub fn stack_columns(&mut self, columns: &[Var]) -> Result<Var> {
        let ncols = columns.len();
        if ncols == 0 {
            return Err(UnmixError::Contract("stack_columns of nothing".into()));
        }
        let rows = self.len(columns[0]);
        for &c in columns {
            self.check_len(c, rows, "stack_columns column")?;
        }
        let mut out = vec![0.0; rows * ncols];
        for (k, &c) in columns.iter().enumerate() {
            for (i, &v) in self.value(c).iter().enumerate() {
                out[i * ncols + k] = v;
            }
        }
        Ok(self.push(vec![rows, ncols], out, Op::StackColumns(columns.to_vec())))
    }

    /// Node whose forward value is `value` and whose Jacobian with respect to
    /// `input` is `jac` (row-major `value.len() × input.len()`).
    pub fn linear_map(&mut self, input: Var, value: Vec<f64>, jac: Vec<f64>) -> Result<Var> {
        let n_in = self.len(input);
        if jac.len() != value.len() * n_in {
            return Err(UnmixError::dim(
                "linear_map jacobian",
                value.len() * n_in,
                jac.len(),
            ));
        }
        Ok(self.push(vec![value.len()], value, Op::LinearMap { input, jac }))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Derivatives of the scalar `loss` with respect to every parameter of
    /// the store. Parameters not reached by the loss get zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut out = Gradients::zeros_like(self.store);
        self.backward_into(loss, &mut out)?;
        Ok(out)
    }

    /// Like [`Graph::backward`], adding the derivatives onto `out`.
    pub fn backward_into(&self, loss: Var, out: &mut Gradients) -> Result<()> {
        if out.len() != self.store.len() {
            return Err(UnmixError::dim("gradient buffer", self.store.len(), out.len()));
        }
        if self.len(loss) != 1 {
            return Err(UnmixError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = Accum {
                grads: &mut grads,
                nodes: &self.nodes,
                out: &mut *out,
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let slot = acc.out.slot(*id);
                    for (s, gi) in slot.iter_mut().zip(&g) {
                        *s += gi;
                    }
                }
                Op::Affine {
                    w,
                    b,
                    x,
                    rows,
                    cols,
                } => {
                    let (rows, cols) = (*rows, *cols);
                    if let Some(b) = b {
                        add_into(acc.slot(*b), &g);
                    }
                    let xv = self.value(*x);
                    {
                        let gw = acc.slot(*w);
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &mut gw[r * cols..(r + 1) * cols];
                            for (d, &xc) in row.iter_mut().zip(xv) {
                                *d += gr * xc;
                            }
                        }
                    }
                    if acc.wants(*x) {
                        let wv = self.value(*w);
                        let gx = acc.slot(*x);
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &wv[r * cols..(r + 1) * cols];
                            for (d, &wrc) in gx.iter_mut().zip(row) {
                                *d += gr * wrc;
                            }
                        }
                    }
                }
                Op::MatTVec { w, x, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    let xv = self.value(*x);
                    {
                        let gw = acc.slot(*w);
                        for r in 0..rows {
                            let row = &mut gw[r * cols..(r + 1) * cols];
                            for (d, &gc) in row.iter_mut().zip(&g) {
                                *d += xv[r] * gc;
                            }
                        }
                    }
                    if acc.wants(*x) {
                        let wv = self.value(*w);
                        let gx = acc.slot(*x);
                        for r in 0..rows {
                            gx[r] += dot(&wv[r * cols..(r + 1) * cols], &g);
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc.slot(*a), &g);
                    add_into(acc.slot(*b), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc.slot(*a), &g);
                    let gb = acc.slot(*b);
                    for (d, gi) in gb.iter_mut().zip(&g) {
                        *d -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    zip_into(acc.slot(*a), &g, bv, |gi, y| gi * y);
                    zip_into(acc.slot(*b), &g, av, |gi, x| gi * x);
                }
                Op::Neg(a) => {
                    let ga = acc.slot(*a);
                    for (d, gi) in ga.iter_mut().zip(&g) {
                        *d -= gi;
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    let ga = acc.slot(*a);
                    for (d, gi) in ga.iter_mut().zip(&g) {
                        *d += c * gi;
                    }
                }
                Op::AddConst(a) => add_into(acc.slot(*a), &g),
                Op::ScaleBy { s, v } => {
                    let sv = self.scalar_value(*s);
                    let vv = self.value(*v);
                    let gs = dot(&g, vv);
                    acc.slot(*s)[0] += gs;
                    let gv = acc.slot(*v);
                    for (d, gi) in gv.iter_mut().zip(&g) {
                        *d += sv * gi;
                    }
                }
                Op::Broadcast(s) => {
                    acc.slot(*s)[0] += g.iter().sum::<f64>();
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    zip_into(acc.slot(*a), &g, av, |gi, x| if x > 0.0 { gi } else { 0.0 });
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    zip_into(acc.slot(*a), &g, y, |gi, y| gi * y * (1.0 - y));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    zip_into(acc.slot(*a), &g, y, |gi, y| gi * y);
                }
                Op::Ln(a) => {
                    let av = self.value(*a);
                    zip_into(acc.slot(*a), &g, av, |gi, x| gi / x);
                }
                Op::Sqrt(a) => {
                    let y = &node.value;
                    zip_into(acc.slot(*a), &g, y, |gi, y| gi * 0.5 / y);
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    zip_into(acc.slot(*a), &g, av, |gi, x| 2.0 * gi * x);
                }
                Op::LnGamma(a) => {
                    let av = self.value(*a);
                    zip_into(acc.slot(*a), &g, av, |gi, x| gi * digamma(x));
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    acc.slot(*a).iter_mut().for_each(|d| *d += g0);
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    for (d, y) in acc.slot(*a).iter_mut().zip(bv) {
                        *d += g0 * y;
                    }
                    for (d, x) in acc.slot(*b).iter_mut().zip(av) {
                        *d += g0 * x;
                    }
                }
                Op::Norm(a) => {
                    let n = node.value[0];
                    if n > 0.0 {
                        let c = g[0] / n;
                        let av = self.value(*a);
                        for (d, &x) in acc.slot(*a).iter_mut().zip(av) {
                            *d += c * x;
                        }
                    }
                }
                Op::LogSumExp(a) => {
                    let g0 = g[0];
                    let lse = node.value[0];
                    let av = self.value(*a);
                    for (d, &x) in acc.slot(*a).iter_mut().zip(av) {
                        *d += g0 * (x - lse).exp();
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.len(p);
                        add_into(acc.slot(p), &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { src, start } => {
                    let start = *start;
                    let gs = acc.slot(*src);
                    for (d, gi) in gs[start..start + g.len()].iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::StackColumns(cols) => {
                    let ncols = cols.len();
                    for (k, &c) in cols.iter().enumerate() {
                        let gc = acc.slot(c);
                        for (i, d) in gc.iter_mut().enumerate() {
                            *d += g[i * ncols + k];
                        }
                    }
                }
                Op::LinearMap { input, jac } => {
                    let n_in = self.len(*input);
                    let gi = acc.slot(*input);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        for (d, &j) in gi.iter_mut().zip(&jac[r * n_in..(r + 1) * n_in]) {
                            *d += gr * j;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient sink used during the reverse pass: parameter leaves write straight
/// into the output buffer.
struct Accum<'a> {
    grads: &'a mut Vec<Option<Vec<f64>>>,
    nodes: &'a [Node],
    out: &'a mut Gradients,
}

impl Accum<'_> {
    fn wants(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }

    fn slot(&mut self, v: Var) -> &mut [f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.out.slot(id),
            _ => {
                let n = self.nodes[v.0].value.len();
                self.grads[v.0].get_or_insert_with(|| vec![0.0; n])
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_into(dst: &mut [f64], g: &[f64], other: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((d, &gi), &o) in dst.iter_mut().zip(g).zip(other) {
        *d += f(gi, o);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
