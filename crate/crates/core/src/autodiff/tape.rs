use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    MulRows(Var, Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Tanh(Var),
    Exp(Var),
    SegmentSoftmax(Var, Vec<usize>, usize),
    LogSoftmax(Var),
    MeanRows(Var),
    Sum(Var),
    Pick(Var, usize),
    Min(Var, Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitive operations in execution order so that [`Tape::backward`]
/// can walk them in reverse. One tape per forward pass; call
/// [`Tape::clear`] to reuse the allocation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by tape position.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds `scale ×` every parameter gradient into `acc[param index]`.
    pub fn accumulate_params(&self, acc: &mut [Tensor], scale: f64) {
        for &(node, param) in &self.params {
            if let Some(g) = &self.grads[node] {
                let dst = acc[param].data_mut();
                for (d, s) in dst.iter_mut().zip(g.data()) {
                    *d += scale * s;
                }
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient flows out of the tape through it).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable parameter; its gradient is reported under `index`.
    pub fn param(&mut self, index: usize, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tb));
        }
        let c = ta.cols();
        let mut value = ta.clone();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x += tb.data()[i % c];
        }
        Ok(self.push(value, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddScalar(a))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err(
                    "concat_cols",
                    self.value(parts[0]),
                    self.value(p),
                ));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Row `i` of the result is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= ta.rows()) {
            return Err(AutodiffError::Index {
                op: "gather_rows",
                index: bad,
                len: ta.rows(),
            });
        }
        let mut data = Vec::with_capacity(index.len() * ta.cols());
        for &i in index {
            data.extend_from_slice(ta.row(i));
        }
        let value = Tensor::from_vec(index.len(), ta.cols(), data)?;
        Ok(self.push(value, Op::GatherRows(a, index.to_vec())))
    }

    /// Row `j` of the result is the sum of the rows `i` of `a` with
    /// `index[i] == j`; the result has `out_rows` rows.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: &[usize],
        out_rows: usize,
    ) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if index.len() != ta.rows() {
            return Err(AutodiffError::Index {
                op: "scatter_add_rows",
                index: index.len(),
                len: ta.rows(),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(AutodiffError::Index {
                op: "scatter_add_rows",
                index: bad,
                len: out_rows,
            });
        }
        let c = ta.cols();
        let mut value = Tensor::zeros(out_rows, c);
        for (i, &j) in index.iter().enumerate() {
            let src = ta.row(i);
            for (d, s) in value.data_mut()[j * c..(j + 1) * c].iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(self.push(value, Op::ScatterAddRows(a, index.to_vec())))
    }

    /// Scales row `i` of `a` by the `i`-th entry of the column `s`.
    pub fn mul_rows(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.cols() != 1 || ts.rows() != ta.rows() {
            return Err(shape_err("mul_rows", ta, ts));
        }
        let c = ta.cols();
        let mut value = ta.clone();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x *= ts.data()[i / c.max(1)];
        }
        Ok(self.push(value, Op::MulRows(a, s)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(value, Op::Elu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// Softmax of the column `a` within segments: entries sharing a
    /// `segment[i]` value are normalized together.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segment: &[usize],
        num_segments: usize,
    ) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.cols() != 1 || segment.len() != ta.rows() {
            return Err(AutodiffError::Index {
                op: "segment_softmax",
                index: segment.len(),
                len: ta.rows(),
            });
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= num_segments) {
            return Err(AutodiffError::Index {
                op: "segment_softmax",
                index: bad,
                len: num_segments,
            });
        }
        let mut max = vec![f64::NEG_INFINITY; num_segments];
        for (&x, &s) in ta.data().iter().zip(segment) {
            max[s] = max[s].max(x);
        }
        let mut sum = vec![0.0; num_segments];
        let exps: Vec<f64> = ta
            .data()
            .iter()
            .zip(segment)
            .map(|(&x, &s)| {
                let e = (x - max[s]).exp();
                sum[s] += e;
                e
            })
            .collect();
        let data = exps.iter().zip(segment).map(|(e, &s)| e / sum[s]).collect();
        let value = Tensor::column(data);
        Ok(self.push(value, Op::SegmentSoftmax(a, segment.to_vec(), num_segments)))
    }

    /// Log-softmax over all entries of the column `a`.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.cols() != 1 || ta.rows() == 0 {
            return Err(AutodiffError::Shape {
                op: "log_softmax",
                left: ta.shape(),
                right: (0, 1),
            });
        }
        let max = ta.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + ta.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let value = ta.map(|x| x - lse);
        Ok(self.push(value, Op::LogSoftmax(a)))
    }

    /// Column means: `n x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.rows() == 0 {
            return Err(AutodiffError::Shape {
                op: "mean_rows",
                left: ta.shape(),
                right: (1, ta.cols()),
            });
        }
        let (n, c) = ta.shape();
        let mut data = vec![0.0; c];
        for r in 0..n {
            for (d, x) in data.iter_mut().zip(ta.row(r)) {
                *d += x;
            }
        }
        for d in &mut data {
            *d /= n as f64;
        }
        let value = Tensor::from_vec(1, c, data)?;
        Ok(self.push(value, Op::MeanRows(a)))
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Entry at flat index `i` as a `1 x 1` tensor.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if i >= ta.len() {
            return Err(AutodiffError::Index {
                op: "pick",
                index: i,
                len: ta.len(),
            });
        }
        let value = Tensor::scalar(ta.data()[i]);
        Ok(self.push(value, Op::Pick(a, i)))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("min", a, b)?;
        let value = self.value(a).zip_map(self.value(b), f64::min);
        Ok(self.push(value, Op::Min(a, b)))
    }

    /// Clamp to `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::NoForward);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar(self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params = Vec::new();

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => params.push((idx, *p)),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    acc(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::AddRow(a, bias) => {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for (i, x) in g.data().iter().enumerate() {
                        gb[i % c] += x;
                    }
                    acc(&mut grads, *bias, Tensor::from_vec(1, c, gb)?);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        acc(&mut grads, p, Tensor::from_vec(rows, c, data)?);
                        offset += c;
                    }
                }
                Op::GatherRows(a, index) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut ga = Tensor::zeros(ta.rows(), c);
                    for (i, &src) in index.iter().enumerate() {
                        for (d, s) in ga.data_mut()[src * c..(src + 1) * c]
                            .iter_mut()
                            .zip(g.row(i))
                        {
                            *d += s;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAddRows(a, index) => {
                    let c = g.cols();
                    let mut data = Vec::with_capacity(index.len() * c);
                    for &j in index {
                        data.extend_from_slice(g.row(j));
                    }
                    acc(&mut grads, *a, Tensor::from_vec(index.len(), c, data)?);
                }
                Op::MulRows(a, s) => {
                    let (ta, ts) = (self.value(*a), self.value(*s));
                    let c = ta.cols();
                    let mut ga = g.clone();
                    let mut gs = vec![0.0; ts.rows()];
                    for r in 0..ta.rows() {
                        let scale = ts.data()[r];
                        for k in 0..c {
                            ga.data_mut()[r * c + k] *= scale;
                            gs[r] += g.data()[r * c + k] * ta.data()[r * c + k];
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *s, Tensor::column(gs));
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(x, |g, x| if x > 0.0 { g } else { g * slope }),
                    );
                }
                Op::Elu(a) => {
                    let x = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(x, |g, x| if x > 0.0 { g } else { g * x.exp() }),
                    );
                }
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * y)),
                Op::SegmentSoftmax(a, segment, n) => {
                    let mut dot = vec![0.0; *n];
                    for ((gi, yi), &s) in g.data().iter().zip(y.data()).zip(segment) {
                        dot[s] += gi * yi;
                    }
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .zip(segment)
                        .map(|((gi, yi), &s)| yi * (gi - dot[s]))
                        .collect();
                    acc(&mut grads, *a, Tensor::column(data));
                }
                Op::LogSoftmax(a) => {
                    let total = g.sum();
                    acc(&mut grads, *a, g.zip_map(y, |g, y| g - y.exp() * total));
                }
                Op::MeanRows(a) => {
                    let (n, c) = self.value(*a).shape();
                    let mut data = Vec::with_capacity(n * c);
                    for _ in 0..n {
                        data.extend(g.data().iter().map(|x| x / n as f64));
                    }
                    acc(&mut grads, *a, Tensor::from_vec(n, c, data)?);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(
                        &mut grads,
                        *a,
                        Tensor::from_vec(r, c, vec![g.item(); r * c])?,
                    );
                }
                Op::Pick(a, i) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    ga.data_mut()[*i] = g.item();
                    acc(&mut grads, *a, ga);
                }
                Op::Min(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = g.clone();
                    for i in 0..g.len() {
                        if ta.data()[i] <= tb.data()[i] {
                            gb.data_mut()[i] = 0.0;
                        } else {
                            ga.data_mut()[i] = 0.0;
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(x, |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
                    );
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }
}
