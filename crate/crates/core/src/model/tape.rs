//! Reverse-mode differentiation over row-major f64 matrices.

use matrixmultiply::dgemm;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape");
        Tensor { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// `c = a·b + beta·c` with `a` m×k and `b` k×n, either stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe buffers whose lengths were checked above.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
/// Probability clip for the binary cross-entropy.
pub const BCE_CLIP: f64 = 1e-7;
const GELU_C: f64 = 0.797_884_560_802_865_4;

enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    GatherSum {
        table: Var,
        idx: Vec<Vec<usize>>,
    },
    PairBias {
        table: Var,
        classes: Vec<u8>,
        col: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Bce {
        logits: Var,
        targets: Vec<f64>,
        probs: Vec<f64>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    /// Empty for parameter nodes, which read the parameter slice.
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn data(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i].data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.shape(v);
        Tensor::from_vec(r, c, self.data(v).to_vec())
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shape(v), (1, 1));
        self.data(v)[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            op => inputs(op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, i: usize) -> Var {
        if let Some(v) = self.param_vars[i] {
            return v;
        }
        let (r, c) = (self.params[i].rows, self.params[i].cols);
        let v = self.push(r, c, Vec::new(), Op::Param(i));
        self.param_vars[i] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t.rows, t.cols, t.data, Op::Input)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, 0.0, &mut out);
        self.push(m, n, out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt inner dimension");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), true, 0.0, &mut out);
        self.push(m, n, out, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, Op::Add(a, b))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shapes");
        let b = self.data(row);
        let mut out = self.data(a).to_vec();
        for chunk in out.chunks_mut(c.max(1)) {
            chunk.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.push(r, c, out, Op::AddRow(a, row))
    }

    /// `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.data(a).iter().map(|x| x * s).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|&x| gelu(x)).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(g), (1, c));
        assert_eq!(self.shape(b), (1, c));
        let xs = self.data(x);
        let (gs, bs) = (self.data(g), self.data(b));
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gs[j] + bs[j];
            }
        }
        self.push(r, c, out, Op::LayerNorm { x, g, b, xhat, rstd })
    }

    /// Row-wise softmax. Entries equal to `-inf` get probability 0.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        self.push(r, c, out, Op::Softmax(a))
    }

    /// Row i is the sum of `table` rows listed in `idx[i]`.
    pub fn gather_sum(&mut self, table: Var, idx: Vec<Vec<usize>>) -> Var {
        let (tr, c) = self.shape(table);
        let t = self.data(table);
        let mut out = vec![0.0; idx.len() * c];
        for (i, list) in idx.iter().enumerate() {
            for &k in list {
                assert!(k < tr, "gather index {k} out of range");
                out[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(&t[k * c..(k + 1) * c])
                    .for_each(|(o, v)| *o += v);
            }
        }
        let r = idx.len();
        self.push(r, c, out, Op::GatherSum { table, idx })
    }

    /// n×n matrix with entry (i, j) = `table[classes[i·n + j]][col]`.
    pub fn pair_bias(&mut self, table: Var, classes: Vec<u8>, n: usize, col: usize) -> Var {
        assert_eq!(classes.len(), n * n);
        let (_, tc) = self.shape(table);
        let t = self.data(table);
        let out = classes.iter().map(|&k| t[k as usize * tc + col]).collect();
        self.push(n, n, out, Op::PairBias { table, classes, col })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(start + len <= c);
        let xs = self.data(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xs[i * c + start..i * c + start + len]);
        }
        self.push(r, len, out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let r = self.shape(parts[0]).0;
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in &parts {
                let (pr, pc) = self.shape(p);
                assert_eq!(pr, r, "concat_cols rows");
                out.extend_from_slice(&self.data(p)[i * pc..(i + 1) * pc]);
            }
        }
        self.push(r, c, out, Op::ConcatCols(parts))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let c = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut r = 0;
        for &p in &parts {
            let (pr, pc) = self.shape(p);
            assert_eq!(pc, c, "concat_rows cols");
            out.extend_from_slice(self.data(p));
            r += pr;
        }
        self.push(r, c, out, Op::ConcatRows(parts))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let (_, c) = self.shape(x);
        let xs = self.data(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in &rows {
            out.extend_from_slice(&xs[i * c..(i + 1) * c]);
        }
        let r = rows.len();
        self.push(r, c, out, Op::SelectRows { x, rows })
    }

    /// Mean softmax cross-entropy over rows; 0 for an empty input.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let (r, c) = self.shape(logits);
        assert_eq!(r, targets.len());
        let mut probs = self.data(logits).to_vec();
        let mut total = 0.0;
        for (i, row) in probs.chunks_mut(c.max(1)).enumerate().take(r) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[i]];
            softmax_in_place(row);
        }
        let loss = if r == 0 { 0.0 } else { total / r as f64 };
        self.push(1, 1, vec![loss], Op::CrossEntropy { logits, targets, probs })
    }

    /// Binary cross-entropy of sigmoid(logits) against 0/1 targets,
    /// summed over columns and averaged over rows; 0 for an empty input.
    pub fn bce(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let (r, c) = self.shape(logits);
        assert_eq!(r * c, targets.len());
        let mut probs = Vec::with_capacity(r * c);
        let mut total = 0.0;
        for (&z, &t) in self.data(logits).iter().zip(&targets) {
            let p = sigmoid(z);
            let pc = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            total += if pc != p {
                -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
            } else {
                // ln σ(z) = -softplus(-z), ln(1 - σ(z)) = -softplus(z)
                t * softplus(-z) + (1.0 - t) * softplus(z)
            };
            probs.push(p);
        }
        let loss = if r == 0 { 0.0 } else { total / r as f64 };
        self.push(1, 1, vec![loss], Op::Bce { logits, targets, probs })
    }

    /// Accumulates `scale · ∂loss/∂param` into `grads` (one buffer per parameter).
    pub fn backward(&self, loss: Var, scale: f64, grads: &mut [Vec<f64>]) {
        let mut g: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(vec![scale; self.nodes[loss.0].rows * self.nodes[loss.0].cols]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => grads[*p].iter_mut().zip(&dy).for_each(|(a, b)| *a += b),
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    if self.nodes[a.0].needs_grad {
                        let bd = self.data(*b);
                        gemm(m, n, k, &dy, false, bd, true, 1.0, self.slot(&mut g, *a));
                    }
                    if self.nodes[b.0].needs_grad {
                        let ad = self.data(*a);
                        gemm(k, m, n, ad, true, &dy, false, 1.0, self.slot(&mut g, *b));
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    if self.nodes[a.0].needs_grad {
                        let bd = self.data(*b);
                        gemm(m, n, k, &dy, false, bd, false, 1.0, self.slot(&mut g, *a));
                    }
                    if self.nodes[b.0].needs_grad {
                        let ad = self.data(*a);
                        gemm(n, m, k, &dy, true, ad, false, 1.0, self.slot(&mut g, *b));
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.nodes[v.0].needs_grad {
                            add_into(self.slot(&mut g, v), &dy);
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if self.nodes[a.0].needs_grad {
                        add_into(self.slot(&mut g, *a), &dy);
                    }
                    if self.nodes[row.0].needs_grad {
                        let gr = self.slot(&mut g, *row);
                        for chunk in dy.chunks(node.cols.max(1)) {
                            add_into(gr, chunk);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = self.slot(&mut g, *a);
                        ga.iter_mut().zip(&dy).for_each(|(x, d)| *x += s * d);
                    }
                }
                Op::Gelu(a) => {
                    if self.nodes[a.0].needs_grad {
                        let xs = self.data(*a);
                        let ga = self.slot(&mut g, *a);
                        for ((o, &x), d) in ga.iter_mut().zip(xs).zip(&dy) {
                            *o += d * gelu_grad(x);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    g: gv,
                    b,
                    xhat,
                    rstd,
                } => {
                    let (r, c) = (node.rows, node.cols);
                    if self.nodes[gv.0].needs_grad {
                        let gg = self.slot(&mut g, *gv);
                        for i in 0..r {
                            for j in 0..c {
                                gg[j] += dy[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = self.slot(&mut g, *b);
                        for chunk in dy.chunks(c.max(1)) {
                            add_into(gb, chunk);
                        }
                    }
                    if self.nodes[x.0].needs_grad {
                        let gamma = self.data(*gv);
                        let gx = self.slot(&mut g, *x);
                        let mut dh = vec![0.0; c];
                        for i in 0..r {
                            let (mut m1, mut m2) = (0.0, 0.0);
                            for j in 0..c {
                                dh[j] = dy[i * c + j] * gamma[j];
                                m1 += dh[j];
                                m2 += dh[j] * xhat[i * c + j];
                            }
                            m1 /= c as f64;
                            m2 /= c as f64;
                            for j in 0..c {
                                gx[i * c + j] += rstd[i] * (dh[j] - m1 - xhat[i * c + j] * m2);
                            }
                        }
                    }
                }
                Op::Softmax(a) => {
                    if self.nodes[a.0].needs_grad {
                        let c = node.cols.max(1);
                        let y = &node.value;
                        let ga = self.slot(&mut g, *a);
                        for ((yr, dr), gr) in y.chunks(c).zip(dy.chunks(c)).zip(ga.chunks_mut(c)) {
                            let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                            for j in 0..yr.len() {
                                gr[j] += yr[j] * (dr[j] - dot);
                            }
                        }
                    }
                }
                Op::GatherSum { table, idx } => {
                    if self.nodes[table.0].needs_grad {
                        let c = node.cols;
                        let gt = self.slot(&mut g, *table);
                        for (i, list) in idx.iter().enumerate() {
                            for &k in list {
                                add_into(&mut gt[k * c..(k + 1) * c], &dy[i * c..(i + 1) * c]);
                            }
                        }
                    }
                }
                Op::PairBias { table, classes, col } => {
                    if self.nodes[table.0].needs_grad {
                        let tc = self.nodes[table.0].cols;
                        let gt = self.slot(&mut g, *table);
                        for (&k, d) in classes.iter().zip(&dy) {
                            gt[k as usize * tc + col] += d;
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.nodes[x.0].needs_grad {
                        let xc = self.nodes[x.0].cols;
                        let c = node.cols;
                        let gx = self.slot(&mut g, *x);
                        for i in 0..node.rows {
                            add_into(&mut gx[i * xc + start..i * xc + start + c], &dy[i * c..(i + 1) * c]);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.nodes[p.0].cols;
                        if self.nodes[p.0].needs_grad {
                            let gp = self.slot(&mut g, p);
                            for i in 0..node.rows {
                                let src = &dy[i * node.cols + off..i * node.cols + off + pc];
                                add_into(&mut gp[i * pc..(i + 1) * pc], src);
                            }
                        }
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].rows * self.nodes[p.0].cols;
                        if self.nodes[p.0].needs_grad {
                            add_into(self.slot(&mut g, p), &dy[off..off + len]);
                        }
                        off += len;
                    }
                }
                Op::SelectRows { x, rows } => {
                    if self.nodes[x.0].needs_grad {
                        let c = node.cols;
                        let gx = self.slot(&mut g, *x);
                        for (k, &i) in rows.iter().enumerate() {
                            add_into(&mut gx[i * c..(i + 1) * c], &dy[k * c..(k + 1) * c]);
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let r = targets.len();
                    if r > 0 && self.nodes[logits.0].needs_grad {
                        let c = self.nodes[logits.0].cols;
                        let s = dy[0] / r as f64;
                        let gl = self.slot(&mut g, *logits);
                        for (i, &t) in targets.iter().enumerate() {
                            for j in 0..c {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                gl[i * c + j] += s * (probs[i * c + j] - onehot);
                            }
                        }
                    }
                }
                Op::Bce { logits, targets, probs } => {
                    let r = self.nodes[logits.0].rows;
                    if r > 0 && self.nodes[logits.0].needs_grad {
                        let s = dy[0] / r as f64;
                        let gl = self.slot(&mut g, *logits);
                        for ((o, &p), &t) in gl.iter_mut().zip(probs).zip(targets) {
                            if (BCE_CLIP..=1.0 - BCE_CLIP).contains(&p) {
                                *o += s * (p - t);
                            }
                        }
                    }
                }
            }
        }
    }

    fn slot<'g>(&self, g: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = &self.nodes[v.0];
        g[v.0].get_or_insert_with(|| vec![0.0; n.rows * n.cols])
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Input | Op::Param(_) => vec![],
        Op::MatMul(a, b) | Op::MatMulNT(a, b) | Op::Add(a, b) | Op::AddRow(a, b) => vec![*a, *b],
        Op::Scale(a, _) | Op::Gelu(a) | Op::Softmax(a) => vec![*a],
        Op::LayerNorm { x, g, b, .. } => vec![*x, *g, *b],
        Op::GatherSum { table, .. } | Op::PairBias { table, .. } => vec![*table],
        Op::SliceCols { x, .. } | Op::SelectRows { x, .. } => vec![*x],
        Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        Op::CrossEntropy { logits, .. } | Op::Bce { logits, .. } => vec![*logits],
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in row.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    row.iter_mut().for_each(|z| *z /= sum);
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central differences against the tape for a scalar function of the params.
    fn check(params: Vec<Tensor>, f: impl Fn(&mut Tape) -> Var) {
        let tape_loss = |ps: &[Tensor]| {
            let mut t = Tape::new(ps);
            let l = f(&mut t);
            t.scalar(l)
        };
        let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        {
            let mut t = Tape::new(&params);
            let l = f(&mut t);
            t.backward(l, 1.0, &mut grads);
        }
        let h = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            for k in 0..p.len() {
                let mut plus = params.clone();
                plus[pi].data[k] += h;
                let mut minus = params.clone();
                minus[pi].data[k] -= h;
                let num = (tape_loss(&plus) - tape_loss(&minus)) / (2.0 * h);
                let ana = grads[pi][k];
                assert!(
                    (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                    "param {pi}[{k}]: numeric {num} analytic {ana}"
                );
            }
        }
    }

    #[test]
    fn gemm_transposes() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [1.0, 0.0, 2.0, 1.0, 0.0, 3.0]; // 3×2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [5.0, 11.0, 14.0, 23.0]);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // aᵀ stored 3×2
        let bt = [1.0, 2.0, 0.0, 0.0, 1.0, 3.0]; // bᵀ stored 2×3
        let mut c2 = [0.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, 0.0, &mut c2);
        assert_eq!(c, c2);
    }

    #[test]
    fn attention_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![
            rand_tensor(&mut rng, 4, 5),
            rand_tensor(&mut rng, 5, 6),
            rand_tensor(&mut rng, 1, 6),
            rand_tensor(&mut rng, 1, 6),
            rand_tensor(&mut rng, 1, 6),
            rand_tensor(&mut rng, 3, 2),
            rand_tensor(&mut rng, 7, 5),
        ];
        check(params, |t| {
            let emb = t.param(6);
            let x = t.gather_sum(emb, vec![vec![0, 3], vec![1], vec![2, 4, 6], vec![5]]);
            let w = t.param(1);
            let b = t.param(2);
            let h = t.linear(x, w, b);
            let (g, be) = (t.param(3), t.param(4));
            let h = t.layer_norm(h, g, be);
            let h = t.gelu(h);
            let q = t.slice_cols(h, 0, 3);
            let k = t.slice_cols(h, 3, 3);
            let s = t.matmul_nt(q, k);
            let s = t.scale(s, 0.5);
            let tb = t.param(5);
            let bias = t.pair_bias(tb, vec![0, 1, 2, 0, 1, 0, 0, 2, 2, 0, 0, 1, 0, 2, 1, 0], 4, 1);
            let mut mask = vec![0.0; 16];
            for i in 0..4 {
                for j in i + 1..4 {
                    mask[i * 4 + j] = f64::NEG_INFINITY;
                }
            }
            let m = t.input(Tensor::from_vec(4, 4, mask));
            let s = t.add(s, bias);
            let s = t.add(s, m);
            let a = t.softmax(s);
            let o = t.matmul(a, h);
            let o = t.concat_cols(vec![o, x]);
            let extra = t.select_rows(o, vec![0]);
            let o = t.concat_rows(vec![o, extra]);
            let o1 = t.select_rows(o, vec![2, 0]);
            let ce = t.cross_entropy(o1, vec![4, 1]);
            let o2 = t.select_rows(o, vec![1, 3, 3]);
            let bce = t.bce(o2, (0..33).map(|i| (i % 3 == 0) as u8 as f64).collect());
            t.add(ce, bce)
        });
    }

    #[test]
    fn empty_losses_are_zero() {
        let params = vec![Tensor::zeros(2, 3)];
        let mut t = Tape::new(&params);
        let p = t.param(0);
        let none = t.select_rows(p, vec![]);
        let ce = t.cross_entropy(none, vec![]);
        let bce = t.bce(none, vec![]);
        assert_eq!(t.scalar(ce), 0.0);
        assert_eq!(t.scalar(bce), 0.0);
        let mut g = vec![vec![0.0; 6]];
        let l = t.add(ce, bce);
        t.backward(l, 1.0, &mut g);
        assert!(g[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bce_clips() {
        let params = vec![Tensor::from_vec(1, 2, vec![60.0, -60.0])];
        let mut t = Tape::new(&params);
        let p = t.param(0);
        let l = t.bce(p, vec![1.0, 0.0]);
        let expect = -2.0 * (1.0 - BCE_CLIP).ln();
        assert!((t.scalar(l) - expect).abs() < 1e-15);
    }
}
