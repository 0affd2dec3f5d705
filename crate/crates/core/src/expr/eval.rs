use super::{BinaryOp, Expr, Params, UnaryOp, MAX_NPARAMS};
use crate::dataset::DataTable;

#[derive(Debug, Clone, Copy)]
enum Op {
    Var(usize),
    Param(usize),
    Const(f64),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

#[derive(Debug, Clone, Copy)]
struct Instr {
    op: Op,
    /// Bitmask of parameters the subtree rooted here depends on.
    mask: u16,
}

/// Post-order compiled form of an [`Expr`] for repeated row evaluation.
#[derive(Debug, Clone)]
pub struct Tape {
    code: Vec<Instr>,
    used: Vec<usize>,
    max_stack: usize,
}

#[derive(Clone, Copy)]
struct Dual {
    v: f64,
    d: [f64; MAX_NPARAMS],
}

impl Dual {
    const fn constant(v: f64) -> Dual {
        Dual {
            v,
            d: [0.0; MAX_NPARAMS],
        }
    }
}

impl Tape {
    pub fn compile(expr: &Expr) -> Tape {
        let mut code = Vec::with_capacity(expr.complexity());
        let mut max_stack = 0;
        compile_into(expr, &mut code, 0, &mut max_stack);
        let root_mask = code.last().map(|i| i.mask).unwrap_or(0);
        let used = (0..MAX_NPARAMS).filter(|j| root_mask & (1 << j) != 0).collect();
        Tape {
            code,
            used,
            max_stack,
        }
    }

    /// Parameter indices the expression depends on.
    pub fn params_used(&self) -> &[usize] {
        &self.used
    }

    /// Evaluate one row of inputs.
    pub fn eval(&self, inputs: &[f64], params: &Params) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.max_stack);
        self.eval_with(inputs, params, &mut stack)
    }

    fn eval_with(&self, inputs: &[f64], params: &Params, stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        for ins in &self.code {
            match ins.op {
                Op::Var(i) => stack.push(inputs[i]),
                Op::Param(i) => stack.push(params[i]),
                Op::Const(c) => stack.push(c),
                Op::Unary(op) => {
                    let a = stack.pop().unwrap_or(f64::NAN);
                    stack.push(op.apply(a));
                }
                Op::Binary(op) => {
                    let b = stack.pop().unwrap_or(f64::NAN);
                    let a = stack.pop().unwrap_or(f64::NAN);
                    stack.push(op.apply(a, b));
                }
            }
        }
        stack.pop().unwrap_or(f64::NAN)
    }

    /// Evaluate every row of a table.
    pub fn eval_table(&self, table: &DataTable, params: &Params) -> Vec<f64> {
        let mut stack = Vec::with_capacity(self.max_stack);
        table
            .rows()
            .map(|row| self.eval_with(&row[1..], params, &mut stack))
            .collect()
    }

    /// Value and partial derivatives with respect to every parameter slot
    /// at one input row.
    pub fn eval_grad(&self, inputs: &[f64], params: &Params) -> (f64, Params) {
        let mut stack = Vec::with_capacity(self.max_stack);
        let d = self.dual_with(inputs, params, &mut stack);
        (d.v, d.d)
    }

    fn dual_with(&self, inputs: &[f64], params: &Params, stack: &mut Vec<Dual>) -> Dual {
        stack.clear();
        let used = &self.used;
        for ins in &self.code {
            let out = match ins.op {
                Op::Var(i) => Dual::constant(inputs[i]),
                Op::Const(c) => Dual::constant(c),
                Op::Param(i) => {
                    let mut d = Dual::constant(params[i]);
                    d.d[i] = 1.0;
                    d
                }
                Op::Unary(op) => {
                    let a = stack.pop().unwrap_or(Dual::constant(f64::NAN));
                    let v = op.apply(a.v);
                    let mut out = Dual::constant(v);
                    if ins.mask != 0 {
                        let scale = unary_derivative(op, a.v, v);
                        for &j in used {
                            out.d[j] = scale * a.d[j];
                        }
                    }
                    out
                }
                Op::Binary(op) => {
                    let b = stack.pop().unwrap_or(Dual::constant(f64::NAN));
                    let a = stack.pop().unwrap_or(Dual::constant(f64::NAN));
                    let v = op.apply(a.v, b.v);
                    let mut out = Dual::constant(v);
                    if ins.mask != 0 {
                        let (da, db) = binary_partials(op, a.v, b.v, v);
                        for &j in used {
                            let ga = a.d[j];
                            let gb = b.d[j];
                            // A zero child derivative contributes nothing, even
                            // when the partial itself is inf or NaN.
                            let ta = if ga == 0.0 { 0.0 } else { da * ga };
                            let tb = if gb == 0.0 { 0.0 } else { db * gb };
                            out.d[j] = ta + tb;
                        }
                    }
                    out
                }
            };
            stack.push(out);
        }
        stack.pop().unwrap_or(Dual::constant(f64::NAN))
    }

    /// Predictions plus the n x 10 Jacobian of predictions with respect to
    /// parameters.
    pub fn jacobian(&self, table: &DataTable, params: &Params) -> (Vec<f64>, Jacobian) {
        let mut stack = Vec::with_capacity(self.max_stack);
        let mut values = Vec::with_capacity(table.n_rows());
        let mut data = Vec::with_capacity(table.n_rows() * MAX_NPARAMS);
        for row in table.rows() {
            let d = self.dual_with(&row[1..], params, &mut stack);
            values.push(d.v);
            data.extend_from_slice(&d.d);
        }
        (
            values,
            Jacobian {
                rows: table.n_rows(),
                data,
            },
        )
    }

    /// Mean squared error against the table's targets, with its gradient.
    /// One pass; no Jacobian is materialized.
    pub fn mse_and_gradient(&self, table: &DataTable, params: &Params) -> (f64, Params) {
        let mut stack = Vec::with_capacity(self.max_stack);
        let mut sse = 0.0;
        let mut grad = [0.0; MAX_NPARAMS];
        for row in table.rows() {
            let d = self.dual_with(&row[1..], params, &mut stack);
            let r = d.v - row[0];
            sse += r * r;
            for &j in &self.used {
                grad[j] += 2.0 * r * d.d[j];
            }
        }
        let n = table.n_rows() as f64;
        for g in grad.iter_mut() {
            *g /= n;
        }
        (sse / n, grad)
    }

    /// Mean squared error only.
    pub fn mse(&self, table: &DataTable, params: &Params) -> f64 {
        let mut stack = Vec::with_capacity(self.max_stack);
        let mut sse = 0.0;
        for row in table.rows() {
            let r = self.eval_with(&row[1..], params, &mut stack) - row[0];
            sse += r * r;
        }
        sse / table.n_rows() as f64
    }
}

fn compile_into(e: &Expr, code: &mut Vec<Instr>, depth: usize, max_stack: &mut usize) -> u16 {
    *max_stack = (*max_stack).max(depth + 1);
    let (op, mask) = match e {
        Expr::Var(i) => (Op::Var(*i), 0),
        Expr::Param(i) => (Op::Param(*i), 1u16 << i),
        Expr::Const(c) => (Op::Const(*c), 0),
        Expr::Unary(op, c) => {
            let m = compile_into(c, code, depth, max_stack);
            (Op::Unary(*op), m)
        }
        Expr::Binary(op, l, r) => {
            let ml = compile_into(l, code, depth, max_stack);
            let mr = compile_into(r, code, depth + 1, max_stack);
            (Op::Binary(*op), ml | mr)
        }
    };
    code.push(Instr { op, mask });
    mask
}

// d op(a) / da, given a and op(a).
fn unary_derivative(op: UnaryOp, a: f64, v: f64) -> f64 {
    match op {
        UnaryOp::Neg => -1.0,
        UnaryOp::Sin => a.cos(),
        UnaryOp::Cos => -a.sin(),
        UnaryOp::Tan => 1.0 + v * v,
        UnaryOp::Exp => v,
        UnaryOp::Log => 1.0 / a,
        UnaryOp::Sqrt => 0.5 / v,
        // Subgradient 0 at the kink.
        UnaryOp::Abs => {
            if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryOp::Tanh => 1.0 - v * v,
    }
}

// (d/da, d/db) of a op b.
fn binary_partials(op: BinaryOp, a: f64, b: f64, v: f64) -> (f64, f64) {
    match op {
        BinaryOp::Add => (1.0, 1.0),
        BinaryOp::Sub => (1.0, -1.0),
        BinaryOp::Mul => (b, a),
        BinaryOp::Div => (1.0 / b, -a / (b * b)),
        BinaryOp::Pow => {
            let da = if b == 0.0 { 0.0 } else { b * a.powf(b - 1.0) };
            (da, v * a.ln())
        }
    }
}

/// Row-major n x [`MAX_NPARAMS`] matrix of dŷ_i/dparams_j.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    rows: usize,
    data: Vec<f64>,
}

impl Jacobian {
    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn get(&self, row: usize, param: usize) -> f64 {
        self.data[row * MAX_NPARAMS + param]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * MAX_NPARAMS..(row + 1) * MAX_NPARAMS]
    }

    pub fn column(&self, param: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.get(i, param))
    }
}

/// Evaluate `expr` on every row of `table`. Domain violations produce
/// non-finite entries.
pub fn eval_batch(expr: &Expr, table: &DataTable, params: &Params) -> Vec<f64> {
    Tape::compile(expr).eval_table(table, params)
}

/// Evaluate at a single input vector.
pub fn eval_point(expr: &Expr, inputs: &[f64], params: &Params) -> f64 {
    Tape::compile(expr).eval(inputs, params)
}

/// Jacobian of predictions with respect to the parameter vector.
pub fn grad_params(expr: &Expr, table: &DataTable, params: &Params) -> Jacobian {
    Tape::compile(expr).jacobian(table, params).1
}
