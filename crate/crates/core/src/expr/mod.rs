//! Equation skeletons: a small closed-form expression language over named
//! variables, tunable parameters `params[i]` and numeric constants.
//!
//! The textual form is the wire format used inside tool calls and buffer
//! snapshots. It is an infix grammar with Python-style `**` for powers:
//!
//! ```text
//! params[0]*sin(x) - params[1]*v**3 + 2.5
//! ```

mod canon;
mod eval;
mod parse;

use std::collections::BTreeSet;
use std::fmt;

pub use canon::{canonicalize, skeleton_equal, CanonicalForm};
pub use eval::{eval_batch, eval_point, grad_params, Jacobian, Tape};
pub use parse::{parse, parse_with, ParseError, ParseErrorKind, ParseOptions};

/// Number of tunable parameter slots available to a skeleton.
pub const MAX_NPARAMS: usize = 10;

/// Default maximum tree depth accepted by the parser.
pub const DEFAULT_MAX_DEPTH: usize = 30;

/// Parameter vector handed to evaluation and fitting.
pub type Params = [f64; MAX_NPARAMS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl UnaryOp {
    /// Function-call spelling; `None` for prefix negation.
    pub fn name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Neg => None,
            UnaryOp::Sin => Some("sin"),
            UnaryOp::Cos => Some("cos"),
            UnaryOp::Tan => Some("tan"),
            UnaryOp::Exp => Some("exp"),
            UnaryOp::Log => Some("log"),
            UnaryOp::Sqrt => Some("sqrt"),
            UnaryOp::Abs => Some("abs"),
            UnaryOp::Tanh => Some("tanh"),
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            "tanh" => UnaryOp::Tanh,
            _ => return None,
        })
    }

    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Neg => -a,
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Tan => a.tan(),
            UnaryOp::Exp => a.exp(),
            // ln(0) = -inf and ln(<0) = NaN already match real-valued semantics.
            UnaryOp::Log => a.ln(),
            UnaryOp::Sqrt => a.sqrt(),
            UnaryOp::Abs => a.abs(),
            UnaryOp::Tanh => a.tanh(),
        }
    }

    pub const ALL: [UnaryOp; 9] = [
        UnaryOp::Neg,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tan,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sqrt,
        UnaryOp::Abs,
        UnaryOp::Tanh,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "**",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Pow => a.powf(b),
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 4,
        }
    }

    pub const ALL: [BinaryOp; 5] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Pow,
    ];
}

/// Expression tree. Variables are indices into the problem's ordered
/// variable list; parameters are indices into a [`Params`] vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(usize),
    Param(usize),
    Const(f64),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn unary(op: UnaryOp, child: Expr) -> Expr {
        Expr::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary(op, Box::new(left), Box::new(right))
    }

    /// Total node count.
    pub fn complexity(&self) -> usize {
        match self {
            Expr::Var(_) | Expr::Param(_) | Expr::Const(_) => 1,
            Expr::Unary(_, c) => 1 + c.complexity(),
            Expr::Binary(_, l, r) => 1 + l.complexity() + r.complexity(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Var(_) | Expr::Param(_) | Expr::Const(_) => 1,
            Expr::Unary(_, c) => 1 + c.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Sorted distinct parameter indices.
    pub fn params_used(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Param(i) = e {
                out.insert(*i);
            }
        });
        out
    }

    /// Number of distinct parameter slots referenced.
    pub fn param_count(&self) -> usize {
        self.params_used().len()
    }

    pub fn vars_used(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                out.insert(*i);
            }
        });
        out
    }

    pub fn max_var_index(&self) -> Option<usize> {
        self.vars_used().into_iter().next_back()
    }

    /// Pre-order traversal.
    pub fn visit<F: FnMut(&Expr)>(&self, f: &mut F) {
        f(self);
        match self {
            Expr::Unary(_, c) => c.visit(f),
            Expr::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            _ => {}
        }
    }

    /// Rebuild the tree replacing every leaf through `f`.
    pub fn map_leaves<F: FnMut(&Expr) -> Expr>(&self, f: &mut F) -> Expr {
        match self {
            Expr::Var(_) | Expr::Param(_) | Expr::Const(_) => f(self),
            Expr::Unary(op, c) => Expr::unary(*op, c.map_leaves(f)),
            Expr::Binary(op, l, r) => Expr::binary(*op, l.map_leaves(f), r.map_leaves(f)),
        }
    }

    /// Renumber parameters through `map` (old index -> new index).
    pub fn relabel_params(&self, map: &[Option<usize>; MAX_NPARAMS]) -> Expr {
        self.map_leaves(&mut |leaf| match leaf {
            Expr::Param(i) => Expr::Param(map[*i].unwrap_or(*i)),
            other => other.clone(),
        })
    }

    /// Render with the given variable names. Output reparses to a tree with
    /// the same canonical form.
    pub fn to_text(&self, vars: &[String]) -> String {
        let mut s = String::new();
        write_expr(self, vars, &mut s, 0);
        s
    }

    /// Rendering helper that implements `Display` against a name list.
    pub fn display<'a>(&'a self, vars: &'a [String]) -> DisplayExpr<'a> {
        DisplayExpr { expr: self, vars }
    }
}

pub struct DisplayExpr<'a> {
    expr: &'a Expr,
    vars: &'a [String],
}

impl fmt::Display for DisplayExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.expr.to_text(self.vars))
    }
}

/// Shortest round-trip rendering of a constant.
pub(crate) fn format_const(c: f64) -> String {
    let a = c.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{c:e}")
    } else {
        let s = format!("{c}");
        if s.contains('.') || s.contains("inf") || s.contains("NaN") {
            s
        } else {
            format!("{s}.0")
        }
    }
}

// Binding strength of the node's own syntax, used to decide parentheses.
fn node_prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, _, _) => op.precedence(),
        Expr::Unary(UnaryOp::Neg, _) => 3,
        Expr::Const(c) if c.is_sign_negative() => 3,
        _ => 5,
    }
}

fn write_expr(e: &Expr, vars: &[String], out: &mut String, min_prec: u8) {
    let prec = node_prec(e);
    let paren = prec < min_prec;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Var(i) => match vars.get(*i) {
            Some(name) => out.push_str(name),
            None => out.push_str(&format!("x{i}")),
        },
        Expr::Param(i) => out.push_str(&format!("params[{i}]")),
        Expr::Const(c) => out.push_str(&format_const(*c)),
        Expr::Unary(UnaryOp::Neg, c) => {
            out.push('-');
            // The operand of prefix minus binds at least as tight as a power.
            write_expr(c, vars, out, 4);
        }
        Expr::Unary(op, c) => {
            out.push_str(op.name().unwrap_or_default());
            out.push('(');
            write_expr(c, vars, out, 0);
            out.push(')');
        }
        Expr::Binary(op, l, r) => {
            let p = op.precedence();
            let (lmin, rmin) = match op {
                BinaryOp::Add | BinaryOp::Mul => (p, p + 1),
                BinaryOp::Sub | BinaryOp::Div => (p, p + 1),
                // Right-associative; a negated base must be parenthesized.
                BinaryOp::Pow => (5, 3),
            };
            write_expr(l, vars, out, lmin);
            match op {
                BinaryOp::Add | BinaryOp::Sub => {
                    out.push(' ');
                    out.push_str(op.symbol());
                    out.push(' ');
                }
                _ => out.push_str(op.symbol()),
            }
            write_expr(r, vars, out, rmin);
        }
    }
    if paren {
        out.push(')');
    }
}
