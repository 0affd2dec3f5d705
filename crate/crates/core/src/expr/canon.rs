//! Structural normal form for skeletons.
//!
//! Subtraction becomes `a + (-1)*b`, division becomes `a * b**-1`, negation
//! becomes `(-1)*a`. Sums and products are flattened, their constant
//! operands folded, and operands sorted by a total node order. Parameters
//! are then renumbered in order of first occurrence. No distributive or
//! trigonometric rewriting is attempted: equality of normal forms is
//! structural equivalence, not algebraic equivalence.

use std::cmp::Ordering;

use super::{BinaryOp, Expr, UnaryOp, MAX_NPARAMS};

/// A normalized expression plus the parameter renaming that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalForm {
    pub expr: Expr,
    /// `param_map[old] = Some(new)` for every parameter the input used.
    pub param_map: [Option<usize>; MAX_NPARAMS],
}

impl CanonicalForm {
    pub fn to_text(&self, vars: &[String]) -> String {
        self.expr.to_text(vars)
    }

    /// Reorder a parameter vector from the input's labels to canonical labels.
    pub fn remap_params(&self, params: &[f64; MAX_NPARAMS]) -> [f64; MAX_NPARAMS] {
        let mut out = [1.0; MAX_NPARAMS];
        let mut taken = [false; MAX_NPARAMS];
        for (old, new) in self.param_map.iter().enumerate() {
            if let Some(new) = new {
                out[*new] = params[old];
                taken[*new] = true;
            }
        }
        // Unused slots keep their values in order so nothing is lost.
        let mut spare = (0..MAX_NPARAMS).filter(|i| self.param_map[*i].is_none());
        for (slot, t) in taken.iter().enumerate() {
            if !t {
                if let Some(old) = spare.next() {
                    out[slot] = params[old];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Param(usize),
    Unary(UnaryOp, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Mul(Vec<Node>),
    Add(Vec<Node>),
}

fn konst(c: f64) -> Node {
    // -0.0 and 0.0 are the same constant.
    Node::Const(if c == 0.0 { 0.0 } else { c })
}

fn build(e: &Expr) -> Node {
    match e {
        Expr::Const(c) => konst(*c),
        Expr::Var(i) => Node::Var(*i),
        Expr::Param(i) => Node::Param(*i),
        Expr::Unary(UnaryOp::Neg, a) => mul_of(vec![Node::Const(-1.0), build(a)]),
        Expr::Unary(op, a) => unary_of(*op, build(a)),
        Expr::Binary(op, a, b) => {
            let (a, b) = (build(a), build(b));
            match op {
                BinaryOp::Add => add_of(vec![a, b]),
                BinaryOp::Sub => add_of(vec![a, mul_of(vec![Node::Const(-1.0), b])]),
                BinaryOp::Mul => mul_of(vec![a, b]),
                BinaryOp::Div => mul_of(vec![a, pow_of(b, Node::Const(-1.0))]),
                BinaryOp::Pow => pow_of(a, b),
            }
        }
    }
}

fn unary_of(op: UnaryOp, a: Node) -> Node {
    if let Node::Const(c) = a {
        let v = op.apply(c);
        if v.is_finite() {
            return konst(v);
        }
    }
    Node::Unary(op, Box::new(a))
}

fn pow_of(a: Node, b: Node) -> Node {
    if let (Node::Const(x), Node::Const(y)) = (&a, &b) {
        let v = x.powf(*y);
        if v.is_finite() {
            return konst(v);
        }
    }
    Node::Pow(Box::new(a), Box::new(b))
}

fn fold_nary(items: Vec<Node>, is_add: bool) -> Node {
    let identity = if is_add { 0.0 } else { 1.0 };
    let mut rest = Vec::with_capacity(items.len());
    let mut acc: Option<f64> = None;
    let mut unfoldable = Vec::new();
    let mut push = |n: Node, rest: &mut Vec<Node>| match n {
        Node::Const(c) => {
            let next = match acc {
                None => c,
                Some(a) if is_add => a + c,
                Some(a) => a * c,
            };
            if next.is_finite() {
                acc = Some(next);
            } else {
                unfoldable.push(Node::Const(c));
            }
        }
        other => rest.push(other),
    };
    for item in items {
        match item {
            Node::Add(inner) if is_add => inner.into_iter().for_each(|n| push(n, &mut rest)),
            Node::Mul(inner) if !is_add => inner.into_iter().for_each(|n| push(n, &mut rest)),
            other => push(other, &mut rest),
        }
    }
    let mut out = unfoldable;
    if let Some(c) = acc {
        if c != identity || (rest.is_empty() && out.is_empty()) {
            out.push(konst(c));
        }
    }
    out.extend(rest);
    match out.len() {
        0 => Node::Const(identity),
        1 => out.pop().unwrap_or(Node::Const(identity)),
        _ if is_add => Node::Add(out),
        _ => Node::Mul(out),
    }
}

fn add_of(items: Vec<Node>) -> Node {
    fold_nary(items, true)
}

fn mul_of(items: Vec<Node>) -> Node {
    fold_nary(items, false)
}

fn rank(n: &Node) -> u8 {
    match n {
        Node::Const(_) => 0,
        Node::Var(_) => 1,
        Node::Param(_) => 2,
        Node::Unary(..) => 3,
        Node::Pow(..) => 4,
        Node::Mul(_) => 5,
        Node::Add(_) => 6,
    }
}

// Total order over nodes. With `blind`, parameter labels compare equal.
fn compare(a: &Node, b: &Node, blind: bool) -> Ordering {
    rank(a).cmp(&rank(b)).then_with(|| match (a, b) {
        (Node::Const(x), Node::Const(y)) => x.total_cmp(y),
        (Node::Var(x), Node::Var(y)) => x.cmp(y),
        (Node::Param(x), Node::Param(y)) => {
            if blind {
                Ordering::Equal
            } else {
                x.cmp(y)
            }
        }
        (Node::Unary(o1, c1), Node::Unary(o2, c2)) => {
            o1.cmp(o2).then_with(|| compare(c1, c2, blind))
        }
        (Node::Pow(b1, e1), Node::Pow(b2, e2)) => {
            compare(b1, b2, blind).then_with(|| compare(e1, e2, blind))
        }
        (Node::Mul(xs), Node::Mul(ys)) | (Node::Add(xs), Node::Add(ys)) => {
            xs.len().cmp(&ys.len()).then_with(|| {
                xs.iter()
                    .zip(ys)
                    .map(|(x, y)| compare(x, y, blind))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
        }
        _ => Ordering::Equal,
    })
}

fn sort_rec(n: &mut Node) {
    match n {
        Node::Unary(_, c) => sort_rec(c),
        Node::Pow(b, e) => {
            sort_rec(b);
            sort_rec(e);
        }
        Node::Mul(xs) | Node::Add(xs) => {
            xs.iter_mut().for_each(sort_rec);
            xs.sort_by(|a, b| compare(a, b, true).then_with(|| compare(a, b, false)));
        }
        _ => {}
    }
}

fn first_occurrence(n: &Node, map: &mut [Option<usize>; MAX_NPARAMS], next: &mut usize) {
    match n {
        Node::Param(i) => {
            if map[*i].is_none() {
                map[*i] = Some(*next);
                *next += 1;
            }
        }
        Node::Unary(_, c) => first_occurrence(c, map, next),
        Node::Pow(b, e) => {
            first_occurrence(b, map, next);
            first_occurrence(e, map, next);
        }
        Node::Mul(xs) | Node::Add(xs) => xs.iter().for_each(|x| first_occurrence(x, map, next)),
        _ => {}
    }
}

fn relabel(n: &mut Node, map: &[Option<usize>; MAX_NPARAMS]) {
    match n {
        Node::Param(i) => *i = map[*i].unwrap_or(*i),
        Node::Unary(_, c) => relabel(c, map),
        Node::Pow(b, e) => {
            relabel(b, map);
            relabel(e, map);
        }
        Node::Mul(xs) | Node::Add(xs) => xs.iter_mut().for_each(|x| relabel(x, map)),
        _ => {}
    }
}

fn to_expr(n: &Node) -> Expr {
    match n {
        Node::Const(c) => Expr::Const(*c),
        Node::Var(i) => Expr::Var(*i),
        Node::Param(i) => Expr::Param(*i),
        Node::Unary(op, c) => Expr::unary(*op, to_expr(c)),
        Node::Pow(b, e) => Expr::binary(BinaryOp::Pow, to_expr(b), to_expr(e)),
        Node::Mul(xs) => left_fold(xs, BinaryOp::Mul),
        Node::Add(xs) => left_fold(xs, BinaryOp::Add),
    }
}

fn left_fold(xs: &[Node], op: BinaryOp) -> Expr {
    let mut it = xs.iter();
    let first = it.next().map(to_expr).unwrap_or(Expr::Const(0.0));
    it.fold(first, |acc, x| Expr::binary(op, acc, to_expr(x)))
}

const MAX_RELABEL_ROUNDS: usize = 16;

/// Deterministic, idempotent structural normal form.
pub fn canonicalize(expr: &Expr) -> CanonicalForm {
    let mut node = build(expr);
    let mut total: [Option<usize>; MAX_NPARAMS] = [None; MAX_NPARAMS];
    for i in expr.params_used() {
        total[i] = Some(i);
    }
    for _ in 0..MAX_RELABEL_ROUNDS {
        sort_rec(&mut node);
        let mut map = [None; MAX_NPARAMS];
        first_occurrence(&node, &mut map, &mut 0);
        let identity = map.iter().enumerate().all(|(i, m)| m.is_none_or(|m| m == i));
        if identity {
            break;
        }
        relabel(&mut node, &map);
        for t in total.iter_mut() {
            if let Some(cur) = *t {
                *t = Some(map[cur].unwrap_or(cur));
            }
        }
    }
    // Parameters that folded away (e.g. inside a dropped identity) keep no label.
    let surviving = {
        let mut m = [None; MAX_NPARAMS];
        first_occurrence(&node, &mut m, &mut 0);
        m
    };
    for t in total.iter_mut() {
        if let Some(cur) = *t {
            if surviving[cur].is_none() {
                *t = None;
            }
        }
    }
    CanonicalForm {
        expr: to_expr(&node),
        param_map: total,
    }
}

/// Structural equivalence of two skeletons, with parameters compared up
/// to relabeling.
pub fn skeleton_equal(a: &Expr, b: &Expr) -> bool {
    canonicalize(a).expr == canonicalize(b).expr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn vars() -> Vec<String> {
        ["x", "t", "v"].iter().map(|s| s.to_string()).collect()
    }

    fn canon_text(src: &str) -> String {
        let v = vars();
        canonicalize(&parse(src, &v).unwrap()).to_text(&v)
    }

    fn same(a: &str, b: &str) -> bool {
        let v = vars();
        skeleton_equal(&parse(a, &v).unwrap(), &parse(b, &v).unwrap())
    }

    #[test]
    fn commutativity_and_relabeling() {
        assert!(same("params[1] + params[0]*sin(x)", "params[0]*sin(x) + params[1]"));
        assert_eq!(
            canon_text("params[1] + params[0]*sin(x)"),
            canon_text("params[0]*sin(x) + params[1]")
        );
    }

    #[test]
    fn constant_folding() {
        assert_eq!(canon_text("2*3*x"), "6.0*x");
        assert!(same("2*3*x", "6*x"));
        assert_eq!(canon_text("x + 0"), "x");
        assert_eq!(canon_text("1*x"), "x");
        assert_eq!(canon_text("sqrt(4) + x"), "2.0 + x");
        assert_eq!(canon_text("-(-x)"), "x");
    }

    #[test]
    fn no_distributive_rewriting() {
        assert!(!same("x*params[0] + x*params[0]", "2*params[0]*x"));
    }

    #[test]
    fn subtraction_and_division_normalize() {
        assert!(same("x - t", "-t + x"));
        assert!(same("x - t", "x + (-1)*t"));
        assert!(same("x / t", "x * t**-1"));
        assert!(same("x / 2", "0.5*x"));
        assert!(!same("x - t", "t - x"));
        assert!(!same("x / t", "t / x"));
    }

    #[test]
    fn param_map_tracks_renaming() {
        let v = vars();
        let e = parse("params[3] + params[5]*x", &v).unwrap();
        let c = canonicalize(&e);
        assert_eq!(c.param_map[3], Some(0));
        assert_eq!(c.param_map[5], Some(1));
        let mut p = [0.0; MAX_NPARAMS];
        p[3] = 7.0;
        p[5] = 11.0;
        let q = c.remap_params(&p);
        assert_eq!((q[0], q[1]), (7.0, 11.0));
    }

    #[test]
    fn idempotent_on_examples() {
        let v = vars();
        for src in [
            "params[1] + params[0]*sin(x)",
            "params[2]*x*t - params[0]/v + params[1]*exp(-params[3]*t)",
            "(params[0]*x + params[1]*x)*(params[1]*t + params[0]*t)",
            "x/t/v - (x - t)**2",
        ] {
            let once = canonicalize(&parse(src, &v).unwrap());
            let twice = canonicalize(&once.expr);
            assert_eq!(once.expr, twice.expr, "{src}");
            let reparsed = canonicalize(&parse(&once.to_text(&v), &v).unwrap());
            assert_eq!(once.expr, reparsed.expr, "{src}");
        }
    }
}
