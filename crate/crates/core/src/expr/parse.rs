use std::collections::HashMap;
use std::fmt;

use super::{BinaryOp, Expr, UnaryOp, DEFAULT_MAX_DEPTH, MAX_NPARAMS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind} at position {position}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Byte offset into the input.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Empty,
    Syntax(String),
    UnknownIdentifier(String),
    ParamIndexOutOfRange(usize),
    DepthOverflow(usize),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Empty => write!(f, "empty expression"),
            ParseErrorKind::Syntax(msg) => write!(f, "syntax error: {msg}"),
            ParseErrorKind::UnknownIdentifier(name) => write!(f, "unknown identifier `{name}`"),
            ParseErrorKind::ParamIndexOutOfRange(i) => write!(
                f,
                "parameter index {i} out of range (at most {MAX_NPARAMS} parameters, params[0]..params[{}])",
                MAX_NPARAMS - 1
            ),
            ParseErrorKind::DepthOverflow(max) => {
                write!(f, "expression nesting exceeds maximum depth {max}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions<'a> {
    pub max_depth: usize,
    /// Named sub-expressions that identifiers may refer to (local
    /// assignments inside a function body).
    pub bindings: Option<&'a HashMap<String, Expr>>,
}

impl Default for ParseOptions<'_> {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            bindings: None,
        }
    }
}

/// Parse DSL text against an ordered variable list.
pub fn parse(text: &str, variables: &[String]) -> Result<Expr, ParseError> {
    parse_with(text, variables, &ParseOptions::default())
}

pub fn parse_with(
    text: &str,
    variables: &[String],
    options: &ParseOptions<'_>,
) -> Result<Expr, ParseError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(ParseError {
            kind: ParseErrorKind::Empty,
            position: 0,
        });
    }
    let mut p = Parser {
        tokens,
        pos: 0,
        end: text.len(),
        variables,
        options,
        nesting: 0,
    };
    let expr = p.expr()?;
    if let Some(tok) = p.peek() {
        return Err(p.syntax(tok.pos, format!("unexpected {}", tok.kind)));
    }
    if expr.depth() > options.max_depth {
        return Err(ParseError {
            kind: ParseErrorKind::DepthOverflow(options.max_depth),
            position: 0,
        });
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Pow,
    LParen,
    RParen,
    LBracket,
    RBracket,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Number(n) => write!(f, "number {n}"),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Plus => f.write_str("`+`"),
            TokenKind::Minus => f.write_str("`-`"),
            TokenKind::Star => f.write_str("`*`"),
            TokenKind::Slash => f.write_str("`/`"),
            TokenKind::Pow => f.write_str("`**`"),
            TokenKind::LParen => f.write_str("`(`"),
            TokenKind::RParen => f.write_str("`)`"),
            TokenKind::LBracket => f.write_str("`[`"),
            TokenKind::RBracket => f.write_str("`]`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push(Token { kind: TokenKind::Plus, pos: start }),
            b'-' => out.push(Token { kind: TokenKind::Minus, pos: start }),
            b'*' => {
                if bytes.get(i + 1) == Some(&b'*') {
                    i += 1;
                    out.push(Token { kind: TokenKind::Pow, pos: start });
                } else {
                    out.push(Token { kind: TokenKind::Star, pos: start });
                }
            }
            b'^' => out.push(Token { kind: TokenKind::Pow, pos: start }),
            b'/' => out.push(Token { kind: TokenKind::Slash, pos: start }),
            b'(' => out.push(Token { kind: TokenKind::LParen, pos: start }),
            b')' => out.push(Token { kind: TokenKind::RParen, pos: start }),
            b'[' => out.push(Token { kind: TokenKind::LBracket, pos: start }),
            b']' => out.push(Token { kind: TokenKind::RBracket, pos: start }),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let value: f64 = lit.parse().map_err(|_| ParseError {
                    kind: ParseErrorKind::Syntax(format!("invalid number `{lit}`")),
                    position: start,
                })?;
                if !value.is_finite() {
                    return Err(ParseError {
                        kind: ParseErrorKind::Syntax(format!("non-finite number `{lit}`")),
                        position: start,
                    });
                }
                out.push(Token {
                    kind: TokenKind::Number(value),
                    pos: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.')
                {
                    i += 1;
                }
                let ident = &text[start..i];
                // Accept numpy/math qualified names for the built-in functions.
                let ident = ["np.", "numpy.", "math."]
                    .iter()
                    .find_map(|prefix| ident.strip_prefix(prefix))
                    .unwrap_or(ident);
                out.push(Token {
                    kind: TokenKind::Ident(ident.to_string()),
                    pos: start,
                });
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    kind: ParseErrorKind::Syntax(format!("unexpected character `{ch}`")),
                    position: start,
                });
            }
        }
        i += 1;
    }
    Ok(out)
}

// Recursion guard, independent of the tree-depth limit: redundant
// parentheses nest the parser without deepening the tree.
const MAX_NESTING: usize = 256;

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
    variables: &'a [String],
    options: &'a ParseOptions<'a>,
    nesting: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self) -> Option<&TokenKind> {
        self.peek().map(|t| &t.kind)
    }

    fn here(&self) -> usize {
        self.peek().map(|t| t.pos).unwrap_or(self.end)
    }

    fn syntax(&self, position: usize, msg: String) -> ParseError {
        ParseError {
            kind: ParseErrorKind::Syntax(msg),
            position,
        }
    }

    fn expect(&mut self, kind: TokenKind) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.syntax(t.pos, format!("expected {kind}, found {}", t.kind))),
            None => Err(self.syntax(self.end, format!("expected {kind}, found end of input"))),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(ParseError {
                kind: ParseErrorKind::DepthOverflow(self.options.max_depth),
                position: self.here(),
            });
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek_kind() {
                Some(TokenKind::Plus) => BinaryOp::Add,
                Some(TokenKind::Minus) => BinaryOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_kind() {
                Some(TokenKind::Star) => BinaryOp::Mul,
                Some(TokenKind::Slash) => BinaryOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let out = match self.peek_kind() {
            Some(TokenKind::Minus) => {
                self.pos += 1;
                Expr::unary(UnaryOp::Neg, self.unary()?)
            }
            Some(TokenKind::Plus) => {
                self.pos += 1;
                self.unary()?
            }
            _ => self.power()?,
        };
        self.nesting -= 1;
        Ok(out)
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some(TokenKind::Pow) = self.peek_kind() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.syntax(self.end, "unexpected end of input".into()));
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Number(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::Ident(name) => self.identifier(name, tok.pos),
            other => Err(self.syntax(tok.pos, format!("unexpected {other}"))),
        }
    }

    fn identifier(&mut self, name: String, at: usize) -> Result<Expr, ParseError> {
        if name == "params" {
            self.expect(TokenKind::LBracket)?;
            let idx_pos = self.here();
            let idx = match self.peek_kind() {
                Some(TokenKind::Number(v)) if v.fract() == 0.0 && *v >= 0.0 => *v,
                _ => {
                    return Err(self.syntax(idx_pos, "expected integer parameter index".into()));
                }
            };
            self.pos += 1;
            self.expect(TokenKind::RBracket)?;
            if idx >= MAX_NPARAMS as f64 {
                return Err(ParseError {
                    kind: ParseErrorKind::ParamIndexOutOfRange(idx as usize),
                    position: idx_pos,
                });
            }
            return Ok(Expr::Param(idx as usize));
        }
        if let Some(TokenKind::LParen) = self.peek_kind() {
            let Some(op) = UnaryOp::from_name(&name) else {
                return Err(ParseError {
                    kind: ParseErrorKind::UnknownIdentifier(name),
                    position: at,
                });
            };
            self.pos += 1;
            let arg = self.expr()?;
            self.expect(TokenKind::RParen)?;
            return Ok(Expr::unary(op, arg));
        }
        if let Some(i) = self.variables.iter().position(|v| *v == name) {
            return Ok(Expr::Var(i));
        }
        if let Some(bound) = self.options.bindings.and_then(|b| b.get(&name)) {
            return Ok(bound.clone());
        }
        if name == "pi" {
            return Ok(Expr::Const(std::f64::consts::PI));
        }
        Err(ParseError {
            kind: ParseErrorKind::UnknownIdentifier(name),
            position: at,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn linear_skeleton() {
        let e = parse("params[0]*x + params[1]", &vars(&["x"])).unwrap();
        assert_eq!(
            e,
            Expr::binary(
                BinaryOp::Add,
                Expr::binary(BinaryOp::Mul, Expr::Param(0), Expr::Var(0)),
                Expr::Param(1)
            )
        );
    }

    #[test]
    fn oscillator_terms() {
        let e = parse("params[0]*sin(x) - params[1]*v**3", &vars(&["x", "t", "v"])).unwrap();
        let expected = Expr::binary(
            BinaryOp::Sub,
            Expr::binary(
                BinaryOp::Mul,
                Expr::Param(0),
                Expr::unary(UnaryOp::Sin, Expr::Var(0)),
            ),
            Expr::binary(
                BinaryOp::Mul,
                Expr::Param(1),
                Expr::binary(BinaryOp::Pow, Expr::Var(2), Expr::Const(3.0)),
            ),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn param_index_limit() {
        let err = parse("params[10]*x", &vars(&["x"])).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::ParamIndexOutOfRange(10));
        assert_eq!(err.position, 7);
        assert!(parse("params[9]*x", &vars(&["x"])).is_ok());
    }

    #[test]
    fn precedence_and_associativity() {
        let v = vars(&["a", "b", "c"]);
        // pow binds tighter than unary minus
        assert_eq!(
            parse("-a**2", &v).unwrap(),
            Expr::unary(
                UnaryOp::Neg,
                Expr::binary(BinaryOp::Pow, Expr::Var(0), Expr::Const(2.0))
            )
        );
        // pow is right-associative
        assert_eq!(
            parse("a**b**c", &v).unwrap(),
            Expr::binary(
                BinaryOp::Pow,
                Expr::Var(0),
                Expr::binary(BinaryOp::Pow, Expr::Var(1), Expr::Var(2))
            )
        );
        // sub and div are left-associative
        assert_eq!(
            parse("a-b-c", &v).unwrap(),
            Expr::binary(
                BinaryOp::Sub,
                Expr::binary(BinaryOp::Sub, Expr::Var(0), Expr::Var(1)),
                Expr::Var(2)
            )
        );
        assert_eq!(
            parse("a/b*c", &v).unwrap(),
            Expr::binary(
                BinaryOp::Mul,
                Expr::binary(BinaryOp::Div, Expr::Var(0), Expr::Var(1)),
                Expr::Var(2)
            )
        );
        assert_eq!(parse("a^2", &v).unwrap(), parse("a**2", &v).unwrap());
    }

    #[test]
    fn numpy_prefixes_and_scientific_literals() {
        let v = vars(&["x"]);
        assert_eq!(parse("np.exp(x)", &v).unwrap(), parse("exp(x)", &v).unwrap());
        assert_eq!(parse("1.5e-3", &v).unwrap(), Expr::Const(1.5e-3));
        assert_eq!(parse("2E+2", &v).unwrap(), Expr::Const(200.0));
    }

    #[test]
    fn errors_carry_positions() {
        let v = vars(&["x"]);
        let err = parse("params[0]*", &v).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Syntax(_)));
        assert_eq!(err.position, 10);
        let err = parse("x + y", &v).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("y".into()));
        assert_eq!(err.position, 4);
        let err = parse("foo(x)", &v).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("foo".into()));
        let err = parse("  ", &v).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Empty);
        let err = parse("(x", &v).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Syntax(_)));
        let err = parse("x $ 2", &v).unwrap_err();
        assert_eq!(err.position, 2);
        assert!(parse("x x", &v).is_err());
    }

    #[test]
    fn depth_limit() {
        let v = vars(&["x"]);
        let deep = format!("{}x{}", "sin(".repeat(40), ")".repeat(40));
        let err = parse(&deep, &v).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DepthOverflow(DEFAULT_MAX_DEPTH));
        // redundant parentheses do not count toward tree depth
        let parens = format!("{}x{}", "(".repeat(100), ")".repeat(100));
        assert_eq!(parse(&parens, &v).unwrap(), Expr::Var(0));
        let absurd = format!("{}x{}", "(".repeat(5000), ")".repeat(5000));
        assert!(matches!(
            parse(&absurd, &v).unwrap_err().kind,
            ParseErrorKind::DepthOverflow(_)
        ));
    }

    #[test]
    fn bindings_resolve_local_names() {
        let v = vars(&["x"]);
        let mut b = HashMap::new();
        b.insert("k".to_string(), parse("params[0]*x", &v).unwrap());
        let opts = ParseOptions {
            bindings: Some(&b),
            ..Default::default()
        };
        let e = parse_with("k + 1", &v, &opts).unwrap();
        assert_eq!(e, parse("params[0]*x + 1", &v).unwrap());
    }
}
