//! A small arithmetic expression language for coefficient entries.
//!
//! Grammar: numbers, `pi`, variables `y1..yd`, binary `+ - * / ^`, unary
//! minus, parentheses and the functions `sin`, `cos`, `exp`, `sqrt`, `abs`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unexpected character '{ch}' at offset {pos} in \"{src}\"")]
    UnexpectedChar { src: String, ch: char, pos: usize },
    #[error("unexpected end of expression \"{0}\"")]
    UnexpectedEnd(String),
    #[error("unexpected token '{tok}' in \"{src}\"")]
    UnexpectedToken { src: String, tok: String },
    #[error("unknown identifier '{name}' in \"{src}\"")]
    UnknownIdent { src: String, name: String },
    #[error("variable '{name}' exceeds dimension {dim} in \"{src}\"")]
    VariableOutOfRange { src: String, name: String, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

/// A parsed expression in the variables `y1..yd`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part: 1e-3, 2.5E+4
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| ParseError::UnexpectedChar {
                src: src.to_string(),
                ch: c,
                pos: start,
            })?;
            out.push(Tok::Num(value));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(ParseError::UnexpectedChar {
                src: src.to_string(),
                ch: c,
                pos: i,
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Tok>,
    pos: usize,
    dim: usize,
    var: char,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Result<Tok, ParseError> {
        let t = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or_else(|| ParseError::UnexpectedEnd(self.src.to_string()))?;
        self.pos += 1;
        Ok(t)
    }

    fn unexpected(&self, tok: &Tok) -> ParseError {
        ParseError::UnexpectedToken {
            src: self.src.to_string(),
            tok: match tok {
                Tok::Num(v) => v.to_string(),
                Tok::Ident(s) => s.clone(),
                Tok::Sym(c) => c.to_string(),
            },
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Sym(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { Op::Add } else { Op::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Sym(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { Op::Mul } else { Op::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(Tok::Sym('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Sym('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // power := atom ('^' unary)?   (right associative)
    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if let Some(Tok::Sym('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let tok = self.next()?;
        match tok {
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::Sym('(') => {
                let inner = self.expr()?;
                match self.next()? {
                    Tok::Sym(')') => Ok(inner),
                    other => Err(self.unexpected(&other)),
                }
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "sqrt" => Some(Func::Sqrt),
                    "abs" => Some(Func::Abs),
                    _ => None,
                };
                if let Some(func) = func {
                    match self.next()? {
                        Tok::Sym('(') => {}
                        other => return Err(self.unexpected(&other)),
                    }
                    let arg = self.expr()?;
                    match self.next()? {
                        Tok::Sym(')') => {}
                        other => return Err(self.unexpected(&other)),
                    }
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Node::Const(std::f64::consts::PI));
                }
                if let Some(k) = name.strip_prefix(self.var).and_then(|s| s.parse::<usize>().ok()) {
                    if k == 0 || k > self.dim {
                        return Err(ParseError::VariableOutOfRange {
                            src: self.src.to_string(),
                            name,
                            dim: self.dim,
                        });
                    }
                    return Ok(Node::Var(k - 1));
                }
                Err(ParseError::UnknownIdent {
                    src: self.src.to_string(),
                    name,
                })
            }
            other => Err(self.unexpected(&other)),
        }
    }
}

impl Expr {
    /// Parses `src` as an expression in `dim` variables.
    pub fn parse(src: &str, dim: usize) -> Result<Self, ParseError> {
        Self::parse_in(src, dim, 'y')
    }

    /// As [`Expr::parse`] with variables named `{var}1..{var}d`.
    pub fn parse_in(src: &str, dim: usize, var: char) -> Result<Self, ParseError> {
        let toks = tokenize(src)?;
        let mut p = Parser {
            src,
            toks,
            pos: 0,
            dim,
            var,
        };
        let root = p.expr()?;
        if let Some(t) = p.peek().cloned() {
            return Err(p.unexpected(&t));
        }
        Ok(Self {
            source: src.trim().to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when the expression is the literal constant zero.
    pub fn is_zero_literal(&self) -> bool {
        matches!(self.root, Node::Const(v) if v == 0.0)
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        eval(&self.root, y)
    }
}

fn eval(node: &Node, y: &[f64]) -> f64 {
    match node {
        Node::Const(v) => *v,
        Node::Var(k) => y[*k],
        Node::Neg(a) => -eval(a, y),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, y), eval(b, y));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
                Op::Pow => a.powf(b),
            }
        }
        Node::Call(f, a) => {
            let a = eval(a, y);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn precedence_and_unary() {
        let e = Expr::parse("1 + 2*3 - -4/2", 2).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), 9.0);
        let e = Expr::parse("-2^2", 2).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), -4.0);
        let e = Expr::parse("2^3^2", 2).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), 512.0);
    }

    #[test]
    fn variables_and_functions() {
        let e = Expr::parse("2 + sin(2*pi*y1)", 2).unwrap();
        assert!((e.eval(&[0.25, 0.0]) - 3.0).abs() < 1e-15);
        let e = Expr::parse("exp(y2) * cos(pi*y1)", 2).unwrap();
        assert!((e.eval(&[1.0, 1.0]) + 1f64.exp()).abs() < 1e-14);
        let e = Expr::parse("1.5e-1*y3", 3).unwrap();
        assert!((e.eval(&[0.0, 0.0, 2.0]) - 0.3).abs() < 1e-15);
        assert!((Expr::parse("pi", 2).unwrap().eval(&[0.0, 0.0]) - PI).abs() == 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Expr::parse("y3", 2),
            Err(ParseError::VariableOutOfRange { .. })
        ));
        assert!(matches!(
            Expr::parse("tan(y1)", 2),
            Err(ParseError::UnknownIdent { .. })
        ));
        assert!(matches!(Expr::parse("1 +", 2), Err(ParseError::UnexpectedEnd(_))));
        assert!(matches!(Expr::parse("(1", 2), Err(ParseError::UnexpectedEnd(_))));
        assert!(matches!(
            Expr::parse("1 $ 2", 2),
            Err(ParseError::UnexpectedChar { .. })
        ));
        assert!(Expr::parse("1 2", 2).is_err());
    }

    #[test]
    fn zero_literal() {
        assert!(Expr::parse("0", 2).unwrap().is_zero_literal());
        assert!(!Expr::parse("0*y1", 2).unwrap().is_zero_literal());
    }
}
