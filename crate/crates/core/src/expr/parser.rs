//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr    := term (('+'|'-') term)*
//! term    := factor (('*'|'/') factor)*
//! factor  := '-' factor | power
//! power   := atom ('^' factor)?          // right-associative
//! atom    := number | group '[' int ']' | 'gamma'
//!          | func '(' expr ')' | '(' expr ')'
//! group   := 'theta' | 'w' | 'zp' | 'zm' | 's' | 'aux'
//! func    := 'exp' | 'log' | 'sqrt' | 'sin' | 'cos'
//! ```
//!
//! Constant subtrees are folded as the tree is built, and `^` requires its
//! exponent to fold to a constant.

use super::{BinOp, Expr, UnaryOp, VarGroup, VarRef};
use crate::scalar::Scalar;

/// Syntax error with the byte offset it was detected at.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("syntax error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        ParseError {
            offset,
            message: message.into(),
        }
    }
}

/// Parses `text` into an expression tree, folding constants.
pub fn parse<T: Scalar>(text: &str) -> Result<Expr<T>, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(ParseError::new(p.pos, "unexpected trailing input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(ParseError::new(
                self.pos,
                format!("expected `{}`", c as char),
            ))
        }
    }

    fn expr<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = fold_bin(BinOp::Add, lhs, rhs);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = fold_bin(BinOp::Sub, lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = fold_bin(BinOp::Mul, lhs, rhs);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = fold_bin(BinOp::Div, lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        if self.eat(b'-') {
            let inner = self.factor()?;
            return Ok(fold_un(UnaryOp::Neg, inner));
        }
        self.power()
    }

    fn power<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let expo_at = {
                self.skip_ws();
                self.pos
            };
            let expo = self.factor()?;
            if !matches!(expo, Expr::Constant(_)) {
                return Err(ParseError::new(expo_at, "exponent must be a constant"));
            }
            return Ok(fold_bin(BinOp::Pow, base, expo));
        }
        Ok(base)
    }

    fn atom<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(c) => Err(ParseError::new(
                self.pos,
                format!("unexpected character `{}`", c as char),
            )),
            None => Err(ParseError::new(self.pos, "unexpected end of input")),
        }
    }

    fn number<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit() || *c == b'.')
        {
            self.pos += 1;
        }
        if self.src.get(self.pos).is_some_and(|c| *c == b'e' || *c == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.src.get(self.pos).is_some_and(|c| *c == b'+' || *c == b'-') {
                self.pos += 1;
            }
            if self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                    self.pos += 1;
                }
            } else {
                // not an exponent after all (e.g. `2*exp(x)` never reaches
                // here, but `2e` should fail cleanly)
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text
            .parse()
            .map_err(|_| ParseError::new(start, format!("invalid number `{text}`")))?;
        Ok(Expr::c(value))
    }

    fn identifier<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if let Some(group) = group_by_name(name) {
            if group == VarGroup::Gamma {
                if self.peek() == Some(b'[') {
                    return Err(ParseError::new(self.pos, "gamma takes no index"));
                }
                return Ok(Expr::Variable(VarRef::new(group, 0)));
            }
            self.expect(b'[')?;
            let index = self.index()?;
            self.expect(b']')?;
            return Ok(Expr::Variable(VarRef::new(group, index)));
        }
        if let Some(op) = func_by_name(name) {
            self.expect(b'(')?;
            let inner = self.expr()?;
            self.expect(b')')?;
            return Ok(fold_un(op, inner));
        }
        Err(ParseError::new(start, format!("unknown identifier `{name}`")))
    }

    fn index(&mut self) -> Result<usize, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ParseError::new(start, "expected index"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse()
            .map_err(|_| ParseError::new(start, format!("invalid index `{text}`")))
    }
}

fn group_by_name(name: &str) -> Option<VarGroup> {
    Some(match name {
        "theta" => VarGroup::Theta,
        "w" => VarGroup::W,
        "zp" => VarGroup::Zp,
        "zm" => VarGroup::Zm,
        "s" => VarGroup::S,
        "gamma" => VarGroup::Gamma,
        "aux" => VarGroup::Aux,
        _ => return None,
    })
}

fn func_by_name(name: &str) -> Option<UnaryOp> {
    Some(match name {
        "exp" => UnaryOp::Exp,
        "log" => UnaryOp::Log,
        "sqrt" => UnaryOp::Sqrt,
        "sin" => UnaryOp::Sin,
        "cos" => UnaryOp::Cos,
        _ => return None,
    })
}

fn fold_bin<T: Scalar>(op: BinOp, l: Expr<T>, r: Expr<T>) -> Expr<T> {
    Expr::Binary(op, Box::new(l), Box::new(r)).fold()
}

fn fold_un<T: Scalar>(op: UnaryOp, c: Expr<T>) -> Expr<T> {
    Expr::Unary(op, Box::new(c)).fold()
}
