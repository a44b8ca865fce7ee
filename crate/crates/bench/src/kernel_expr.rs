//! Plain-text kernel expressions such as
//! `matern32(var=1.0, len=2.5) + eq(var=1.0, len=100, order=10)`.
//!
//! Terms are `matern12`, `matern32`, `matern52` and `eq`. Every term takes
//! `var` and `len` (default 1); `eq` also takes `order` (default 10). A term
//! without arguments may omit the parentheses.

use std::fmt;

use spingp::kernel::{Hyperparameters, KernelSpec};

use crate::error::{BenchError, Result};

pub const DEFAULT_EQ_ORDER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TermKind {
    Matern12,
    Matern32,
    Matern52,
    Eq { order: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub kind: TermKind,
    pub var: f64,
    pub len: f64,
}

/// A parsed kernel expression: a sum of one or more terms.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelExpr {
    pub terms: Vec<Term>,
}

impl KernelExpr {
    pub fn parse(src: &str) -> Result<Self> {
        Parser { src, pos: 0 }.expr()
    }

    pub fn spec(&self) -> KernelSpec {
        let leaf = |t: &Term| match t.kind {
            TermKind::Matern12 => KernelSpec::Matern12,
            TermKind::Matern32 => KernelSpec::Matern32,
            TermKind::Matern52 => KernelSpec::Matern52,
            TermKind::Eq { order } => KernelSpec::EqApprox { order },
        };
        match self.terms.as_slice() {
            [t] => leaf(t),
            ts => KernelSpec::Sum(ts.iter().map(leaf).collect()),
        }
    }

    /// Hyperparameters in the order expected by [`KernelSpec::param_names`].
    pub fn theta(&self) -> Hyperparameters {
        Hyperparameters::new(self.terms.iter().flat_map(|t| [t.var, t.len]).collect())
    }

    /// The same structure with the values of `theta`.
    pub fn with_theta(&self, theta: &Hyperparameters) -> Self {
        let v = theta.values();
        assert_eq!(v.len(), 2 * self.terms.len(), "hyperparameter count");
        let terms = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| Term {
                var: v[2 * i],
                len: v[2 * i + 1],
                ..*t
            })
            .collect();
        Self { terms }
    }

    pub fn state_dim(&self) -> usize {
        self.spec().state_dim()
    }
}

impl fmt::Display for KernelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            match t.kind {
                TermKind::Matern12 => write!(f, "matern12(var={}, len={})", t.var, t.len)?,
                TermKind::Matern32 => write!(f, "matern32(var={}, len={})", t.var, t.len)?,
                TermKind::Matern52 => write!(f, "matern52(var={}, len={})", t.var, t.len)?,
                TermKind::Eq { order } => write!(f, "eq(var={}, len={}, order={})", t.var, t.len, order)?,
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for KernelExpr {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(BenchError::KernelExpr {
            column: self.pos + 1,
            message: message.into(),
        })
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn word(&mut self) -> &str {
        self.skip_ws();
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.rest().len());
        self.pos += len;
        &self.src[start..self.pos]
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')))
            .unwrap_or(self.rest().len());
        let text = &self.rest()[..len];
        match text.parse::<f64>() {
            Ok(v) => {
                self.pos += len;
                Ok(v)
            }
            Err(_) => self.err(format!("expected a number, found `{text}`")),
        }
    }

    fn expr(mut self) -> Result<KernelExpr> {
        let mut terms = vec![self.term()?];
        while self.eat('+') {
            terms.push(self.term()?);
        }
        self.skip_ws();
        if !self.rest().is_empty() {
            return self.err(format!("unexpected `{}`", self.rest()));
        }
        Ok(KernelExpr { terms })
    }

    fn term(&mut self) -> Result<Term> {
        self.skip_ws();
        let start = self.pos;
        let name = self.word().to_ascii_lowercase();
        let mut kind = match name.as_str() {
            "matern12" => TermKind::Matern12,
            "matern32" => TermKind::Matern32,
            "matern52" => TermKind::Matern52,
            "eq" | "rbf" => TermKind::Eq {
                order: DEFAULT_EQ_ORDER,
            },
            "" => return self.err("expected a kernel name"),
            other => {
                self.pos = start;
                return self.err(format!("unknown kernel `{other}`"));
            }
        };
        let mut term = Term {
            kind,
            var: 1.0,
            len: 1.0,
        };
        if !self.eat('(') {
            return Ok(term);
        }
        if self.eat(')') {
            return Ok(term);
        }
        loop {
            let key = self.word().to_ascii_lowercase();
            if !self.eat('=') {
                return self.err(format!("expected `=` after `{key}`"));
            }
            let value = self.number()?;
            match (key.as_str(), &mut kind) {
                ("var" | "variance", _) => term.var = value,
                ("len" | "lengthscale", _) => term.len = value,
                ("order", TermKind::Eq { order }) => {
                    if value.fract() != 0.0 || value < 0.0 {
                        return self.err(format!("order must be a whole number, got {value}"));
                    }
                    *order = value as usize;
                }
                _ => return self.err(format!("`{key}` is not an argument of `{name}`")),
            }
            if self.eat(',') {
                continue;
            }
            if self.eat(')') {
                break;
            }
            return self.err("expected `,` or `)`");
        }
        term.kind = kind;
        Ok(term)
    }
}

/// Kernel with state dimension `b` for the block-size sweep: a sum of
/// Matérn-3/2 terms with spread lengthscales, plus a Matérn-1/2 term when
/// `b` is odd.
pub fn kernel_for_block_size(b: usize) -> KernelExpr {
    assert!(b >= 1, "block size must be positive");
    let pairs = b / 2;
    let mut terms: Vec<Term> = (0..pairs)
        .map(|k| Term {
            kind: TermKind::Matern32,
            var: 1.0 / pairs.max(1) as f64,
            len: 2.0 * 1.6f64.powi(k as i32),
        })
        .collect();
    if b % 2 == 1 {
        terms.push(Term {
            kind: TermKind::Matern12,
            var: 0.5,
            len: 3.0,
        });
    }
    KernelExpr { terms }
}
