//! Closed arithmetic expression language over one variable.
//!
//! This is the "sandbox" that code answers execute in: a candidate program is
//! an expression in `x` built from integer literals, `+ - * /`, unary minus,
//! and parentheses. Evaluation is checked `i64` arithmetic with a step limit,
//! so arbitrary input can never panic, loop, or touch anything outside the
//! interpreter.

/// Why a candidate failed to parse or evaluate. All failures score zero at
/// the reward layer; the detail only matters for diagnostics.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("evaluation step limit exceeded")]
    StepLimit,
}

const MAX_DEPTH: usize = 64;
const MAX_STEPS: u32 = 10_000;

#[derive(Debug)]
enum Expr {
    Literal(i64),
    Variable,
    Negate(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
}

/// Parse and evaluate `src` at the given value of `x`.
pub fn eval(src: &str, x: i64) -> Result<i64, ExprError> {
    let expr = parse(src)?;
    let mut steps = 0u32;
    eval_node(&expr, x, &mut steps)
}

fn parse(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser {
        bytes: src.as_bytes(),
        pos: 0,
    };
    let expr = p.expr(0)?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(ExprError::Parse(format!(
            "unexpected trailing input at byte {}",
            p.pos
        )));
    }
    Ok(expr)
}

fn eval_node(expr: &Expr, x: i64, steps: &mut u32) -> Result<i64, ExprError> {
    *steps += 1;
    if *steps > MAX_STEPS {
        return Err(ExprError::StepLimit);
    }
    match expr {
        Expr::Literal(v) => Ok(*v),
        Expr::Variable => Ok(x),
        Expr::Negate(inner) => eval_node(inner, x, steps)?
            .checked_neg()
            .ok_or(ExprError::Overflow),
        Expr::Add(a, b) => eval_node(a, x, steps)?
            .checked_add(eval_node(b, x, steps)?)
            .ok_or(ExprError::Overflow),
        Expr::Sub(a, b) => eval_node(a, x, steps)?
            .checked_sub(eval_node(b, x, steps)?)
            .ok_or(ExprError::Overflow),
        Expr::Mul(a, b) => eval_node(a, x, steps)?
            .checked_mul(eval_node(b, x, steps)?)
            .ok_or(ExprError::Overflow),
        Expr::Div(a, b) => {
            let lhs = eval_node(a, x, steps)?;
            let rhs = eval_node(b, x, steps)?;
            if rhs == 0 {
                return Err(ExprError::DivisionByZero);
            }
            lhs.checked_div(rhs).ok_or(ExprError::Overflow)
        }
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self, depth: usize) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::Parse("expression too deeply nested".into()));
        }
        let mut lhs = self.term(depth + 1)?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term(depth + 1)?;
            lhs = if op == b'+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self, depth: usize) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::Parse("expression too deeply nested".into()));
        }
        let mut lhs = self.unary(depth + 1)?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary(depth + 1)?;
            lhs = if op == b'*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self, depth: usize) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::Parse("expression too deeply nested".into()));
        }
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Negate(Box::new(self.unary(depth + 1)?)))
            }
            _ => self.atom(depth + 1),
        }
    }

    fn atom(&mut self, depth: usize) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr(depth + 1)?;
                if self.peek() != Some(b')') {
                    return Err(ExprError::Parse("expected ')'".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(b'x') => {
                self.pos += 1;
                Ok(Expr::Variable)
            }
            Some(b) if b.is_ascii_digit() => {
                let start = self.pos;
                while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
                text.parse::<i64>()
                    .map(Expr::Literal)
                    .map_err(|_| ExprError::Parse(format!("literal out of range: {text}")))
            }
            other => Err(ExprError::Parse(format!(
                "unexpected input: {:?}",
                other.map(|b| b as char)
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_arithmetic() {
        assert_eq!(eval("x*x", 3).unwrap(), 9);
        assert_eq!(eval("x + x", 3).unwrap(), 6);
        assert_eq!(eval("(x+1)*(x-1)", 5).unwrap(), 24);
        assert_eq!(eval("-x + 10", 4).unwrap(), 6);
        assert_eq!(eval("7", 0).unwrap(), 7);
        assert_eq!(eval("x/2", 9).unwrap(), 4);
    }

    #[test]
    fn precedence_is_conventional() {
        assert_eq!(eval("2+3*4", 0).unwrap(), 14);
        assert_eq!(eval("(2+3)*4", 0).unwrap(), 20);
        assert_eq!(eval("2-3-4", 0).unwrap(), -5);
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in ["", "x(", "y+1", "1+", "(1", "1 2", "x**x", "0x1"] {
            assert!(eval(bad, 1).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn division_by_zero_is_an_error_not_a_panic() {
        assert_eq!(eval("x/(x-3)", 3), Err(ExprError::DivisionByZero));
    }

    #[test]
    fn overflow_is_checked() {
        assert_eq!(eval("9223372036854775807+1", 0), Err(ExprError::Overflow));
    }

    #[test]
    fn deep_nesting_hits_the_depth_limit() {
        let src = format!("{}x{}", "(".repeat(500), ")".repeat(500));
        assert!(matches!(eval(&src, 1), Err(ExprError::Parse(_))));
    }
}
