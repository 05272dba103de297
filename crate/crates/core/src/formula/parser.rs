//! Recursive-descent parser for the ASCII task syntax.
//!
//! Precedence, loosest first: `|`, `&`, `U` (right associative), then the
//! prefix operators `F`, `X`, `!`. `F`, `X`, `G`, `U` and `true` are reserved.

use super::ast::{AtomicProp, Formula};
use super::FormulaError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    And,
    Or,
    Not,
    Eventually,
    Next,
    Always,
    Until,
    True,
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, FormulaError> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut column = 1;
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (l, col) = (line, column);
        if c == '\n' {
            line += 1;
            column = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            column += 1;
            i += 1;
            continue;
        }
        let simple = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '&' => Some(Tok::And),
            '|' => Some(Tok::Or),
            '!' => Some(Tok::Not),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Spanned { tok, line: l, column: col });
            column += 1;
            i += 1;
            continue;
        }
        if c.is_ascii_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '-') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            column += i - start;
            let tok = match word.as_str() {
                "F" => Tok::Eventually,
                "X" => Tok::Next,
                "G" => Tok::Always,
                "U" => Tok::Until,
                "true" => Tok::True,
                _ => Tok::Ident(word),
            };
            out.push(Spanned { tok, line: l, column: col });
            continue;
        }
        return Err(FormulaError::Syntax {
            line: l,
            column: col,
            message: format!("unexpected character {c:?}"),
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, FormulaError> {
        let s = self.peek();
        Err(FormulaError::Syntax {
            line: s.line,
            column: s.column,
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), FormulaError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            self.syntax(format!("expected {what}, found {:?}", self.peek().tok))
        }
    }

    fn or(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.and()?;
        while self.peek().tok == Tok::Or {
            self.bump();
            lhs = lhs.or(self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.until()?;
        while self.peek().tok == Tok::And {
            self.bump();
            lhs = lhs.and(self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula, FormulaError> {
        let lhs = self.unary()?;
        if self.peek().tok == Tok::Until {
            self.bump();
            let rhs = self.until()?;
            return Ok(lhs.until(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, FormulaError> {
        let s = self.peek().clone();
        match s.tok {
            Tok::Eventually => {
                self.bump();
                Ok(self.unary()?.eventually())
            }
            Tok::Next => {
                self.bump();
                Ok(self.unary()?.next())
            }
            Tok::Always => Err(FormulaError::NonCoSafe {
                line: s.line,
                column: s.column,
                message: "the always operator is only allowed through reactive rules".into(),
            }),
            Tok::Not => {
                self.bump();
                let inner_at = self.peek().clone();
                match self.unary()? {
                    Formula::Atom(p) => Ok(Formula::NegAtom(p)),
                    _ => Err(FormulaError::NonCoSafe {
                        line: inner_at.line,
                        column: inner_at.column,
                        message: "negation may only be applied to an atomic proposition".into(),
                    }),
                }
            }
            Tok::LParen => {
                self.bump();
                let f = self.or()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(f)
            }
            Tok::True => {
                self.bump();
                Ok(Formula::True)
            }
            Tok::Ident(_) => self.atom(),
            _ => self.syntax(format!("expected a formula, found {:?}", s.tok)),
        }
    }

    fn atom(&mut self) -> Result<Formula, FormulaError> {
        let head = self.bump();
        let Tok::Ident(name) = head.tok else {
            unreachable!("atom() is only called on identifiers")
        };
        self.expect(Tok::LParen, "'(' after proposition name")?;
        let mut args = Vec::new();
        loop {
            match self.bump() {
                Spanned { tok: Tok::Ident(a), .. } => args.push(a),
                other => {
                    return Err(FormulaError::Syntax {
                        line: other.line,
                        column: other.column,
                        message: "expected an identifier argument".into(),
                    })
                }
            }
            match self.peek().tok {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RParen => {
                    self.bump();
                    break;
                }
                _ => return self.syntax("expected ',' or ')'"),
            }
        }
        let prop = match (name.as_str(), args.as_slice()) {
            ("reach", [robot, target]) => AtomicProp::reach(robot.clone(), target.clone()),
            ("reach", _) => {
                return Err(FormulaError::Syntax {
                    line: head.line,
                    column: head.column,
                    message: "reach takes exactly (robot, target)".into(),
                })
            }
            (_, [target]) => AtomicProp::collab(name.clone(), target.clone()),
            _ => {
                return Err(FormulaError::Syntax {
                    line: head.line,
                    column: head.column,
                    message: format!("collaboration proposition {name} takes exactly one target"),
                })
            }
        };
        Ok(Formula::Atom(prop))
    }
}

/// Parses a task formula such as `F (monitor(a) & !film(a) & F film(a))`.
pub fn parse_scltl(text: &str) -> Result<Formula, FormulaError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let f = p.or()?;
    if p.peek().tok != Tok::Eof {
        return p.syntax(format!("unexpected trailing {:?}", p.peek().tok));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(name: &str, t: &str) -> AtomicProp {
        AtomicProp::collab(name, t)
    }

    #[test]
    fn single_eventually() {
        let f = parse_scltl("F reach(r1,t1)").unwrap();
        assert_eq!(f, Formula::atom(AtomicProp::reach("r1", "t1")).eventually());
    }

    #[test]
    fn monitor_then_film() {
        let f = parse_scltl("F (monitor(a) & !film(a) & F film(a))").unwrap();
        let expected = Formula::atom(c("monitor", "a"))
            .and(Formula::neg(c("film", "a")))
            .and(Formula::atom(c("film", "a")).eventually())
            .eventually();
        assert_eq!(f, expected);
    }

    #[test]
    fn negated_temporal_is_rejected() {
        let err = parse_scltl("! F reach(r1,t1)").unwrap_err();
        assert!(matches!(err, FormulaError::NonCoSafe { .. }), "{err:?}");
        assert!(matches!(
            parse_scltl("!(a(x) & b(x))").unwrap_err(),
            FormulaError::NonCoSafe { .. }
        ));
        assert!(matches!(
            parse_scltl("G a(x)").unwrap_err(),
            FormulaError::NonCoSafe { .. }
        ));
    }

    #[test]
    fn precedence_and_associativity() {
        let f = parse_scltl("a(x) | b(x) & c(x) U d(x) U e(x)").unwrap();
        let u = Formula::atom(c("c", "x")).until(Formula::atom(c("d", "x")).until(Formula::atom(c("e", "x"))));
        let expected = Formula::atom(c("a", "x")).or(Formula::atom(c("b", "x")).and(u));
        assert_eq!(f, expected);
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_scltl("F (a(x) &\n  )").unwrap_err() {
            FormulaError::Syntax { line, column, .. } => {
                assert_eq!((line, column), (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_scltl("F a(x) )").unwrap_err(), FormulaError::Syntax { .. }));
        assert!(matches!(parse_scltl("reach(r1)").unwrap_err(), FormulaError::Syntax { .. }));
        assert!(matches!(parse_scltl("film(a,b)").unwrap_err(), FormulaError::Syntax { .. }));
        assert!(matches!(parse_scltl("F $").unwrap_err(), FormulaError::Syntax { .. }));
    }

    #[test]
    fn double_negation_is_rejected() {
        assert!(matches!(parse_scltl("!!a(x)").unwrap_err(), FormulaError::NonCoSafe { .. }));
    }

    #[test]
    fn print_then_parse_is_identity() {
        for text in [
            "true",
            "X (a(x) | !b(y))",
            "F (monitor(a) & !film(a) & F film(a))",
            "(patrol(s1) U reach(r2,s1)) & F arrest(s3)",
        ] {
            let f = parse_scltl(text).unwrap();
            assert_eq!(parse_scltl(&f.to_string()).unwrap(), f, "{text}");
        }
    }
}
