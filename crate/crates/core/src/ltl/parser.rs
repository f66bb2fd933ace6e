//! Recursive-descent parser for formulas.
//!
//! Precedence, tightest first: `! X F G`, `&`, `|`, `-> <->` (right
//! associative), `U` (right associative).

use super::formula::Formula;
use super::LtlError;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Implies,
    Iff,
    Next,
    Until,
    Eventually,
    Always,
    LParen,
    RParen,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    col: usize,
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Spanned>, LtlError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let err = |msg: String| LtlError::Syntax { line, col, msg };
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Spanned { tok: Tok::LParen, col });
                i += 1;
            }
            ')' => {
                out.push(Spanned { tok: Tok::RParen, col });
                i += 1;
            }
            '!' => {
                out.push(Spanned { tok: Tok::Not, col });
                i += 1;
            }
            '&' => {
                out.push(Spanned { tok: Tok::And, col });
                i += 1;
            }
            '|' => {
                out.push(Spanned { tok: Tok::Or, col });
                i += 1;
            }
            '-' => {
                if chars.get(i + 1) == Some(&'>') {
                    out.push(Spanned { tok: Tok::Implies, col });
                    i += 2;
                } else {
                    return Err(err("expected '->'".into()));
                }
            }
            '<' => {
                if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') {
                    out.push(Spanned { tok: Tok::Iff, col });
                    i += 3;
                } else {
                    return Err(err("expected '<->'".into()));
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = match word.as_str() {
                    "X" => Tok::Next,
                    "U" => Tok::Until,
                    "F" => Tok::Eventually,
                    "G" => Tok::Always,
                    "True" | "true" => Tok::True,
                    "False" | "false" => Tok::False,
                    _ => Tok::Ident(word),
                };
                out.push(Spanned { tok, col });
            }
            other => return Err(err(format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    line: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |s| s.col)
    }

    fn error(&self, msg: impl Into<String>) -> LtlError {
        LtlError::Syntax {
            line: self.line,
            col: self.col(),
            msg: msg.into(),
        }
    }

    fn until(&mut self) -> Result<Formula, LtlError> {
        let lhs = self.implication()?;
        if self.peek() == Some(&Tok::Until) {
            self.pos += 1;
            let rhs = self.until()?;
            return Ok(Formula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn implication(&mut self) -> Result<Formula, LtlError> {
        let lhs = self.disjunction()?;
        match self.peek() {
            Some(Tok::Implies) => {
                self.pos += 1;
                Ok(Formula::implies(lhs, self.implication()?))
            }
            Some(Tok::Iff) => {
                self.pos += 1;
                Ok(Formula::iff(lhs, self.implication()?))
            }
            _ => Ok(lhs),
        }
    }

    fn disjunction(&mut self) -> Result<Formula, LtlError> {
        let mut lhs = self.conjunction()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            lhs = Formula::or(lhs, self.conjunction()?);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Formula, LtlError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            lhs = Formula::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, LtlError> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| self.error("unexpected end of formula"))?;
        self.pos += 1;
        match tok {
            Tok::Not => Ok(Formula::not(self.unary()?)),
            Tok::Next => Ok(Formula::next(self.unary()?)),
            Tok::Eventually => Ok(Formula::eventually(self.unary()?)),
            Tok::Always => Ok(Formula::always(self.unary()?)),
            Tok::True => Ok(Formula::True),
            Tok::False => Ok(Formula::False),
            Tok::Ident(name) => Ok(Formula::Atom(name)),
            Tok::LParen => {
                let inner = self.until()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            other => {
                self.pos -= 1;
                Err(self.error(format!("unexpected token {other:?}")))
            }
        }
    }
}

/// Parses a single formula. `line` is only used for error positions.
pub fn parse_formula_at(text: &str, line: usize) -> Result<Formula, LtlError> {
    let toks = tokenize(text, line)?;
    let mut p = Parser {
        toks,
        pos: 0,
        line,
        end_col: text.chars().count() + 1,
    };
    let f = p.until()?;
    if p.pos != p.toks.len() {
        return Err(p.error("trailing input"));
    }
    Ok(f)
}

pub fn parse_formula(text: &str) -> Result<Formula, LtlError> {
    parse_formula_at(text, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(s: &str) -> Formula {
        Formula::atom(s)
    }

    #[test]
    fn g_wrapped_implication() {
        let f = parse_formula("G((a -> (X a | X b)))").unwrap();
        let expected = Formula::always(Formula::implies(
            a("a"),
            Formula::or(Formula::next(a("a")), Formula::next(a("b"))),
        ));
        assert_eq!(f, expected);
    }

    #[test]
    fn dangling_implication_is_syntax_error() {
        match parse_formula("a -> ") {
            Err(LtlError::Syntax { line, col, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(col, 6);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn precedence_levels() {
        // unary > & > | > -> > U
        let f = parse_formula("!a & b | c -> d U e").unwrap();
        let expected = Formula::until(
            Formula::implies(
                Formula::or(Formula::and(Formula::not(a("a")), a("b")), a("c")),
                a("d"),
            ),
            a("e"),
        );
        assert_eq!(f, expected);
        let g = parse_formula("X a & G b").unwrap();
        assert_eq!(g, Formula::and(Formula::next(a("a")), Formula::always(a("b"))));
    }

    #[test]
    fn implication_is_right_associative() {
        let f = parse_formula("a -> b -> c").unwrap();
        assert_eq!(f, Formula::implies(a("a"), Formula::implies(a("b"), a("c"))));
    }

    #[test]
    fn literals_and_errors() {
        assert_eq!(parse_formula("True").unwrap(), Formula::True);
        assert!(parse_formula("(a & b").is_err());
        assert!(parse_formula("a b").is_err());
        assert!(parse_formula("a $ b").is_err());
        assert!(parse_formula("a <- b").is_err());
    }
}
