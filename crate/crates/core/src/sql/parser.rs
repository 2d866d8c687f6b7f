//! Recursive-descent parser for the SELECT subset used by Spider-style
//! corpora. Produces an unresolved syntax tree; name resolution and the
//! relational-algebra shape are handled in `lower`.

use super::lexer::{tokenize, Tok, Token};
use super::{AggFunc, ArithOp, CmpOp, LiteralKind, SqlError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SetExpr {
    Select(Box<Select>),
    SetOp {
        op: SetOpKind,
        left: Box<Select>,
        right: Box<SetExpr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SetOpKind {
    Union,
    Intersect,
    Except,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Select {
    pub distinct: bool,
    pub items: Vec<SelectItem>,
    pub from: Vec<FromItem>,
    pub selection: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
    pub order_by: Vec<(Expr, bool)>,
    pub limit: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SelectItem {
    pub expr: Expr,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FromItem {
    pub table: String,
    pub alias: Option<String>,
    /// `ON` condition joining this item to the items before it.
    pub on: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Expr {
    Column {
        qualifier: Option<String>,
        name: String,
    },
    Star {
        qualifier: Option<String>,
    },
    Literal {
        kind: LiteralKind,
        text: String,
    },
    Agg {
        func: AggFunc,
        distinct: bool,
        arg: Box<Expr>,
    },
    Cmp {
        op: CmpOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    Arith {
        op: ArithOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    In {
        expr: Box<Expr>,
        query: Box<SetExpr>,
        negated: bool,
    },
    Like {
        expr: Box<Expr>,
        pattern: Box<Expr>,
        negated: bool,
    },
    Between {
        expr: Box<Expr>,
        low: Box<Expr>,
        high: Box<Expr>,
        negated: bool,
    },
    Subquery(Box<SetExpr>),
}

pub(crate) fn parse(input: &str) -> Result<SetExpr, SqlError> {
    let tokens = tokenize(input)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: input.len(),
    };
    let q = p.set_expr()?;
    if let Some(t) = p.peek() {
        return Err(p.error_at(
            t.pos,
            format!("unexpected trailing input `{}`", show(&t.tok)),
        ));
    }
    Ok(q)
}

fn show(tok: &Tok) -> String {
    match tok {
        Tok::Word(w) | Tok::Quoted(w) | Tok::Number(w) => w.clone(),
        Tok::Str(s) => format!("'{s}'"),
        Tok::Sym(s) => (*s).to_string(),
    }
}

const RESERVED: &[&str] = &[
    "SELECT",
    "FROM",
    "WHERE",
    "GROUP",
    "BY",
    "HAVING",
    "ORDER",
    "LIMIT",
    "UNION",
    "INTERSECT",
    "EXCEPT",
    "JOIN",
    "ON",
    "AS",
    "AND",
    "OR",
    "NOT",
    "IN",
    "LIKE",
    "BETWEEN",
    "ASC",
    "DESC",
    "DISTINCT",
    "INNER",
    "LEFT",
    "RIGHT",
    "OUTER",
    "CROSS",
    "NATURAL",
    "FULL",
    "IS",
    "NULL",
    "EXISTS",
    "CASE",
    "OVER",
    "WITH",
    "OFFSET",
    "ALL",
];

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + offset).map(|t| &t.tok)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn error_at(&self, pos: usize, message: String) -> SqlError {
        SqlError::Syntax { pos, message }
    }

    fn error(&self, message: impl Into<String>) -> SqlError {
        self.error_at(self.here(), message.into())
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Word(w), .. }) if w.eq_ignore_ascii_case(kw))
    }

    fn is_kw_at(&self, offset: usize, kw: &str) -> bool {
        matches!(self.peek_at(offset), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected {kw}")))
        }
    }

    fn is_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Sym(s), .. }) if *s == sym)
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if self.is_sym(sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), SqlError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{sym}`")))
        }
    }

    fn unsupported(&self, what: &str) -> SqlError {
        SqlError::Unsupported {
            construct: what.to_string(),
            pos: self.here(),
        }
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Word(w)) if !RESERVED.iter().any(|r| r.eq_ignore_ascii_case(&w)) => {
                self.pos += 1;
                Ok(w)
            }
            Some(Tok::Quoted(w)) => {
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn set_expr(&mut self) -> Result<SetExpr, SqlError> {
        if self.is_kw("WITH") {
            return Err(self.unsupported("WITH (common table expression)"));
        }
        let left = self.select()?;
        let op = if self.eat_kw("UNION") {
            SetOpKind::Union
        } else if self.eat_kw("INTERSECT") {
            SetOpKind::Intersect
        } else if self.eat_kw("EXCEPT") {
            SetOpKind::Except
        } else {
            return Ok(SetExpr::Select(Box::new(left)));
        };
        if self.is_kw("ALL") {
            return Err(self.unsupported("set operator ALL"));
        }
        let right = self.set_expr()?;
        Ok(SetExpr::SetOp {
            op,
            left: Box::new(left),
            right: Box::new(right),
        })
    }

    fn select(&mut self) -> Result<Select, SqlError> {
        self.expect_kw("SELECT")?;
        let distinct = self.eat_kw("DISTINCT");
        if self.is_kw("ALL") {
            self.pos += 1;
        }
        let mut items = vec![self.select_item()?];
        while self.eat_sym(",") {
            items.push(self.select_item()?);
        }
        self.expect_kw("FROM")?;
        let from = self.table_list()?;
        let selection = if self.eat_kw("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        let mut having = None;
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            group_by.push(self.expr()?);
            while self.eat_sym(",") {
                group_by.push(self.expr()?);
            }
        }
        if self.eat_kw("HAVING") {
            having = Some(self.expr()?);
        }
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            loop {
                let e = self.expr()?;
                let desc = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                order_by.push((e, desc));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let limit = if self.eat_kw("LIMIT") {
            match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Number(n)) => {
                    self.pos += 1;
                    Some(n)
                }
                _ => return Err(self.error("expected number after LIMIT")),
            }
        } else {
            None
        };
        if self.is_kw("OFFSET") || self.is_sym(",") && limit.is_some() {
            return Err(self.unsupported("LIMIT with OFFSET"));
        }
        Ok(Select {
            distinct,
            items,
            from,
            selection,
            group_by,
            having,
            order_by,
            limit,
        })
    }

    fn select_item(&mut self) -> Result<SelectItem, SqlError> {
        let expr = self.expr()?;
        let alias = if self.eat_kw("AS") {
            Some(self.ident()?)
        } else if matches!(
            self.peek().map(|t| &t.tok),
            Some(Tok::Word(_) | Tok::Quoted(_))
        ) && !self.is_kw("FROM")
        {
            // Bare alias, unless the word is a clause keyword.
            self.ident().ok()
        } else {
            None
        };
        Ok(SelectItem { expr, alias })
    }

    fn table_list(&mut self) -> Result<Vec<FromItem>, SqlError> {
        let mut items = vec![self.table_factor()?];
        loop {
            if self.eat_sym(",") {
                items.push(self.table_factor()?);
                continue;
            }
            for kw in ["LEFT", "RIGHT", "FULL", "NATURAL", "CROSS"] {
                if self.is_kw(kw) {
                    return Err(self.unsupported(&format!("{kw} JOIN")));
                }
            }
            if self.is_kw("INNER") && self.is_kw_at(1, "JOIN") {
                self.pos += 1;
            }
            if !self.eat_kw("JOIN") {
                break;
            }
            let mut item = self.table_factor()?;
            if self.eat_kw("ON") {
                item.on = Some(self.expr()?);
            }
            items.push(item);
        }
        Ok(items)
    }

    fn table_factor(&mut self) -> Result<FromItem, SqlError> {
        if self.is_sym("(") {
            return Err(self.unsupported("subquery in FROM"));
        }
        let table = self.ident()?;
        let bare_alias = matches!(self.peek().map(|t| &t.tok), Some(Tok::Word(w)) if !RESERVED.iter().any(|r| r.eq_ignore_ascii_case(w)));
        let alias = if self.eat_kw("AS") || bare_alias {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(FromItem {
            table,
            alias,
            on: None,
        })
    }

    fn expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.and_expr()?;
        while self.eat_kw("OR") {
            let right = self.and_expr()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.not_expr()?;
        while self.eat_kw("AND") {
            let right = self.not_expr()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, SqlError> {
        if self.eat_kw("NOT") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<Expr, SqlError> {
        if self.is_kw("EXISTS") {
            return Err(self.unsupported("EXISTS"));
        }
        let left = self.additive()?;
        if self.is_kw("IS") {
            return Err(self.unsupported("IS [NOT] NULL"));
        }
        let negated = self.is_kw("NOT")
            && (self.is_kw_at(1, "IN") || self.is_kw_at(1, "LIKE") || self.is_kw_at(1, "BETWEEN"));
        if negated {
            self.pos += 1;
        }
        if self.eat_kw("IN") {
            self.expect_sym("(")?;
            if !self.is_kw("SELECT") {
                return Err(self.unsupported("IN with a value list"));
            }
            let query = self.set_expr()?;
            self.expect_sym(")")?;
            return Ok(Expr::In {
                expr: Box::new(left),
                query: Box::new(query),
                negated,
            });
        }
        if self.eat_kw("LIKE") {
            let pattern = self.additive()?;
            return Ok(Expr::Like {
                expr: Box::new(left),
                pattern: Box::new(pattern),
                negated,
            });
        }
        if self.eat_kw("BETWEEN") {
            let low = self.additive()?;
            self.expect_kw("AND")?;
            let high = self.additive()?;
            return Ok(Expr::Between {
                expr: Box::new(left),
                low: Box::new(low),
                high: Box::new(high),
                negated,
            });
        }
        let op = match self.peek().map(|t| &t.tok) {
            Some(Tok::Sym("=")) => CmpOp::Eq,
            Some(Tok::Sym("!=")) | Some(Tok::Sym("<>")) => CmpOp::Neq,
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            _ => return Ok(left),
        };
        self.pos += 1;
        let right = self.additive()?;
        Ok(Expr::Cmp {
            op,
            left: Box::new(left),
            right: Box::new(right),
        })
    }

    fn additive(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.multiplicative()?;
        loop {
            let op = if self.eat_sym("+") {
                ArithOp::Add
            } else if self.eat_sym("-") {
                ArithOp::Sub
            } else {
                return Ok(left);
            };
            let right = self.multiplicative()?;
            left = Expr::Arith {
                op,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.primary()?;
        loop {
            let op = if self.eat_sym("*") {
                ArithOp::Mul
            } else if self.eat_sym("/") {
                ArithOp::Div
            } else {
                return Ok(left);
            };
            let right = self.primary()?;
            left = Expr::Arith {
                op,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
    }

    fn primary(&mut self) -> Result<Expr, SqlError> {
        let Some(token) = self.peek().cloned() else {
            return Err(self.error("unexpected end of input"));
        };
        match token.tok {
            Tok::Number(n) => {
                self.pos += 1;
                Ok(Expr::Literal {
                    kind: LiteralKind::Num,
                    text: n,
                })
            }
            Tok::Str(s) => {
                self.pos += 1;
                Ok(Expr::Literal {
                    kind: LiteralKind::Str,
                    text: s,
                })
            }
            Tok::Sym("-") => {
                if let Some(Tok::Number(n)) = self.peek_at(1).cloned() {
                    self.pos += 2;
                    Ok(Expr::Literal {
                        kind: LiteralKind::Num,
                        text: format!("-{n}"),
                    })
                } else {
                    Err(self.unsupported("unary minus on a non-literal"))
                }
            }
            Tok::Sym("*") => {
                self.pos += 1;
                Ok(Expr::Star { qualifier: None })
            }
            Tok::Sym("(") => {
                self.pos += 1;
                let e = if self.is_kw("SELECT") {
                    Expr::Subquery(Box::new(self.set_expr()?))
                } else {
                    self.expr()?
                };
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Word(ref w) if w.eq_ignore_ascii_case("CASE") => Err(self.unsupported("CASE")),
            Tok::Word(ref w) if w.eq_ignore_ascii_case("NULL") => {
                Err(self.unsupported("NULL literal"))
            }
            Tok::Word(_) | Tok::Quoted(_) => {
                if matches!(self.peek_at(1), Some(Tok::Sym("("))) {
                    return self.function_call();
                }
                let first = self.ident()?;
                if self.eat_sym(".") {
                    if self.eat_sym("*") {
                        return Ok(Expr::Star {
                            qualifier: Some(first),
                        });
                    }
                    let name = self.ident()?;
                    return Ok(Expr::Column {
                        qualifier: Some(first),
                        name,
                    });
                }
                Ok(Expr::Column {
                    qualifier: None,
                    name: first,
                })
            }
            Tok::Sym(s) => Err(self.error(format!("unexpected `{s}`"))),
        }
    }

    fn function_call(&mut self) -> Result<Expr, SqlError> {
        let Some(Tok::Word(name)) = self.peek().map(|t| t.tok.clone()) else {
            return Err(self.error("expected function name"));
        };
        let Some(func) = AggFunc::from_name(&name) else {
            return Err(self.unsupported(&format!("function `{name}`")));
        };
        self.pos += 1;
        self.expect_sym("(")?;
        let distinct = self.eat_kw("DISTINCT");
        let arg = self.expr()?;
        self.expect_sym(")")?;
        if self.is_kw("OVER") {
            return Err(self.unsupported("window function"));
        }
        Ok(Expr::Agg {
            func,
            distinct,
            arg: Box::new(arg),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_compound_right_recursive() {
        let q = parse("SELECT a FROM t UNION SELECT b FROM u EXCEPT SELECT c FROM v").unwrap();
        match q {
            SetExpr::SetOp { op, right, .. } => {
                assert_eq!(op, SetOpKind::Union);
                assert!(matches!(
                    *right,
                    SetExpr::SetOp {
                        op: SetOpKind::Except,
                        ..
                    }
                ));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn parses_join_chain_with_aliases() {
        let q =
            parse("SELECT T1.a FROM t AS T1 JOIN u AS T2 ON T1.id = T2.id JOIN v ON T2.x = v.x")
                .unwrap();
        let SetExpr::Select(s) = q else { panic!() };
        assert_eq!(s.from.len(), 3);
        assert_eq!(s.from[1].alias.as_deref(), Some("T2"));
        assert!(s.from[0].on.is_none());
        assert!(s.from[2].on.is_some());
    }

    #[test]
    fn precedence_and_over_or() {
        let SetExpr::Select(s) = parse("SELECT a FROM t WHERE x = 1 OR y = 2 AND z = 3").unwrap()
        else {
            panic!()
        };
        assert!(matches!(s.selection, Some(Expr::Or(_, ref r)) if matches!(**r, Expr::And(..))));
    }

    #[test]
    fn unsupported_constructs_are_explicit() {
        for q in [
            "SELECT a FROM t LEFT JOIN u ON t.a = u.a",
            "SELECT a FROM (SELECT a FROM t)",
            "SELECT a FROM t WHERE a IS NULL",
            "SELECT row_number() OVER () FROM t",
            "SELECT a FROM t WHERE a IN (1, 2)",
            "SELECT CASE WHEN a THEN 1 END FROM t",
            "WITH x AS (SELECT 1) SELECT a FROM x",
        ] {
            assert!(
                matches!(parse(q), Err(SqlError::Unsupported { .. })),
                "{q}: {:?}",
                parse(q)
            );
        }
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match parse("SELECT a FROM") {
            Err(SqlError::Syntax { pos, .. }) => assert_eq!(pos, 13),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("SELECT a FROM t WHERE"),
            Err(SqlError::Syntax { .. })
        ));
        assert!(matches!(
            parse("SELECT a FROM t t2 t3"),
            Err(SqlError::Syntax { .. })
        ));
    }
}
