use super::parser::{Expr, FromItem, Select, SetExpr, SetOpKind};
use super::{ColumnRef, Label, Literal, LiteralKind, SqlError, TableRef};
use crate::ingest::DatabaseSchema;
use crate::tree::Node;

pub(crate) trait Resolver {
    /// Canonical table name.
    fn table(&self, name: &str) -> Result<String, SqlError>;
    /// Canonical column names of a table, or `None` when unknown.
    fn columns(&self, table: &str) -> Option<Vec<String>>;
}

pub(crate) struct SchemaResolver<'a>(pub &'a DatabaseSchema);

impl Resolver for SchemaResolver<'_> {
    fn table(&self, name: &str) -> Result<String, SqlError> {
        self.0
            .table(name)
            .map(|t| t.name.clone())
            .ok_or_else(|| SqlError::UnresolvedTable {
                name: name.to_string(),
                candidates: self.0.table_names().map(str::to_string).collect(),
            })
    }

    fn columns(&self, table: &str) -> Option<Vec<String>> {
        self.0
            .table(table)
            .map(|t| t.columns.iter().map(|c| c.name.clone()).collect())
    }
}

pub(crate) struct LenientResolver;

impl Resolver for LenientResolver {
    fn table(&self, name: &str) -> Result<String, SqlError> {
        Ok(name.to_string())
    }

    fn columns(&self, _table: &str) -> Option<Vec<String>> {
        None
    }
}

#[derive(Debug, Clone)]
struct Binding {
    /// Alias if declared, else the canonical table name.
    name: String,
    table: String,
}

struct Lowerer<'r, R: Resolver> {
    resolver: &'r R,
    scopes: Vec<Vec<Binding>>,
}

pub(crate) fn lower<R: Resolver>(query: &SetExpr, resolver: &R) -> Result<Node<Label>, SqlError> {
    Lowerer {
        resolver,
        scopes: Vec::new(),
    }
    .set_expr(query)
}

impl<R: Resolver> Lowerer<'_, R> {
    fn set_expr(&mut self, query: &SetExpr) -> Result<Node<Label>, SqlError> {
        match query {
            SetExpr::Select(s) => self.select(s),
            SetExpr::SetOp { op, left, right } => {
                let label = match op {
                    SetOpKind::Union => Label::Union,
                    SetOpKind::Intersect => Label::Intersect,
                    SetOpKind::Except => Label::Except,
                };
                Ok(Node::new(
                    label,
                    vec![self.select(left)?, self.set_expr(right)?],
                ))
            }
        }
    }

    fn select(&mut self, s: &Select) -> Result<Node<Label>, SqlError> {
        let mut bindings = Vec::with_capacity(s.from.len());
        for item in &s.from {
            let table = self.resolver.table(&item.table)?;
            bindings.push(Binding {
                name: item.alias.clone().unwrap_or_else(|| table.clone()),
                table,
            });
        }
        self.scopes.push(bindings);
        let result = self.select_in_scope(s);
        self.scopes.pop();
        result
    }

    fn select_in_scope(&mut self, s: &Select) -> Result<Node<Label>, SqlError> {
        let mut input = self.from(&s.from)?;
        if let Some(w) = &s.selection {
            input = Node::new(Label::Filter, vec![self.expr(w, &[])?, input]);
        }
        let aliases: Vec<(String, Expr)> = s
            .items
            .iter()
            .filter_map(|i| i.alias.clone().map(|a| (a, i.expr.clone())))
            .collect();
        if !s.group_by.is_empty() {
            let mut children = s
                .group_by
                .iter()
                .map(|e| self.expr(e, &aliases))
                .collect::<Result<Vec<_>, _>>()?;
            children.push(input);
            input = Node::new(Label::GroupBy, children);
            if let Some(h) = &s.having {
                input = Node::new(Label::Filter, vec![self.expr(h, &aliases)?, input]);
            }
        } else if s.having.is_some() {
            return Err(SqlError::Unsupported {
                construct: "HAVING without GROUP BY".into(),
                pos: 0,
            });
        }
        let mut children = s
            .items
            .iter()
            .map(|i| self.expr(&i.expr, &[]))
            .collect::<Result<Vec<_>, _>>()?;
        children.push(input);
        let mut node = Node::new(Label::Project, children);
        if s.distinct {
            node = Node::new(Label::Distinct, vec![node]);
        }
        if !s.order_by.is_empty() {
            let mut children = Vec::with_capacity(s.order_by.len() + 1);
            for (e, desc) in &s.order_by {
                let dir = if *desc { Label::Desc } else { Label::Asc };
                children.push(Node::new(dir, vec![self.expr(e, &aliases)?]));
            }
            children.push(node);
            node = Node::new(Label::OrderBy, children);
        }
        if let Some(n) = &s.limit {
            let lit = Node::leaf(Label::Literal(Literal {
                kind: LiteralKind::Num,
                text: n.clone(),
            }));
            node = Node::new(Label::Limit, vec![lit, node]);
        }
        Ok(node)
    }

    fn from(&mut self, items: &[FromItem]) -> Result<Node<Label>, SqlError> {
        let bindings = self.scopes.last().cloned().unwrap_or_default();
        let leaf = |i: usize| {
            Node::leaf(Label::Table(TableRef {
                name: bindings[i].table.clone(),
                alias: items[i].alias.clone(),
            }))
        };
        let mut node = leaf(0);
        for (i, item) in items.iter().enumerate().skip(1) {
            let mut children = vec![node, leaf(i)];
            if let Some(on) = &item.on {
                children.push(Node::new(Label::Filter, vec![self.expr(on, &[])?]));
            }
            node = Node::new(Label::Join, children);
        }
        if items[0].on.is_some() {
            return Err(SqlError::Syntax {
                pos: 0,
                message: "ON without JOIN".into(),
            });
        }
        Ok(node)
    }

    fn expr(&mut self, e: &Expr, aliases: &[(String, Expr)]) -> Result<Node<Label>, SqlError> {
        let bin = |label: Label, l: Node<Label>, r: Node<Label>| Node::new(label, vec![l, r]);
        Ok(match e {
            Expr::Column {
                qualifier: None,
                name,
            } => {
                if let Some((_, target)) =
                    aliases.iter().find(|(a, _)| a.eq_ignore_ascii_case(name))
                {
                    return self.expr(&target.clone(), &[]);
                }
                Node::leaf(Label::Column(self.column(None, name)?))
            }
            Expr::Column { qualifier, name } => {
                Node::leaf(Label::Column(self.column(qualifier.as_deref(), name)?))
            }
            Expr::Star { qualifier } => Node::leaf(Label::Column(self.star(qualifier.as_deref())?)),
            Expr::Literal { kind, text } => Node::leaf(Label::Literal(Literal {
                kind: *kind,
                text: text.clone(),
            })),
            Expr::Agg {
                func,
                distinct,
                arg,
            } => {
                let mut inner = self.expr(arg, aliases)?;
                if *distinct {
                    inner = Node::new(Label::Distinct, vec![inner]);
                }
                Node::new(Label::Agg(*func), vec![inner])
            }
            Expr::Cmp { op, left, right } => bin(
                Label::Cmp(*op),
                self.expr(left, aliases)?,
                self.expr(right, aliases)?,
            ),
            Expr::Arith { op, left, right } => bin(
                Label::Arith(*op),
                self.expr(left, aliases)?,
                self.expr(right, aliases)?,
            ),
            Expr::And(l, r) => bin(Label::And, self.expr(l, aliases)?, self.expr(r, aliases)?),
            Expr::Or(l, r) => bin(Label::Or, self.expr(l, aliases)?, self.expr(r, aliases)?),
            Expr::Not(inner) => Node::new(Label::Not, vec![self.expr(inner, aliases)?]),
            Expr::In {
                expr,
                query,
                negated,
            } => {
                let n = bin(
                    Label::NestedIn,
                    self.expr(expr, aliases)?,
                    self.set_expr(query)?,
                );
                negate(n, *negated)
            }
            Expr::Like {
                expr,
                pattern,
                negated,
            } => {
                let n = bin(
                    Label::Like,
                    self.expr(expr, aliases)?,
                    self.expr(pattern, aliases)?,
                );
                negate(n, *negated)
            }
            Expr::Between {
                expr,
                low,
                high,
                negated,
            } => {
                let n = Node::new(
                    Label::Between,
                    vec![
                        self.expr(expr, aliases)?,
                        self.expr(low, aliases)?,
                        self.expr(high, aliases)?,
                    ],
                );
                negate(n, *negated)
            }
            Expr::Subquery(q) => self.set_expr(q)?,
        })
    }

    fn find_binding(&self, qualifier: &str) -> Result<Binding, SqlError> {
        self.scopes
            .iter()
            .rev()
            .flat_map(|s| s.iter())
            .find(|b| b.name.eq_ignore_ascii_case(qualifier))
            .cloned()
            .ok_or_else(|| SqlError::UnresolvedTable {
                name: qualifier.to_string(),
                candidates: self
                    .scopes
                    .iter()
                    .flat_map(|s| s.iter().map(|b| b.name.clone()))
                    .collect(),
            })
    }

    fn star(&self, qualifier: Option<&str>) -> Result<ColumnRef, SqlError> {
        let (table, qualifier) = match qualifier {
            Some(q) => {
                let b = self.find_binding(q)?;
                (Some(b.table), Some(b.name))
            }
            None => (None, None),
        };
        Ok(ColumnRef {
            table,
            qualifier,
            name: ColumnRef::STAR.to_string(),
        })
    }

    fn column(&self, qualifier: Option<&str>, name: &str) -> Result<ColumnRef, SqlError> {
        if let Some(q) = qualifier {
            let b = self.find_binding(q)?;
            let name = match self.resolver.columns(&b.table) {
                Some(cols) => cols
                    .iter()
                    .find(|c| c.eq_ignore_ascii_case(name))
                    .cloned()
                    .ok_or_else(|| SqlError::UnresolvedColumn {
                        name: format!("{q}.{name}"),
                        candidates: cols.iter().map(|c| format!("{}.{c}", b.table)).collect(),
                    })?,
                None => name.to_string(),
            };
            return Ok(ColumnRef {
                table: Some(b.table),
                qualifier: Some(b.name),
                name,
            });
        }
        for scope in self.scopes.iter().rev() {
            let mut hits: Vec<(String, String)> = Vec::new();
            let mut unknown = false;
            for b in scope {
                match self.resolver.columns(&b.table) {
                    Some(cols) => {
                        if let Some(c) = cols.iter().find(|c| c.eq_ignore_ascii_case(name)) {
                            hits.push((b.table.clone(), c.clone()));
                        }
                    }
                    None => unknown = true,
                }
            }
            if unknown {
                // Lenient mode: attribute to the single table in scope, if any.
                let table = (scope.len() == 1).then(|| scope[0].table.clone());
                return Ok(ColumnRef {
                    table,
                    qualifier: None,
                    name: name.to_string(),
                });
            }
            match hits.len() {
                0 => continue,
                1 => {
                    let (table, name) = hits.pop().unwrap();
                    return Ok(ColumnRef {
                        table: Some(table),
                        qualifier: None,
                        name,
                    });
                }
                _ => {
                    return Err(SqlError::AmbiguousColumn {
                        name: name.to_string(),
                        tables: hits.into_iter().map(|(t, _)| t).collect(),
                    })
                }
            }
        }
        let candidates = self
            .scopes
            .last()
            .into_iter()
            .flatten()
            .flat_map(|b| {
                self.resolver
                    .columns(&b.table)
                    .unwrap_or_default()
                    .into_iter()
                    .map(move |c| format!("{}.{c}", b.table))
            })
            .collect();
        Err(SqlError::UnresolvedColumn {
            name: name.to_string(),
            candidates,
        })
    }
}

fn negate(node: Node<Label>, negated: bool) -> Node<Label> {
    if negated {
        Node::new(Label::Not, vec![node])
    } else {
        node
    }
}
