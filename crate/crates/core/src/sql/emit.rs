use super::{AlgebraTree, ArithOp, ColumnRef, Label, LiteralKind, SqlError};
use crate::tree::Node;

/// Renders a resolved (non-anonymized) tree back to SQL text.
pub fn emit_sql(tree: &AlgebraTree) -> Result<String, SqlError> {
    if tree.root().iter().any(|n| n.label.is_anonymized_leaf()) {
        return Err(SqlError::Emit("tree is anonymized".into()));
    }
    query(tree.root())
}

fn bad(node: &Node<Label>, ctx: &str) -> SqlError {
    SqlError::Emit(format!("unexpected {} in {ctx}", node.label))
}

fn split_input(node: &Node<Label>) -> (&[Node<Label>], &Node<Label>) {
    let (last, args) = node
        .children
        .split_last()
        .expect("relational node has an input");
    (args, last)
}

fn query(node: &Node<Label>) -> Result<String, SqlError> {
    let op = match node.label {
        Label::Union => "UNION",
        Label::Intersect => "INTERSECT",
        Label::Except => "EXCEPT",
        _ => return select(node),
    };
    Ok(format!(
        "{} {op} {}",
        select(&node.children[0])?,
        query(&node.children[1])?
    ))
}

fn select(mut node: &Node<Label>) -> Result<String, SqlError> {
    let mut limit = None;
    if node.label == Label::Limit {
        match &node.children[0].label {
            Label::Literal(l) => limit = Some(l.text.clone()),
            _ => return Err(bad(&node.children[0], "LIMIT")),
        }
        node = &node.children[1];
    }
    let mut order = Vec::new();
    if node.label == Label::OrderBy {
        let (keys, input) = split_input(node);
        for k in keys {
            let dir = match k.label {
                Label::Asc => "ASC",
                Label::Desc => "DESC",
                _ => return Err(bad(k, "ORDER BY")),
            };
            order.push(format!("{} {dir}", expr(&k.children[0], 0)?));
        }
        node = input;
    }
    let distinct = node.label == Label::Distinct;
    if distinct {
        node = &node.children[0];
    }
    if node.label != Label::Project {
        return Err(bad(node, "query position"));
    }
    let (items, mut input) = split_input(node);
    let items = items
        .iter()
        .map(|i| expr(i, 0))
        .collect::<Result<Vec<_>, _>>()?;

    let mut having = None;
    if input.label == Label::Filter
        && input.children.len() == 2
        && input.children[1].label == Label::GroupBy
    {
        having = Some(expr(&input.children[0], 0)?);
        input = &input.children[1];
    }
    let mut group = Vec::new();
    if input.label == Label::GroupBy {
        let (keys, rest) = split_input(input);
        group = keys
            .iter()
            .map(|k| expr(k, 0))
            .collect::<Result<Vec<_>, _>>()?;
        input = rest;
    }
    let mut selection = None;
    if input.label == Label::Filter && input.children.len() == 2 {
        selection = Some(expr(&input.children[0], 0)?);
        input = &input.children[1];
    }

    let mut sql = String::from("SELECT ");
    if distinct {
        sql.push_str("DISTINCT ");
    }
    sql.push_str(&items.join(", "));
    sql.push_str(" FROM ");
    sql.push_str(&from(input)?);
    if let Some(w) = selection {
        sql.push_str(" WHERE ");
        sql.push_str(&w);
    }
    if !group.is_empty() {
        sql.push_str(" GROUP BY ");
        sql.push_str(&group.join(", "));
    }
    if let Some(h) = having {
        sql.push_str(" HAVING ");
        sql.push_str(&h);
    }
    if !order.is_empty() {
        sql.push_str(" ORDER BY ");
        sql.push_str(&order.join(", "));
    }
    if let Some(n) = limit {
        sql.push_str(" LIMIT ");
        sql.push_str(&n);
    }
    Ok(sql)
}

fn from(node: &Node<Label>) -> Result<String, SqlError> {
    match &node.label {
        Label::Table(t) => Ok(match &t.alias {
            Some(a) => format!("{} AS {}", ident(&t.name), ident(a)),
            None => ident(&t.name),
        }),
        Label::Join => {
            let right = &node.children[1];
            if !matches!(right.label, Label::Table(_)) {
                return Err(bad(right, "JOIN right side"));
            }
            let mut s = format!("{} JOIN {}", from(&node.children[0])?, from(right)?);
            if let Some(on) = node.children.get(2) {
                if on.label != Label::Filter {
                    return Err(bad(on, "JOIN condition"));
                }
                s.push_str(" ON ");
                s.push_str(&expr(&on.children[0], 0)?);
            }
            Ok(s)
        }
        _ => Err(bad(node, "FROM")),
    }
}

const RESERVED: &[&str] = &[
    "select",
    "from",
    "where",
    "group",
    "by",
    "having",
    "order",
    "limit",
    "union",
    "intersect",
    "except",
    "join",
    "on",
    "as",
    "and",
    "or",
    "not",
    "in",
    "like",
    "between",
    "asc",
    "desc",
    "distinct",
    "inner",
    "left",
    "right",
    "outer",
    "cross",
    "natural",
    "full",
    "is",
    "null",
    "exists",
    "case",
    "over",
    "with",
    "offset",
    "all",
    "count",
    "sum",
    "avg",
    "min",
    "max",
];

fn ident(name: &str) -> String {
    let plain = name
        .chars()
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_alphanumeric() || c == '_')
        && !RESERVED.contains(&name.to_ascii_lowercase().as_str());
    if plain {
        name.to_string()
    } else {
        format!("`{name}`")
    }
}

fn column(c: &ColumnRef) -> String {
    let name = if c.is_star() {
        "*".to_string()
    } else {
        ident(&c.name)
    };
    match &c.qualifier {
        Some(q) => format!("{}.{name}", ident(q)),
        None => name,
    }
}

fn precedence(label: &Label) -> u8 {
    match label {
        Label::Or => 1,
        Label::And => 2,
        Label::Not => 3,
        Label::Cmp(_) | Label::Like | Label::Between | Label::NestedIn => 4,
        Label::Arith(ArithOp::Add | ArithOp::Sub) => 5,
        Label::Arith(ArithOp::Mul | ArithOp::Div) => 6,
        _ => 7,
    }
}

fn is_query(label: &Label) -> bool {
    matches!(
        label,
        Label::Project
            | Label::Distinct
            | Label::OrderBy
            | Label::Limit
            | Label::Union
            | Label::Intersect
            | Label::Except
    )
}

fn expr(node: &Node<Label>, min_prec: u8) -> Result<String, SqlError> {
    if is_query(&node.label) {
        return Ok(format!("({})", query(node)?));
    }
    let prec = precedence(&node.label);
    let c = &node.children;
    let text = match &node.label {
        Label::Column(col) => column(col),
        Label::Literal(l) => match l.kind {
            LiteralKind::Num => l.text.clone(),
            LiteralKind::Str => format!("'{}'", l.text.replace('\'', "''")),
        },
        Label::Agg(func) => match c[0].label {
            Label::Distinct => format!("{}(DISTINCT {})", func.name(), expr(&c[0].children[0], 0)?),
            _ => format!("{}({})", func.name(), expr(&c[0], 0)?),
        },
        Label::Or => format!("{} OR {}", expr(&c[0], 1)?, expr(&c[1], 2)?),
        Label::And => format!("{} AND {}", expr(&c[0], 2)?, expr(&c[1], 3)?),
        Label::Not => match c[0].label {
            Label::Like | Label::Between | Label::NestedIn => predicate(&c[0], true)?,
            _ => format!("NOT {}", expr(&c[0], 3)?),
        },
        Label::Cmp(op) => format!("{} {} {}", expr(&c[0], 5)?, op.symbol(), expr(&c[1], 5)?),
        Label::Like | Label::Between | Label::NestedIn => predicate(node, false)?,
        Label::Arith(op) => {
            let (lp, rp) = match op {
                ArithOp::Add | ArithOp::Sub => (5, 6),
                ArithOp::Mul | ArithOp::Div => (6, 7),
            };
            format!("{} {} {}", expr(&c[0], lp)?, op.symbol(), expr(&c[1], rp)?)
        }
        _ => return Err(bad(node, "expression")),
    };
    Ok(if prec < min_prec {
        format!("({text})")
    } else {
        text
    })
}

fn predicate(node: &Node<Label>, negated: bool) -> Result<String, SqlError> {
    let not = if negated { "NOT " } else { "" };
    let c = &node.children;
    Ok(match node.label {
        Label::Like => format!("{} {not}LIKE {}", expr(&c[0], 5)?, expr(&c[1], 5)?),
        Label::Between => format!(
            "{} {not}BETWEEN {} AND {}",
            expr(&c[0], 5)?,
            expr(&c[1], 5)?,
            expr(&c[2], 5)?
        ),
        Label::NestedIn => format!("{} {not}IN ({})", expr(&c[0], 5)?, query(&c[1])?),
        _ => return Err(bad(node, "predicate")),
    })
}
