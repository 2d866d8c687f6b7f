//! Deterministic offline provider.
//!
//! Every response is a pure function of the request. Explanations are a
//! rule-based rendering of the query's algebra tree, fills splice explanation
//! words into MASK slots, and embeddings are hashed character trigrams.

use std::collections::{BTreeMap, BTreeSet};

use super::{ChatRequest, Completion, Provider, ProviderError, TemplateId};
use crate::paraphrase::HoleKind;
use crate::sql::{parse_sql_lenient, AggFunc, ArithOp, CmpOp, Label};
use crate::templating::{is_punctuation, tokenize, tokenize_lower, MASK};
use crate::tree::Node;

pub const STUB_DIM: usize = 256;

/// Deliberate misbehaviour for exercising error paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StubFaults {
    /// Fills leave the first MASK in place.
    pub leave_mask: bool,
    /// SQL fills use a column that does not exist.
    pub bad_column: bool,
    /// Table extraction adds a table called `ghosts`.
    pub ghost_tables: bool,
    /// Explanations and descriptions get a second sentence.
    pub multi_sentence: bool,
    /// Explanations come back empty.
    pub empty_explanation: bool,
}

#[derive(Debug, Clone, Default)]
pub struct StubProvider {
    faults: StubFaults,
}

const VERBS: [&str; 4] = ["return", "show", "list", "find"];

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Character trigrams of the lowercased text hashed into `dim` buckets,
/// count-weighted and L2-normalized. Texts under three characters form a
/// single gram.
pub fn trigram_embedding(text: &str, dim: usize) -> Vec<f64> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut v = vec![0.0; dim];
    let mut add = |gram: &[char]| {
        let s: String = gram.iter().collect();
        v[(fnv1a64(s.as_bytes()) % dim as u64) as usize] += 1.0;
    };
    if chars.len() < 3 {
        add(&chars);
    } else {
        chars.windows(3).for_each(&mut add);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

impl StubProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_faults(faults: StubFaults) -> Self {
        Self { faults }
    }

    fn binding<'a>(req: &'a ChatRequest, name: &str) -> Result<&'a str, ProviderError> {
        req.bundle
            .bindings
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| {
                ProviderError::Fatal(format!(
                    "stub: `{}` request lacks `{name}`",
                    req.bundle.template_id
                ))
            })
    }

    fn count(req: &ChatRequest) -> Result<usize, ProviderError> {
        Self::binding(req, "n")?
            .trim()
            .parse()
            .map_err(|_| ProviderError::Fatal("stub: `n` is not a count".into()))
    }

    fn sentence(&self, body: String) -> String {
        if self.faults.multi_sentence {
            format!("{body}. It reads from the database.")
        } else {
            format!("{body}.")
        }
    }
}

impl Provider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn model_id(&self) -> &str {
        "stub-chat-1"
    }

    fn embedding_model_id(&self) -> &str {
        "stub-trigram-256"
    }

    fn embedding_dim(&self) -> usize {
        STUB_DIM
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, ProviderError> {
        let id = req.bundle.template_id;
        let text = match id {
            TemplateId::ExplainForFill
            | TemplateId::ExplainForValidate
            | TemplateId::DescribeQuery => {
                if self.faults.empty_explanation && id != TemplateId::DescribeQuery {
                    String::new()
                } else {
                    let query = Self::binding(req, "query")?;
                    self.sentence(explain(query, id, req.sample_index))
                }
            }
            TemplateId::FillTemplate => fill(
                Self::binding(req, "question_template")?,
                Self::binding(req, "explanation")?,
                self.faults.leave_mask,
            ),
            TemplateId::ExtractTables => {
                let mut tables = extract_tables(
                    Self::binding(req, "question")?,
                    Self::binding(req, "schema")?,
                );
                if self.faults.ghost_tables {
                    tables.push("ghosts".into());
                }
                tables.join(", ")
            }
            TemplateId::ParaphraseWithSchema => numbered(&paraphrases(
                Self::binding(req, "question")?,
                Self::count(req)?,
                QUESTION_FORMS,
            )),
            TemplateId::ParaphraseDescription => numbered(&paraphrases(
                Self::binding(req, "description")?,
                Self::count(req)?,
                DESCRIPTION_FORMS,
            )),
            TemplateId::FillSqlTemplate => fill_sql(
                Self::binding(req, "schema")?,
                Self::binding(req, "holes")?,
                Self::binding(req, "template")?,
                self.faults.bad_column,
            ),
        };
        Ok(Completion {
            text,
            truncated: false,
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(trigram_embedding(text, STUB_DIM))
    }
}

fn humanize(name: &str) -> String {
    name.replace('_', " ").to_lowercase()
}

/// One-sentence rendering of a query, without the final period.
pub fn explain(query: &str, template: TemplateId, sample_index: u32) -> String {
    let mut seed = Vec::from(template.as_str().as_bytes());
    seed.extend_from_slice(query.as_bytes());
    seed.extend_from_slice(&sample_index.to_le_bytes());
    let verb = VERBS[(fnv1a64(&seed) % VERBS.len() as u64) as usize];
    let body = match parse_sql_lenient(query) {
        Ok(tree) => describe_query(tree.root()),
        Err(_) => "the result of the query".to_string(),
    };
    format!("{verb} {body}")
}

fn describe_query(node: &Node<Label>) -> String {
    let conj = match node.label {
        Label::Union => "together with",
        Label::Intersect => "that also appear in",
        Label::Except => "excluding",
        _ => return describe_select(node),
    };
    format!(
        "{} {conj} {}",
        describe_select(&node.children[0]),
        describe_query(&node.children[1])
    )
}

fn input(node: &Node<Label>) -> &Node<Label> {
    node.children.last().expect("relational node has an input")
}

fn describe_select(mut node: &Node<Label>) -> String {
    let mut limit = None;
    if node.label == Label::Limit {
        if let Label::Literal(l) = &node.children[0].label {
            limit = Some(l.text.clone());
        }
        node = input(node);
    }
    let mut order = Vec::new();
    if node.label == Label::OrderBy {
        for k in &node.children[..node.children.len() - 1] {
            let dir = if k.label == Label::Desc {
                "descending"
            } else {
                "ascending"
            };
            order.push(format!("{} in {dir} order", expr(&k.children[0])));
        }
        node = input(node);
    }
    let distinct = node.label == Label::Distinct;
    if distinct {
        node = &node.children[0];
    }
    let items: Vec<String> = node.children[..node.children.len() - 1]
        .iter()
        .map(item)
        .collect();
    let mut rest = input(node);
    let mut having = None;
    if rest.label == Label::Filter
        && rest.children.len() == 2
        && rest.children[1].label == Label::GroupBy
    {
        having = Some(expr(&rest.children[0]));
        rest = &rest.children[1];
    }
    let mut group = Vec::new();
    if rest.label == Label::GroupBy {
        group = rest.children[..rest.children.len() - 1]
            .iter()
            .map(expr)
            .collect();
        rest = input(rest);
    }
    let mut selection = None;
    if rest.label == Label::Filter && rest.children.len() == 2 {
        selection = Some(expr(&rest.children[0]));
        rest = &rest.children[1];
    }
    let mut tables = Vec::new();
    collect_tables(rest, &mut tables);

    let mut s = String::new();
    if distinct {
        s.push_str("the distinct values of ");
    }
    s.push_str(&and_list(&items));
    s.push_str(" of the ");
    s.push_str(&and_list(&tables));
    s.push_str(if tables.len() > 1 {
        " tables"
    } else {
        " table"
    });
    if let Some(w) = selection {
        s.push_str(" where ");
        s.push_str(&w);
    }
    if !group.is_empty() {
        s.push_str(" for each ");
        s.push_str(&and_list(&group));
    }
    if let Some(h) = having {
        s.push_str(" having ");
        s.push_str(&h);
    }
    if !order.is_empty() {
        s.push_str(" sorted by ");
        s.push_str(&and_list(&order));
    }
    if let Some(n) = limit {
        s.push_str(&format!(" keeping the top {n}"));
    }
    s
}

fn collect_tables(node: &Node<Label>, out: &mut Vec<String>) {
    match &node.label {
        Label::Table(t) => out.push(humanize(&t.name)),
        Label::Join => {
            collect_tables(&node.children[0], out);
            collect_tables(&node.children[1], out);
        }
        _ => {}
    }
}

fn and_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn item(node: &Node<Label>) -> String {
    match &node.label {
        Label::Column(c) if c.is_star() => "all columns".into(),
        Label::Column(c) => format!("the {}", humanize(&c.name)),
        _ => expr(node),
    }
}

fn expr(node: &Node<Label>) -> String {
    let c = &node.children;
    match &node.label {
        Label::Column(col) if col.is_star() => "rows".into(),
        Label::Column(col) => humanize(&col.name),
        Label::Literal(l) => l.text.clone(),
        Label::Agg(f) => {
            let (distinct, arg) = match c[0].label {
                Label::Distinct => ("distinct ", &c[0].children[0]),
                _ => ("", &c[0]),
            };
            let word = match f {
                AggFunc::Count => "number of",
                AggFunc::Sum => "total",
                AggFunc::Avg => "average",
                AggFunc::Min => "minimum",
                AggFunc::Max => "maximum",
            };
            format!("the {word} {distinct}{}", expr(arg))
        }
        Label::Arith(op) => {
            let word = match op {
                ArithOp::Add => "plus",
                ArithOp::Sub => "minus",
                ArithOp::Mul => "times",
                ArithOp::Div => "divided by",
            };
            format!("{} {word} {}", expr(&c[0]), expr(&c[1]))
        }
        Label::Cmp(op) => {
            let word = match op {
                CmpOp::Eq => "is",
                CmpOp::Neq => "is not",
                CmpOp::Lt => "is less than",
                CmpOp::Le => "is at most",
                CmpOp::Gt => "is greater than",
                CmpOp::Ge => "is at least",
            };
            format!("{} {word} {}", expr(&c[0]), expr(&c[1]))
        }
        Label::And => format!("{} and {}", expr(&c[0]), expr(&c[1])),
        Label::Or => format!("{} or {}", expr(&c[0]), expr(&c[1])),
        Label::Not => match c[0].label {
            Label::Like | Label::Between | Label::NestedIn => predicate(&c[0], "not "),
            _ => format!("not {}", expr(&c[0])),
        },
        Label::Like | Label::Between | Label::NestedIn => predicate(node, ""),
        _ => format!("the {}", describe_query(node)),
    }
}

fn predicate(node: &Node<Label>, not: &str) -> String {
    let c = &node.children;
    match node.label {
        Label::Like => format!("{} is {not}like {}", expr(&c[0]), expr(&c[1])),
        Label::Between => format!(
            "{} is {not}between {} and {}",
            expr(&c[0]),
            expr(&c[1]),
            expr(&c[2])
        ),
        _ => format!("{} is {not}among {}", expr(&c[0]), describe_query(&c[1])),
    }
}

/// Splits the explanation's new words evenly over the MASK slots, skipping
/// its leading verb.
fn fill(template: &str, explanation: &str, leave_mask: bool) -> String {
    let tokens = tokenize(template);
    let anchors: BTreeSet<String> = tokens
        .iter()
        .filter(|t| *t != MASK)
        .map(|t| t.to_lowercase())
        .collect();
    let mut seen = BTreeSet::new();
    let words: Vec<String> = tokenize_lower(explanation)
        .into_iter()
        .skip(1)
        .filter(|w| !is_punctuation(w) && !anchors.contains(w) && seen.insert(w.clone()))
        .collect();
    let masks = tokens.iter().filter(|t| *t == MASK).count();
    let mut chunks = Vec::with_capacity(masks);
    let mut start = 0;
    for i in 0..masks {
        let len = words.len() / masks + usize::from(i < words.len() % masks);
        chunks.push(words[start..start + len].join(" "));
        start += len;
    }
    let mut out = Vec::new();
    let mut slot = 0;
    for t in tokens {
        if t == MASK {
            if leave_mask && slot == 0 {
                out.push(MASK.to_string());
            } else if !chunks[slot].is_empty() {
                out.push(chunks[slot].clone());
            }
            slot += 1;
        } else {
            out.push(t);
        }
    }
    out.join(" ")
}

fn schema_tables(schema: &str) -> Vec<(String, Vec<(String, String)>)> {
    schema
        .lines()
        .filter(|l| !l.starts_with("foreign key:"))
        .filter_map(|l| {
            let open = l.find('(')?;
            let cols = l[open + 1..].trim_end_matches(')');
            let cols = cols
                .split(", ")
                .filter_map(|c| {
                    c.rsplit_once(' ')
                        .map(|(n, t)| (n.to_string(), t.to_string()))
                })
                .collect();
            Some((l[..open].trim().to_string(), cols))
        })
        .collect()
}

/// A foreign key as ((table, column), (table, column)).
type Link = ((String, String), (String, String));

fn schema_links(schema: &str) -> Vec<Link> {
    let split = |s: &str| {
        s.trim()
            .split_once('.')
            .map(|(t, c)| (t.to_string(), c.to_string()))
    };
    schema
        .lines()
        .filter_map(|l| l.strip_prefix("foreign key:"))
        .filter_map(|l| {
            let (a, b) = l.split_once('=')?;
            Some((split(a)?, split(b)?))
        })
        .collect()
}

/// Tables whose name, or each underscore-separated part of it, occurs in
/// the question (allowing a plural or singular form).
fn extract_tables(question: &str, schema: &str) -> Vec<String> {
    let words: BTreeSet<String> = tokenize_lower(question).into_iter().collect();
    let has = |w: &str| {
        words.contains(w)
            || words.contains(&format!("{w}s"))
            || w.strip_suffix('s').is_some_and(|s| words.contains(s))
    };
    schema_tables(schema)
        .into_iter()
        .map(|(t, _)| t)
        .filter(|t| {
            let lower = t.to_lowercase();
            has(&lower) || lower.split('_').filter(|p| !p.is_empty()).all(has)
        })
        .collect()
}

const QUESTION_FORMS: &[&str] = &[
    "{q}",
    "Tell me {l}",
    "I would like to know {l}",
    "Could you find out {l}",
    "Please answer : {l}",
];

const DESCRIPTION_FORMS: &[&str] = &[
    "Can you {l} ?",
    "Please {l} .",
    "I want to {l} .",
    "Could you {l} ?",
    "Would you {l} ?",
];

fn paraphrases(text: &str, n: usize, forms: &[&str]) -> Vec<String> {
    let q = text.trim().trim_end_matches('.').trim_end();
    let mut chars = q.chars();
    let l: String = chars
        .next()
        .map(|c| c.to_lowercase().chain(chars).collect())
        .unwrap_or_default();
    (0..n)
        .map(|k| {
            let base = forms[k % forms.len()].replace("{q}", q).replace("{l}", &l);
            if k < forms.len() {
                base
            } else {
                format!("{base} ( variant {} )", k + 1)
            }
        })
        .collect()
}

fn numbered(lines: &[String]) -> String {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}. {l}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone)]
enum Bound {
    Table(String),
    Column { name: String, numeric: bool },
    Text(String),
}

impl Bound {
    fn text(&self) -> &str {
        match self {
            Bound::Table(t) | Bound::Text(t) => t,
            Bound::Column { name, .. } => name,
        }
    }
}

/// Fills `[hole]` markers with the first assignment that satisfies every
/// hole's schema constraint.
fn fill_sql(schema: &str, holes: &str, template: &str, bad_column: bool) -> String {
    let tables = schema_tables(schema);
    let links = schema_links(schema);
    let holes: Vec<(String, HoleKind)> = holes
        .lines()
        .filter_map(|l| {
            let (name, kind) = l.split_once(':')?;
            Some((name.trim().to_string(), kind.trim().parse().ok()?))
        })
        .collect();
    let mut bound = BTreeMap::new();
    if !assign(&holes, 0, &tables, &links, &mut bound) {
        return "-- no schema-valid filling".to_string();
    }
    if bad_column {
        if let Some((name, _)) = holes.iter().find(|(_, k)| k.is_column()) {
            bound.insert(name.clone(), Bound::Text("no_such_column".into()));
        }
    }
    let mut out = template.to_string();
    for (name, value) in &bound {
        out = out.replace(&format!("[{name}]"), value.text());
    }
    out
}

fn assign(
    holes: &[(String, HoleKind)],
    i: usize,
    tables: &[(String, Vec<(String, String)>)],
    links: &[Link],
    bound: &mut BTreeMap<String, Bound>,
) -> bool {
    let Some((name, kind)) = holes.get(i) else {
        return true;
    };
    let table_of = |b: &BTreeMap<String, Bound>, h: &str| match b.get(h) {
        Some(Bound::Table(t)) => Some(t.clone()),
        _ => None,
    };
    let columns = |t: &str| {
        tables
            .iter()
            .find(|(n, _)| n == t)
            .map(|(_, c)| c.clone())
            .unwrap_or_default()
    };
    let column = |n: &str, ty: &str| Bound::Column {
        name: n.to_string(),
        numeric: ty == "number",
    };
    let candidates: Vec<Bound> = match kind {
        HoleKind::Table => tables
            .iter()
            .map(|(t, _)| Bound::Table(t.clone()))
            .collect(),
        HoleKind::LinkedTable(h) => match table_of(bound, h) {
            Some(t) => links
                .iter()
                .filter_map(|((a, _), (b, _))| {
                    if *a == t && *b != t {
                        Some(b.clone())
                    } else if *b == t && *a != t {
                        Some(a.clone())
                    } else {
                        None
                    }
                })
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(Bound::Table)
                .collect(),
            None => vec![],
        },
        HoleKind::Column(h) | HoleKind::NumericColumn(h) | HoleKind::TextColumn(h) => {
            match table_of(bound, h) {
                Some(t) => columns(&t)
                    .iter()
                    .filter(|(_, ty)| match kind {
                        HoleKind::NumericColumn(_) => ty == "number",
                        HoleKind::TextColumn(_) => ty == "text",
                        _ => true,
                    })
                    .map(|(n, ty)| column(n, ty))
                    .collect(),
                None => vec![],
            }
        }
        HoleKind::Value(h) | HoleKind::Op(h) => match bound.get(h) {
            Some(Bound::Column { numeric, .. }) => {
                let text = match (kind, numeric) {
                    (HoleKind::Value(_), true) => "1",
                    (HoleKind::Value(_), false) => "'x'",
                    (_, true) => ">",
                    (_, false) => "=",
                };
                vec![Bound::Text(text.into())]
            }
            _ => vec![],
        },
        HoleKind::Agg => vec![Bound::Text(AggFunc::Count.name().into())],
        HoleKind::Number => vec![Bound::Text("3".into())],
        HoleKind::JoinOn(x, y) => match (table_of(bound, x), table_of(bound, y)) {
            (Some(tx), Some(ty)) => links
                .iter()
                .filter_map(|((a, ac), (b, bc))| {
                    if *a == tx && *b == ty || *a == ty && *b == tx {
                        Some(Bound::Text(format!("{a}.{ac} = {b}.{bc}")))
                    } else {
                        None
                    }
                })
                .collect(),
            _ => vec![],
        },
    };
    for c in candidates {
        bound.insert(name.clone(), c);
        if assign(holes, i + 1, tables, links, bound) {
            return true;
        }
    }
    bound.remove(name);
    false
}
