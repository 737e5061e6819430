//! SQL-subset parser: SELECT lists with aggregates and COUNT(DISTINCT),
//! inner joins, WHERE with comparison atoms and IN <table> semi-joins,
//! GROUP BY / HAVING, ORDER BY ... LIMIT, DISTINCT, and a single
//! non-recursive WITH clause. Window functions are limited to the
//! `row_no() OVER (PARTITION BY .. ORDER BY ..)` pattern.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SqlError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported feature: {0}")]
    Unsupported(String),
}

fn syntax<T>(pos: usize, msg: impl Into<String>) -> Result<T, SqlError> {
    Err(SqlError::Syntax {
        pos,
        msg: msg.into(),
    })
}

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub with: Option<(String, Box<QuerySpec>)>,
    pub distinct: bool,
    pub items: Vec<SelectItem>,
    pub from: Vec<TableRef>,
    pub join_on: Vec<SqlPredicate>,
    pub where_clause: Option<SqlPredicate>,
    pub group_by: Vec<String>,
    pub having: Option<SqlPredicate>,
    pub order_by: Vec<(String, bool)>, // column/alias, descending
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Column { name: String, alias: Option<String> },
    Aggregate {
        func: AggName,
        arg: Option<String>, // None = *
        distinct: bool,
        alias: Option<String>,
    },
    RowNumber { partition: String, order: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggName {
    Count,
    Sum,
    Min,
    Max,
    Avg,
}

impl fmt::Display for AggName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AggName::Count => "COUNT",
            AggName::Sum => "SUM",
            AggName::Min => "MIN",
            AggName::Max => "MAX",
            AggName::Avg => "AVG",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub table: String,
    pub alias: Option<String>,
    /// Derived table: FROM (SELECT ...) alias.
    pub subquery: Option<Box<QuerySpec>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SqlPredicate {
    Cmp(SqlCmp, SqlExpr, SqlExpr),
    In { col: String, table: String },
    And(Vec<SqlPredicate>),
    Or(Vec<SqlPredicate>),
    Not(Box<SqlPredicate>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqlCmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SqlExpr {
    Col(String),
    Int(i64),
    Str(String),
    /// Aggregate reference inside HAVING, e.g. COUNT(*).
    Agg(AggName, Option<String>),
    Add(Box<SqlExpr>, Box<SqlExpr>),
    Sub(Box<SqlExpr>, Box<SqlExpr>),
    Mul(Box<SqlExpr>, Box<SqlExpr>),
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Sym(char),
    Le,
    Ge,
    Ne,
    Eof,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn lex(input: &str) -> Result<Vec<(Tok, usize)>, SqlError> {
    let bytes = input.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len()
                && ((bytes[i] as char).is_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.')
            {
                i += 1;
            }
            toks.push((Tok::Ident(input[start..i].to_string()), start));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'-' && i > start)
            {
                i += 1;
            }
            // ISO dates look like 2020-01-15: lex as a string token
            let text = &input[start..i];
            if text.matches('-').count() == 2 {
                toks.push((Tok::Str(text.to_string()), start));
            } else {
                let v: i64 = text
                    .parse()
                    .map_err(|_| SqlError::Syntax {
                        pos: start,
                        msg: format!("bad number {text}"),
                    })?;
                toks.push((Tok::Int(v), start));
            }
        } else if c == '\'' {
            let start = i;
            i += 1;
            let sstart = i;
            while i < bytes.len() && bytes[i] != b'\'' {
                i += 1;
            }
            if i >= bytes.len() {
                return syntax(start, "unterminated string literal");
            }
            toks.push((Tok::Str(input[sstart..i].to_string()), start));
            i += 1;
        } else if c == '<' && i + 1 < bytes.len() && bytes[i + 1] == b'=' {
            toks.push((Tok::Le, i));
            i += 2;
        } else if c == '>' && i + 1 < bytes.len() && bytes[i + 1] == b'=' {
            toks.push((Tok::Ge, i));
            i += 2;
        } else if (c == '<' && i + 1 < bytes.len() && bytes[i + 1] == b'>')
            || (c == '!' && i + 1 < bytes.len() && bytes[i + 1] == b'=')
        {
            toks.push((Tok::Ne, i));
            i += 2;
        } else if "(),*=<>+-".contains(c) {
            toks.push((Tok::Sym(c), i));
            i += 1;
        } else {
            return syntax(i, format!("unexpected character {c:?}"));
        }
    }
    toks.push((Tok::Eof, input.len()));
    Ok(toks)
}

impl Lexer {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn at(&self) -> usize {
        self.toks[self.pos].1
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if let Tok::Ident(s) = self.peek() {
            if s.eq_ignore_ascii_case(kw) {
                self.next();
                return true;
            }
        }
        false
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            syntax(self.at(), format!("expected {kw}"))
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == &Tok::Sym(c) {
            self.next();
            return true;
        }
        false
    }

    fn expect_sym(&mut self, c: char) -> Result<(), SqlError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            syntax(self.at(), format!("expected {c:?}"))
        }
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        let pos = self.at();
        match self.next() {
            Tok::Ident(s) => Ok(s),
            other => syntax(pos, format!("expected identifier, found {other:?}")),
        }
    }
}

const KEYWORDS: &[&str] = &[
    "select", "distinct", "from", "where", "group", "by", "having", "order", "limit", "and",
    "or", "not", "in", "join", "on", "as", "with", "asc", "desc", "days", "over", "partition",
];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| s.eq_ignore_ascii_case(k))
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

pub fn parse(input: &str) -> Result<QuerySpec, SqlError> {
    let mut lx = Lexer {
        toks: lex(input)?,
        pos: 0,
    };
    let q = parse_query(&mut lx)?;
    if lx.peek() != &Tok::Eof {
        return syntax(lx.at(), "trailing input after query");
    }
    Ok(q)
}

fn parse_query(lx: &mut Lexer) -> Result<QuerySpec, SqlError> {
    let with = if lx.eat_kw("with") {
        let name = lx.ident()?;
        lx.expect_kw("as")?;
        lx.expect_sym('(')?;
        let sub = parse_select(lx)?;
        lx.expect_sym(')')?;
        Some((name, Box::new(sub)))
    } else {
        None
    };
    let mut q = parse_select(lx)?;
    q.with = with;
    Ok(q)
}

fn parse_select(lx: &mut Lexer) -> Result<QuerySpec, SqlError> {
    lx.expect_kw("select")?;
    let distinct = lx.eat_kw("distinct");
    let mut items = vec![parse_item(lx)?];
    while lx.eat_sym(',') {
        items.push(parse_item(lx)?);
    }
    lx.expect_kw("from")?;
    let mut from = vec![parse_table_ref(lx)?];
    let mut join_on = Vec::new();
    loop {
        if lx.eat_sym(',') {
            from.push(parse_table_ref(lx)?);
        } else if lx.eat_kw("join") {
            from.push(parse_table_ref(lx)?);
            lx.expect_kw("on")?;
            join_on.push(parse_predicate(lx)?);
        } else {
            break;
        }
    }
    let where_clause = if lx.eat_kw("where") {
        Some(parse_predicate(lx)?)
    } else {
        None
    };
    let mut group_by = Vec::new();
    if lx.eat_kw("group") {
        lx.expect_kw("by")?;
        group_by.push(parse_group_key(lx)?);
        while lx.eat_sym(',') {
            group_by.push(parse_group_key(lx)?);
        }
    }
    let having = if lx.eat_kw("having") {
        Some(parse_predicate(lx)?)
    } else {
        None
    };
    let mut order_by = Vec::new();
    if lx.eat_kw("order") {
        lx.expect_kw("by")?;
        loop {
            let col = lx.ident()?;
            let desc = if lx.eat_kw("desc") {
                true
            } else {
                lx.eat_kw("asc");
                false
            };
            order_by.push((col, desc));
            if !lx.eat_sym(',') {
                break;
            }
        }
    }
    let limit = if lx.eat_kw("limit") {
        let pos = lx.at();
        match lx.next() {
            Tok::Int(v) if v > 0 => Some(v as usize),
            _ => return syntax(pos, "expected positive LIMIT"),
        }
    } else {
        None
    };
    Ok(QuerySpec {
        with: None,
        distinct,
        items,
        from,
        join_on,
        where_clause,
        group_by,
        having,
        order_by,
        limit,
    })
}

/// GROUP BY key; CONCAT(a, b) denotes grouping on the composite key.
fn parse_group_key(lx: &mut Lexer) -> Result<String, SqlError> {
    let name = lx.ident()?;
    if name.eq_ignore_ascii_case("concat") {
        lx.expect_sym('(')?;
        let mut cols = vec![lx.ident()?];
        while lx.eat_sym(',') {
            cols.push(lx.ident()?);
        }
        lx.expect_sym(')')?;
        return Ok(cols.join("\u{1}")); // composite marker, split at lowering
    }
    Ok(name)
}

fn parse_item(lx: &mut Lexer) -> Result<SelectItem, SqlError> {
    if lx.peek() == &Tok::Sym('*') {
        lx.next();
        return Err(SqlError::Unsupported(
            "SELECT * would open raw base rows".into(),
        ));
    }
    let pos = lx.at();
    let name = lx.ident()?;
    let upper = name.to_ascii_uppercase();
    let agg = match upper.as_str() {
        "COUNT" => Some(AggName::Count),
        "SUM" => Some(AggName::Sum),
        "MIN" => Some(AggName::Min),
        "MAX" => Some(AggName::Max),
        "AVG" => Some(AggName::Avg),
        _ => None,
    };
    if let Some(func) = agg {
        lx.expect_sym('(')?;
        let (arg, distinct) = if lx.eat_sym('*') {
            (None, false)
        } else {
            let distinct = lx.eat_kw("distinct");
            (Some(lx.ident()?), distinct)
        };
        lx.expect_sym(')')?;
        let alias = parse_alias(lx)?;
        return Ok(SelectItem::Aggregate {
            func,
            arg,
            distinct,
            alias,
        });
    }
    if upper == "ROW_NO" {
        lx.expect_sym('(')?;
        lx.expect_sym(')')?;
        lx.expect_kw("over")?;
        lx.expect_sym('(')?;
        lx.expect_kw("partition")?;
        lx.expect_kw("by")?;
        let partition = lx.ident()?;
        lx.expect_kw("order")?;
        lx.expect_kw("by")?;
        let order = lx.ident()?;
        lx.expect_sym(')')?;
        return Ok(SelectItem::RowNumber { partition, order });
    }
    if is_keyword(&name) {
        return syntax(pos, format!("unexpected keyword {name}"));
    }
    let alias = parse_alias(lx)?;
    Ok(SelectItem::Column { name, alias })
}

fn parse_alias(lx: &mut Lexer) -> Result<Option<String>, SqlError> {
    if lx.eat_kw("as") {
        return Ok(Some(lx.ident()?));
    }
    if let Tok::Ident(s) = lx.peek() {
        if !is_keyword(s) {
            let s = s.clone();
            lx.next();
            return Ok(Some(s));
        }
    }
    Ok(None)
}

fn parse_table_ref(lx: &mut Lexer) -> Result<TableRef, SqlError> {
    if lx.eat_sym('(') {
        let sub = parse_select(lx)?;
        lx.expect_sym(')')?;
        let alias = parse_alias(lx)?;
        return Ok(TableRef {
            table: alias.clone().unwrap_or_else(|| "subquery".to_string()),
            alias,
            subquery: Some(Box::new(sub)),
        });
    }
    let table = lx.ident()?;
    let alias = parse_alias(lx)?;
    Ok(TableRef {
        table,
        alias,
        subquery: None,
    })
}

fn parse_predicate(lx: &mut Lexer) -> Result<SqlPredicate, SqlError> {
    parse_or(lx)
}

fn parse_or(lx: &mut Lexer) -> Result<SqlPredicate, SqlError> {
    let mut parts = vec![parse_and(lx)?];
    while lx.eat_kw("or") {
        parts.push(parse_and(lx)?);
    }
    Ok(if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        SqlPredicate::Or(parts)
    })
}

fn parse_and(lx: &mut Lexer) -> Result<SqlPredicate, SqlError> {
    let mut parts = vec![parse_unary(lx)?];
    while lx.eat_kw("and") {
        parts.push(parse_unary(lx)?);
    }
    Ok(if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        SqlPredicate::And(parts)
    })
}

fn parse_unary(lx: &mut Lexer) -> Result<SqlPredicate, SqlError> {
    if lx.eat_kw("not") {
        return Ok(SqlPredicate::Not(Box::new(parse_unary(lx)?)));
    }
    if lx.eat_sym('(') {
        let p = parse_predicate(lx)?;
        lx.expect_sym(')')?;
        return Ok(p);
    }
    let lhs = parse_expr(lx)?;
    if lx.eat_kw("in") {
        let pos = lx.at();
        let col = match lhs {
            SqlExpr::Col(c) => c,
            _ => return syntax(pos, "IN requires a column on the left"),
        };
        let table = lx.ident()?;
        return Ok(SqlPredicate::In { col, table });
    }
    let pos = lx.at();
    let op = match lx.next() {
        Tok::Sym('=') => SqlCmp::Eq,
        Tok::Ne => SqlCmp::Ne,
        Tok::Sym('<') => SqlCmp::Lt,
        Tok::Le => SqlCmp::Le,
        Tok::Sym('>') => SqlCmp::Gt,
        Tok::Ge => SqlCmp::Ge,
        other => return syntax(pos, format!("expected comparison, found {other:?}")),
    };
    let rhs = parse_expr(lx)?;
    Ok(SqlPredicate::Cmp(op, lhs, rhs))
}

fn parse_expr(lx: &mut Lexer) -> Result<SqlExpr, SqlError> {
    let mut lhs = parse_term(lx)?;
    loop {
        if lx.eat_sym('+') {
            lhs = SqlExpr::Add(Box::new(lhs), Box::new(parse_term(lx)?));
        } else if lx.eat_sym('-') {
            lhs = SqlExpr::Sub(Box::new(lhs), Box::new(parse_term(lx)?));
        } else {
            return Ok(lhs);
        }
    }
}

fn parse_term(lx: &mut Lexer) -> Result<SqlExpr, SqlError> {
    let mut lhs = parse_factor(lx)?;
    while lx.eat_sym('*') {
        lhs = SqlExpr::Mul(Box::new(lhs), Box::new(parse_factor(lx)?));
    }
    Ok(lhs)
}

fn parse_factor(lx: &mut Lexer) -> Result<SqlExpr, SqlError> {
    if lx.eat_sym('(') {
        let e = parse_expr(lx)?;
        lx.expect_sym(')')?;
        return Ok(e);
    }
    let pos = lx.at();
    match lx.next() {
        Tok::Int(v) => {
            // "15 DAYS" style intervals reduce to their day count
            lx.eat_kw("days");
            Ok(SqlExpr::Int(v))
        }
        Tok::Str(s) => Ok(SqlExpr::Str(s)),
        Tok::Ident(s) if !is_keyword(&s) => {
            let agg = match s.to_ascii_uppercase().as_str() {
                "COUNT" => Some(AggName::Count),
                "SUM" => Some(AggName::Sum),
                "MIN" => Some(AggName::Min),
                "MAX" => Some(AggName::Max),
                "AVG" => Some(AggName::Avg),
                _ => None,
            };
            if agg.is_some() && lx.peek() == &Tok::Sym('(') {
                lx.next();
                let arg = if lx.eat_sym('*') {
                    None
                } else {
                    Some(lx.ident()?)
                };
                lx.expect_sym(')')?;
                return Ok(SqlExpr::Agg(agg.unwrap(), arg));
            }
            Ok(SqlExpr::Col(s))
        }
        other => syntax(pos, format!("expected value, found {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comorbidity() {
        let q = parse(
            "SELECT diag, COUNT(*) cnt FROM diagnosis WHERE pid IN cdiff_cohort \
             GROUP BY diag ORDER BY cnt DESC LIMIT 10",
        )
        .unwrap();
        assert_eq!(q.items.len(), 2);
        assert!(matches!(
            q.where_clause,
            Some(SqlPredicate::In { ref col, ref table }) if col == "pid" && table == "cdiff_cohort"
        ));
        assert_eq!(q.group_by, vec!["diag"]);
        assert_eq!(q.order_by, vec![("cnt".to_string(), true)]);
        assert_eq!(q.limit, Some(10));
    }

    #[test]
    fn parses_recurrent_cdiff_with_clause() {
        let q = parse(
            "WITH rcd AS (SELECT pid, time, row_no() OVER (PARTITION BY pid ORDER BY time) \
             FROM diagnosis WHERE diag = 'cdiff') \
             SELECT DISTINCT pid FROM rcd r1 JOIN rcd r2 ON r1.pid = r2.pid \
             WHERE r2.time - r1.time >= 15 DAYS AND r2.time - r1.time <= 56 DAYS \
             AND r2.row_no = r1.row_no + 1",
        )
        .unwrap();
        let (name, sub) = q.with.as_ref().unwrap();
        assert_eq!(name, "rcd");
        assert!(sub
            .items
            .iter()
            .any(|i| matches!(i, SelectItem::RowNumber { .. })));
        assert!(q.distinct);
    }

    #[test]
    fn parses_aspirin_count() {
        let q = parse(
            "SELECT COUNT(DISTINCT d.pid) FROM diagnosis AS d JOIN medication AS m ON d.pid = m.pid \
             WHERE d.diag = 'hd' AND m.med = 'aspirin' AND d.time <= m.time",
        )
        .unwrap();
        assert!(matches!(
            q.items[0],
            SelectItem::Aggregate {
                func: AggName::Count,
                distinct: true,
                ..
            }
        ));
        assert_eq!(q.join_on.len(), 1);
    }

    #[test]
    fn parses_password_reuse_concat_group() {
        let q = parse(
            "SELECT ID FROM R GROUP BY CONCAT(ID, PWD) HAVING COUNT(*) > 1",
        )
        .unwrap();
        assert_eq!(q.group_by.len(), 1);
        assert!(q.group_by[0].contains('\u{1}'));
        assert!(q.having.is_some());
    }

    #[test]
    fn rejects_select_star() {
        assert!(matches!(
            parse("SELECT * FROM r"),
            Err(SqlError::Unsupported(_))
        ));
    }

    #[test]
    fn error_position_reported() {
        let err = parse("SELECT a FROM r WHERE").unwrap_err();
        match err {
            SqlError::Syntax { pos, .. } => assert!(pos >= 20),
            other => panic!("unexpected {other:?}"),
        }
    }
}
