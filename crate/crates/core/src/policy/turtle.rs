//! Turtle subset for policy documents.
//!
//! Grammar (informal):
//!
//! ```text
//! document    := ( prefix | statement )*
//! prefix      := "@prefix" PNAME_NS IRIREF "."
//! statement   := subject polist "."
//! subject     := iri | "<<" iri verb object ">>"
//! polist      := verb objects ( ";" ( verb objects )? )*
//! verb        := "a" | iri
//! objects     := object ( "," object )*
//! object      := iri | path | literal | "[" polist "]"
//! path        := pname ( "/" pname )+
//! literal     := NUMBER | STRING ( "^^" iri )?
//! iri         := IRIREF | PNAME
//! ```
//!
//! The prefixes in [`PREFIXES`] and the empty prefix are bound before the
//! document is read; any other prefix must be declared.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{
    is_local_name, parse_duration, AuditTemplate, Clause, Comparator, Condition, Constraint, FieldValue, Fields,
    Obligation, Policy, Target, DEFAULT_POLICY_VERSION,
};

pub const PREFIXES: [(&str, &str); 6] = [
    ("afdo", "http://w3id.org/afdo#"),
    ("prov", "http://www.w3.org/ns/prov#"),
    ("sh", "http://www.w3.org/ns/shacl#"),
    ("odrl", "http://www.w3.org/ns/odrl/2/"),
    ("xsd", "http://www.w3.org/2001/XMLSchema#"),
    ("hp", "http://purl.obolibrary.org/obo/HP_"),
];

const LOCAL_NS: &str = "http://w3id.org/afdo/id/";
const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
const AFDO: &str = "http://w3id.org/afdo#";
const SH: &str = "http://www.w3.org/ns/shacl#";
const ODRL: &str = "http://www.w3.org/ns/odrl/2/";
const XSD_DURATION: &str = "http://www.w3.org/2001/XMLSchema#duration";
const ANNOUNCED: &str = "http://w3id.org/afdo/id/announced";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot serialise policy {policy}: {reason}")]
pub struct SerialiseError {
    pub policy: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    col: usize,
}

fn err_at(pos: Pos, message: impl Into<String>) -> ParseError {
    ParseError { line: pos.line, col: pos.col, message: message.into() }
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Prefix,
    IriRef(String),
    PName(String, String),
    Path(Vec<(String, String)>),
    A,
    Number(f64),
    Str(String),
    DtSep,
    Dot,
    Semi,
    Comma,
    LBracket,
    RBracket,
    QOpen,
    QClose,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Prefix => "@prefix".into(),
            Tok::IriRef(i) => format!("<{i}>"),
            Tok::PName(p, l) => format!("{p}:{l}"),
            Tok::Path(_) => "property path".into(),
            Tok::A => "'a'".into(),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(_) => "string literal".into(),
            Tok::DtSep => "'^^'".into(),
            Tok::Dot => "'.'".into(),
            Tok::Semi => "';'".into(),
            Tok::Comma => "','".into(),
            Tok::LBracket => "'['".into(),
            Tok::RBracket => "']'".into(),
            Tok::QOpen => "'<<'".into(),
            Tok::QClose => "'>>'".into(),
        }
    }
}

struct Lexer<'a> {
    chars: Vec<char>,
    i: usize,
    line: usize,
    col: usize,
    _src: &'a str,
}

fn is_prefix_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn is_local_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.'
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { chars: src.chars().collect(), i: 0, line: 1, col: 1, _src: src }
    }

    fn peek(&self, k: usize) -> Option<char> {
        self.chars.get(self.i + k).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.i).copied()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, ParseError> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek(0) {
                if c.is_whitespace() {
                    self.bump();
                } else if c == '#' {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let pos = self.pos();
            let Some(c) = self.peek(0) else { break };
            let tok = match c {
                '.' if !self.peek(1).is_some_and(|d| d.is_ascii_digit()) => {
                    self.bump();
                    Tok::Dot
                }
                ';' => {
                    self.bump();
                    Tok::Semi
                }
                ',' => {
                    self.bump();
                    Tok::Comma
                }
                '[' => {
                    self.bump();
                    Tok::LBracket
                }
                ']' => {
                    self.bump();
                    Tok::RBracket
                }
                '^' => {
                    self.bump();
                    if self.bump() != Some('^') {
                        return Err(err_at(pos, "expected '^^'"));
                    }
                    Tok::DtSep
                }
                '>' => {
                    self.bump();
                    if self.bump() != Some('>') {
                        return Err(err_at(pos, "expected '>>'"));
                    }
                    Tok::QClose
                }
                '<' if self.peek(1) == Some('<') => {
                    self.bump();
                    self.bump();
                    Tok::QOpen
                }
                '<' => {
                    self.bump();
                    let mut iri = String::new();
                    loop {
                        match self.bump() {
                            Some('>') => break,
                            Some(c) if c.is_whitespace() || c == '<' => return Err(err_at(pos, "malformed IRI")),
                            Some(c) => iri.push(c),
                            None => return Err(err_at(pos, "unterminated IRI")),
                        }
                    }
                    Tok::IriRef(iri)
                }
                '"' => Tok::Str(self.string(pos)?),
                '@' => {
                    let word = self.word();
                    if word == "@prefix" {
                        Tok::Prefix
                    } else {
                        return Err(err_at(pos, format!("unsupported directive {word}")));
                    }
                }
                c if c.is_ascii_digit() || c == '+' || c == '-' || c == '.' => self.number(pos)?,
                c if is_prefix_char(c) || c == ':' => self.name(pos)?,
                other => return Err(err_at(pos, format!("unexpected character {other:?}"))),
            };
            out.push((tok, pos));
        }
        Ok(out)
    }

    fn word(&mut self) -> String {
        let mut w = String::new();
        while let Some(c) = self.peek(0) {
            if c.is_whitespace() {
                break;
            }
            w.push(c);
            self.bump();
        }
        w
    }

    fn string(&mut self, pos: Pos) -> Result<String, ParseError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                Some('"') => return Ok(s),
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('r') => s.push('\r'),
                    Some('t') => s.push('\t'),
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    _ => return Err(err_at(pos, "unsupported escape in string")),
                },
                Some('\n') | None => return Err(err_at(pos, "unterminated string")),
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self, pos: Pos) -> Result<Tok, ParseError> {
        let mut s = String::new();
        if let Some(c @ ('+' | '-')) = self.peek(0) {
            s.push(c);
            self.bump();
        }
        let digits = |lx: &mut Self, s: &mut String| {
            let mut n = 0;
            while let Some(c) = lx.peek(0) {
                if !c.is_ascii_digit() {
                    break;
                }
                s.push(c);
                lx.bump();
                n += 1;
            }
            n
        };
        let mut n = digits(self, &mut s);
        if self.peek(0) == Some('.') && self.peek(1).is_some_and(|d| d.is_ascii_digit()) {
            s.push('.');
            self.bump();
            n += digits(self, &mut s);
        }
        if n == 0 {
            return Err(err_at(pos, "malformed number"));
        }
        if let Some(e @ ('e' | 'E')) = self.peek(0) {
            s.push(e);
            self.bump();
            if let Some(c @ ('+' | '-')) = self.peek(0) {
                s.push(c);
                self.bump();
            }
            if digits(self, &mut s) == 0 {
                return Err(err_at(pos, "malformed exponent"));
            }
        }
        s.parse().map(Tok::Number).map_err(|_| err_at(pos, "malformed number"))
    }

    fn pname(&mut self, pos: Pos) -> Result<(String, String), ParseError> {
        let mut prefix = String::new();
        while let Some(c) = self.peek(0) {
            if !is_prefix_char(c) {
                break;
            }
            prefix.push(c);
            self.bump();
        }
        if self.peek(0) != Some(':') {
            return Err(err_at(pos, format!("unexpected word {prefix:?}")));
        }
        self.bump();
        let mut local = String::new();
        while let Some(c) = self.peek(0) {
            if !is_local_char(c) {
                break;
            }
            // a trailing dot terminates the statement
            if c == '.' && !self.peek(1).is_some_and(is_local_char) {
                break;
            }
            local.push(c);
            self.bump();
        }
        Ok((prefix, local))
    }

    fn name(&mut self, pos: Pos) -> Result<Tok, ParseError> {
        if self.peek(0) == Some('a') && self.peek(1).is_none_or(|c| c.is_whitespace()) {
            self.bump();
            return Ok(Tok::A);
        }
        let first = self.pname(pos)?;
        if self.peek(0) != Some('/') {
            return Ok(Tok::PName(first.0, first.1));
        }
        let mut segs = vec![first];
        while self.peek(0) == Some('/') {
            self.bump();
            let p = self.pos();
            segs.push(self.pname(p)?);
        }
        Ok(Tok::Path(segs))
    }
}

// ---------------------------------------------------------------- tree

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Iri(String),
    Number(f64),
    Str { value: String, datatype: Option<String> },
    Path(Vec<String>),
    Blank(Vec<PredObj>),
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    term: Term,
    pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
struct PredObj {
    pred: String,
    pos: Pos,
    objects: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
enum Subject {
    Iri(String),
    Quoted(String, String, Node),
}

#[derive(Debug, Clone, PartialEq)]
struct Statement {
    subject: Subject,
    pos: Pos,
    props: Vec<PredObj>,
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    end: Pos,
    prefixes: BTreeMap<String, String>,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.i).map_or(self.end, |(_, p)| *p)
    }

    fn next(&mut self, what: &str) -> Result<(Tok, Pos), ParseError> {
        match self.toks.get(self.i) {
            Some(t) => {
                self.i += 1;
                Ok(t.clone())
            }
            None => Err(err_at(self.end, format!("unexpected end of input, expected {what}"))),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        let (t, p) = self.next(what)?;
        if t == want {
            Ok(())
        } else {
            Err(err_at(p, format!("expected {what}, found {}", t.describe())))
        }
    }

    fn expand(&self, prefix: &str, local: &str, pos: Pos) -> Result<String, ParseError> {
        self.prefixes
            .get(prefix)
            .map(|ns| format!("{ns}{local}"))
            .ok_or_else(|| err_at(pos, format!("unknown prefix '{prefix}:'")))
    }

    fn document(&mut self) -> Result<Vec<Statement>, ParseError> {
        let mut out = Vec::new();
        while let Some(t) = self.peek() {
            if *t == Tok::Prefix {
                self.i += 1;
                let (t, p) = self.next("prefix name")?;
                let Tok::PName(prefix, local) = t else {
                    return Err(err_at(p, "expected prefix name"));
                };
                if !local.is_empty() {
                    return Err(err_at(p, "prefix name must end with ':'"));
                }
                let (t, p) = self.next("IRI")?;
                let Tok::IriRef(ns) = t else {
                    return Err(err_at(p, "expected IRI"));
                };
                self.expect(Tok::Dot, "'.'")?;
                self.prefixes.insert(prefix, ns);
            } else {
                out.push(self.statement()?);
            }
        }
        Ok(out)
    }

    fn iri(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        let (t, p) = self.next(what)?;
        match t {
            Tok::IriRef(i) => Ok((i, p)),
            Tok::PName(pre, l) => Ok((self.expand(&pre, &l, p)?, p)),
            other => Err(err_at(p, format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn verb(&mut self) -> Result<(String, Pos), ParseError> {
        if self.peek() == Some(&Tok::A) {
            let p = self.pos();
            self.i += 1;
            return Ok((RDF_TYPE.to_string(), p));
        }
        self.iri("predicate")
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        let pos = self.pos();
        let subject = if self.peek() == Some(&Tok::QOpen) {
            self.i += 1;
            let (s, _) = self.iri("subject IRI")?;
            let (p, _) = self.verb()?;
            let o = self.object()?;
            self.expect(Tok::QClose, "'>>'")?;
            Subject::Quoted(s, p, o)
        } else {
            Subject::Iri(self.iri("subject")?.0)
        };
        let props = self.polist()?;
        self.expect(Tok::Dot, "'.'")?;
        Ok(Statement { subject, pos, props })
    }

    fn polist(&mut self) -> Result<Vec<PredObj>, ParseError> {
        let mut out = Vec::new();
        loop {
            let (pred, pos) = self.verb()?;
            let mut objects = vec![self.object()?];
            while self.peek() == Some(&Tok::Comma) {
                self.i += 1;
                objects.push(self.object()?);
            }
            out.push(PredObj { pred, pos, objects });
            if self.peek() != Some(&Tok::Semi) {
                return Ok(out);
            }
            while self.peek() == Some(&Tok::Semi) {
                self.i += 1;
            }
            if matches!(self.peek(), Some(Tok::Dot | Tok::RBracket) | None) {
                return Ok(out);
            }
        }
    }

    fn object(&mut self) -> Result<Node, ParseError> {
        let (t, pos) = self.next("object")?;
        let term = match t {
            Tok::IriRef(i) => Term::Iri(i),
            Tok::PName(p, l) => Term::Iri(self.expand(&p, &l, pos)?),
            Tok::Path(segs) => Term::Path(segs.iter().map(|(p, l)| self.expand(p, l, pos)).collect::<Result<_, _>>()?),
            Tok::Number(n) => Term::Number(n),
            Tok::Str(value) => {
                let datatype = if self.peek() == Some(&Tok::DtSep) {
                    self.i += 1;
                    Some(self.iri("datatype IRI")?.0)
                } else {
                    None
                };
                Term::Str { value, datatype }
            }
            Tok::LBracket => {
                let props = self.polist()?;
                self.expect(Tok::RBracket, "']'")?;
                Term::Blank(props)
            }
            other => return Err(err_at(pos, format!("expected object, found {}", other.describe()))),
        };
        Ok(Node { term, pos })
    }
}

fn parse_statements(text: &str) -> Result<Vec<Statement>, ParseError> {
    let toks = Lexer::new(text).tokens()?;
    let (mut line, mut col) = (1, 1);
    for c in text.chars() {
        if c == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    let mut prefixes: BTreeMap<String, String> =
        PREFIXES.iter().map(|(p, ns)| (p.to_string(), ns.to_string())).collect();
    prefixes.insert(String::new(), LOCAL_NS.to_string());
    let mut p = Parser { toks, i: 0, end: Pos { line, col }, prefixes };
    p.document()
}

// ---------------------------------------------------------------- documents

/// Claim-level metadata attached through a quoted triple. Kept opaque.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub predicate: String,
    pub object: String,
    pub annotation_predicate: String,
    pub annotation_object: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDescription {
    pub id: String,
    pub types: Vec<String>,
    pub properties: BTreeMap<String, Vec<FieldValue>>,
    pub annotations: Vec<Annotation>,
}

impl ObjectDescription {
    /// Single-valued view for policy evaluation: `pid`, `type`, and the
    /// first value of each property.
    pub fn fields(&self) -> Fields {
        let mut f = Fields::new();
        f.insert("pid".into(), FieldValue::Text(self.id.clone()));
        if let Some(t) = self.types.first() {
            f.insert("type".into(), FieldValue::Text(t.clone()));
        }
        for (k, vs) in &self.properties {
            if let Some(v) = vs.first() {
                f.insert(k.clone(), v.clone());
            }
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TurtleDocument {
    pub objects: Vec<ObjectDescription>,
    pub policies: Vec<Policy>,
}

fn local_name(iri: &str) -> String {
    if let Some(l) = iri.strip_prefix(LOCAL_NS) {
        return l.to_string();
    }
    for (_, ns) in PREFIXES {
        if let Some(l) = iri.strip_prefix(ns) {
            return l.to_string();
        }
    }
    iri.rsplit(['#', '/']).next().unwrap_or(iri).to_string()
}

fn render(node: &Node) -> String {
    match &node.term {
        Term::Iri(i) => compact(i).unwrap_or_else(|| format!("<{i}>")),
        Term::Number(n) => format!("{n:?}"),
        Term::Str { value, datatype } => match datatype {
            Some(dt) => format!("{}^^{}", quote(value), compact(dt).unwrap_or_else(|| format!("<{dt}>"))),
            None => quote(value),
        },
        Term::Path(segs) => {
            segs.iter().map(|s| compact(s).unwrap_or_else(|| format!("<{s}>"))).collect::<Vec<_>>().join("/")
        }
        Term::Blank(_) => "[]".into(),
    }
}

fn value_of(node: &Node) -> Option<FieldValue> {
    match &node.term {
        Term::Number(n) => Some(FieldValue::Number(*n)),
        Term::Str { value, .. } => Some(FieldValue::Text(value.clone())),
        Term::Iri(i) => Some(FieldValue::Text(local_name(i))),
        _ => None,
    }
}

/// Parses a whole document: object descriptions, quoted-triple annotations
/// and policies.
pub fn parse_document(text: &str) -> Result<TurtleDocument, ParseError> {
    let stmts = parse_statements(text)?;
    let mut doc = TurtleDocument::default();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut pending: Vec<(String, Annotation)> = Vec::new();

    for st in &stmts {
        match &st.subject {
            Subject::Quoted(s, p, o) => {
                for po in &st.props {
                    for obj in &po.objects {
                        pending.push((
                            local_name(s),
                            Annotation {
                                predicate: compact(p).unwrap_or_else(|| p.clone()),
                                object: render(o),
                                annotation_predicate: compact(&po.pred).unwrap_or_else(|| po.pred.clone()),
                                annotation_object: render(obj),
                            },
                        ));
                    }
                }
            }
            Subject::Iri(s) => {
                let is_policy = st.props.iter().any(|po| {
                    po.pred == RDF_TYPE && po.objects.iter().any(|o| o.term == Term::Iri(format!("{AFDO}Policy")))
                });
                if is_policy {
                    doc.policies.push(policy_from(s, st)?);
                    continue;
                }
                let id = local_name(s);
                let slot = *index.entry(id.clone()).or_insert_with(|| {
                    doc.objects.push(ObjectDescription {
                        id: id.clone(),
                        types: Vec::new(),
                        properties: BTreeMap::new(),
                        annotations: Vec::new(),
                    });
                    doc.objects.len() - 1
                });
                let obj = &mut doc.objects[slot];
                for po in &st.props {
                    for o in &po.objects {
                        if po.pred == RDF_TYPE {
                            if let Term::Iri(t) = &o.term {
                                obj.types.push(local_name(t));
                            }
                        } else if let Some(v) = value_of(o) {
                            obj.properties.entry(local_name(&po.pred)).or_default().push(v);
                        } else {
                            return Err(err_at(o.pos, "nested descriptions are only supported inside policies"));
                        }
                    }
                }
            }
        }
    }
    for (id, ann) in pending {
        match index.get(&id) {
            Some(&i) => doc.objects[i].annotations.push(ann),
            None => {
                index.insert(id.clone(), doc.objects.len());
                doc.objects.push(ObjectDescription {
                    id,
                    types: Vec::new(),
                    properties: BTreeMap::new(),
                    annotations: vec![ann],
                });
            }
        }
    }
    Ok(doc)
}

/// Parses every policy in `text`.
pub fn parse_policies(text: &str) -> Result<Vec<Policy>, ParseError> {
    Ok(parse_document(text)?.policies)
}

/// Parses a document holding exactly one policy.
pub fn parse_policy(text: &str) -> Result<Policy, ParseError> {
    let mut ps = parse_policies(text)?;
    match ps.len() {
        1 => Ok(ps.remove(0)),
        n => Err(ParseError { line: 1, col: 1, message: format!("expected exactly one policy, found {n}") }),
    }
}

fn one(po: &PredObj) -> Result<&Node, ParseError> {
    match po.objects.as_slice() {
        [n] => Ok(n),
        _ => Err(err_at(po.pos, format!("{} takes exactly one value", short(&po.pred)))),
    }
}

fn short(iri: &str) -> String {
    compact(iri).unwrap_or_else(|| format!("<{iri}>"))
}

fn blank<'a>(n: &'a Node, what: &str) -> Result<&'a [PredObj], ParseError> {
    match &n.term {
        Term::Blank(p) => Ok(p),
        _ => Err(err_at(n.pos, format!("{what} must be a bracketed description"))),
    }
}

fn iri_of<'a>(n: &'a Node, what: &str) -> Result<&'a str, ParseError> {
    match &n.term {
        Term::Iri(i) => Ok(i),
        _ => Err(err_at(n.pos, format!("{what} must be an IRI"))),
    }
}

fn afdo_local(n: &Node, what: &str) -> Result<String, ParseError> {
    let iri = iri_of(n, what)?;
    match iri.strip_prefix(AFDO) {
        Some(l) if is_local_name(l) => Ok(l.to_string()),
        _ => Err(err_at(n.pos, format!("{what} must be an afdo: term"))),
    }
}

fn check_type(po: &PredObj, want: &str) -> Result<(), ParseError> {
    for o in &po.objects {
        if iri_of(o, "type")? != want {
            return Err(err_at(o.pos, format!("expected type {}", short(want))));
        }
    }
    Ok(())
}

fn policy_from(subject: &str, st: &Statement) -> Result<Policy, ParseError> {
    let id = local_name(subject);
    let mut condition = None;
    let mut action = None;
    let mut obligations = Vec::new();
    let mut version = DEFAULT_POLICY_VERSION.to_string();
    for po in &st.props {
        match po.pred.as_str() {
            RDF_TYPE => check_type(po, &format!("{AFDO}Policy"))?,
            p if p == format!("{AFDO}condition") => {
                if condition.is_some() {
                    return Err(err_at(po.pos, "policy has more than one condition"));
                }
                condition = Some(condition_from(blank(one(po)?, "condition")?)?);
            }
            p if p == format!("{AFDO}action") => {
                if action.is_some() {
                    return Err(err_at(po.pos, "policy has more than one action"));
                }
                action = Some(afdo_local(one(po)?, "action")?);
            }
            p if p == format!("{AFDO}version") => match &one(po)?.term {
                Term::Str { value, datatype: None } => version = value.clone(),
                _ => return Err(err_at(po.pos, "version must be a plain string")),
            },
            p if p == format!("{ODRL}duty") => {
                for o in &po.objects {
                    obligations.push(duty_from(o)?);
                }
            }
            other => return Err(err_at(po.pos, format!("unsupported policy predicate {}", short(other)))),
        }
    }
    let condition = condition.ok_or_else(|| err_at(st.pos, "policy has no condition"))?;
    let action = action.ok_or_else(|| err_at(st.pos, "policy has no action"))?;
    Ok(Policy { audit_template: AuditTemplate::for_policy(&id), id, condition, action, obligations, version })
}

fn condition_from(props: &[PredObj]) -> Result<Condition, ParseError> {
    let mut target = Target::Any;
    let mut clauses = Vec::new();
    for po in props {
        match po.pred.as_str() {
            RDF_TYPE => check_type(po, &format!("{SH}NodeShape"))?,
            p if p == format!("{SH}targetNode") || p == format!("{SH}targetClass") => {
                if target != Target::Any {
                    return Err(err_at(po.pos, "condition has more than one target"));
                }
                let n = one(po)?;
                let name = local_name(iri_of(n, "target")?);
                if !is_local_name(&name) {
                    return Err(err_at(n.pos, "unsupported target name"));
                }
                target = if p.ends_with("targetNode") { Target::Node(name) } else { Target::Class(name) };
            }
            p if p == format!("{SH}property") => {
                for o in &po.objects {
                    clauses.extend(property_from(o)?);
                }
            }
            other => return Err(err_at(po.pos, format!("unsupported shape predicate {}", short(other)))),
        }
    }
    Ok(Condition { target, clauses })
}

fn property_from(node: &Node) -> Result<Vec<Clause>, ParseError> {
    let props = blank(node, "property shape")?;
    let mut path = None;
    let mut constraints = Vec::new();
    for po in props {
        if po.pred == format!("{SH}path") {
            if path.is_some() {
                return Err(err_at(po.pos, "property shape has more than one path"));
            }
            path = Some(afdo_local(one(po)?, "sh:path")?);
        } else {
            constraints.push(constraint_from(po)?);
        }
    }
    let path = path.ok_or_else(|| err_at(node.pos, "property shape has no sh:path"))?;
    if constraints.is_empty() {
        return Err(err_at(node.pos, "property shape has no constraint"));
    }
    Ok(constraints.into_iter().map(|c| Clause::new(path.clone(), c)).collect())
}

fn constraint_from(po: &PredObj) -> Result<Constraint, ParseError> {
    let local = po.pred.strip_prefix(SH).unwrap_or("");
    let n = one(po)?;
    let number = |n: &Node| match n.term {
        Term::Number(v) => Ok(v),
        _ => Err(err_at(n.pos, format!("sh:{local} needs a numeric operand"))),
    };
    Ok(match local {
        "maxInclusive" => Constraint::cmp(Comparator::Le, number(n)?),
        "minInclusive" => Constraint::cmp(Comparator::Ge, number(n)?),
        "maxExclusive" => Constraint::cmp(Comparator::Lt, number(n)?),
        "minExclusive" => Constraint::cmp(Comparator::Gt, number(n)?),
        "hasValue" => match &n.term {
            Term::Number(v) => Constraint::cmp(Comparator::Eq, *v),
            Term::Str { value, datatype: None } => Constraint::cmp(Comparator::Eq, value.as_str()),
            _ => return Err(err_at(n.pos, "sh:hasValue needs a number or a plain string")),
        },
        "equals" => {
            let inner = blank(n, "sh:equals operand")?;
            let [path_po] = inner else {
                return Err(err_at(n.pos, "sh:equals operand must hold exactly one sh:path"));
            };
            if path_po.pred != format!("{SH}path") {
                return Err(err_at(path_po.pos, "sh:equals operand must hold exactly one sh:path"));
            }
            let p = one(path_po)?;
            match &p.term {
                Term::Path(segs) if segs.len() == 2 && segs[0] == ANNOUNCED => match segs[1].strip_prefix(AFDO) {
                    Some(l) if is_local_name(l) => Constraint::equals_payload(l),
                    _ => return Err(err_at(p.pos, "payload path must end in an afdo: term")),
                },
                _ => return Err(err_at(p.pos, "sh:equals supports only :announced/afdo:<field> paths")),
            }
        }
        "not" => {
            let inner = blank(n, "sh:not operand")?;
            let [c] = inner else {
                return Err(err_at(n.pos, "sh:not operand must hold exactly one constraint"));
            };
            Constraint::negate(constraint_from(c)?)
        }
        _ => return Err(err_at(po.pos, format!("unsupported constraint {}", short(&po.pred)))),
    })
}

fn duty_from(node: &Node) -> Result<Obligation, ParseError> {
    let props = blank(node, "duty")?;
    let mut action = None;
    let mut window = None;
    let mut assignee = None;
    for po in props {
        match po.pred.as_str() {
            RDF_TYPE => check_type(po, &format!("{ODRL}Duty"))?,
            p if p == format!("{ODRL}action") => {
                action = Some((iri_of(one(po)?, "duty action")?.to_string(), po.pos));
            }
            p if p == format!("{ODRL}constraint") => {
                window = Some(window_from(one(po)?)?);
            }
            p if p == format!("{ODRL}assignee") => {
                assignee = Some(iri_of(one(po)?, "assignee")?.to_string());
            }
            other => return Err(err_at(po.pos, format!("unsupported duty predicate {}", short(other)))),
        }
    }
    let (action, apos) = action.ok_or_else(|| err_at(node.pos, "duty has no odrl:action"))?;
    match action.strip_prefix(ODRL) {
        Some("rateLimit") => {
            let w = window.ok_or_else(|| err_at(apos, "rate limit needs an elapsed-time constraint"))?;
            if assignee.is_some() {
                return Err(err_at(apos, "rate limit takes no assignee"));
            }
            Obligation::rate_limit(w).map_err(|e| err_at(apos, e.to_string()))
        }
        Some("notify") => {
            if window.is_some() {
                return Err(err_at(apos, "notify takes no constraint"));
            }
            let a = assignee.ok_or_else(|| err_at(apos, "notify needs an odrl:assignee"))?;
            Ok(Obligation::notify(a))
        }
        _ => Err(err_at(apos, format!("unsupported duty action {}", short(&action)))),
    }
}

fn window_from(node: &Node) -> Result<super::IsoDuration, ParseError> {
    let props = blank(node, "constraint")?;
    let mut left = None;
    let mut op = None;
    let mut right = None;
    for po in props {
        let n = one(po)?;
        match po.pred.strip_prefix(ODRL) {
            Some("leftOperand") => left = Some(iri_of(n, "left operand")?.to_string()),
            Some("operator") => op = Some(iri_of(n, "operator")?.to_string()),
            Some("rightOperand") => right = Some(n),
            _ => return Err(err_at(po.pos, format!("unsupported constraint predicate {}", short(&po.pred)))),
        }
    }
    if left.as_deref() != Some(&format!("{ODRL}elapsedTime")) {
        return Err(err_at(node.pos, "constraint must use odrl:leftOperand odrl:elapsedTime"));
    }
    if op.as_deref() != Some(&format!("{ODRL}gteq")) {
        return Err(err_at(node.pos, "constraint must use odrl:operator odrl:gteq"));
    }
    let right = right.ok_or_else(|| err_at(node.pos, "constraint has no right operand"))?;
    match &right.term {
        Term::Str { value, datatype: Some(dt) } if dt == XSD_DURATION => {
            parse_duration(value).map_err(|e| err_at(right.pos, e.to_string()))
        }
        _ => Err(err_at(right.pos, "right operand must be an xsd:duration literal")),
    }
}

// ---------------------------------------------------------------- writer

fn compact(iri: &str) -> Option<String> {
    if let Some(l) = iri.strip_prefix(LOCAL_NS) {
        if is_pname_local(l) {
            return Some(format!(":{l}"));
        }
    }
    for (p, ns) in PREFIXES {
        if let Some(l) = iri.strip_prefix(ns) {
            if is_pname_local(l) {
                return Some(format!("{p}:{l}"));
            }
        }
    }
    None
}

fn is_pname_local(l: &str) -> bool {
    !l.is_empty() && !l.ends_with('.') && !l.starts_with('.') && l.chars().all(is_local_char) && !l.starts_with('-')
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

struct Writer<'a> {
    policy: &'a Policy,
}

impl Writer<'_> {
    fn fail(&self, reason: impl Into<String>) -> SerialiseError {
        SerialiseError { policy: self.policy.id.clone(), reason: reason.into() }
    }

    fn afdo(&self, local: &str, what: &str) -> Result<String, SerialiseError> {
        if is_local_name(local) {
            Ok(format!("afdo:{local}"))
        } else {
            Err(self.fail(format!("{what} {local:?} is not a valid local name")))
        }
    }

    fn value(&self, v: &FieldValue) -> Result<String, SerialiseError> {
        match v {
            FieldValue::Number(n) if n.is_finite() => Ok(format!("{n:?}")),
            FieldValue::Number(n) => Err(self.fail(format!("non-finite constant {n}"))),
            FieldValue::Text(s) => Ok(quote(s)),
        }
    }

    fn constraint(&self, c: &Constraint) -> Result<String, SerialiseError> {
        Ok(match c {
            Constraint::Compare { cmp, value } => {
                let v = self.value(value)?;
                if matches!(value, FieldValue::Text(_)) && !matches!(cmp, Comparator::Eq | Comparator::Ne) {
                    return Err(self.fail("ordering comparison against text has no SHACL form"));
                }
                match cmp {
                    Comparator::Le => format!("sh:maxInclusive {v}"),
                    Comparator::Ge => format!("sh:minInclusive {v}"),
                    Comparator::Lt => format!("sh:maxExclusive {v}"),
                    Comparator::Gt => format!("sh:minExclusive {v}"),
                    Comparator::Eq => format!("sh:hasValue {v}"),
                    Comparator::Ne => format!("sh:not [ sh:hasValue {v} ]"),
                }
            }
            Constraint::EqualsPayload { payload_path } => {
                format!("sh:equals [ sh:path :announced/{} ]", self.afdo(payload_path, "payload path")?)
            }
            Constraint::Not { inner } => format!("sh:not [ {} ]", self.constraint(inner)?),
            Constraint::Exists => return Err(self.fail("wildcard constraints have no SHACL form")),
        })
    }

    fn iri(&self, iri: &str) -> Result<String, SerialiseError> {
        if let Some(c) = compact(iri) {
            return Ok(c);
        }
        if iri.is_empty() || iri.chars().any(|c| c.is_whitespace() || c == '<' || c == '>') {
            return Err(self.fail(format!("IRI {iri:?} cannot be written")));
        }
        Ok(format!("<{iri}>"))
    }

    fn policy(&self) -> Result<String, SerialiseError> {
        let p = self.policy;
        if !is_pname_local(&p.id) {
            return Err(self.fail("policy id is not a valid local name"));
        }
        if p.audit_template != AuditTemplate::for_policy(&p.id) {
            return Err(self.fail("custom audit templates have no Turtle form"));
        }

        let mut shape = vec!["a sh:NodeShape".to_string()];
        match &p.condition.target {
            Target::Any => {}
            Target::Node(n) if is_pname_local(n) => shape.push(format!("sh:targetNode :{n}")),
            Target::Class(c) => shape.push(format!("sh:targetClass {}", self.afdo(c, "target class")?)),
            Target::Node(n) => return Err(self.fail(format!("target node {n:?} is not a valid local name"))),
        }
        for clause in &p.condition.clauses {
            shape.push(format!(
                "sh:property [\n      sh:path {} ;\n      {} ]",
                self.afdo(&clause.path, "path")?,
                self.constraint(&clause.constraint)?
            ));
        }

        let mut items = vec![
            format!("afdo:condition [\n    {} ]", shape.join(" ;\n    ")),
            format!("afdo:action {}", self.afdo(&p.action, "action")?),
        ];
        if p.version != DEFAULT_POLICY_VERSION {
            items.push(format!("afdo:version {}", quote(&p.version)));
        }
        for o in &p.obligations {
            items.push(match o {
                Obligation::RateLimit { window } => {
                    if window.is_zero() {
                        return Err(self.fail("zero rate-limit window"));
                    }
                    format!(
                        "odrl:duty [\n    a odrl:Duty ;\n    odrl:action odrl:rateLimit ;\n    odrl:constraint [\n      odrl:leftOperand odrl:elapsedTime ;\n      odrl:operator odrl:gteq ;\n      odrl:rightOperand \"{window}\"^^xsd:duration ] ]"
                    )
                }
                Obligation::Notify { assignee } => format!(
                    "odrl:duty [\n    a odrl:Duty ;\n    odrl:action odrl:notify ;\n    odrl:assignee {} ]",
                    self.iri(assignee)?
                ),
            });
        }
        Ok(format!(":{} a afdo:Policy ;\n  {} .\n", p.id, items.join(" ;\n  ")))
    }
}

fn prefix_block() -> String {
    let mut s = String::new();
    for (p, ns) in PREFIXES {
        s.push_str(&format!("@prefix {p}: <{ns}> .\n"));
    }
    s
}

/// Canonical text for one policy: the prefix block, a blank line, then the
/// policy statement.
pub fn serialise_policy(p: &Policy) -> Result<String, SerialiseError> {
    serialise_policies(std::slice::from_ref(p))
}

pub fn serialise_policies(ps: &[Policy]) -> Result<String, SerialiseError> {
    let mut out = prefix_block();
    for p in ps {
        out.push('\n');
        out.push_str(&Writer { policy: p }.policy()?);
    }
    Ok(out)
}

impl fmt::Display for TurtleDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} objects, {} policies", self.objects.len(), self.policies.len())
    }
}
