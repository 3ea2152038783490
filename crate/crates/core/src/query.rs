//! Computational graphs of first-order logic queries.
//!
//! A [`Query`] is an arena of [`QueryNode`]s rooted at one target node. The
//! textual form is an s-expression DSL:
//!
//! ```text
//! (a <entity>)            anchor
//! (p <relation> <node>)   relational projection
//! (i <node> <node> ...)   intersection, two or more operands
//! (u <node> <node> ...)   union, two or more operands
//! (n <node>)              complement
//! ```
//!
//! Labels that contain whitespace, parentheses or quotes are written as
//! double-quoted strings with `\"` and `\\` escapes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId, Vocabularies};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum QueryNode {
    Anchor(EntityId),
    Projection { child: NodeId, relation: RelationId },
    Intersection(Vec<NodeId>),
    Union(Vec<NodeId>),
    Complement(NodeId),
}

impl QueryNode {
    pub fn children(&self) -> &[NodeId] {
        match self {
            QueryNode::Anchor(_) => &[],
            QueryNode::Projection { child, .. } | QueryNode::Complement(child) => std::slice::from_ref(child),
            QueryNode::Intersection(c) | QueryNode::Union(c) => c,
        }
    }
}

/// A validated query DAG.
#[derive(Debug, Clone)]
pub struct Query {
    nodes: Vec<QueryNode>,
    target: NodeId,
}

impl Query {
    /// Validates arity, acyclicity and reachability of every node from `target`.
    pub fn new(nodes: Vec<QueryNode>, target: NodeId) -> Result<Self> {
        if target.0 >= nodes.len() {
            return Err(Error::InvalidQuery(format!(
                "target {} out of range for {} nodes",
                target.0,
                nodes.len()
            )));
        }
        for (i, node) in nodes.iter().enumerate() {
            for c in node.children() {
                if c.0 >= nodes.len() {
                    return Err(Error::InvalidQuery(format!("node {i} references missing node {}", c.0)));
                }
            }
            match node {
                QueryNode::Intersection(c) if c.len() < 2 => {
                    return Err(Error::InvalidQuery(format!(
                        "intersection needs at least 2 operands, got {}",
                        c.len()
                    )))
                }
                QueryNode::Union(c) if c.len() < 2 => {
                    return Err(Error::InvalidQuery(format!(
                        "union needs at least 2 operands, got {}",
                        c.len()
                    )))
                }
                _ => {}
            }
        }
        let q = Self { nodes, target };
        let order = q.topological_order()?;
        if order.len() != q.nodes.len() {
            return Err(Error::InvalidQuery(format!(
                "{} node(s) unreachable from the target",
                q.nodes.len() - order.len()
            )));
        }
        Ok(q)
    }

    pub fn nodes(&self) -> &[QueryNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &QueryNode {
        &self.nodes[id.0]
    }

    pub fn target(&self) -> NodeId {
        self.target
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Post-order from the target: children strictly before parents, target
    /// last, each reachable node exactly once. Children are visited in the
    /// order they are stored.
    pub fn topological_order(&self) -> Result<Vec<NodeId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let mut mark = vec![Mark::New; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        // (node, index of next child to visit)
        let mut stack = vec![(self.target, 0usize)];
        mark[self.target.0] = Mark::Open;
        while let Some(&mut (id, ref mut next)) = stack.last_mut() {
            let children = self.nodes[id.0].children();
            if let Some(&c) = children.get(*next) {
                *next += 1;
                match mark[c.0] {
                    Mark::New => {
                        mark[c.0] = Mark::Open;
                        stack.push((c, 0));
                    }
                    Mark::Open => return Err(Error::InvalidQuery(format!("cycle through node {}", c.0))),
                    Mark::Done => {}
                }
            } else {
                mark[id.0] = Mark::Done;
                order.push(id);
                stack.pop();
            }
        }
        Ok(order)
    }

    /// Canonical structure string with labels erased and the operands of
    /// intersections and unions sorted, e.g. `i(n(p(a)),p(a))`.
    pub fn shape(&self) -> String {
        self.shape_of(self.target)
    }

    fn shape_of(&self, id: NodeId) -> String {
        match &self.nodes[id.0] {
            QueryNode::Anchor(_) => "a".to_owned(),
            QueryNode::Projection { child, .. } => format!("p({})", self.shape_of(*child)),
            QueryNode::Complement(child) => format!("n({})", self.shape_of(*child)),
            QueryNode::Intersection(c) => format!("i({})", self.sorted_shapes(c)),
            QueryNode::Union(c) => format!("u({})", self.sorted_shapes(c)),
        }
    }

    fn sorted_shapes(&self, children: &[NodeId]) -> String {
        let mut parts: Vec<String> = children.iter().map(|&c| self.shape_of(c)).collect();
        parts.sort();
        parts.join(",")
    }

    /// Structural equality of the trees hanging from both targets, including
    /// labels and operand order. Arena layout is irrelevant.
    pub fn structurally_eq(&self, other: &Query) -> bool {
        self.subtree_eq(self.target, other, other.target)
    }

    fn subtree_eq(&self, a: NodeId, other: &Query, b: NodeId) -> bool {
        use QueryNode::*;
        match (&self.nodes[a.0], &other.nodes[b.0]) {
            (Anchor(x), Anchor(y)) => x == y,
            (
                Projection {
                    child: c1,
                    relation: r1,
                },
                Projection {
                    child: c2,
                    relation: r2,
                },
            ) => r1 == r2 && self.subtree_eq(*c1, other, *c2),
            (Complement(c1), Complement(c2)) => self.subtree_eq(*c1, other, *c2),
            (Intersection(x), Intersection(y)) | (Union(x), Union(y)) => {
                x.len() == y.len() && x.iter().zip(y).all(|(&c1, &c2)| self.subtree_eq(c1, other, c2))
            }
            _ => false,
        }
    }

    pub fn anchors(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            QueryNode::Anchor(e) => Some(*e),
            _ => None,
        })
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            QueryNode::Projection { relation, .. } => Some(*relation),
            _ => None,
        })
    }

    pub fn query_type(&self) -> QueryType {
        classify_query(self)
    }
}

impl PartialEq for Query {
    fn eq(&self, other: &Self) -> bool {
        self.structurally_eq(other)
    }
}

impl Eq for Query {}

/// Incremental construction of a query arena. Nodes can only reference
/// earlier nodes, so the result is acyclic by construction.
#[derive(Debug, Default, Clone)]
pub struct QueryBuilder {
    nodes: Vec<QueryNode>,
}

impl QueryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, node: QueryNode) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    pub fn anchor(&mut self, e: EntityId) -> NodeId {
        self.push(QueryNode::Anchor(e))
    }

    pub fn project(&mut self, child: NodeId, relation: RelationId) -> NodeId {
        self.push(QueryNode::Projection { child, relation })
    }

    pub fn intersect(&mut self, children: Vec<NodeId>) -> NodeId {
        self.push(QueryNode::Intersection(children))
    }

    pub fn union(&mut self, children: Vec<NodeId>) -> NodeId {
        self.push(QueryNode::Union(children))
    }

    pub fn complement(&mut self, child: NodeId) -> NodeId {
        self.push(QueryNode::Complement(child))
    }

    pub fn build(self, target: NodeId) -> Result<Query> {
        Query::new(self.nodes, target)
    }
}

/// The benchmark query structures, plus `Other` for anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "3p")]
    P3,
    #[serde(rename = "2i")]
    I2,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "2in")]
    In2,
    #[serde(rename = "3in")]
    In3,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "pni")]
    Pni,
    #[serde(rename = "other")]
    Other,
}

impl QueryType {
    /// The fourteen benchmark structures.
    pub const ALL: [QueryType; 14] = [
        QueryType::P1,
        QueryType::P2,
        QueryType::P3,
        QueryType::I2,
        QueryType::I3,
        QueryType::Pi,
        QueryType::Ip,
        QueryType::U2,
        QueryType::Up,
        QueryType::In2,
        QueryType::In3,
        QueryType::Inp,
        QueryType::Pin,
        QueryType::Pni,
    ];

    /// Structures with training queries; `ip`, `pi`, `2u` and `up` are only
    /// evaluated.
    pub const SUPERVISED: [QueryType; 10] = [
        QueryType::P1,
        QueryType::P2,
        QueryType::P3,
        QueryType::I2,
        QueryType::I3,
        QueryType::In2,
        QueryType::In3,
        QueryType::Inp,
        QueryType::Pin,
        QueryType::Pni,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            QueryType::P1 => "1p",
            QueryType::P2 => "2p",
            QueryType::P3 => "3p",
            QueryType::I2 => "2i",
            QueryType::I3 => "3i",
            QueryType::Pi => "pi",
            QueryType::Ip => "ip",
            QueryType::U2 => "2u",
            QueryType::Up => "up",
            QueryType::In2 => "2in",
            QueryType::In3 => "3in",
            QueryType::Inp => "inp",
            QueryType::Pin => "pin",
            QueryType::Pni => "pni",
            QueryType::Other => "other",
        }
    }

    pub fn is_supervised(self) -> bool {
        Self::SUPERVISED.contains(&self)
    }

    pub fn has_negation(self) -> bool {
        matches!(
            self,
            QueryType::In2 | QueryType::In3 | QueryType::Inp | QueryType::Pin | QueryType::Pni
        )
    }

    /// A DSL rendering of the structure whose labels are `e0, e1, ...` and
    /// `r0, r1, ...` numbered in reading order.
    pub fn template(self) -> Option<&'static str> {
        Some(match self {
            QueryType::P1 => "(p r0 (a e0))",
            QueryType::P2 => "(p r1 (p r0 (a e0)))",
            QueryType::P3 => "(p r2 (p r1 (p r0 (a e0))))",
            QueryType::I2 => "(i (p r0 (a e0)) (p r1 (a e1)))",
            QueryType::I3 => "(i (p r0 (a e0)) (p r1 (a e1)) (p r2 (a e2)))",
            QueryType::Pi => "(i (p r1 (p r0 (a e0))) (p r2 (a e1)))",
            QueryType::Ip => "(p r2 (i (p r0 (a e0)) (p r1 (a e1))))",
            QueryType::U2 => "(u (p r0 (a e0)) (p r1 (a e1)))",
            QueryType::Up => "(p r2 (u (p r0 (a e0)) (p r1 (a e1))))",
            QueryType::In2 => "(i (p r0 (a e0)) (n (p r1 (a e1))))",
            QueryType::In3 => "(i (p r0 (a e0)) (p r1 (a e1)) (n (p r2 (a e2))))",
            QueryType::Inp => "(p r2 (i (p r0 (a e0)) (n (p r1 (a e1)))))",
            QueryType::Pin => "(i (p r1 (p r0 (a e0))) (n (p r2 (a e1))))",
            QueryType::Pni => "(i (n (p r1 (p r0 (a e0)))) (p r2 (a e1)))",
            QueryType::Other => return None,
        })
    }

    /// Canonical shape string matching [`Query::shape`].
    pub fn shape(self) -> Option<&'static str> {
        Some(match self {
            QueryType::P1 => "p(a)",
            QueryType::P2 => "p(p(a))",
            QueryType::P3 => "p(p(p(a)))",
            QueryType::I2 => "i(p(a),p(a))",
            QueryType::I3 => "i(p(a),p(a),p(a))",
            QueryType::Pi => "i(p(a),p(p(a)))",
            QueryType::Ip => "p(i(p(a),p(a)))",
            QueryType::U2 => "u(p(a),p(a))",
            QueryType::Up => "p(u(p(a),p(a)))",
            QueryType::In2 => "i(n(p(a)),p(a))",
            QueryType::In3 => "i(n(p(a)),p(a),p(a))",
            QueryType::Inp => "p(i(n(p(a)),p(a)))",
            QueryType::Pin => "i(n(p(a)),p(p(a)))",
            QueryType::Pni => "i(n(p(p(a))),p(a))",
            QueryType::Other => return None,
        })
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for QueryType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QueryType::ALL
            .iter()
            .chain(std::iter::once(&QueryType::Other))
            .copied()
            .find(|t| t.tag() == s)
            .ok_or_else(|| Error::Input(format!("unknown query type `{s}`")))
    }
}

/// Matches the query's label-free structure against the benchmark templates.
pub fn classify_query(q: &Query) -> QueryType {
    let shape = q.shape();
    QueryType::ALL
        .iter()
        .copied()
        .find(|t| t.shape() == Some(shape.as_str()))
        .unwrap_or(QueryType::Other)
}

pub fn topological_order(q: &Query) -> Result<Vec<NodeId>> {
    q.topological_order()
}

// --- DSL -------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Sexp {
    Atom(String, usize),
    List(Vec<Sexp>, usize),
}

impl Sexp {
    fn pos(&self) -> usize {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }
}

struct Reader<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, position: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            position,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn read(&mut self) -> Result<Sexp> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            None => self.err(start, "unexpected end of input"),
            Some('(') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        None => return self.err(self.pos, "unclosed `(`"),
                        Some(')') => {
                            self.pos += 1;
                            return Ok(Sexp::List(items, start));
                        }
                        Some(_) => items.push(self.read()?),
                    }
                }
            }
            Some(')') => self.err(start, "unexpected `)`"),
            Some('"') => {
                self.pos += 1;
                let mut out = String::new();
                loop {
                    let Some(c) = self.peek() else {
                        return self.err(start, "unterminated string");
                    };
                    self.pos += c.len_utf8();
                    match c {
                        '"' => return Ok(Sexp::Atom(out, start)),
                        '\\' => {
                            let Some(esc) = self.peek() else {
                                return self.err(start, "unterminated string");
                            };
                            self.pos += esc.len_utf8();
                            out.push(esc);
                        }
                        c => out.push(c),
                    }
                }
            }
            Some(_) => {
                while let Some(c) = self.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' {
                        break;
                    }
                    self.pos += c.len_utf8();
                }
                Ok(Sexp::Atom(self.src[start..self.pos].to_owned(), start))
            }
        }
    }
}

struct Lowering<'v> {
    vocab: &'v Vocabularies,
    builder: QueryBuilder,
    unknown: Vec<String>,
}

impl Lowering<'_> {
    fn entity(&mut self, label: &str) -> EntityId {
        match self.vocab.entities.get(label) {
            Some(id) => EntityId(id),
            None => {
                self.unknown.push(format!("entity `{label}`"));
                EntityId(u32::MAX)
            }
        }
    }

    fn relation(&mut self, label: &str) -> RelationId {
        match self.vocab.relations.get(label) {
            Some(id) => RelationId(id),
            None => {
                self.unknown.push(format!("relation `{label}`"));
                RelationId(u32::MAX)
            }
        }
    }

    fn lower(&mut self, sexp: &Sexp) -> Result<NodeId> {
        let (items, pos) = match sexp {
            Sexp::List(items, pos) => (items, *pos),
            Sexp::Atom(a, pos) => {
                return Err(Error::Syntax {
                    position: *pos,
                    message: format!("expected a node `( ... )`, found `{a}`"),
                })
            }
        };
        let syntax = |message: String| Error::Syntax { position: pos, message };
        let Some(Sexp::Atom(op, _)) = items.first() else {
            return Err(syntax("expected an operator `a`, `p`, `i`, `u` or `n`".into()));
        };
        let args = &items[1..];
        let atom = |s: &Sexp| match s {
            Sexp::Atom(a, _) => Ok(a.clone()),
            Sexp::List(_, p) => Err(Error::Syntax {
                position: *p,
                message: "expected a label".into(),
            }),
        };
        match op.as_str() {
            "a" => {
                if args.len() != 1 {
                    return Err(syntax(format!("`a` takes 1 label, got {}", args.len())));
                }
                let e = self.entity(&atom(&args[0])?);
                Ok(self.builder.anchor(e))
            }
            "p" => {
                if args.len() != 2 {
                    return Err(syntax(format!(
                        "`p` takes a relation and a node, got {} argument(s)",
                        args.len()
                    )));
                }
                let r = self.relation(&atom(&args[0])?);
                let child = self.lower(&args[1])?;
                Ok(self.builder.project(child, r))
            }
            "n" => {
                if args.len() != 1 {
                    return Err(syntax(format!("`n` takes 1 node, got {}", args.len())));
                }
                let child = self.lower(&args[0])?;
                Ok(self.builder.complement(child))
            }
            "i" | "u" => {
                if args.len() < 2 {
                    return Err(syntax(format!("`{op}` needs at least 2 operands, got {}", args.len())));
                }
                let children = args.iter().map(|a| self.lower(a)).collect::<Result<Vec<_>>>()?;
                Ok(if op == "i" {
                    self.builder.intersect(children)
                } else {
                    self.builder.union(children)
                })
            }
            other => Err(syntax(format!("unknown operator `{other}`"))),
        }
    }
}

/// Parses the DSL, resolving labels through `vocab`. All unknown labels are
/// reported together.
pub fn parse_query(text: &str, vocab: &Vocabularies) -> Result<Query> {
    let mut reader = Reader { src: text, pos: 0 };
    let sexp = reader.read()?;
    reader.skip_ws();
    if reader.pos != text.len() {
        return Err(Error::Syntax {
            position: reader.pos,
            message: "trailing input after query".into(),
        });
    }
    if let Sexp::Atom(..) = sexp {
        return Err(Error::Syntax {
            position: sexp.pos(),
            message: "query must be a parenthesized node".into(),
        });
    }
    let mut lowering = Lowering {
        vocab,
        builder: QueryBuilder::new(),
        unknown: Vec::new(),
    };
    let target = lowering.lower(&sexp)?;
    if !lowering.unknown.is_empty() {
        let mut unknown = lowering.unknown;
        unknown.dedup();
        return Err(Error::UnknownLabels(unknown));
    }
    lowering.builder.build(target)
}

fn write_label(out: &mut String, label: &str) {
    let bare = !label.is_empty()
        && !label
            .chars()
            .any(|c| c.is_whitespace() || c == '(' || c == ')' || c == '"' || c == '\\');
    if bare {
        out.push_str(label);
    } else {
        out.push('"');
        for c in label.chars() {
            if c == '"' || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push('"');
    }
}

fn write_node(out: &mut String, q: &Query, id: NodeId, vocab: &Vocabularies) {
    match q.node(id) {
        QueryNode::Anchor(e) => {
            out.push_str("(a ");
            write_label(out, vocab.entity_label(*e));
        }
        QueryNode::Projection { child, relation } => {
            out.push_str("(p ");
            write_label(out, vocab.relation_label(*relation));
            out.push(' ');
            write_node(out, q, *child, vocab);
        }
        QueryNode::Complement(child) => {
            out.push_str("(n ");
            write_node(out, q, *child, vocab);
        }
        QueryNode::Intersection(children) | QueryNode::Union(children) => {
            out.push_str(if matches!(q.node(id), QueryNode::Intersection(_)) {
                "(i"
            } else {
                "(u"
            });
            for &c in children {
                out.push(' ');
                write_node(out, q, c, vocab);
            }
        }
    }
    out.push(')');
}

/// Renders the query as DSL text. Shared subtrees are written out in full.
pub fn serialize_query(q: &Query, vocab: &Vocabularies) -> String {
    let mut out = String::new();
    write_node(&mut out, q, q.target(), vocab);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Vocab;

    fn vocab() -> Vocabularies {
        Vocabularies {
            entities: Vocab::from_labels((0..10).map(|i| format!("e{i}"))),
            relations: Vocab::from_labels((0..10).map(|i| format!("r{i}"))),
        }
    }

    #[test]
    fn parses_2p_with_outer_target() {
        let q = parse_query("(p r2 (p r1 (a e0)))", &vocab()).unwrap();
        assert_eq!(classify_query(&q), QueryType::P2);
        match q.node(q.target()) {
            QueryNode::Projection { relation, .. } => assert_eq!(*relation, RelationId(2)),
            other => panic!("target is {other:?}"),
        }
    }

    #[test]
    fn parses_2in() {
        let q = parse_query("(i (p r1 (a e0)) (n (p r2 (a e1))))", &vocab()).unwrap();
        assert_eq!(classify_query(&q), QueryType::In2);
    }

    #[test]
    fn intersection_arity() {
        let err = parse_query("(i (a e0))", &vocab()).unwrap_err();
        assert!(matches!(err, Error::Syntax { position: 0, .. }), "{err:?}");
        assert!(parse_query("(u (a e0))", &vocab()).is_err());
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_query("(p r1 (a e0)", &vocab()).unwrap_err() {
            Error::Syntax { position, .. } => assert_eq!(position, 12),
            e => panic!("{e:?}"),
        }
        match parse_query("(p r1 (x e0))", &vocab()).unwrap_err() {
            Error::Syntax { position, .. } => assert_eq!(position, 6),
            e => panic!("{e:?}"),
        }
        assert!(parse_query("(a e0) (a e1)", &vocab()).is_err());
        assert!(parse_query("e0", &vocab()).is_err());
        assert!(parse_query("", &vocab()).is_err());
    }

    #[test]
    fn unknown_labels_listed_together() {
        match parse_query("(i (p zz (a e0)) (p r1 (a nope)))", &vocab()).unwrap_err() {
            Error::UnknownLabels(l) => {
                assert_eq!(l, vec!["relation `zz`".to_string(), "entity `nope`".to_string()])
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn serializes_1p() {
        let v = vocab();
        let q = parse_query("  (p   r0\n(a e0) )", &v).unwrap();
        assert_eq!(serialize_query(&q, &v), "(p r0 (a e0))");
    }

    #[test]
    fn every_template_round_trips_and_classifies() {
        let v = vocab();
        for t in QueryType::ALL {
            let text = t.template().unwrap();
            let q = parse_query(text, &v).unwrap();
            assert_eq!(classify_query(&q), t, "{text}");
            assert_eq!(serialize_query(&q, &v), text);
            assert_eq!(parse_query(&serialize_query(&q, &v), &v).unwrap(), q);
        }
    }

    #[test]
    fn classification_ignores_operand_order() {
        let v = vocab();
        let q = parse_query("(i (n (p r1 (a e1))) (p r0 (a e0)))", &v).unwrap();
        assert_eq!(classify_query(&q), QueryType::In2);
        let q = parse_query("(i (p r2 (a e1)) (p r1 (p r0 (a e0))))", &v).unwrap();
        assert_eq!(classify_query(&q), QueryType::Pi);
    }

    #[test]
    fn classify_examples() {
        let v = vocab();
        let c = |s: &str| classify_query(&parse_query(s, &v).unwrap());
        assert_eq!(c("(p r0 (p r0 (p r0 (a e0))))"), QueryType::P3);
        assert_eq!(c("(u (p r1 (a e1)) (p r2 (a e2)))"), QueryType::U2);
        assert_eq!(c("(i (p r0 (a e0)) (n (p r1 (a e1))) (p r2 (a e2)))"), QueryType::In3);
        assert_eq!(c("(a e0)"), QueryType::Other);
        assert_eq!(c("(n (p r0 (a e0)))"), QueryType::Other);
        assert_eq!(
            c("(i (p r0 (a e0)) (n (p r1 (a e1))) (n (p r2 (a e2))))"),
            QueryType::Other
        );
    }

    #[test]
    fn quoted_labels_round_trip() {
        let v = Vocabularies {
            entities: Vocab::from_labels(["New York", "a\"b", "(x)", "back\\slash"]),
            relations: Vocab::from_labels(["lives in"]),
        };
        let mut b = QueryBuilder::new();
        let leaves: Vec<NodeId> = (0..4)
            .map(|i| {
                let a = b.anchor(EntityId(i));
                b.project(a, RelationId(0))
            })
            .collect();
        let t = b.union(leaves);
        let q = b.build(t).unwrap();
        let text = serialize_query(&q, &v);
        assert!(text.contains("\"New York\""));
        assert_eq!(parse_query(&text, &v).unwrap(), q);
    }

    #[test]
    fn topological_order_small_cases() {
        let v = vocab();
        let q = parse_query("(p r0 (a e0))", &v).unwrap();
        let order = q.topological_order().unwrap();
        assert!(matches!(q.node(order[0]), QueryNode::Anchor(_)));
        assert_eq!(order[1], q.target());

        let q = parse_query("(i (p r0 (a e0)) (p r1 (a e1)))", &v).unwrap();
        let order = q.topological_order().unwrap();
        assert_eq!(order.len(), 5);
        assert_eq!(*order.last().unwrap(), q.target());
    }

    #[test]
    fn shared_subtrees_and_validation() {
        // DAG sharing: both branches reuse node 1.
        let nodes = vec![
            QueryNode::Anchor(EntityId(0)),
            QueryNode::Projection {
                child: NodeId(0),
                relation: RelationId(0),
            },
            QueryNode::Intersection(vec![NodeId(1), NodeId(1)]),
        ];
        let q = Query::new(nodes, NodeId(2)).unwrap();
        assert_eq!(q.topological_order().unwrap(), vec![NodeId(0), NodeId(1), NodeId(2)]);

        let cyclic = vec![QueryNode::Complement(NodeId(1)), QueryNode::Complement(NodeId(0))];
        assert!(matches!(Query::new(cyclic, NodeId(0)), Err(Error::InvalidQuery(_))));
        let unreachable = vec![QueryNode::Anchor(EntityId(0)), QueryNode::Anchor(EntityId(1))];
        assert!(Query::new(unreachable, NodeId(0)).is_err());
        let dangling = vec![QueryNode::Complement(NodeId(5))];
        assert!(Query::new(dangling, NodeId(0)).is_err());
    }

    #[test]
    fn type_tags_parse() {
        for t in QueryType::ALL {
            assert_eq!(t.tag().parse::<QueryType>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.tag()));
        }
        assert!("4p".parse::<QueryType>().is_err());
    }
}
