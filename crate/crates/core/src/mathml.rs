//! Ordered labeled trees for Presentation and Content MathML.
//!
//! Trees are stored as a flat node arena in preorder, so a [`NodeId`] is also
//! the node's preorder position. This is what lets the alignment module treat
//! the linearized token index and the node id as the same number.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The function-application character, `&#8289;`.
pub const FUNCTION_APPLICATION: &str = "\u{2061}";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("unknown {kind} element <{element}>")]
    UnknownElement { element: String, kind: Markup },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Markup {
    Presentation,
    Content,
}

impl fmt::Display for Markup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Markup::Presentation => f.write_str("presentation"),
            Markup::Content => f.write_str("content"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MathNode {
    element: String,
    text: Option<String>,
    children: Vec<NodeId>,
    parent: Option<NodeId>,
}

impl MathNode {
    pub fn element(&self) -> &str {
        &self.element
    }

    pub fn text(&self) -> Option<&str> {
        self.text.as_deref()
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Leaf text if present, otherwise the element name. This is the string
    /// a content leaf contributes as a candidate translation.
    pub fn label(&self) -> &str {
        self.text.as_deref().unwrap_or(&self.element)
    }
}

/// A recursive, owned description of a tree. Handy for building trees in
/// code and for assembling decoder output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term {
    pub element: String,
    pub text: Option<String>,
    pub children: Vec<Term>,
}

impl Term {
    pub fn leaf(element: &str, text: &str) -> Self {
        Term {
            element: element.to_string(),
            text: Some(text.to_string()),
            children: Vec::new(),
        }
    }

    /// A zero-child element without text, e.g. `<selector/>`.
    pub fn empty(element: &str) -> Self {
        Term {
            element: element.to_string(),
            text: None,
            children: Vec::new(),
        }
    }

    pub fn node(element: &str, children: Vec<Term>) -> Self {
        Term {
            element: element.to_string(),
            text: None,
            children,
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Term::node_count).sum::<usize>()
    }
}

/// A MathML expression tree. Nodes are kept in preorder with the root at 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MathTree {
    kind: Markup,
    nodes: Vec<MathNode>,
}

impl MathTree {
    pub fn from_term(kind: Markup, term: &Term) -> Self {
        let mut nodes = Vec::with_capacity(term.node_count());
        push_term(&mut nodes, term, None);
        MathTree { kind, nodes }
    }

    pub fn leaf(kind: Markup, element: &str, text: &str) -> Self {
        Self::from_term(kind, &Term::leaf(element, text))
    }

    /// A tree with no nodes. Only the corpus loader produces these (for
    /// blank markup); every operation that needs a root rejects them.
    pub fn empty(kind: Markup) -> Self {
        MathTree {
            kind,
            nodes: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self) -> Markup {
        self.kind
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &MathNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &MathNode)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of nodes in the subtree rooted at `id`. Because storage is
    /// preorder, the subtree occupies `id..id + subtree_size(id)`.
    pub fn subtree_size(&self, id: NodeId) -> usize {
        let mut end = id.0 + 1;
        while end < self.nodes.len() && self.is_ancestor(id, NodeId(end)) {
            end += 1;
        }
        end - id.0
    }

    /// True when `a` is a proper ancestor of `b`.
    pub fn is_ancestor(&self, a: NodeId, b: NodeId) -> bool {
        let mut cur = self.nodes[b.0].parent;
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            cur = self.nodes[p.0].parent;
        }
        false
    }

    /// Copy of the subtree rooted at `id` as a standalone tree.
    pub fn subtree(&self, id: NodeId) -> MathTree {
        MathTree::from_term(self.kind, &self.to_term_at(id))
    }

    pub fn to_term(&self) -> Term {
        self.to_term_at(self.root())
    }

    pub fn to_term_at(&self, id: NodeId) -> Term {
        let n = &self.nodes[id.0];
        Term {
            element: n.element.clone(),
            text: n.text.clone(),
            children: n.children.iter().map(|&c| self.to_term_at(c)).collect(),
        }
    }

    /// Siblings immediately before and after `id`, if any.
    pub fn neighbours(&self, id: NodeId) -> (Option<NodeId>, Option<NodeId>) {
        let Some(parent) = self.nodes[id.0].parent else {
            return (None, None);
        };
        let siblings = &self.nodes[parent.0].children;
        let pos = siblings
            .iter()
            .position(|&c| c == id)
            .expect("child of parent");
        let prev = pos.checked_sub(1).map(|p| siblings[p]);
        let next = siblings.get(pos + 1).copied();
        (prev, next)
    }

    /// Canonical XML text.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        if self.is_empty() {
            return out;
        }
        self.write_xml(self.root(), &mut out);
        out
    }

    fn write_xml(&self, id: NodeId, out: &mut String) {
        let n = &self.nodes[id.0];
        if n.children.is_empty() && n.text.is_none() {
            out.push('<');
            out.push_str(&n.element);
            out.push_str("/>");
            return;
        }
        out.push('<');
        out.push_str(&n.element);
        out.push('>');
        if let Some(t) = &n.text {
            escape_into(t, out);
        }
        for &c in &n.children {
            self.write_xml(c, out);
        }
        out.push_str("</");
        out.push_str(&n.element);
        out.push('>');
    }

    /// Checks the arena invariants. Trees built through this module always
    /// satisfy them; this exists for tests and for data read from elsewhere.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        if self.nodes[0].parent.is_some() {
            return Err("root has a parent".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.text.is_some() && !n.children.is_empty() {
                return Err(format!("node {i} has both text and children"));
            }
            if i > 0 && n.parent.is_none() {
                return Err(format!("node {i} is a second root"));
            }
            let mut next = i + 1;
            for &c in &n.children {
                if c.0 != next {
                    return Err(format!("node {i} child {} out of preorder", c.0));
                }
                if self.nodes[c.0].parent != Some(NodeId(i)) {
                    return Err(format!("node {} has wrong parent", c.0));
                }
                next += self.subtree_size(c);
            }
        }
        Ok(())
    }
}

impl fmt::Display for MathTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

fn push_term(nodes: &mut Vec<MathNode>, term: &Term, parent: Option<NodeId>) -> NodeId {
    let id = NodeId(nodes.len());
    let text = if term.children.is_empty() {
        term.text.clone()
    } else {
        None
    };
    nodes.push(MathNode {
        element: term.element.clone(),
        text,
        children: Vec::with_capacity(term.children.len()),
        parent,
    });
    for child in &term.children {
        let c = push_term(nodes, child, Some(id));
        nodes[id.0].children.push(c);
    }
    id
}

fn escape_into(text: &str, out: &mut String) {
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
}

const PRESENTATION_ELEMENTS: &[&str] = &[
    "mi",
    "mo",
    "mn",
    "mrow",
    "msub",
    "msup",
    "msubsup",
    "mfrac",
    "msqrt",
    "mroot",
    "mfenced",
    "mtext",
    "mover",
    "munder",
    "munderover",
];

const CONTENT_CONTAINERS: &[&str] = &[
    "ci",
    "cn",
    "csymbol",
    "apply",
    "bvar",
    "lowlimit",
    "uplimit",
    "degree",
    "logbase",
    "condition",
    "interval",
    "set",
    "list",
    "vector",
    "matrix",
    "matrixrow",
    "piecewise",
    "piece",
    "otherwise",
    "lambda",
];

const CONTENT_OPERATORS: &[&str] = &[
    "selector",
    "plus",
    "minus",
    "times",
    "divide",
    "power",
    "root",
    "rem",
    "quotient",
    "factorial",
    "abs",
    "conjugate",
    "arg",
    "real",
    "imaginary",
    "floor",
    "ceiling",
    "max",
    "min",
    "gcd",
    "lcm",
    "eq",
    "neq",
    "lt",
    "gt",
    "leq",
    "geq",
    "approx",
    "equivalent",
    "and",
    "or",
    "xor",
    "not",
    "implies",
    "forall",
    "exists",
    "in",
    "notin",
    "subset",
    "prsubset",
    "union",
    "intersect",
    "setdiff",
    "sum",
    "product",
    "int",
    "diff",
    "partialdiff",
    "limit",
    "tendsto",
    "exp",
    "ln",
    "log",
    "sin",
    "cos",
    "tan",
    "sec",
    "csc",
    "cot",
    "sinh",
    "cosh",
    "tanh",
    "arcsin",
    "arccos",
    "arctan",
    "compose",
    "inverse",
    "transpose",
    "determinant",
    "infinity",
    "pi",
    "exponentiale",
    "imaginaryi",
    "eulergamma",
    "emptyset",
    "true",
    "false",
    "integers",
    "reals",
    "rationals",
    "naturalnumbers",
    "complexes",
    "primes",
];

/// Element-name whitelists used by [`parse_with`]. The defaults cover the
/// corpora seen so far and can be extended for noisier data.
#[derive(Debug, Clone)]
pub struct Whitelist {
    presentation: BTreeSet<String>,
    content: BTreeSet<String>,
    content_leaves: BTreeSet<String>,
}

impl Default for Whitelist {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        Whitelist {
            presentation: set(PRESENTATION_ELEMENTS),
            content: set(CONTENT_CONTAINERS),
            content_leaves: set(CONTENT_OPERATORS),
        }
    }
}

impl Whitelist {
    pub fn with_presentation<I, S>(mut self, extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.presentation.extend(extra.into_iter().map(Into::into));
        self
    }

    pub fn with_content<I, S>(mut self, extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.content.extend(extra.into_iter().map(Into::into));
        self
    }

    /// Zero-child content operator elements (`<plus/>`, `<selector/>`, ...).
    pub fn with_content_leaves<I, S>(mut self, extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.content_leaves
            .extend(extra.into_iter().map(Into::into));
        self
    }

    pub fn allows(&self, kind: Markup, element: &str) -> bool {
        match kind {
            Markup::Presentation => self.presentation.contains(element),
            Markup::Content => {
                self.content.contains(element) || self.content_leaves.contains(element)
            }
        }
    }

    fn must_be_leaf(&self, kind: Markup, element: &str) -> bool {
        kind == Markup::Content && self.content_leaves.contains(element)
    }
}

// Named entities that show up in MathML exports. roxmltree only knows the five
// XML entities, so these are rewritten to numeric references first.
const NAMED_ENTITIES: &[(&str, &str)] = &[
    ("af", "&#x2061;"),
    ("ApplyFunction", "&#x2061;"),
    ("it", "&#x2062;"),
    ("InvisibleTimes", "&#x2062;"),
    ("ic", "&#x2063;"),
    ("InvisibleComma", "&#x2063;"),
    ("nbsp", "&#xA0;"),
    ("minus", "&#x2212;"),
    ("times", "&#xD7;"),
    ("sdot", "&#x22C5;"),
    ("infin", "&#x221E;"),
    ("int", "&#x222B;"),
    ("sum", "&#x2211;"),
    ("prod", "&#x220F;"),
    ("le", "&#x2264;"),
    ("ge", "&#x2265;"),
    ("ne", "&#x2260;"),
    ("isin", "&#x2208;"),
    ("vert", "|"),
    ("alpha", "&#x3B1;"),
    ("beta", "&#x3B2;"),
    ("gamma", "&#x3B3;"),
    ("delta", "&#x3B4;"),
    ("epsilon", "&#x3B5;"),
    ("zeta", "&#x3B6;"),
    ("eta", "&#x3B7;"),
    ("theta", "&#x3B8;"),
    ("lambda", "&#x3BB;"),
    ("mu", "&#x3BC;"),
    ("nu", "&#x3BD;"),
    ("xi", "&#x3BE;"),
    ("pi", "&#x3C0;"),
    ("rho", "&#x3C1;"),
    ("sigma", "&#x3C3;"),
    ("tau", "&#x3C4;"),
    ("phi", "&#x3C6;"),
    ("chi", "&#x3C7;"),
    ("psi", "&#x3C8;"),
    ("omega", "&#x3C9;"),
    ("Gamma", "&#x393;"),
    ("Delta", "&#x394;"),
    ("Sigma", "&#x3A3;"),
    ("Pi", "&#x3A0;"),
    ("Omega", "&#x3A9;"),
];

fn resolve_named_entities(xml: &str) -> String {
    let mut out = String::with_capacity(xml.len());
    let mut rest = xml;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp + 1..];
        let replaced = tail.find(';').and_then(|semi| {
            let name = &tail[..semi];
            NAMED_ENTITIES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, r)| (semi, *r))
        });
        match replaced {
            Some((semi, r)) => {
                out.push_str(r);
                rest = &tail[semi + 1..];
            }
            None => {
                out.push('&');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn parse(xml: &str, kind: Markup) -> Result<MathTree, ParseError> {
    parse_with(xml, kind, &Whitelist::default())
}

/// Parses one MathML fragment. Attributes and namespaces are ignored, a
/// `<math>` wrapper is removed, whitespace-only text between elements is
/// dropped and leaf text is trimmed.
pub fn parse_with(xml: &str, kind: Markup, whitelist: &Whitelist) -> Result<MathTree, ParseError> {
    let resolved = resolve_named_entities(xml);
    let doc = roxmltree::Document::parse(&resolved)
        .map_err(|e| ParseError::MalformedXml(e.to_string()))?;
    let mut root = doc.root_element();
    if root.tag_name().name() == "math" {
        let kids: Vec<_> = root.children().filter(|n| n.is_element()).collect();
        match kids.as_slice() {
            [single] => root = *single,
            [] => return Err(ParseError::MalformedXml("empty <math> element".into())),
            _ if kind == Markup::Presentation => {
                let children = kids
                    .iter()
                    .map(|k| build_term(*k, kind, whitelist))
                    .collect::<Result<Vec<_>, _>>()?;
                return Ok(MathTree::from_term(kind, &Term::node("mrow", children)));
            }
            _ => {
                return Err(ParseError::MalformedXml(
                    "<math> wraps more than one content expression".into(),
                ))
            }
        }
    }
    let term = build_term(root, kind, whitelist)?;
    Ok(MathTree::from_term(kind, &term))
}

fn build_term(
    node: roxmltree::Node<'_, '_>,
    kind: Markup,
    whitelist: &Whitelist,
) -> Result<Term, ParseError> {
    let element = node.tag_name().name();
    if !whitelist.allows(kind, element) {
        return Err(ParseError::UnknownElement {
            element: element.to_string(),
            kind,
        });
    }
    let mut children = Vec::new();
    let mut text = String::new();
    for child in node.children() {
        if child.is_element() {
            children.push(build_term(child, kind, whitelist)?);
        } else if child.is_text() {
            text.push_str(child.text().unwrap_or(""));
        }
    }
    let text = text.trim();
    if !children.is_empty() && !text.is_empty() {
        return Err(ParseError::MalformedXml(format!(
            "<{element}> mixes text and child elements"
        )));
    }
    if whitelist.must_be_leaf(kind, element) && (!children.is_empty() || !text.is_empty()) {
        return Err(ParseError::MalformedXml(format!(
            "content operator <{element}> must be empty"
        )));
    }
    Ok(Term {
        element: element.to_string(),
        text: (!text.is_empty()).then(|| text.to_string()),
        children,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argument_content() -> Term {
        Term::node(
            "apply",
            vec![
                Term::empty("selector"),
                Term::leaf("ci", "S"),
                Term::node(
                    "apply",
                    vec![
                        Term::empty("selector"),
                        Term::leaf("ci", "j"),
                        Term::leaf("ci", "i"),
                    ],
                ),
            ],
        )
    }

    fn naive_count(t: &Term) -> usize {
        let mut n = 1;
        for c in &t.children {
            n += naive_count(c);
        }
        n
    }

    #[test]
    fn parses_presentation_fragment() {
        let t = parse("<mrow><mi>w</mi></mrow>", Markup::Presentation).unwrap();
        assert_eq!(t.to_term(), Term::node("mrow", vec![Term::leaf("mi", "w")]));
        assert_eq!(t.node_count(), 2);
    }

    #[test]
    fn parses_content_leaf() {
        let t = parse("<ci>w</ci>", Markup::Content).unwrap();
        assert_eq!(t.to_term(), Term::leaf("ci", "w"));
        assert_eq!(t.node_count(), 1);
    }

    #[test]
    fn unbalanced_is_malformed() {
        let err = parse("<mrow><mi>x</mrow>", Markup::Presentation).unwrap_err();
        assert!(matches!(err, ParseError::MalformedXml(_)));
    }

    #[test]
    fn unknown_element_rejected() {
        let err = parse("<mrow><blink>x</blink></mrow>", Markup::Presentation).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownElement {
                element: "blink".into(),
                kind: Markup::Presentation
            }
        );
        // content names are not presentation names
        assert!(parse("<ci>x</ci>", Markup::Presentation).is_err());
    }

    #[test]
    fn whitelist_is_extensible() {
        let wl = Whitelist::default().with_presentation(["mspace"]);
        assert!(parse_with("<mrow><mspace/></mrow>", Markup::Presentation, &wl).is_ok());
    }

    #[test]
    fn serializes_argument_row() {
        let t = MathTree::from_term(Markup::Content, &argument_content());
        let xml = t.serialize();
        assert_eq!(
            xml,
            "<apply><selector/><ci>S</ci><apply><selector/><ci>j</ci><ci>i</ci></apply></apply>"
        );
        // the markup as printed, with spaces and `<selector />`
        let table_form = "<apply> <selector /> <ci>S</ci> <apply> <selector /> <ci>j</ci> <ci>i</ci> </apply> </apply>";
        assert_eq!(parse(table_form, Markup::Content).unwrap(), t);
        // apply, selector, S, apply, selector, j, i
        assert_eq!(naive_count(&argument_content()), 7);
        assert_eq!(t.node_count(), 7);
        let p = parse(
            "<mrow><msub><mi>S</mi><msub><mi>j</mi><mi>i</mi></msub></msub></mrow>",
            Markup::Presentation,
        )
        .unwrap();
        assert_eq!(p.node_count(), naive_count(&p.to_term()));
        assert_eq!(p.node_count(), 6);
    }

    #[test]
    fn function_application_is_kept() {
        let t = parse(
            "<mrow><mi>P</mi><mo>&#8289;</mo><mi>v</mi></mrow>",
            Markup::Presentation,
        )
        .unwrap();
        assert_eq!(t.node(NodeId(2)).text(), Some(FUNCTION_APPLICATION));
        let named = parse(
            "<mrow><mi>P</mi><mo>&ApplyFunction;</mo><mi>v</mi></mrow>",
            Markup::Presentation,
        )
        .unwrap();
        assert_eq!(named, t);
    }

    #[test]
    fn attributes_namespace_and_math_wrapper_ignored() {
        let t = parse(
            r#"<math xmlns="http://www.w3.org/1998/Math/MathML"><mrow class="x"><mi mathvariant="bold"> w </mi></mrow></math>"#,
            Markup::Presentation,
        )
        .unwrap();
        assert_eq!(t.serialize(), "<mrow><mi>w</mi></mrow>");
    }

    #[test]
    fn mixed_content_rejected() {
        assert!(matches!(
            parse("<mrow>a<mi>b</mi></mrow>", Markup::Presentation),
            Err(ParseError::MalformedXml(_))
        ));
        assert!(matches!(
            parse("<apply><plus>x</plus></apply>", Markup::Content),
            Err(ParseError::MalformedXml(_))
        ));
    }

    #[test]
    fn escaping_round_trips() {
        let t = MathTree::leaf(Markup::Presentation, "mo", "<&>");
        assert_eq!(t.serialize(), "<mo>&lt;&amp;&gt;</mo>");
        assert_eq!(parse(&t.serialize(), Markup::Presentation).unwrap(), t);
    }

    #[test]
    fn structure_helpers() {
        let t = MathTree::from_term(Markup::Content, &argument_content());
        t.validate().unwrap();
        assert_eq!(t.subtree_size(NodeId(0)), 7);
        assert_eq!(t.subtree_size(NodeId(3)), 4);
        assert!(t.is_ancestor(NodeId(0), NodeId(5)));
        assert!(!t.is_ancestor(NodeId(1), NodeId(2)));
        assert_eq!(t.neighbours(NodeId(2)), (Some(NodeId(1)), Some(NodeId(3))));
        assert_eq!(t.subtree(NodeId(3)).node_count(), 4);
    }
}
