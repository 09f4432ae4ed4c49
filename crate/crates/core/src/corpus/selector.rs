//! A small XPath subset evaluated over an HTML DOM.
//!
//! Supported: absolute (`/html/body`) and descendant (`//article//p`) steps,
//! name tests and `*`, and predicates `[n]`, `[@attr]`, `[@attr='v']`,
//! `[contains(@attr,'v')]`, joined with `and`. A path without a leading slash
//! is searched from anywhere in the document, as if it started with `//`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use ego_tree::{NodeId, NodeRef};
use scraper::{Html, Node};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorError {
    pub selector: String,
    pub reason: String,
}

impl fmt::Display for SelectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "'{}': {}", self.selector, self.reason)
    }
}

impl std::error::Error for SelectorError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Child,
    Descendant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Predicate {
    Position(usize),
    HasAttr(String),
    AttrEquals(String, String),
    AttrContains(String, String),
    All(Vec<Predicate>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Step {
    axis: Axis,
    /// Lower-cased tag name, `None` for `*`.
    name: Option<String>,
    predicates: Vec<Predicate>,
}

/// A compiled path expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSelector {
    source: String,
    steps: Vec<Step>,
}

impl fmt::Display for PathSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for PathSelector {
    type Err = SelectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PathSelector::parse(s)
    }
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<char>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, reason: impl Into<String>) -> Result<T, SelectorError> {
        Err(SelectorError {
            selector: self.src.to_string(),
            reason: format!("{} at offset {}", reason.into(), self.pos),
        })
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn name(&mut self) -> Result<String, SelectorError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_alphanumeric() || matches!(c, '-' | '_' | ':' | '.'))
        {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected a name");
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn literal(&mut self) -> Result<String, SelectorError> {
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => return self.err("expected a quoted string"),
        };
        self.pos += 1;
        let start = self.pos;
        while self.peek().is_some_and(|c| c != quote) {
            self.pos += 1;
        }
        if !self.eat(quote) {
            return self.err("unterminated string");
        }
        Ok(self.chars[start..self.pos - 1].iter().collect())
    }

    fn keyword(&mut self, word: &str) -> bool {
        let end = self.pos + word.chars().count();
        if end <= self.chars.len() && self.chars[self.pos..end].iter().copied().eq(word.chars()) {
            self.pos = end;
            true
        } else {
            false
        }
    }

    fn predicate_term(&mut self) -> Result<Predicate, SelectorError> {
        self.skip_ws();
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            let digits: String = self.chars[start..self.pos].iter().collect();
            let n: usize = digits.parse().or_else(|_| self.err("bad position"))?;
            if n == 0 {
                return self.err("positions start at 1");
            }
            return Ok(Predicate::Position(n));
        }
        if self.keyword("contains(") {
            self.skip_ws();
            if !self.eat('@') {
                return self.err("contains() takes an attribute");
            }
            let attr = self.name()?.to_ascii_lowercase();
            self.skip_ws();
            if !self.eat(',') {
                return self.err("expected ','");
            }
            self.skip_ws();
            let value = self.literal()?;
            self.skip_ws();
            if !self.eat(')') {
                return self.err("expected ')'");
            }
            return Ok(Predicate::AttrContains(attr, value));
        }
        if self.eat('@') {
            let attr = self.name()?.to_ascii_lowercase();
            self.skip_ws();
            if self.eat('=') {
                self.skip_ws();
                let value = self.literal()?;
                return Ok(Predicate::AttrEquals(attr, value));
            }
            return Ok(Predicate::HasAttr(attr));
        }
        self.err("unsupported predicate")
    }

    fn predicate(&mut self) -> Result<Predicate, SelectorError> {
        let mut terms = vec![self.predicate_term()?];
        loop {
            self.skip_ws();
            if self.keyword("and") {
                terms.push(self.predicate_term()?);
            } else {
                break;
            }
        }
        self.skip_ws();
        if !self.eat(']') {
            return self.err("expected ']'");
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Predicate::All(terms)
        })
    }

    fn parse(mut self) -> Result<Vec<Step>, SelectorError> {
        self.skip_ws();
        if self.peek().is_none() {
            return self.err("empty selector");
        }
        let mut steps = Vec::new();
        let mut axis = if self.eat('/') {
            if self.eat('/') {
                Axis::Descendant
            } else {
                Axis::Child
            }
        } else {
            Axis::Descendant
        };
        loop {
            let name = if self.eat('*') {
                None
            } else {
                Some(self.name()?.to_ascii_lowercase())
            };
            let mut predicates = Vec::new();
            while self.eat('[') {
                predicates.push(self.predicate()?);
            }
            steps.push(Step {
                axis,
                name,
                predicates,
            });
            self.skip_ws();
            match self.peek() {
                None => break,
                Some('/') => {
                    self.pos += 1;
                    axis = if self.eat('/') {
                        Axis::Descendant
                    } else {
                        Axis::Child
                    };
                }
                Some(_) => return self.err("unexpected character"),
            }
        }
        Ok(steps)
    }
}

impl PathSelector {
    pub fn parse(source: &str) -> Result<PathSelector, SelectorError> {
        let steps = Parser {
            src: source,
            chars: source.chars().collect(),
            pos: 0,
        }
        .parse()?;
        Ok(PathSelector {
            source: source.to_string(),
            steps,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    /// Matching element nodes in document order, without duplicates.
    pub fn select<'a>(&self, html: &'a Html) -> Vec<NodeRef<'a, Node>> {
        let root = html.tree.root();
        let mut context = vec![root];
        for step in &self.steps {
            let mut next: Vec<NodeRef<'a, Node>> = Vec::new();
            let mut seen: HashSet<NodeId> = HashSet::new();
            for node in &context {
                for candidate in step.apply(*node) {
                    if seen.insert(candidate.id()) {
                        next.push(candidate);
                    }
                }
            }
            context = next;
        }
        let order: HashMap<NodeId, usize> = root
            .descendants()
            .enumerate()
            .map(|(i, n)| (n.id(), i))
            .collect();
        context.sort_by_key(|n| order.get(&n.id()).copied().unwrap_or(usize::MAX));
        context
    }
}

impl Step {
    fn name_matches(&self, node: &NodeRef<'_, Node>) -> bool {
        match node.value().as_element() {
            Some(el) => self.name.as_deref().is_none_or(|n| el.name() == n),
            None => false,
        }
    }

    fn apply<'a>(&self, context: NodeRef<'a, Node>) -> Vec<NodeRef<'a, Node>> {
        // Positional predicates count among siblings, so candidates are grouped by parent.
        let parents: Vec<NodeRef<'a, Node>> = match self.axis {
            Axis::Child => vec![context],
            Axis::Descendant => context.descendants().collect(),
        };
        let mut out = Vec::new();
        for parent in parents {
            let mut group: Vec<NodeRef<'a, Node>> =
                parent.children().filter(|c| self.name_matches(c)).collect();
            for predicate in &self.predicates {
                group = group
                    .into_iter()
                    .enumerate()
                    .filter(|(i, node)| predicate.matches(node, i + 1))
                    .map(|(_, node)| node)
                    .collect();
            }
            out.extend(group);
        }
        out
    }
}

impl Predicate {
    fn matches(&self, node: &NodeRef<'_, Node>, position: usize) -> bool {
        let Some(el) = node.value().as_element() else {
            return false;
        };
        match self {
            Predicate::Position(n) => position == *n,
            Predicate::HasAttr(a) => el.attr(a).is_some(),
            Predicate::AttrEquals(a, v) => el.attr(a) == Some(v.as_str()),
            Predicate::AttrContains(a, v) => el.attr(a).is_some_and(|x| x.contains(v.as_str())),
            Predicate::All(terms) => terms.iter().all(|t| t.matches(node, position)),
        }
    }
}

/// Visible text under `node`; script and style contents are skipped.
pub fn node_text(node: NodeRef<'_, Node>) -> String {
    let mut out = String::new();
    collect_text(node, &mut out);
    out
}

fn collect_text(node: NodeRef<'_, Node>, out: &mut String) {
    match node.value() {
        Node::Text(t) => out.push_str(t),
        Node::Element(el) if matches!(el.name(), "script" | "style" | "noscript") => {}
        Node::Element(el) => {
            let block = matches!(el.name(), "br" | "p" | "div" | "li");
            if block {
                out.push(' ');
            }
            for child in node.children() {
                collect_text(child, out);
            }
            if block {
                out.push(' ');
            }
        }
        _ => {
            for child in node.children() {
                collect_text(child, out);
            }
        }
    }
}
