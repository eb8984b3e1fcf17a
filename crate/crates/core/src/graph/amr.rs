//! Parenthesized AMR notation: `(var / concept :role child ...)`, where a
//! child is a nested expression, a variable reference or a constant.

use std::collections::HashMap;

use super::{Edge, LabeledGraph, Node};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Str(String),
    Sym(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pos {
    line: usize,
    column: usize,
}

fn err(pos: Pos, message: impl Into<String>) -> Error {
    Error::AmrParse {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn tokenize(text: &str, first_line: usize) -> Result<(Vec<(Tok, Pos)>, Pos)> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut pos = Pos {
        line: first_line,
        column: 1,
    };
    let advance = |c: char, pos: &mut Pos| {
        if c == '\n' {
            pos.line += 1;
            pos.column = 1;
        } else {
            pos.column += 1;
        }
    };
    let is_delim = |c: char| c.is_whitespace() || c == '(' || c == ')' || c == '"';

    while let Some(&c) = chars.peek() {
        let start = pos;
        match c {
            c if c.is_whitespace() => {
                chars.next();
                advance(c, &mut pos);
            }
            '(' | ')' | '/' => {
                chars.next();
                advance(c, &mut pos);
                let t = match c {
                    '(' => Tok::Open,
                    ')' => Tok::Close,
                    _ => Tok::Slash,
                };
                out.push((t, start));
            }
            '"' => {
                chars.next();
                advance(c, &mut pos);
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => {
                            advance('"', &mut pos);
                            break;
                        }
                        Some(ch) => {
                            advance(ch, &mut pos);
                            s.push(ch);
                        }
                        None => return Err(err(start, "unterminated string literal")),
                    }
                }
                out.push((Tok::Str(s), start));
            }
            _ => {
                let mut s = String::new();
                while let Some(&ch) = chars.peek() {
                    if is_delim(ch) || (ch == '/' && !s.is_empty() && !s.starts_with(':')) {
                        break;
                    }
                    s.push(ch);
                    chars.next();
                    advance(ch, &mut pos);
                }
                if let Some(role) = s.strip_prefix(':') {
                    if role.is_empty() {
                        return Err(err(start, "empty role name"));
                    }
                    out.push((Tok::Role(s), start));
                } else {
                    out.push((Tok::Sym(s), start));
                }
            }
        }
    }
    Ok((out, pos))
}

enum Target {
    Node(usize),
    Var(String, Pos),
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
    nodes: Vec<Node>,
    edges: Vec<(usize, Target, String)>,
    vars: HashMap<String, usize>,
}

fn looks_like_variable(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_lowercase()) && cs.all(|c| c.is_ascii_digit())
}

impl Parser {
    fn peek(&self) -> Option<&(Tok, Pos)> {
        self.toks.get(self.at)
    }

    fn next(&mut self) -> Option<(Tok, Pos)> {
        let t = self.toks.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn expect_sym(&mut self, what: &str) -> Result<(String, Pos)> {
        match self.next() {
            Some((Tok::Sym(s), p)) => Ok((s, p)),
            Some((t, p)) => Err(err(p, format!("expected {what}, found {t:?}"))),
            None => Err(err(
                self.end,
                format!("expected {what}, found end of input"),
            )),
        }
    }

    /// Parses `( var / concept (role child)* )`, attaching it to `parent`
    /// before its own children so edges come out in pre-order.
    fn expr(&mut self, parent: Option<(usize, String)>) -> Result<usize> {
        match self.next() {
            Some((Tok::Open, _)) => {}
            Some((_, p)) => return Err(err(p, "expected '('")),
            None => return Err(err(self.end, "expected '('")),
        }
        let (var, var_pos) = self.expect_sym("variable")?;
        match self.next() {
            Some((Tok::Slash, _)) => {}
            Some((_, p)) => return Err(err(p, "expected '/' after variable")),
            None => return Err(err(self.end, "unbalanced parentheses: expected '/'")),
        }
        let (concept, _) = match self.next() {
            Some((Tok::Sym(s), p)) | Some((Tok::Str(s), p)) => (s, p),
            Some((_, p)) => return Err(err(p, "expected concept")),
            None => return Err(err(self.end, "unbalanced parentheses: expected concept")),
        };
        if self.vars.contains_key(&var) {
            return Err(err(
                var_pos,
                format!("duplicate variable definition `{var}`"),
            ));
        }
        self.nodes.push(Node::new(concept));
        let me = self.nodes.len() - 1;
        self.vars.insert(var, me);
        if let Some((p, role)) = parent {
            self.edges.push((p, Target::Node(me), role));
        }

        loop {
            match self.next() {
                Some((Tok::Close, _)) => return Ok(me),
                Some((Tok::Role(role), _)) => match self.peek().cloned() {
                    Some((Tok::Open, _)) => {
                        self.expr(Some((me, role)))?;
                    }
                    Some((Tok::Str(s), _)) => {
                        self.at += 1;
                        self.nodes.push(Node::new(s));
                        let lit = self.nodes.len() - 1;
                        self.edges.push((me, Target::Node(lit), role));
                    }
                    Some((Tok::Sym(s), p)) if looks_like_variable(&s) => {
                        self.at += 1;
                        self.edges.push((me, Target::Var(s, p), role));
                    }
                    Some((Tok::Sym(s), _)) => {
                        self.at += 1;
                        self.nodes.push(Node::new(s));
                        let constant = self.nodes.len() - 1;
                        self.edges.push((me, Target::Node(constant), role));
                    }
                    Some((_, p)) => return Err(err(p, "expected child after role")),
                    None => return Err(err(self.end, "unbalanced parentheses: expected child")),
                },
                Some((_, p)) => return Err(err(p, "expected role or ')'")),
                None => return Err(err(self.end, "unbalanced parentheses: missing ')'")),
            }
        }
    }
}

fn parse_at(text: &str, first_line: usize) -> Result<LabeledGraph> {
    let (toks, end) = tokenize(text, first_line)?;
    if toks.is_empty() {
        return Err(err(
            Pos {
                line: first_line,
                column: 1,
            },
            "empty input",
        ));
    }
    let mut p = Parser {
        toks,
        at: 0,
        end,
        nodes: Vec::new(),
        edges: Vec::new(),
        vars: HashMap::new(),
    };
    p.expr(None)?;
    if let Some((t, pos)) = p.peek() {
        let msg = if *t == Tok::Close {
            "unbalanced parentheses: unexpected ')'"
        } else {
            "trailing input after expression"
        };
        return Err(err(*pos, msg));
    }
    let mut resolved = Vec::with_capacity(p.edges.len());
    for (src, target, role) in p.edges {
        let tgt = match target {
            Target::Node(i) => i,
            Target::Var(name, pos) => *p
                .vars
                .get(&name)
                .ok_or_else(|| err(pos, format!("reference to undefined variable `{name}`")))?,
        };
        resolved.push(Edge::new(src, tgt, role));
    }
    LabeledGraph::new(p.nodes, resolved)
}

/// Parses a single AMR expression. Node order is the order in which
/// variables and literals are introduced; edge order follows the text.
pub fn parse_amr(text: &str) -> Result<LabeledGraph> {
    parse_at(text, 1)
}

/// Parses blank-line-separated AMR blocks; lines starting with `#` are
/// comments. Error positions refer to lines of the whole input.
pub fn parse_amr_blocks(text: &str) -> Result<Vec<LabeledGraph>> {
    let mut out = Vec::new();
    let mut block = String::new();
    let mut block_start = 1;
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let is_blank = line.trim().is_empty();
        if !is_blank && block.is_empty() {
            block_start = i + 1;
        }
        if is_blank {
            if !block.trim().is_empty() {
                out.push(parse_at(&block, block_start)?);
            }
            block.clear();
            continue;
        }
        if line.trim_start().starts_with('#') {
            // keep line numbering intact
            block.push('\n');
            continue;
        }
        block.push_str(line);
        block.push('\n');
    }
    if !block.trim().is_empty() {
        out.push(parse_at(&block, block_start)?);
    }
    Ok(out)
}

/// `describe-01` → `describe`; lowercases and drops quotes.
pub fn strip_sense(token: &str) -> String {
    let t = token.replace('"', "").to_lowercase();
    match t.rfind('-') {
        Some(i) if i > 0 && i + 1 < t.len() && t[i + 1..].chars().all(|c| c.is_ascii_digit()) => {
            t[..i].to_string()
        }
        _ => t,
    }
}

/// Depth-first serialization from the unique root. Children follow edge
/// insertion order; a node seen before is emitted as its bare token.
pub fn linearize_amr(g: &LabeledGraph) -> Result<Vec<String>> {
    let mut has_parent = vec![false; g.len()];
    for e in g.edges() {
        has_parent[e.tgt] = true;
    }
    let roots: Vec<usize> = (0..g.len()).filter(|&i| !has_parent[i]).collect();
    let root = match roots.as_slice() {
        [r] => *r,
        [] => return Err(Error::Graph("AMR graph has no root".into())),
        many => return Err(Error::Graph(format!("AMR graph has {} roots", many.len()))),
    };
    let mut children: Vec<Vec<&Edge>> = vec![Vec::new(); g.len()];
    for e in g.edges() {
        children[e.src].push(e);
    }
    let mut visited = vec![false; g.len()];
    let mut out = Vec::new();
    visited[root] = true;
    emit(g, root, &children, &mut visited, &mut out);
    Ok(out)
}

fn emit(
    g: &LabeledGraph,
    node: usize,
    children: &[Vec<&Edge>],
    visited: &mut [bool],
    out: &mut Vec<String>,
) {
    out.push(strip_sense(g.token(node)));
    for e in &children[node] {
        out.push(e.label.to_lowercase());
        let c = e.tgt;
        if visited[c] {
            out.push(strip_sense(g.token(c)));
        } else if children[c].is_empty() {
            visited[c] = true;
            out.push(strip_sense(g.token(c)));
        } else {
            visited[c] = true;
            out.push("(".into());
            emit(g, c, children, visited, out);
            out.push(")".into());
        }
    }
}

/// Prints a tree-shaped graph back to AMR notation with fresh variables.
/// Re-entrant targets are printed as variable references.
pub fn pretty_print_amr(g: &LabeledGraph) -> Result<String> {
    let mut has_parent = vec![false; g.len()];
    for e in g.edges() {
        has_parent[e.tgt] = true;
    }
    let root = (0..g.len())
        .find(|&i| !has_parent[i])
        .ok_or_else(|| Error::Graph("AMR graph has no root".into()))?;
    let mut children: Vec<Vec<&Edge>> = vec![Vec::new(); g.len()];
    for e in g.edges() {
        children[e.src].push(e);
    }
    let mut printed = vec![false; g.len()];
    let mut s = String::new();
    print_node(g, root, &children, &mut printed, &mut s);
    Ok(s)
}

fn print_node(
    g: &LabeledGraph,
    node: usize,
    children: &[Vec<&Edge>],
    printed: &mut [bool],
    s: &mut String,
) {
    printed[node] = true;
    s.push_str(&format!("(v{node} / {}", g.token(node)));
    for e in &children[node] {
        s.push(' ');
        s.push_str(&e.label);
        s.push(' ');
        if printed[e.tgt] {
            s.push_str(&format!("v{}", e.tgt));
        } else {
            print_node(g, e.tgt, children, printed, s);
        }
    }
    s.push(')');
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIGURE_AMR: &str =
        "(d / describe-01\n   :ARG0 (p / person\n      :name (n / name :op1 \"Ryan\"))\n   :ARG1 p\n   :ARG2 (g / genius))";

    #[test]
    fn name_subgraph() {
        let g = parse_amr("(p / person :name (n / name :op1 \"Ryan\"))").unwrap();
        assert_eq!(g.tokens(), ["person", "name", "Ryan"]);
        assert_eq!(
            g.edges(),
            [Edge::new(0, 1, ":name"), Edge::new(1, 2, ":op1")]
        );
    }

    #[test]
    fn leaf() {
        let g = parse_amr("(b / boy)").unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn reentrancy() {
        let g = parse_amr("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))").unwrap();
        assert_eq!(g.tokens(), ["want-01", "boy", "go-01"]);
        assert_eq!(
            g.edges(),
            [
                Edge::new(0, 1, ":ARG0"),
                Edge::new(0, 2, ":ARG1"),
                Edge::new(2, 1, ":ARG0")
            ]
        );
    }

    #[test]
    fn forward_reference_and_constants() {
        let g = parse_amr("(a / and :op1 b :op2 (b / boy :polarity -))").unwrap();
        assert_eq!(g.tokens(), ["and", "boy", "-"]);
        assert_eq!(g.edges()[2], Edge::new(1, 2, ":polarity"));
        assert_eq!(g.edges()[0], Edge::new(0, 1, ":op1"));
    }

    #[test]
    fn parse_errors_carry_positions() {
        let cases = [
            ("", "empty"),
            ("(b / boy", "missing ')'"),
            ("(b / boy))", "unexpected ')'"),
            ("(b / boy :ARG0 (b / girl))", "duplicate"),
            ("(b / boy :ARG0 x)", "undefined"),
        ];
        for (text, needle) in cases {
            match parse_amr(text) {
                Err(Error::AmrParse {
                    message,
                    line,
                    column,
                }) => {
                    assert!(message.contains(needle), "{text}: {message}");
                    assert!(line >= 1 && column >= 1);
                }
                other => panic!("{text}: expected parse error, got {other:?}"),
            }
        }
        match parse_amr("(a / and\n  :op1 (b / boy :ARG0 z9))") {
            Err(Error::AmrParse { line, column, .. }) => assert_eq!((line, column), (2, 23)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn figure_linearization() {
        let g = parse_amr(FIGURE_AMR).unwrap();
        assert_eq!(
            linearize_amr(&g).unwrap().join(" "),
            "describe :arg0 ( person :name ( name :op1 ryan ) ) :arg1 person :arg2 genius"
        );
    }

    #[test]
    fn small_linearizations() {
        let g = LabeledGraph::from_parts(&["boy"], &[]).unwrap();
        assert_eq!(linearize_amr(&g).unwrap(), ["boy"]);
        let g = LabeledGraph::from_parts(&["a", "b", "c"], &[(0, 1, ":x"), (1, 2, ":y")]).unwrap();
        assert_eq!(linearize_amr(&g).unwrap().join(" "), "a :x ( b :y c )");
    }

    #[test]
    fn linearize_needs_unique_root() {
        let two = LabeledGraph::from_parts(&["a", "b"], &[]).unwrap();
        assert!(linearize_amr(&two).is_err());
        let cyc = LabeledGraph::from_parts(&["a", "b"], &[(0, 1, ":x"), (1, 0, ":y")]).unwrap();
        assert!(linearize_amr(&cyc).is_err());
    }

    #[test]
    fn blocks_with_comments() {
        let text = "# ::snt the boy\n(b / boy)\n\n\n# ::snt x\n(w / want-01\n :ARG0 (b / boy))\n";
        let gs = parse_amr_blocks(text).unwrap();
        assert_eq!(gs.len(), 2);
        assert_eq!(gs[1].len(), 2);
        match parse_amr_blocks("(a / b)\n\n(c / d\n") {
            Err(Error::AmrParse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sense_stripping() {
        assert_eq!(strip_sense("describe-01"), "describe");
        assert_eq!(strip_sense("\"Ryan\""), "ryan");
        assert_eq!(strip_sense("-"), "-");
        assert_eq!(strip_sense("state-of-the-art"), "state-of-the-art");
    }
}
