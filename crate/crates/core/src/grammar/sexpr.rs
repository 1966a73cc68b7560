use crate::error::{Error, Result};

/// An n-ary labeled tree as read from bracketed text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabeledTree {
    Node {
        label: String,
        children: Vec<LabeledTree>,
    },
    Word(String),
}

impl LabeledTree {
    pub fn label(&self) -> Option<&str> {
        match self {
            LabeledTree::Node { label, .. } => Some(label),
            LabeledTree::Word(_) => None,
        }
    }

    /// True for `(TAG word)` nodes.
    pub fn is_preterminal(&self) -> bool {
        matches!(self, LabeledTree::Node { children, .. }
            if matches!(children.as_slice(), [LabeledTree::Word(_)]))
    }

    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn go<'a>(t: &'a LabeledTree, out: &mut Vec<&'a str>) {
            match t {
                LabeledTree::Word(w) => out.push(w),
                LabeledTree::Node { children, .. } => children.iter().for_each(|c| go(c, out)),
            }
        }
        go(self, &mut out);
        out
    }

    pub fn to_brackets(&self) -> String {
        match self {
            LabeledTree::Word(w) => w.clone(),
            LabeledTree::Node { label, children } => {
                let inner: Vec<String> = children.iter().map(|c| c.to_brackets()).collect();
                if label.is_empty() {
                    format!("({})", inner.join(" "))
                } else {
                    format!("({} {})", label, inner.join(" "))
                }
            }
        }
    }
}

#[derive(Debug)]
enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(Token<'_>, usize)> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'(' => {
                    out.push((Token::Open, lineno + 1));
                    i += 1;
                }
                b')' => {
                    out.push((Token::Close, lineno + 1));
                    i += 1;
                }
                b if b.is_ascii_whitespace() => i += 1,
                _ => {
                    let start = i;
                    while i < bytes.len()
                        && !bytes[i].is_ascii_whitespace()
                        && bytes[i] != b'('
                        && bytes[i] != b')'
                    {
                        i += 1;
                    }
                    out.push((Token::Atom(&line[start..i]), lineno + 1));
                }
            }
        }
    }
    out
}

/// Parses every top-level s-expression in `text`. Trees may span lines.
pub fn parse_sexprs(text: &str, source: &str) -> Result<Vec<LabeledTree>> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let mut trees = Vec::new();
    while pos < tokens.len() {
        match tokens[pos] {
            (Token::Open, _) => trees.push(parse_node(&tokens, &mut pos, source)?),
            (Token::Close, line) => return Err(Error::parse(source, line, "unbalanced ')'")),
            (Token::Atom(a), line) => {
                return Err(Error::parse(source, line, format!("unexpected atom {a:?} outside a tree")))
            }
        }
    }
    Ok(trees)
}

fn parse_node(tokens: &[(Token<'_>, usize)], pos: &mut usize, source: &str) -> Result<LabeledTree> {
    let open_line = tokens[*pos].1;
    *pos += 1;
    let label = match tokens.get(*pos) {
        Some((Token::Atom(a), _)) => {
            *pos += 1;
            a.to_string()
        }
        _ => String::new(),
    };
    let mut children = Vec::new();
    loop {
        match tokens.get(*pos) {
            None => {
                return Err(Error::parse(
                    source,
                    open_line,
                    "unbalanced '(' opened here is never closed",
                ))
            }
            Some((Token::Close, _)) => {
                *pos += 1;
                break;
            }
            Some((Token::Open, _)) => children.push(parse_node(tokens, pos, source)?),
            Some((Token::Atom(a), _)) => {
                children.push(LabeledTree::Word(a.to_string()));
                *pos += 1;
            }
        }
    }
    Ok(LabeledTree::Node { label, children })
}
