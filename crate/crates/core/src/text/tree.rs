//! A tiny indentation-aware reader for the YAML subset the P² text format
//! uses: block mappings, block sequences, flow mappings `{k: v}`, flow
//! sequences `[a, b]`, plain and double-quoted scalars, and `#` comments.
//! Anchors, tags, multi-line scalars and documents are not supported.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Map(Vec<(String, Node)>, Pos),
    Seq(Vec<Node>, Pos),
    Scalar(String, bool, Pos),
    Null(Pos),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pos {
    pub line: usize,
    pub col: usize,
}

impl Node {
    pub fn pos(&self) -> Pos {
        match self {
            Node::Map(_, p) | Node::Seq(_, p) | Node::Scalar(_, _, p) | Node::Null(p) => *p,
        }
    }
}

struct Line<'a> {
    no: usize,
    indent: usize,
    text: &'a str,
}

fn err(pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError {
        line: pos.line,
        column: pos.col,
        message: msg.into(),
    }
}

/// Remove a trailing comment that starts with `#` outside of quotes.
fn strip_comment(s: &str) -> &str {
    let mut in_quote = false;
    let mut escaped = false;
    let mut prev_space = true;
    for (i, ch) in s.char_indices() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_quote = false;
            }
        } else if ch == '"' {
            in_quote = true;
        } else if ch == '#' && prev_space {
            return &s[..i];
        }
        prev_space = ch == ' ' || ch == '\t';
    }
    s
}

fn lines(src: &str) -> Result<Vec<Line<'_>>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let no = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let body = strip_comment(raw);
        let trimmed = body.trim_start_matches(' ');
        if trimmed.starts_with('\t') {
            return Err(err(
                Pos {
                    line: no,
                    col: body.len() - trimmed.len() + 1,
                },
                "tab indentation",
            ));
        }
        let trimmed_end = trimmed.trim_end();
        if trimmed_end.is_empty() {
            continue;
        }
        out.push(Line {
            no,
            indent: body.len() - trimmed.len(),
            text: trimmed_end,
        });
    }
    Ok(out)
}

pub(crate) fn parse_document(src: &str) -> Result<Node, ParseError> {
    let lines = lines(src)?;
    if lines.is_empty() {
        return Err(err(Pos { line: 1, col: 1 }, "empty document"));
    }
    let mut idx = 0;
    let node = parse_block(&lines, &mut idx, lines[0].indent, 0)?;
    if idx < lines.len() {
        let l = &lines[idx];
        return Err(err(
            Pos {
                line: l.no,
                col: l.indent + 1,
            },
            "unexpected indentation",
        ));
    }
    Ok(node)
}

fn is_seq_entry(text: &str) -> bool {
    text == "-" || text.starts_with("- ")
}

fn parse_block(
    lines: &[Line<'_>],
    idx: &mut usize,
    indent: usize,
    depth: usize,
) -> Result<Node, ParseError> {
    let first = &lines[*idx];
    let pos = Pos {
        line: first.no,
        col: first.indent + 1,
    };
    if depth > MAX_DEPTH {
        return Err(err(pos, "nesting too deep"));
    }
    if is_seq_entry(first.text) {
        let mut items = Vec::new();
        while *idx < lines.len() && lines[*idx].indent == indent && is_seq_entry(lines[*idx].text) {
            let line = &lines[*idx];
            let rest = line.text[1..].trim_start();
            let rest_col = line.indent + (line.text.len() - rest.len()) + 1;
            *idx += 1;
            if rest.is_empty() {
                items.push(nested_or_null(
                    lines,
                    idx,
                    indent,
                    Pos {
                        line: line.no,
                        col: rest_col,
                    },
                    depth,
                )?);
            } else if starts_with_flow(rest) || split_key(rest).is_none() {
                items.push(parse_inline(rest, line.no, rest_col)?);
            } else {
                // "- key: value" opens a block mapping whose later keys sit
                // at the column of `key`.
                let key_indent = rest_col - 1;
                items.push(parse_map_from(
                    lines,
                    idx,
                    key_indent,
                    Some((rest, line.no)),
                    depth + 1,
                )?);
            }
        }
        Ok(Node::Seq(items, pos))
    } else {
        parse_map_from(lines, idx, indent, None, depth)
    }
}

fn nested_or_null(
    lines: &[Line<'_>],
    idx: &mut usize,
    indent: usize,
    pos: Pos,
    depth: usize,
) -> Result<Node, ParseError> {
    if *idx < lines.len() && lines[*idx].indent > indent {
        let child = lines[*idx].indent;
        parse_block(lines, idx, child, depth + 1)
    } else if *idx < lines.len() && lines[*idx].indent == indent && is_seq_entry(lines[*idx].text) {
        // Block sequence written at the same indentation as its key.
        parse_block(lines, idx, indent, depth + 1)
    } else {
        Ok(Node::Null(pos))
    }
}

fn parse_map_from(
    lines: &[Line<'_>],
    idx: &mut usize,
    indent: usize,
    first: Option<(&str, usize)>,
    depth: usize,
) -> Result<Node, ParseError> {
    let mut entries: Vec<(String, Node)> = Vec::new();
    let mut pos = None;
    let mut pending = first;
    loop {
        let (text, no, col) = match pending.take() {
            Some((text, no)) => (text, no, indent + 1),
            None => {
                if *idx >= lines.len()
                    || lines[*idx].indent != indent
                    || is_seq_entry(lines[*idx].text)
                {
                    break;
                }
                let l = &lines[*idx];
                *idx += 1;
                (l.text, l.no, l.indent + 1)
            }
        };
        let here = Pos { line: no, col };
        pos.get_or_insert(here);
        let (key, rest) = split_key(text).ok_or_else(|| err(here, "expected `key: value`"))?;
        let key = unquote_key(key, here)?;
        if entries.iter().any(|(k, _)| *k == key) {
            return Err(err(here, format!("duplicate key `{key}`")));
        }
        let value = if rest.is_empty() {
            let child_indent = if *idx < lines.len() {
                lines[*idx].indent
            } else {
                0
            };
            if *idx < lines.len() && child_indent > indent {
                parse_block(lines, idx, child_indent, depth + 1)?
            } else {
                nested_or_null(lines, idx, indent, here, depth)?
            }
        } else {
            let rest_col = col + (text.len() - rest.len());
            parse_inline(rest, no, rest_col)?
        };
        entries.push((key, value));
    }
    let pos = pos.unwrap_or(Pos { line: 1, col: 1 });
    Ok(Node::Map(entries, pos))
}

fn starts_with_flow(s: &str) -> bool {
    s.starts_with('{') || s.starts_with('[') || s.starts_with('"')
}

/// Split `key: rest` at the first `: ` (or trailing `:`) outside quotes.
fn split_key(text: &str) -> Option<(&str, &str)> {
    let bytes = text.as_bytes();
    let mut in_quote = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_quote = false;
            }
            continue;
        }
        match b {
            b'"' if i == 0 => in_quote = true,
            b'{' | b'[' if i == 0 => return None,
            b':' if i + 1 == bytes.len() || bytes[i + 1] == b' ' => {
                let key = text[..i].trim_end();
                if key.is_empty() {
                    return None;
                }
                return Some((key, text[i + 1..].trim()));
            }
            _ => {}
        }
    }
    None
}

fn unquote_key(key: &str, pos: Pos) -> Result<String, ParseError> {
    if key.starts_with('"') {
        let mut cur = Cursor::new(key, pos.line, pos.col);
        let s = cur.quoted()?;
        cur.skip_ws();
        if !cur.done() {
            return Err(cur.error("trailing characters after quoted key"));
        }
        Ok(s)
    } else {
        Ok(key.to_string())
    }
}

fn parse_inline(text: &str, line: usize, col: usize) -> Result<Node, ParseError> {
    let mut cur = Cursor::new(text, line, col);
    let node = cur.value(0)?;
    cur.skip_ws();
    if !cur.done() {
        return Err(cur.error("trailing characters"));
    }
    Ok(node)
}

const MAX_DEPTH: usize = 32;

struct Cursor<'a> {
    chars: Vec<(usize, char)>,
    src: &'a str,
    at: usize,
    line: usize,
    col0: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str, line: usize, col0: usize) -> Self {
        Self {
            chars: src.char_indices().collect(),
            src,
            at: 0,
            line,
            col0,
        }
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col0 + self.at,
        }
    }

    fn error(&self, msg: &str) -> ParseError {
        err(self.pos(), msg)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.at).map(|&(_, c)| c)
    }

    fn done(&self) -> bool {
        self.at >= self.chars.len()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(' ') | Some('\t')) {
            self.at += 1;
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.at += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{c}`")))
        }
    }

    fn value(&mut self, depth: usize) -> Result<Node, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.error("nesting too deep"));
        }
        self.skip_ws();
        let pos = self.pos();
        match self.peek() {
            Some('{') => self.flow_map(depth),
            Some('[') => self.flow_seq(depth),
            Some('"') => Ok(Node::Scalar(self.quoted()?, true, pos)),
            Some(_) => {
                let s = self.plain();
                if s.is_empty() {
                    Err(self.error("expected a value"))
                } else {
                    Ok(Node::Scalar(s, false, pos))
                }
            }
            None => Err(self.error("expected a value")),
        }
    }

    fn flow_map(&mut self, depth: usize) -> Result<Node, ParseError> {
        let pos = self.pos();
        self.at += 1;
        let mut entries: Vec<(String, Node)> = Vec::new();
        self.skip_ws();
        if self.peek() == Some('}') {
            self.at += 1;
            return Ok(Node::Map(entries, pos));
        }
        loop {
            self.skip_ws();
            let kpos = self.pos();
            let key = if self.peek() == Some('"') {
                self.quoted()?
            } else {
                self.plain_key()
            };
            if key.is_empty() {
                return Err(err(kpos, "expected a key"));
            }
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(err(kpos, format!("duplicate key `{key}`")));
            }
            self.expect(':')?;
            let value = self.value(depth + 1)?;
            entries.push((key, value));
            self.skip_ws();
            match self.peek() {
                Some(',') => self.at += 1,
                Some('}') => {
                    self.at += 1;
                    return Ok(Node::Map(entries, pos));
                }
                _ => return Err(self.error("expected `,` or `}`")),
            }
        }
    }

    fn flow_seq(&mut self, depth: usize) -> Result<Node, ParseError> {
        let pos = self.pos();
        self.at += 1;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.at += 1;
            return Ok(Node::Seq(items, pos));
        }
        loop {
            items.push(self.value(depth + 1)?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.at += 1,
                Some(']') => {
                    self.at += 1;
                    return Ok(Node::Seq(items, pos));
                }
                _ => return Err(self.error("expected `,` or `]`")),
            }
        }
    }

    fn quoted(&mut self) -> Result<String, ParseError> {
        let start = self.pos();
        self.at += 1;
        let mut out = String::new();
        loop {
            let Some(c) = self.peek() else {
                return Err(err(start, "unterminated string"));
            };
            self.at += 1;
            match c {
                '"' => return Ok(out),
                '\\' => {
                    let Some(e) = self.peek() else {
                        return Err(err(start, "unterminated string"));
                    };
                    self.at += 1;
                    match e {
                        '"' => out.push('"'),
                        '\\' => out.push('\\'),
                        '/' => out.push('/'),
                        'n' => out.push('\n'),
                        't' => out.push('\t'),
                        'r' => out.push('\r'),
                        'u' => {
                            let hex: String = (0..4)
                                .filter_map(|_| {
                                    let c = self.peek();
                                    if c.is_some() {
                                        self.at += 1;
                                    }
                                    c
                                })
                                .collect();
                            let code = u32::from_str_radix(&hex, 16)
                                .ok()
                                .filter(|_| hex.len() == 4)
                                .and_then(char::from_u32)
                                .ok_or_else(|| self.error("bad \\u escape"))?;
                            out.push(code);
                        }
                        _ => return Err(self.error("unknown escape")),
                    }
                }
                c => out.push(c),
            }
        }
    }

    fn byte_offset(&self) -> usize {
        self.chars.get(self.at).map_or(self.src.len(), |&(i, _)| i)
    }

    /// Plain scalar: runs until `,`, `}`, `]` (inside flow context these end
    /// the value), trimmed.
    fn plain(&mut self) -> String {
        let start = self.byte_offset();
        while let Some(c) = self.peek() {
            if matches!(c, ',' | '}' | ']') {
                break;
            }
            self.at += 1;
        }
        self.src[start..self.byte_offset()].trim().to_string()
    }

    fn plain_key(&mut self) -> String {
        let start = self.byte_offset();
        while let Some(c) = self.peek() {
            if matches!(c, ':' | ',' | '}' | ']' | '{' | '[') {
                break;
            }
            self.at += 1;
        }
        self.src[start..self.byte_offset()].trim().to_string()
    }
}
