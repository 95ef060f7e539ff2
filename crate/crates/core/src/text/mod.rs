//! Canonical P² text: a compact YAML-like block.
//!
//! ```text
//! modality: depth
//! images:
//!   - {id: img0, width: 4, height: 4}
//! grid: {rows: 1, cols: 1}
//! items:
//!   - {p: cell_0, c: [375, 375], r: [0.123, 0.500]}
//! relations:
//!   - [cell_1, in-front-of, cell_0]
//! ```
//!
//! Keys always appear in this order, coordinates are integers, scalar
//! readouts carry exactly three decimals, and absent fields are omitted.
//! [`parse`] reads the canonical form back and also tolerates reordered
//! keys, extra whitespace, block-style items and 1–6 decimal places.

mod tree;

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{
    quantize, validate_program, Direction, GridShape, ImageDims, ImageRef, Item, Location,
    Modality, NormBox, NormCoord, PerceptionProgram, ReadOut, Relation, Violation,
};
use tree::{Node, Pos};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerializeError {
    #[error("invalid program: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidProgram(Vec<Violation>),
}

fn is_plain(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphanumeric() || c == '_' => {}
        _ => return false,
    }
    !s.ends_with(' ')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ' ' | '/'))
        && !matches!(s, "null" | "true" | "false" | "~")
}

fn scalar_text(s: &str) -> String {
    if is_plain(s) {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn fixed3(v: f64) -> String {
    format!("{:.3}", quantize(v))
}

fn readout_text(r: &ReadOut) -> String {
    match r {
        ReadOut::Interval { lo, hi } => format!("[{}, {}]", fixed3(*lo), fixed3(*hi)),
        ReadOut::Direction(d) => d.as_str().to_string(),
        ReadOut::Point(p) => format!("[{}, {}]", p.x(), p.y()),
        ReadOut::Score(v) | ReadOut::Confidence(v) => fixed3(*v),
    }
}

fn location_text(loc: &Location) -> String {
    match loc {
        Location::Point(p) => format!("[{}, {}]", p.x(), p.y()),
        Location::Box(b) => {
            let [x0, y0, x1, y1] = b.corners();
            format!("[{x0}, {y0}, {x1}, {y1}]")
        }
    }
}

/// Emit the canonical text. Fails only on programs that break an invariant.
pub fn serialize(pp: &PerceptionProgram) -> Result<String, SerializeError> {
    let violations = validate_program(pp);
    if !violations.is_empty() {
        return Err(SerializeError::InvalidProgram(violations));
    }
    let mut out = String::new();
    let _ = writeln!(out, "modality: {}", pp.modality);
    if pp.images.is_empty() {
        out.push_str("images: []\n");
    } else {
        out.push_str("images:\n");
        for img in &pp.images {
            let _ = writeln!(
                out,
                "  - {{id: {}, width: {}, height: {}}}",
                scalar_text(&img.id),
                img.dims.width(),
                img.dims.height()
            );
        }
    }
    if let Some(g) = pp.grid {
        let _ = writeln!(out, "grid: {{rows: {}, cols: {}}}", g.rows, g.cols);
    }
    if pp.items.is_empty() {
        out.push_str("items: []\n");
    } else {
        out.push_str("items:\n");
        for it in &pp.items {
            let _ = write!(
                out,
                "  - {{p: {}, c: {}",
                scalar_text(&it.id),
                location_text(&it.loc)
            );
            if let Some(r) = &it.readout {
                let _ = write!(out, ", r: {}", readout_text(r));
            }
            if let Some(b) = &it.label {
                let _ = write!(out, ", b: {}", scalar_text(b));
            }
            out.push_str("}\n");
        }
    }
    if !pp.relations.is_empty() {
        let mut rels: Vec<&Relation> = pp.relations.iter().collect();
        rels.sort_by(|a, b| a.canonical_cmp(b));
        out.push_str("relations:\n");
        for r in rels {
            let _ = writeln!(
                out,
                "  - [{}, {}, {}]",
                scalar_text(&r.subject),
                scalar_text(&r.predicate),
                scalar_text(&r.object)
            );
        }
    }
    Ok(out)
}

fn perr(pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError {
        line: pos.line,
        column: pos.col,
        message: msg.into(),
    }
}

fn as_map(node: &Node, what: &str) -> Result<Vec<(String, Node)>, ParseError> {
    match node {
        Node::Map(entries, _) => Ok(entries.clone()),
        other => Err(perr(other.pos(), format!("{what} must be a mapping"))),
    }
}

fn as_seq<'a>(node: &'a Node, what: &str) -> Result<&'a [Node], ParseError> {
    match node {
        Node::Seq(items, _) => Ok(items),
        Node::Null(_) => Ok(&[]),
        other => Err(perr(other.pos(), format!("{what} must be a list"))),
    }
}

fn as_str<'a>(node: &'a Node, what: &str) -> Result<&'a str, ParseError> {
    match node {
        Node::Scalar(s, _, _) => Ok(s),
        other => Err(perr(other.pos(), format!("{what} must be a scalar"))),
    }
}

fn as_uint(node: &Node, what: &str) -> Result<u32, ParseError> {
    let s = as_str(node, what)?;
    s.parse::<u32>().map_err(|_| {
        perr(
            node.pos(),
            format!("{what} must be a non-negative integer, got `{s}`"),
        )
    })
}

fn as_f64(node: &Node, what: &str) -> Result<f64, ParseError> {
    let s = as_str(node, what)?;
    let ok = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    s.parse::<f64>()
        .ok()
        .filter(|v| ok && v.is_finite())
        .ok_or_else(|| perr(node.pos(), format!("{what} must be a number, got `{s}`")))
}

fn uints(node: &Node, n: usize, what: &str) -> Result<Vec<u32>, ParseError> {
    let items = as_seq(node, what)?;
    if items.len() != n {
        return Err(perr(node.pos(), format!("{what} must have {n} elements")));
    }
    items.iter().map(|v| as_uint(v, what)).collect()
}

fn get<'a>(entries: &'a [(String, Node)], key: &str) -> Option<&'a Node> {
    entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
}

fn parse_image(node: &Node) -> Result<ImageRef, ParseError> {
    let m = as_map(node, "image")?;
    let id = get(&m, "id").ok_or_else(|| perr(node.pos(), "image needs `id`"))?;
    let w = get(&m, "width").ok_or_else(|| perr(node.pos(), "image needs `width`"))?;
    let h = get(&m, "height").ok_or_else(|| perr(node.pos(), "image needs `height`"))?;
    let dims = ImageDims::new(as_uint(w, "width")?, as_uint(h, "height")?)
        .map_err(|e| perr(node.pos(), e.to_string()))?;
    Ok(ImageRef::new(as_str(id, "image id")?, dims))
}

fn parse_location(node: &Node, modality: Modality) -> Result<Location, ParseError> {
    let pos = node.pos();
    let geo = |e: crate::model::GeometryError| perr(pos, e.to_string());
    match modality {
        Modality::Detection | Modality::Jigsaw => {
            let v = uints(node, 4, "box location `c`")?;
            Ok(Location::Box(
                NormBox::new(v[0], v[1], v[2], v[3]).map_err(geo)?,
            ))
        }
        _ => {
            let v = uints(node, 2, "point location `c`")?;
            Ok(Location::Point(NormCoord::new(v[0], v[1]).map_err(geo)?))
        }
    }
}

fn parse_readout(node: &Node, modality: Modality) -> Result<ReadOut, ParseError> {
    let pos = node.pos();
    match modality {
        Modality::Depth => {
            let items = as_seq(node, "depth interval")?;
            if items.len() != 2 {
                return Err(perr(pos, "depth interval must be [lo, hi]"));
            }
            Ok(ReadOut::Interval {
                lo: as_f64(&items[0], "interval bound")?,
                hi: as_f64(&items[1], "interval bound")?,
            })
        }
        Modality::Flow => {
            let s = as_str(node, "direction")?;
            Direction::parse(s)
                .map(ReadOut::Direction)
                .ok_or_else(|| perr(pos, format!("unknown direction `{s}`")))
        }
        Modality::VisualCorrespondence => {
            let v = uints(node, 2, "target point `r`")?;
            Ok(ReadOut::Point(
                NormCoord::new(v[0], v[1]).map_err(|e| perr(pos, e.to_string()))?,
            ))
        }
        Modality::Jigsaw | Modality::SemanticCorrespondence => {
            Ok(ReadOut::Score(as_f64(node, "score")?))
        }
        Modality::Detection => Ok(ReadOut::Confidence(as_f64(node, "confidence")?)),
        Modality::Points => Err(perr(pos, "points programs carry no readouts")),
    }
}

fn parse_item(node: &Node, modality: Modality) -> Result<Item, ParseError> {
    let m = as_map(node, "item")?;
    for (k, _) in &m {
        if !matches!(k.as_str(), "p" | "c" | "r" | "b") {
            return Err(perr(node.pos(), format!("unknown item key `{k}`")));
        }
    }
    let id = get(&m, "p").ok_or_else(|| perr(node.pos(), "item needs `p`"))?;
    let c = get(&m, "c").ok_or_else(|| perr(node.pos(), "item needs `c`"))?;
    let readout = match get(&m, "r") {
        None | Some(Node::Null(_)) => None,
        Some(r) => Some(parse_readout(r, modality)?),
    };
    let label = match get(&m, "b") {
        None | Some(Node::Null(_)) => None,
        Some(b) => Some(as_str(b, "label `b`")?.to_string()),
    };
    Ok(Item {
        id: as_str(id, "item id `p`")?.to_string(),
        loc: parse_location(c, modality)?,
        readout,
        label,
    })
}

fn parse_relation(node: &Node) -> Result<Relation, ParseError> {
    match node {
        Node::Seq(parts, _) if parts.len() == 3 => Ok(Relation::new(
            as_str(&parts[0], "relation subject")?,
            as_str(&parts[1], "relation predicate")?,
            as_str(&parts[2], "relation object")?,
        )),
        Node::Map(m, pos) => {
            let field = |k: &str| {
                get(m, k)
                    .ok_or_else(|| perr(*pos, format!("relation needs `{k}`")))
                    .and_then(|n| as_str(n, k))
            };
            Ok(Relation::new(
                field("subject")?,
                field("predicate")?,
                field("object")?,
            ))
        }
        other => Err(perr(
            other.pos(),
            "relation must be [subject, predicate, object]",
        )),
    }
}

/// Read a P² text block back into a program. The result always passes
/// [`validate_program`].
pub fn parse(text: &str) -> Result<PerceptionProgram, ParseError> {
    let doc = tree::parse_document(text)?;
    let top = as_map(&doc, "document")?;
    for (k, _) in &top {
        if !matches!(
            k.as_str(),
            "modality" | "images" | "grid" | "items" | "relations"
        ) {
            return Err(perr(doc.pos(), format!("unknown top-level key `{k}`")));
        }
    }
    let modality_node =
        get(&top, "modality").ok_or_else(|| perr(doc.pos(), "missing `modality`"))?;
    let name = as_str(modality_node, "modality")?;
    let modality = Modality::parse(name)
        .ok_or_else(|| perr(modality_node.pos(), format!("unknown modality `{name}`")))?;

    let images = match get(&top, "images") {
        Some(n) => as_seq(n, "images")?
            .iter()
            .map(parse_image)
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let grid = match get(&top, "grid") {
        None | Some(Node::Null(_)) => None,
        Some(n) => {
            let m = as_map(n, "grid")?;
            let rows = get(&m, "rows").ok_or_else(|| perr(n.pos(), "grid needs `rows`"))?;
            let cols = get(&m, "cols").ok_or_else(|| perr(n.pos(), "grid needs `cols`"))?;
            Some(GridShape {
                rows: as_uint(rows, "rows")?,
                cols: as_uint(cols, "cols")?,
            })
        }
    };
    let items_node = get(&top, "items").ok_or_else(|| perr(doc.pos(), "missing `items`"))?;
    let items = as_seq(items_node, "items")?
        .iter()
        .map(|n| parse_item(n, modality))
        .collect::<Result<_, _>>()?;
    let relations = match get(&top, "relations") {
        Some(n) => as_seq(n, "relations")?
            .iter()
            .map(parse_relation)
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };

    let pp = PerceptionProgram {
        modality,
        images,
        grid,
        items,
        relations,
    };
    if let Some(v) = validate_program(&pp).first() {
        return Err(perr(doc.pos(), format!("invalid program: {v}")));
    }
    Ok(pp)
}

/// Like [`parse`], for raw bytes that may not be UTF-8.
pub fn parse_bytes(bytes: &[u8]) -> Result<PerceptionProgram, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError {
        line: 1,
        column: 1,
        message: format!("not UTF-8: {e}"),
    })?;
    parse(text)
}

/// Pull the first fenced block (```` ``` ```` or ```` ```p2 ````) out of a
/// model response, or the whole text when there is no fence.
pub fn extract_block(response: &str) -> &str {
    let Some(start) = response.find("```") else {
        return response;
    };
    let after = &response[start + 3..];
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    }
}
