//! Plain-text formats: edge lists, attribute CSV, node lists, model
//! parameters and the `nodes.map` id table.
//!
//! Edge list: one edge per line, whitespace separated `u v [w]`; blank lines
//! and lines starting with `#` are ignored. Attributes: `node_id,x1,...,xd`
//! with an optional header row. Node lists: one id per line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::attributes::AttributeMatrix;
use crate::error::{Error, Result};
use crate::graph::{EdgeListGraph, Graph, NodeSet};
use crate::scalar::Scalar;
use crate::synth::{block_labels, Instance, ModelParams};

pub const GRAPH_FILE: &str = "graph.txt";
pub const ATTRS_FILE: &str = "attrs.csv";
pub const TARGET_FILE: &str = "target.txt";
pub const PARAMS_FILE: &str = "params.json";
pub const MAP_FILE: &str = "nodes.map";

/// Correspondence between external node ids and dense indices `0..n`.
///
/// When every id in the input is a non-negative integer the map is the
/// identity; otherwise ids are numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeIndex {
    identity: bool,
    len: usize,
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl NodeIndex {
    pub fn identity(n: usize) -> Self {
        NodeIndex {
            identity: true,
            len: n,
            names: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    /// Named ids, index `i` belonging to `names[i]`.
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if lookup.insert(name.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("node id `{name}` listed twice"),
                });
            }
        }
        Ok(NodeIndex {
            identity: false,
            len: names.len(),
            names,
            lookup,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Dense index of an external id.
    pub fn get(&self, name: &str) -> Option<usize> {
        if self.identity {
            name.parse::<usize>().ok().filter(|&i| i < self.len)
        } else {
            self.lookup.get(name).copied()
        }
    }

    /// External id of a dense index.
    pub fn name(&self, i: usize) -> String {
        if self.identity {
            i.to_string()
        } else {
            self.names[i].clone()
        }
    }

    /// Index for `name`, registering it if new.
    fn intern(&mut self, name: &str) -> Result<usize> {
        if self.identity {
            let i = name
                .parse::<usize>()
                .map_err(|_| Error::Parse {
                    line: 0,
                    message: format!("node id `{name}` is not a non-negative integer"),
                })?;
            self.len = self.len.max(i + 1);
            return Ok(i);
        }
        if let Some(&i) = self.lookup.get(name) {
            return Ok(i);
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.lookup.insert(name.to_string(), i);
        self.len += 1;
        Ok(i)
    }

    /// `index<TAB>id` per line.
    pub fn to_map_text(&self) -> String {
        let mut out = String::from("# index\tid\n");
        for i in 0..self.len {
            let _ = writeln!(out, "{i}\t{}", self.name(i));
        }
        out
    }

    pub fn parse_map(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        for (line, raw) in content_lines(text) {
            let (idx, name) = raw.split_once('\t').ok_or_else(|| Error::Parse {
                line,
                message: "expected `index<TAB>id`".into(),
            })?;
            let idx: usize = idx.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid index `{idx}`"),
            })?;
            if idx != names.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected index {}, found {idx}", names.len()),
                });
            }
            names.push(name.trim().to_string());
        }
        Self::from_names(names)
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

struct RawEdge<'a> {
    line: usize,
    u: &'a str,
    v: &'a str,
    w: Option<&'a str>,
}

fn tokenize_edges(text: &str) -> Result<Vec<RawEdge<'_>>> {
    content_lines(text)
        .map(|(line, l)| {
            let fields: Vec<&str> = l.split_whitespace().collect();
            match fields.as_slice() {
                [u, v] => Ok(RawEdge { line, u, v, w: None }),
                [u, v, w] => Ok(RawEdge {
                    line,
                    u,
                    v,
                    w: Some(w),
                }),
                _ => Err(Error::Parse {
                    line,
                    message: format!("expected `u v [w]`, found {} fields", fields.len()),
                }),
            }
        })
        .collect()
}

fn parse_value<T: Scalar>(line: usize, token: &str, what: &str) -> Result<T> {
    token.parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{token}`"),
    })
}

fn parse_weight<T: Scalar>(e: &RawEdge<'_>) -> Result<Option<T>> {
    e.w.map(|w| parse_value(e.line, w, "edge weight")).transpose()
}

/// Parses an edge list whose node ids are non-negative integers.
pub fn parse_edge_list<T: Scalar>(text: &str) -> Result<EdgeListGraph<T>> {
    parse_edge_list_with_nodes(text, 0)
}

/// Like [`parse_edge_list`] but the graph has at least `n` nodes.
pub fn parse_edge_list_with_nodes<T: Scalar>(text: &str, n: usize) -> Result<EdgeListGraph<T>> {
    let raw = tokenize_edges(text)?;
    let id = |line: usize, tok: &str| {
        tok.parse::<usize>().map_err(|_| Error::Parse {
            line,
            message: format!("node id `{tok}` is not a non-negative integer"),
        })
    };
    let mut records = Vec::with_capacity(raw.len());
    for e in &raw {
        records.push((e.line, id(e.line, e.u)?, id(e.line, e.v)?, parse_weight(e)?));
    }
    Graph::from_records(n, records)
}

/// A graph read from files together with the id map used to build it.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub graph: Graph<T>,
    pub attrs: Option<AttributeMatrix<T>>,
    pub index: NodeIndex,
    /// Repeated edge records that were dropped.
    pub duplicates: usize,
}

/// Parses an edge list and optional attribute CSV, relabeling arbitrary
/// string ids to dense indices. Nodes that only appear in the attribute file
/// become isolated nodes.
pub fn parse_dataset<T: Scalar>(edges: &str, attrs: Option<&str>) -> Result<Dataset<T>> {
    let raw = tokenize_edges(edges)?;
    let attr_rows = attrs.map(tokenize_attributes).transpose()?;

    let numeric = raw
        .iter()
        .flat_map(|e| [e.u, e.v])
        .chain(attr_rows.iter().flatten().map(|r| r.id))
        .all(|t| t.parse::<usize>().is_ok());
    let mut index = if numeric {
        NodeIndex::identity(0)
    } else {
        NodeIndex::from_names(Vec::new())?
    };

    let mut records = Vec::with_capacity(raw.len());
    for e in &raw {
        let u = index.intern(e.u)?;
        let v = index.intern(e.v)?;
        records.push((e.line, u, v, parse_weight(e)?));
    }
    if let Some(rows) = &attr_rows {
        for r in rows {
            index.intern(r.id)?;
        }
    }
    let built = Graph::from_records(index.len(), records)?;
    let attrs = match attr_rows {
        Some(rows) => Some(assemble_attributes(&rows, &index)?),
        None => None,
    };
    Ok(Dataset {
        graph: built.graph,
        attrs,
        index,
        duplicates: built.duplicates,
    })
}

/// Reads `graph_path` and, if given, `attrs_path`.
pub fn read_dataset<T: Scalar>(graph_path: &Path, attrs_path: Option<&Path>) -> Result<Dataset<T>> {
    let edges = read_text(graph_path)?;
    let attrs = attrs_path.map(read_text).transpose()?;
    parse_dataset(&edges, attrs.as_deref()).map_err(|e| in_file(e, graph_path, attrs_path))
}

fn in_file(e: Error, graph: &Path, attrs: Option<&Path>) -> Error {
    match e {
        Error::Parse { line, message } if message.starts_with("attrs: ") => Error::Parse {
            line,
            message: format!(
                "{}: {}",
                attrs.map(|p| p.display().to_string()).unwrap_or_default(),
                &message[7..]
            ),
        },
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", graph.display()),
        },
        other => other,
    }
}

struct AttrRow<'a> {
    line: usize,
    id: &'a str,
    values: Vec<&'a str>,
}

fn attr_error(line: usize, message: String) -> Error {
    Error::Parse {
        line,
        message: format!("attrs: {message}"),
    }
}

fn tokenize_attributes(text: &str) -> Result<Vec<AttrRow<'_>>> {
    let mut rows = Vec::new();
    for (pos, (line, l)) in content_lines(text).enumerate() {
        let mut fields = l.split(',').map(str::trim);
        let id = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        // a first row whose id is not a number and whose values are not all
        // numbers is a header
        if pos == 0
            && id.parse::<f64>().is_err()
            && values.iter().any(|v| v.parse::<f64>().is_err())
        {
            continue;
        }
        if values.is_empty() {
            return Err(attr_error(line, "expected `node_id,x1,...,xd`".into()));
        }
        rows.push(AttrRow { line, id, values });
    }
    Ok(rows)
}

fn assemble_attributes<T: Scalar>(rows: &[AttrRow<'_>], index: &NodeIndex) -> Result<AttributeMatrix<T>> {
    let n = index.len();
    let d = rows.first().map_or(0, |r| r.values.len());
    let mut data = vec![T::zero(); n * d];
    let mut seen = vec![false; n];
    for r in rows {
        if r.values.len() != d {
            return Err(attr_error(
                r.line,
                format!("expected {d} attribute values, found {}", r.values.len()),
            ));
        }
        let i = index
            .get(r.id)
            .ok_or_else(|| attr_error(r.line, format!("unknown node id `{}`", r.id)))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(attr_error(r.line, format!("node `{}` listed twice", r.id)));
        }
        for (slot, tok) in data[i * d..(i + 1) * d].iter_mut().zip(&r.values) {
            *slot = tok
                .parse::<T>()
                .map_err(|_| attr_error(r.line, format!("invalid attribute value `{tok}`")))?;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Parse {
            line: 0,
            message: format!("attrs: no attribute row for node `{}`", index.name(i)),
        });
    }
    AttributeMatrix::from_flat(n, d, data)
}

/// Parses an attribute CSV for a graph whose ids are `0..n`.
pub fn parse_attributes<T: Scalar>(text: &str, n: usize) -> Result<AttributeMatrix<T>> {
    let rows = tokenize_attributes(text)?;
    assemble_attributes(&rows, &NodeIndex::identity(n))
}

/// Raw ids of a node list, in file order.
pub fn node_list_tokens(text: &str) -> Vec<&str> {
    content_lines(text).map(|(_, tok)| tok).collect()
}

/// Parses one external id per line.
pub fn parse_node_list(text: &str, index: &NodeIndex) -> Result<NodeSet> {
    content_lines(text)
        .map(|(line, tok)| {
            index.get(tok).ok_or_else(|| Error::Parse {
                line,
                message: format!("unknown node id `{tok}`"),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(NodeSet::new)
}

pub fn read_node_list(path: &Path, index: &NodeIndex) -> Result<NodeSet> {
    parse_node_list(&read_text(path)?, index).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Edge list with the canonical orientation `u < v`; unit weights are left
/// implicit.
pub fn format_edge_list<T: Scalar>(g: &Graph<T>, index: &NodeIndex) -> String {
    let mut out = format!(
        "# {} nodes, {} edges\n",
        g.node_count(),
        g.edge_count()
    );
    for (u, v, w) in g.edges() {
        let (u, v) = (index.name(u), index.name(v));
        if w == T::one() {
            let _ = writeln!(out, "{u} {v}");
        } else {
            let _ = writeln!(out, "{u} {v} {w}");
        }
    }
    out
}

pub fn format_attributes<T: Scalar>(x: &AttributeMatrix<T>, index: &NodeIndex) -> String {
    let mut out = String::from("node_id");
    for l in 1..=x.dim() {
        let _ = write!(out, ",x{l}");
    }
    out.push('\n');
    for (i, row) in x.rows().enumerate() {
        out.push_str(&index.name(i));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn format_node_list(set: &NodeSet, index: &NodeIndex) -> String {
    let mut out = String::new();
    for i in set.iter() {
        out.push_str(&index.name(i));
        out.push('\n');
    }
    out
}

pub fn format_params(params: &ModelParams) -> Result<String> {
    serde_json::to_string_pretty(params)
        .map(|s| s + "\n")
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

pub fn parse_params(text: &str) -> Result<ModelParams> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `graph.txt`, `attrs.csv`, `target.txt` and `params.json` into
/// `dir`, creating it if needed.
pub fn write_instance<T: Scalar>(inst: &Instance<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let index = NodeIndex::identity(inst.graph.node_count());
    write_text(&dir.join(GRAPH_FILE), &format_edge_list(&inst.graph, &index))?;
    write_text(&dir.join(ATTRS_FILE), &format_attributes(&inst.attrs, &index))?;
    write_text(&dir.join(TARGET_FILE), &format_node_list(&inst.target, &index))?;
    write_text(&dir.join(PARAMS_FILE), &format_params(&inst.params)?)
}

/// Reads back an instance written by [`write_instance`]. Block labels are
/// rebuilt from the parameters.
pub fn read_instance<T: Scalar>(dir: &Path) -> Result<Instance<T>> {
    let params = parse_params(&read_text(&dir.join(PARAMS_FILE))?)?;
    params.validate()?;
    let n = params.n;
    let graph_path = dir.join(GRAPH_FILE);
    let graph = parse_edge_list_with_nodes(&read_text(&graph_path)?, n)
        .map_err(|e| in_file(e, &graph_path, None))?
        .graph;
    if graph.node_count() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: graph.node_count(),
        });
    }
    let attrs_path = dir.join(ATTRS_FILE);
    let attrs = parse_attributes(&read_text(&attrs_path)?, n)
        .map_err(|e| in_file(e, &graph_path, Some(&attrs_path)))?;
    let target = read_node_list(&dir.join(TARGET_FILE), &NodeIndex::identity(n))?;
    Ok(Instance {
        graph,
        attrs,
        target,
        labels: block_labels(&params),
        mu_hat: params.mu_hat(),
        params,
    })
}
