//! Line-oriented text format for a circuit and its log-parameters.
//!
//! ```text
//! pc v1
//! var <var_id> <cardinality|cont>
//! input <node_id> <var_id> ind <category>
//! input <node_id> <var_id> gauss <mean> <std>
//! prod <node_id> <child_id> <child_id> ...
//! sum <node_id> <child_id>:<phi> <child_id>:<phi> ...
//! ```
//!
//! `#` starts a comment. Node ids must be dense and every child must have a
//! smaller id than its parent; the root is the highest id. Floats are written
//! with the shortest representation that parses back to the same bits.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::circuit::{Circuit, InputDist, Node, NodeId, VarKind};
use crate::error::{Error, Result};
use crate::params::Params;
use crate::scalar::Scalar;

const HEADER: &str = "pc v1";

pub fn serialize<T: Scalar>(circuit: &Circuit, params: &Params<T>) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for (k, kind) in circuit.vars().iter().enumerate() {
        match kind {
            VarKind::Categorical(card) => writeln!(out, "var {k} {card}").unwrap(),
            VarKind::Continuous => writeln!(out, "var {k} cont").unwrap(),
        }
    }
    for (i, node) in circuit.nodes().iter().enumerate() {
        match node {
            Node::Input { var, dist: InputDist::Indicator { category } } => {
                writeln!(out, "input {i} {var} ind {category}").unwrap();
            }
            Node::Input { var, dist: InputDist::FixedGaussian { mean, std } } => {
                writeln!(out, "input {i} {var} gauss {mean:?} {std:?}").unwrap();
            }
            Node::Product { children } => {
                write!(out, "prod {i}").unwrap();
                for c in children {
                    write!(out, " {c}").unwrap();
                }
                out.push('\n');
            }
            Node::Sum { children } => {
                write!(out, "sum {i}").unwrap();
                for (c, e) in children.iter().zip(circuit.edges(NodeId(i))) {
                    write!(out, " {c}:{:?}", params.phi()[e]).unwrap();
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn deserialize<T: Scalar>(text: &str) -> Result<(Circuit, Params<T>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    match lines.next() {
        Some((_, l)) if l.split_whitespace().collect::<Vec<_>>() == ["pc", "v1"] => {}
        Some((n, l)) => return Err(Error::parse(n, format!("expected header `{HEADER}`, found `{l}`"))),
        None => return Err(Error::parse(1, "empty input")),
    }

    let mut vars: Vec<(usize, usize, VarKind)> = Vec::new();
    // (line, id, node, phi per child)
    let mut nodes: Vec<(usize, usize, Node, Vec<T>)> = Vec::new();

    for (line, text) in lines {
        let toks: Vec<&str> = text.split_whitespace().collect();
        let err = |reason: String| Error::parse(line, reason);
        match toks[0] {
            "var" => {
                if toks.len() != 3 {
                    return Err(err(format!("`var` expects 2 fields, found {}", toks.len() - 1)));
                }
                let id = parse_num::<usize>(line, toks[1], "variable id")?;
                let kind = if toks[2] == "cont" {
                    VarKind::Continuous
                } else {
                    VarKind::Categorical(parse_num::<u32>(line, toks[2], "cardinality")?)
                };
                vars.push((line, id, kind));
            }
            "input" => {
                if toks.len() < 4 {
                    return Err(err("`input` expects a node id, a variable id and a distribution".into()));
                }
                let id = parse_num::<usize>(line, toks[1], "node id")?;
                let var = parse_num::<usize>(line, toks[2], "variable id")?;
                let dist = match (toks[3], toks.len()) {
                    ("ind", 5) => InputDist::Indicator { category: parse_num(line, toks[4], "category")? },
                    ("gauss", 6) => InputDist::FixedGaussian {
                        mean: parse_num(line, toks[4], "mean")?,
                        std: parse_num(line, toks[5], "std")?,
                    },
                    ("ind", _) => return Err(err("`ind` expects exactly one category".into())),
                    ("gauss", _) => return Err(err("`gauss` expects a mean and a std".into())),
                    (other, _) => return Err(err(format!("unknown input distribution `{other}`"))),
                };
                nodes.push((line, id, Node::Input { var, dist }, Vec::new()));
            }
            "prod" => {
                if toks.len() < 3 {
                    return Err(err("product node without children".into()));
                }
                let id = parse_num::<usize>(line, toks[1], "node id")?;
                let children = toks[2..]
                    .iter()
                    .map(|t| parse_num::<usize>(line, t, "child id").map(NodeId))
                    .collect::<Result<Vec<_>>>()?;
                nodes.push((line, id, Node::Product { children }, Vec::new()));
            }
            "sum" => {
                if toks.len() < 3 {
                    return Err(err("sum node without children".into()));
                }
                let id = parse_num::<usize>(line, toks[1], "node id")?;
                let mut children = Vec::with_capacity(toks.len() - 2);
                let mut phi = Vec::with_capacity(toks.len() - 2);
                for t in &toks[2..] {
                    let (c, p) = t
                        .split_once(':')
                        .ok_or_else(|| err(format!("expected `<child>:<phi>`, found `{t}`")))?;
                    children.push(NodeId(parse_num(line, c, "child id")?));
                    let p: T = parse_num(line, p, "log-parameter")?;
                    if p.is_nan() || p == T::infinity() {
                        return Err(err(format!("log-parameter `{p}` is not allowed")));
                    }
                    phi.push(p);
                }
                nodes.push((line, id, Node::Sum { children }, phi));
            }
            other => return Err(err(format!("unknown item `{other}`"))),
        }
    }

    vars.sort_by_key(|v| v.1);
    for (k, (line, id, _)) in vars.iter().enumerate() {
        if *id != k {
            return Err(Error::parse(*line, format!("variable ids must be dense; expected {k}, found {id}")));
        }
    }
    if nodes.is_empty() {
        return Err(Error::parse(text.lines().count().max(1), "no nodes"));
    }
    nodes.sort_by_key(|n| n.1);
    for (k, (line, id, node, _)) in nodes.iter().enumerate() {
        if *id != k {
            return Err(Error::parse(*line, format!("node ids must be dense; expected {k}, found {id}")));
        }
        for c in node.children() {
            if c.0 >= *id {
                return Err(Error::parse(*line, format!("child {c} must have a smaller id than node {id}")));
            }
        }
    }

    let lines_by_node: Vec<usize> = nodes.iter().map(|n| n.0).collect();
    let mut phi = Vec::new();
    let mut node_list = Vec::with_capacity(nodes.len());
    for (_, _, node, p) in nodes {
        phi.extend(p);
        node_list.push(node);
    }
    let circuit = Circuit::new(vars.into_iter().map(|v| v.2).collect(), node_list).map_err(|e| match e {
        Error::Structure { node, reason } => Error::parse(lines_by_node.get(node).copied().unwrap_or(1), reason),
        other => other,
    })?;
    let params = Params::from_log(&circuit, phi)?;
    Ok((circuit, params))
}

fn parse_num<N: FromStr>(line: usize, tok: &str, what: &str) -> Result<N> {
    tok.parse::<N>().map_err(|_| Error::parse(line, format!("invalid {what} `{tok}`")))
}
