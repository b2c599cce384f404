//! Genome JSON: `{"conv_dag": {...}, "reduc_dag": {...}}` where each DAG maps
//! `node_k` to `[node_k, input1, input2, op1, op2]`, with `node_1` and
//! `node_2` as null-input cell inputs.
//!
//! Output uses sorted keys, 2-space indentation and one node per line, so
//! re-emitting a file in this layout reproduces it byte for byte.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::{node_name, Block, Cell, CellKind, Genome, GenomeMeta, Operation};
use crate::error::{Error, Result};

/// The discovered XferNASNet cells, bundled as a fixture.
pub const XFERNASNET_JSON: &str = include_str!("../../fixtures/xfernasnet.json");

const NORMAL_KEY: &str = "conv_dag";
const REDUCTION_KEY: &str = "reduc_dag";
const META_KEY: &str = "meta";

pub fn genome_to_json(g: &Genome) -> String {
    let mut sections: BTreeMap<&str, String> = BTreeMap::new();
    sections.insert(NORMAL_KEY, dag_to_json(g.normal()));
    sections.insert(REDUCTION_KEY, dag_to_json(g.reduction()));
    if let Some(meta) = g.meta() {
        sections.insert(
            META_KEY,
            format!(
                "{{\n    \"B\": {},\n    \"F\": {},\n    \"N\": {}\n  }}",
                meta.b, meta.f, meta.n
            ),
        );
    }
    let body: Vec<String> = sections
        .iter()
        .map(|(k, v)| format!("  {}: {}", quote(k), v))
        .collect();
    format!("{{\n{}\n}}", body.join(",\n"))
}

fn dag_to_json(cell: &Cell) -> String {
    let mut lines: BTreeMap<String, String> = BTreeMap::new();
    for node in 0..2 {
        let name = node_name(node);
        lines.insert(
            name.clone(),
            format!("[{}, null, null, null, null]", quote(&name)),
        );
    }
    for (i, b) in cell.blocks().iter().enumerate() {
        let name = node_name(i + 2);
        lines.insert(
            name.clone(),
            format!(
                "[{}, {}, {}, {}, {}]",
                quote(&name),
                quote(&node_name(b.input1)),
                quote(&node_name(b.input2)),
                quote(b.op1.name()),
                quote(b.op2.name()),
            ),
        );
    }
    let body: Vec<String> = lines
        .iter()
        .map(|(k, v)| format!("    {}: {}", quote(k), v))
        .collect();
    format!("{{\n{}\n  }}", body.join(",\n"))
}

fn quote(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

pub fn genome_from_json(text: &str) -> Result<Genome> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::format("document", e.to_string()))?;
    let root = root
        .as_object()
        .ok_or_else(|| Error::format("document", "top level must be an object"))?;
    for key in root.keys() {
        if ![NORMAL_KEY, REDUCTION_KEY, META_KEY].contains(&key.as_str()) {
            return Err(Error::format(key.as_str(), "unexpected key"));
        }
    }
    let dag = |key: &str| {
        root.get(key)
            .and_then(Value::as_object)
            .ok_or_else(|| Error::format(key, "missing or not an object"))
    };
    let normal = parse_dag(NORMAL_KEY, dag(NORMAL_KEY)?, CellKind::Normal)?;
    let reduction = parse_dag(REDUCTION_KEY, dag(REDUCTION_KEY)?, CellKind::Reduction)?;
    let mut genome =
        Genome::new(normal, reduction).map_err(|e| Error::format(REDUCTION_KEY, e.to_string()))?;
    if let Some(meta) = root.get(META_KEY) {
        genome = genome.with_meta(parse_meta(meta)?);
    }
    Ok(genome)
}

fn parse_meta(v: &Value) -> Result<GenomeMeta> {
    let field = |k: &str| {
        v.get(k)
            .and_then(Value::as_u64)
            .map(|x| x as usize)
            .ok_or_else(|| Error::format(META_KEY, format!("missing integer `{k}`")))
    };
    Ok(GenomeMeta {
        b: field("B")?,
        n: field("N")?,
        f: field("F")?,
    })
}

/// Parses `node_k` into the zero-based node index `k - 1`.
fn parse_node_name(s: &str) -> Option<usize> {
    let k: usize = s.strip_prefix("node_")?.parse().ok()?;
    (k >= 1 && s == format!("node_{k}")).then(|| k - 1)
}

fn parse_dag(key: &str, dag: &Map<String, Value>, kind: CellKind) -> Result<Cell> {
    let mut nodes: BTreeMap<usize, &Value> = BTreeMap::new();
    for (name, entry) in dag {
        let at = format!("{key}/{name}");
        let idx = parse_node_name(name).ok_or_else(|| Error::format(&at, "bad node name"))?;
        nodes.insert(idx, entry);
    }
    let count = nodes.len();
    if count < 3 {
        return Err(Error::format(
            key,
            "a DAG needs two inputs and at least one block",
        ));
    }
    if let Some((&last, _)) = nodes.last_key_value() {
        if last != count - 1 {
            return Err(Error::format(
                format!("{key}/{}", node_name(last)),
                "node numbering has a gap",
            ));
        }
    }

    let mut blocks = Vec::with_capacity(count - 2);
    for (&idx, entry) in &nodes {
        let name = node_name(idx);
        let at = format!("{key}/{name}");
        let items = entry
            .as_array()
            .ok_or_else(|| Error::format(&at, "entry must be an array"))?;
        if items.len() != 5 {
            return Err(Error::format(
                &at,
                format!("expected 5 fields, found {}", items.len()),
            ));
        }
        if items[0].as_str() != Some(name.as_str()) {
            return Err(Error::format(&at, "first field must repeat the node name"));
        }
        if idx < 2 {
            if items[1..].iter().any(|v| !v.is_null()) {
                return Err(Error::format(&at, "cell inputs must have null fields"));
            }
            continue;
        }
        let input = |v: &Value| -> Result<usize> {
            let s = v
                .as_str()
                .ok_or_else(|| Error::format(&at, "input must be a node name"))?;
            let src = parse_node_name(s)
                .ok_or_else(|| Error::format(&at, format!("bad input name `{s}`")))?;
            if src >= idx {
                return Err(Error::format(&at, format!("forward reference to `{s}`")));
            }
            Ok(src)
        };
        let op = |v: &Value| -> Result<Operation> {
            let s = v
                .as_str()
                .ok_or_else(|| Error::format(&at, "operation must be a string"))?;
            Operation::from_name(s)
                .ok_or_else(|| Error::format(&at, format!("unknown operation `{s}`")))
        };
        blocks.push(Block {
            input1: input(&items[1])?,
            input2: input(&items[2])?,
            op1: op(&items[3])?,
            op2: op(&items[4])?,
        });
    }
    Cell::new(kind, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{loose_ends, sample_genome};
    use std::collections::BTreeSet;

    #[test]
    fn fixture_parses_with_five_blocks() {
        let g = genome_from_json(XFERNASNET_JSON).unwrap();
        assert_eq!(g.num_blocks(), 5);
        let b = g.normal().blocks()[0];
        assert_eq!((b.input1, b.input2), (0, 1));
        assert_eq!((b.op1.name(), b.op2.name()), ("sep_conv 3x3", "conv 3x3"));
        let b = g.reduction().blocks()[2];
        assert_eq!((b.input1, b.input2), (3, 2));
        assert_eq!(
            (b.op1.name(), b.op2.name()),
            ("avg_pool 3x3", "dil_sep_conv 5x5")
        );
    }

    #[test]
    fn fixture_is_reproduced_byte_for_byte() {
        let g = genome_from_json(XFERNASNET_JSON).unwrap();
        assert_eq!(genome_to_json(&g), XFERNASNET_JSON.trim_end());
    }

    #[test]
    fn emitted_entries_match_fixture_lines() {
        let g = genome_from_json(XFERNASNET_JSON).unwrap();
        let text = genome_to_json(&g);
        assert!(text
            .contains(r#""node_3": ["node_3", "node_1", "node_2", "sep_conv 3x3", "conv 3x3"]"#));
        assert!(text.contains(
            r#""node_5": ["node_5", "node_4", "node_3", "avg_pool 3x3", "dil_sep_conv 5x5"]"#
        ));
    }

    #[test]
    fn fixture_normal_cell_loose_ends() {
        // node_3 and node_5 feed later blocks; node_4, node_6, node_7 do not.
        let g = genome_from_json(XFERNASNET_JSON).unwrap();
        assert_eq!(loose_ends(g.normal()), BTreeSet::from([3, 5, 6]));
    }

    #[test]
    fn unknown_operation_is_reported_with_node() {
        let text = XFERNASNET_JSON.replace(
            r#""node_6", "node_1", "node_2", "conv 1x1""#,
            r#""node_6", "node_1", "node_2", "conv 9x9""#,
        );
        let err = genome_from_json(&text).unwrap_err();
        match err {
            Error::Format { node, reason } => {
                assert_eq!(node, "conv_dag/node_6");
                assert!(reason.contains("conv 9x9"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn forward_reference_is_rejected() {
        let text = XFERNASNET_JSON.replace(
            r#""node_3", "node_1", "node_2", "sep_conv 3x3""#,
            r#""node_3", "node_4", "node_2", "sep_conv 3x3""#,
        );
        let err = genome_from_json(&text).unwrap_err();
        assert!(
            matches!(&err, Error::Format { node, reason } if node == "conv_dag/node_3" && reason.contains("forward")),
            "{err}"
        );
    }

    #[test]
    fn wrong_arity_is_rejected() {
        let text = XFERNASNET_JSON.replace(
            r#"["node_4", "node_1", "node_3", "identity", "avg_pool 2x2"]"#,
            r#"["node_4", "node_1", "node_3", "identity"]"#,
        );
        let err = genome_from_json(&text).unwrap_err();
        assert!(
            matches!(&err, Error::Format { node, .. } if node == "conv_dag/node_4"),
            "{err}"
        );
    }

    #[test]
    fn meta_round_trips() {
        let g = sample_genome(2, 3)
            .unwrap()
            .with_meta(GenomeMeta { b: 3, n: 3, f: 32 });
        let back = genome_from_json(&genome_to_json(&g)).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.meta(), g.meta());
    }
}
