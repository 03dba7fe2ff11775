//! Line-oriented model text format.
//!
//! ```text
//! model v1
//! width 32
//! head_input global_avg_pool        # or: flatten
//! reductions 1,5,13                 # or: -
//! stem conv3d k=3 s=1 d=1 out=32 bias=0
//! cell nodes=7 reduction=1
//! edge 0 1 separable_conv3d k=3 s=1 d=1 out=0 bias=0
//! head dense k=1 s=1 d=1 out=128 bias=1
//! ```
//!
//! `edge` lines belong to the closest preceding `cell` line. Blank lines and
//! text after `#` are ignored. Missing op fields take the defaults k=1 s=1
//! d=1 out=0 bias=0.

use super::{CellEdge, CellSpec, HeadInput, ModelSpec, OpKind, OpSpec};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ParseModelError {
    pub line: usize,
    pub msg: String,
}

fn op_line(op: &OpSpec) -> String {
    format!(
        "{} k={} s={} d={} out={} bias={}",
        op.kind.name(),
        op.kernel,
        op.stride,
        op.dilation,
        op.out_channels,
        u8::from(op.bias)
    )
}

pub fn write_model(model: &ModelSpec) -> String {
    let mut s = String::from("model v1\n");
    let _ = writeln!(s, "width {}", model.channel_width);
    let head_input = match model.head_input {
        HeadInput::Flatten => "flatten",
        HeadInput::GlobalAvgPool => "global_avg_pool",
    };
    let _ = writeln!(s, "head_input {head_input}");
    if model.reduction_positions.is_empty() {
        s.push_str("reductions -\n");
    } else {
        let list: Vec<String> = model.reduction_positions.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(s, "reductions {}", list.join(","));
    }
    for op in &model.stem {
        let _ = writeln!(s, "stem {}", op_line(op));
    }
    for cell in &model.cells {
        let _ = writeln!(s, "cell nodes={} reduction={}", cell.node_count, u8::from(cell.is_reduction));
        for e in &cell.edges {
            let _ = writeln!(s, "edge {} {} {}", e.from, e.to, op_line(&e.op));
        }
    }
    for op in &model.head {
        let _ = writeln!(s, "head {}", op_line(op));
    }
    s
}

fn parse_op(tokens: &[&str]) -> Result<OpSpec, String> {
    let (name, fields) = tokens.split_first().ok_or("missing op kind")?;
    let kind = OpKind::from_name(name).ok_or_else(|| format!("unknown op kind {name:?}"))?;
    let mut op = OpSpec {
        kind,
        kernel: 1,
        stride: 1,
        dilation: 1,
        out_channels: 0,
        bias: false,
    };
    for f in fields {
        let (key, value) = f.split_once('=').ok_or_else(|| format!("expected key=value, got {f:?}"))?;
        let n: usize = value.parse().map_err(|_| format!("bad value in {f:?}"))?;
        match key {
            "k" => op.kernel = n,
            "s" => op.stride = n,
            "d" => op.dilation = n,
            "out" => op.out_channels = n,
            "bias" => op.bias = n != 0,
            _ => return Err(format!("unknown field {key:?}")),
        }
    }
    Ok(op)
}

fn parse_kv(tokens: &[&str], key: &str) -> Result<usize, String> {
    tokens
        .iter()
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| format!("missing {key}="))?
        .parse()
        .map_err(|_| format!("bad {key}="))
}

pub fn parse_model(text: &str) -> Result<ModelSpec, ParseModelError> {
    let mut model = ModelSpec {
        stem: Vec::new(),
        cells: Vec::new(),
        reduction_positions: BTreeSet::new(),
        channel_width: 0,
        head_input: HeadInput::Flatten,
        head: Vec::new(),
    };
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| ParseModelError { line, msg };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if !saw_header {
            if tokens != ["model", "v1"] {
                return Err(err(format!("expected \"model v1\", got {content:?}")));
            }
            saw_header = true;
            continue;
        }
        match tokens[0] {
            "width" => {
                model.channel_width = tokens
                    .get(1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err("bad width".into()))?;
            }
            "head_input" => {
                model.head_input = match tokens.get(1).copied() {
                    Some("flatten") => HeadInput::Flatten,
                    Some("global_avg_pool") => HeadInput::GlobalAvgPool,
                    other => return Err(err(format!("bad head_input {other:?}"))),
                };
            }
            "reductions" => {
                let list = tokens.get(1).copied().unwrap_or("-");
                if list != "-" {
                    for p in list.split(',') {
                        let p = p.parse().map_err(|_| err(format!("bad reduction {p:?}")))?;
                        model.reduction_positions.insert(p);
                    }
                }
            }
            "stem" => model.stem.push(parse_op(&tokens[1..]).map_err(err)?),
            "head" => model.head.push(parse_op(&tokens[1..]).map_err(err)?),
            "cell" => {
                let nodes = parse_kv(&tokens[1..], "nodes").map_err(err)?;
                let reduction = parse_kv(&tokens[1..], "reduction").map_err(err)? != 0;
                model.cells.push(CellSpec::new(nodes, Vec::new()).with_reduction(reduction));
            }
            "edge" => {
                if tokens.len() < 4 {
                    return Err(err("edge needs: from to op".into()));
                }
                let from = tokens[1].parse().map_err(|_| err("bad edge source".into()))?;
                let to = tokens[2].parse().map_err(|_| err("bad edge target".into()))?;
                let op = parse_op(&tokens[3..]).map_err(err)?;
                let cell = model
                    .cells
                    .last_mut()
                    .ok_or_else(|| err("edge before any cell".into()))?;
                cell.edges.push(CellEdge { from, to, op });
            }
            other => return Err(err(format!("unknown directive {other:?}"))),
        }
    }
    if !saw_header {
        return Err(ParseModelError {
            line: 0,
            msg: "empty model text".into(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch_ir::{build_cosmo_net, default_cell, CosmoNetScale};
    use proptest::prelude::*;

    #[test]
    fn round_trips_builtin_models() {
        for scale in [CosmoNetScale::Small, CosmoNetScale::cells(default_cell(), 12)] {
            let m = build_cosmo_net(&scale).unwrap();
            assert_eq!(parse_model(&write_model(&m)).unwrap(), m);
        }
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_model("model v1\nwidth 4\nstem bogus k=3\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_model("model v1\nedge 0 1 identity\n").unwrap_err();
        assert!(e.msg.contains("before any cell"));
        assert!(parse_model("").is_err());
    }

    #[test]
    fn comments_and_defaults() {
        let m = parse_model("# tiny\nmodel v1\nwidth 2 # base\nhead dense out=3\n").unwrap();
        assert_eq!(m.head, vec![OpSpec::dense(3, false)]);
        assert_eq!(m.channel_width, 2);
    }

    fn arb_op() -> impl Strategy<Value = OpSpec> {
        (0usize..10, 1usize..6, 1usize..3, 1usize..3, 0usize..64, any::<bool>()).prop_map(
            |(k, kernel, stride, dilation, out, bias)| OpSpec {
                kind: OpKind::ALL[k],
                kernel,
                stride,
                dilation,
                out_channels: out,
                bias,
            },
        )
    }

    fn arb_cell() -> impl Strategy<Value = CellSpec> {
        (2usize..8, prop::collection::vec((0usize..8, 0usize..8, arb_op()), 0..10), any::<bool>())
            .prop_map(|(n, edges, red)| {
                let edges = edges
                    .into_iter()
                    .map(|(from, to, op)| CellEdge { from, to, op })
                    .collect();
                CellSpec::new(n, edges).with_reduction(red)
            })
    }

    proptest! {
        #[test]
        fn text_round_trip(
            stem in prop::collection::vec(arb_op(), 0..5),
            cells in prop::collection::vec(arb_cell(), 0..4),
            head in prop::collection::vec(arb_op(), 0..4),
            reductions in prop::collection::btree_set(1usize..20, 0..4),
            width in 0usize..300,
            gap in any::<bool>(),
        ) {
            let m = ModelSpec {
                stem,
                cells,
                reduction_positions: reductions,
                channel_width: width,
                head_input: if gap { HeadInput::GlobalAvgPool } else { HeadInput::Flatten },
                head,
            };
            prop_assert_eq!(parse_model(&write_model(&m)).unwrap(), m);
        }
    }
}
