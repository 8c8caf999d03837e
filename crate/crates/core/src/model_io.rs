//! Versioned text serialization of networks.
//!
//! ```text
//! nnam-model v1 <kind> <layers> <input_dim> <hidden...> <num_classes>
//! config feature_dim <d> context <k> delay <n> dropout <p> zoneout <d_c> <d_h>
//! <tensor name> <rows> <cols>
//! <row-major values, one matrix row per line, 17 significant digits>
//! ...
//! ```
//!
//! Tensors appear in [`ParamSet::tensor_infos`] order followed by
//! `normalizer.shift` and `normalizer.scale`.

use std::fmt::Write as _;
use std::path::Path;

use crate::cells::{CellKind, LayerParams, NetworkConfig, ParamSet, RecurrentNetwork, ZoneoutConfig};
use crate::cells::{DenseParams, GruParams, LstmParams};
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::numeric::Vector;

const MAGIC: &str = "nnam-model";
const VERSION: &str = "v1";

/// Formats a value with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_tensor(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = writeln!(out, "{name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

pub fn model_to_string(net: &RecurrentNetwork) -> String {
    let cfg = &net.config;
    let mut out = String::new();
    let dims: Vec<String> = std::iter::once(cfg.input_dim())
        .chain(cfg.hidden.iter().copied())
        .chain(std::iter::once(cfg.num_classes))
        .map(|d| d.to_string())
        .collect();
    let _ = writeln!(out, "{MAGIC} {VERSION} {} {} {}", cfg.kind, cfg.hidden.len(), dims.join(" "));
    let _ = writeln!(
        out,
        "config feature_dim {} context {} delay {} dropout {} zoneout {} {}",
        cfg.feature_dim,
        cfg.context,
        cfg.delay,
        fmt_f64(cfg.dropout),
        fmt_f64(cfg.zoneout.d_c()),
        fmt_f64(cfg.zoneout.d_h())
    );
    for (info, data) in net.params.tensor_infos().iter().zip(net.params.tensor_values()) {
        write_tensor(&mut out, &info.name, info.rows, info.cols, data);
    }
    let n = net.normalizer.dim();
    write_tensor(&mut out, "normalizer.shift", n, 1, net.normalizer.shift.as_slice());
    write_tensor(&mut out, "normalizer.scale", n, 1, net.normalizer.scale.as_slice());
    out
}

struct Lines<'a> {
    file: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self) -> Result<Vec<&'a str>> {
        let (i, line) = self
            .iter
            .next()
            .ok_or_else(|| Error::parse(self.file, self.line_no + 1, "unexpected end of file"))?;
        self.line_no = i + 1;
        Ok(line.split_whitespace().collect())
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.file, self.line_no, msg)
    }

    fn num<T: std::str::FromStr>(&self, tok: Option<&&str>, what: &str) -> Result<T> {
        tok.and_then(|t| t.parse().ok())
            .ok_or_else(|| self.err(format!("expected {what}")))
    }
}

pub fn model_from_str(text: &str, file: &Path) -> Result<RecurrentNetwork> {
    let mut lines = Lines {
        file,
        iter: text.lines().enumerate(),
        line_no: 0,
    };
    let header = lines.next_tokens()?;
    if header.len() < 4 || header[0] != MAGIC {
        return Err(lines.err("not an nnam-model file"));
    }
    if header[1] != VERSION {
        return Err(lines.err(format!("unsupported model version {}", header[1])));
    }
    let kind: CellKind = header[2].parse().map_err(|e: Error| lines.err(e.to_string()))?;
    let layers: usize = lines.num(header.get(3), "layer count")?;
    let dims: Vec<usize> = header[4..]
        .iter()
        .map(|t| t.parse().map_err(|_| lines.err(format!("bad dimension `{t}`"))))
        .collect::<Result<_>>()?;
    if dims.len() != layers + 2 {
        return Err(lines.err(format!("expected {} dimensions, found {}", layers + 2, dims.len())));
    }

    let cfg_line = lines.next_tokens()?;
    let get = |key: &str| -> Option<usize> { cfg_line.iter().position(|t| *t == key) };
    if cfg_line.first() != Some(&"config") {
        return Err(lines.err("expected config line"));
    }
    let at = |key: &str, off: usize| get(key).and_then(|p| cfg_line.get(p + off));
    let feature_dim: usize = lines.num(at("feature_dim", 1), "feature_dim")?;
    let context: usize = lines.num(at("context", 1), "context")?;
    let delay: usize = lines.num(at("delay", 1), "delay")?;
    let dropout: f64 = lines.num(at("dropout", 1), "dropout")?;
    let d_c: f64 = lines.num(at("zoneout", 1), "zoneout d_c")?;
    let d_h: f64 = lines.num(at("zoneout", 2), "zoneout d_h")?;
    let config = NetworkConfig {
        kind,
        feature_dim,
        context,
        hidden: dims[1..=layers].to_vec(),
        num_classes: dims[layers + 1],
        delay,
        dropout,
        zoneout: ZoneoutConfig::new(d_c, d_h).map_err(|e| lines.err(e.to_string()))?,
    };
    if config.input_dim() != dims[0] {
        return Err(lines.err(format!(
            "input dim {} does not equal feature_dim x context = {}",
            dims[0],
            config.input_dim()
        )));
    }

    // Build a zero-valued skeleton of the right shapes, then fill it.
    let mut layers_params = Vec::with_capacity(layers);
    let mut input = config.input_dim();
    for &n in &config.hidden {
        layers_params.push(match kind {
            CellKind::Lstm | CellKind::ZoneoutLstm => LayerParams::Lstm(LstmParams::zeros(input, n)),
            CellKind::Gru => LayerParams::Gru(GruParams::zeros(input, n)),
            CellKind::FeedForward => LayerParams::Dense(DenseParams::zeros(input, n)),
        });
        input = n;
    }
    let mut params = ParamSet {
        layers: layers_params,
        output: DenseParams::zeros(input, config.num_classes),
    };

    let read_tensor = |lines: &mut Lines<'_>, name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let head = lines.next_tokens()?;
        if head.len() != 3 || head[0] != name {
            return Err(lines.err(format!("expected tensor `{name}`")));
        }
        let (r, c): (usize, usize) = (lines.num(head.get(1), "rows")?, lines.num(head.get(2), "cols")?);
        if (r, c) != (rows, cols) {
            return Err(lines.err(format!("tensor `{name}` is {r}x{c}, expected {rows}x{cols}")));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let toks = lines.next_tokens()?;
            if toks.len() != cols {
                return Err(lines.err(format!("tensor `{name}`: expected {cols} values, found {}", toks.len())));
            }
            for t in toks {
                let v: f64 = t.parse().map_err(|_| lines.err(format!("bad number `{t}`")))?;
                if !v.is_finite() {
                    return Err(lines.err(format!("non-finite value in `{name}`")));
                }
                values.push(v);
            }
        }
        Ok(values)
    };

    let mut flat = Vec::with_capacity(params.num_params());
    for info in params.tensor_infos() {
        flat.extend(read_tensor(&mut lines, &info.name, info.rows, info.cols)?);
    }
    params.load_flat(&flat)?;
    let n = config.input_dim();
    let shift = read_tensor(&mut lines, "normalizer.shift", n, 1)?;
    let scale = read_tensor(&mut lines, "normalizer.scale", n, 1)?;
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(lines.err("normalizer scale must be positive"));
    }
    let normalizer = Normalizer {
        shift: Vector(shift),
        scale: Vector(scale),
    };
    RecurrentNetwork::from_parts(config, params, normalizer)
}

pub fn save_model(net: &RecurrentNetwork, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, model_to_string(net).as_bytes())
}

pub fn load_model(path: &Path) -> Result<RecurrentNetwork> {
    let text = std::fs::read_to_string(path)?;
    model_from_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn net(kind: CellKind, seed: u64) -> RecurrentNetwork {
        let cfg = NetworkConfig {
            kind,
            feature_dim: 3,
            context: if kind == CellKind::FeedForward { 3 } else { 1 },
            hidden: vec![4, 2],
            num_classes: 5,
            delay: 2,
            dropout: 0.2,
            zoneout: ZoneoutConfig::new(0.5, 0.25).unwrap(),
        };
        let mut rng = Rng::new(seed);
        let mut n = RecurrentNetwork::new(cfg, &mut rng).unwrap();
        let d = n.config.input_dim();
        n.normalizer = Normalizer {
            shift: Vector((0..d).map(|_| rng.normal()).collect()),
            scale: Vector((0..d).map(|_| rng.uniform_range(0.1, 3.0)).collect()),
        };
        n
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..1000, k in 0usize..4) {
            let original = net(CellKind::ALL[k], seed);
            let text = model_to_string(&original);
            let back = model_from_str(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &original);
            let a: Vec<u64> = back.params.to_flat().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = original.params.to_flat().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(model_to_string(&back), text);
        }
    }

    #[test]
    fn header_format() {
        let text = model_to_string(&net(CellKind::Gru, 1));
        assert!(text.starts_with("nnam-model v1 gru 2 3 4 2 5\n"), "{}", &text[..60]);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = model_to_string(&net(CellKind::Lstm, 1));
        let cut: String = text.lines().take(7).collect::<Vec<_>>().join("\n");
        assert!(matches!(model_from_str(&cut, Path::new("m")), Err(Error::Parse { .. })));
        let bad = text.replacen("nnam-model v1", "nnam-model v9", 1);
        assert!(model_from_str(&bad, Path::new("m")).is_err());
    }
}
