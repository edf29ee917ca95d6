//! Text weight files.
//!
//! ```text
//! # free-form comment lines (run manifest)
//! polar-nn v1 <N> <K> <L>
//! meta <key> <value>            (zero or more)
//! layer <rows> <cols> <activation> [ramp]
//! <row 0: cols values>
//! ...
//! <row rows-1>
//! <bias: rows values>
//! ```
//!
//! Values are written with 17 significant digits so they parse back to the
//! same bits. Comment lines may only precede the header; inside layer bodies
//! an empty line is an empty row.

use std::io::{BufRead, Write};

use super::{Activation, DenseLayer, Matrix, NeuralDecoder};
use crate::error::{Error, Result};

/// A decoder with the metadata and comments stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub net: NeuralDecoder,
    pub meta: Vec<(String, String)>,
    pub comments: Vec<String>,
}

impl WeightFile {
    pub fn new(net: NeuralDecoder) -> Self {
        Self {
            net,
            meta: Vec::new(),
            comments: Vec::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| fmt_value(v))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_weights<W: Write>(file: &WeightFile, out: &mut W) -> std::io::Result<()> {
    for c in &file.comments {
        writeln!(out, "# {c}")?;
    }
    let net = &file.net;
    writeln!(
        out,
        "polar-nn v1 {} {} {}",
        net.input_dim(),
        net.output_dim(),
        net.depth()
    )?;
    writeln!(out, "meta l_max {}", fmt_value(net.l_max))?;
    writeln!(out, "meta eps {}", fmt_value(net.eps))?;
    for (k, v) in &file.meta {
        if k != "l_max" && k != "eps" {
            writeln!(out, "meta {k} {v}")?;
        }
    }
    for layer in net.layers() {
        write!(
            out,
            "layer {} {} {}",
            layer.outputs(),
            layer.inputs(),
            layer.activation
        )?;
        if layer.ramp {
            write!(out, " ramp")?;
        }
        writeln!(out)?;
        for r in 0..layer.outputs() {
            writeln!(out, "{}", join(layer.weights.row(r)))?;
        }
        writeln!(out, "{}", join(&layer.bias))?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<Option<String>> {
        self.number += 1;
        self.inner.next().transpose().map_err(Error::from)
    }

    fn expect(&mut self, what: &str) -> Result<String> {
        self.next()?
            .ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            line: self.number,
            msg: msg.into(),
        }
    }

    fn values(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let line = self.expect(what)?;
        let values = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| self.err(format!("bad number in {what}: {e}")))?;
        if values.len() != count {
            return Err(self.err(format!(
                "{what}: expected {count} values, found {}",
                values.len()
            )));
        }
        Ok(values)
    }
}

fn parse_usize<R: BufRead>(lines: &Lines<R>, tok: Option<&str>, what: &str) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| lines.err(format!("missing or invalid {what}")))
}

pub fn read_weights<R: BufRead>(input: R) -> Result<WeightFile> {
    let mut lines = Lines {
        inner: input.lines(),
        number: 0,
    };
    let mut comments = Vec::new();
    let header = loop {
        let line = lines.expect("header")?;
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim_start().to_string());
        } else if !line.trim().is_empty() {
            break line;
        }
    };
    let mut tok = header.split_whitespace();
    if tok.next() != Some("polar-nn") || tok.next() != Some("v1") {
        return Err(lines.err("expected `polar-nn v1` header"));
    }
    let n = parse_usize(&lines, tok.next(), "N")?;
    let k = parse_usize(&lines, tok.next(), "K")?;
    let depth = parse_usize(&lines, tok.next(), "L")?;

    let mut meta = Vec::new();
    let mut layers = Vec::with_capacity(depth);
    let mut pending = lines.next()?;
    while let Some(line) = pending.take() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("meta") => {
                let key = tok
                    .next()
                    .ok_or_else(|| lines.err("meta line without key"))?;
                let value = tok.collect::<Vec<_>>().join(" ");
                meta.push((key.to_string(), value));
            }
            Some("layer") => {
                let rows = parse_usize(&lines, tok.next(), "row count")?;
                let cols = parse_usize(&lines, tok.next(), "column count")?;
                let activation: Activation = tok
                    .next()
                    .ok_or_else(|| lines.err("missing activation"))?
                    .parse()
                    .map_err(|e: Error| lines.err(e.to_string()))?;
                let ramp = match tok.next() {
                    None => false,
                    Some("ramp") => true,
                    Some(other) => return Err(lines.err(format!("unknown layer flag `{other}`"))),
                };
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    data.extend(lines.values(cols, &format!("weight row {r}"))?);
                }
                let bias = lines.values(rows, "bias row")?;
                let layer = DenseLayer::new(Matrix::from_vec(rows, cols, data), bias, activation)
                    .map_err(|e| lines.err(e.to_string()))?
                    .with_ramp(ramp);
                layers.push(layer);
            }
            None => {}
            Some(other) => return Err(lines.err(format!("unexpected token `{other}`"))),
        }
        pending = lines.next()?;
    }
    if layers.len() != depth {
        return Err(lines.err(format!(
            "header declares {depth} layers, found {}",
            layers.len()
        )));
    }
    let take = |key: &str, default: f64| -> Result<f64> {
        match meta.iter().find(|(k, _)| k == key) {
            Some((_, v)) => v.parse().map_err(|_| Error::Format {
                line: 1,
                msg: format!("bad meta {key}"),
            }),
            None => Ok(default),
        }
    };
    let l_max = take("l_max", 20.0)?;
    let eps = take("eps", 1e-3)?;
    let net = NeuralDecoder::new(layers, n, l_max, eps)?;
    if net.output_dim() != k {
        return Err(Error::Structural(format!(
            "header declares K = {k}, network emits {}",
            net.output_dim()
        )));
    }
    meta.retain(|(key, _)| key != "l_max" && key != "eps");
    Ok(WeightFile {
        net,
        meta,
        comments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_net(values: &[f64]) -> NeuralDecoder {
        let w1 = Matrix::from_vec(3, 2, values[..6].to_vec());
        let w2 = Matrix::from_vec(1, 3, values[6..9].to_vec());
        let l1 = DenseLayer::new(w1, values[9..12].to_vec(), Activation::Relu)
            .unwrap()
            .with_ramp(true);
        let l2 = DenseLayer::new(w2, vec![values[12]], Activation::Identity).unwrap();
        NeuralDecoder::new(vec![l1, l2], 2, 20.0, 1e-3).unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(-1e6f64..1e6, 13)) {
            let mut file = WeightFile::new(sample_net(&values));
            file.meta.push(("code".into(), "polar-code n=1 k=1 design_snr_db=0 frozen=10".into()));
            file.comments.push("command=test".into());
            let mut buf = Vec::new();
            write_weights(&file, &mut buf).unwrap();
            let back = read_weights(buf.as_slice()).unwrap();
            prop_assert_eq!(back, file);
        }
    }

    #[test]
    fn empty_layers_round_trip() {
        let layer = DenseLayer::new(Matrix::zeros(0, 1), vec![], Activation::Identity).unwrap();
        let net = NeuralDecoder::new(vec![layer], 1, 20.0, 1e-3).unwrap();
        let file = WeightFile::new(net);
        let mut buf = Vec::new();
        write_weights(&file, &mut buf).unwrap();
        assert_eq!(read_weights(buf.as_slice()).unwrap(), file);
    }

    #[test]
    fn header_format() {
        let file = WeightFile::new(sample_net(&[0.5; 13]));
        let mut buf = Vec::new();
        write_weights(&file, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("polar-nn v1 2 1 2\n"));
        assert!(text.contains("layer 3 2 relu ramp\n5.0000000000000000e-1 5.0000000000000000e-1\n"));
    }

    #[test]
    fn malformed_files() {
        assert!(read_weights("polar-nn v2 1 1 1\n".as_bytes()).is_err());
        assert!(read_weights("polar-nn v1 1 1 2\nlayer 1 1 relu\n1\n0\n".as_bytes()).is_err());
        let err =
            read_weights("polar-nn v1 1 1 1\nlayer 1 1 relu\n1 2\n0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }), "{err}");
        assert!(read_weights("polar-nn v1 1 2 1\nlayer 1 1 identity\n1\n0\n".as_bytes()).is_err());
    }
}
