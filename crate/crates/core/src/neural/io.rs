//! Text serialization of a [`StackedNet`].
//!
//! ```text
//! stacked-lstm 1
//! head <linear|softmax> <out_dim>
//! layer <input_dim> <hidden_dim>      (one line per layer, bottom first)
//! params <count>
//! <one value per line, flatten order, `{:e}` formatting>
//! ```
//!
//! Values are written in shortest round-trip exponent form so a read after a
//! write reproduces every parameter bit for bit.

use std::io::{BufRead, Write};

use crate::numkit::Matrix;

use super::{HeadKind, LstmLayerParams, NeuralError, OutputHead, StackedNet};

const MAGIC: &str = "stacked-lstm";
const VERSION: u32 = 1;

impl StackedNet {
    pub fn write_text<W: Write>(&self, out: &mut W) -> Result<(), NeuralError> {
        writeln!(out, "{MAGIC} {VERSION}")?;
        writeln!(out, "head {} {}", self.head.kind.name(), self.output_dim())?;
        for l in &self.layers {
            writeln!(out, "layer {} {}", l.input_dim(), l.hidden_dim())?;
        }
        let flat = self.flatten();
        writeln!(out, "params {}", flat.len())?;
        for v in flat {
            writeln!(out, "{v:e}")?;
        }
        Ok(())
    }

    /// Reads a network written by [`StackedNet::write_text`]. Consumes
    /// exactly the lines belonging to the network, so it can be embedded in
    /// a larger file. `line_offset` is added to line numbers in errors.
    pub fn read_text<R: BufRead>(input: &mut R, line_offset: usize) -> Result<StackedNet, NeuralError> {
        let mut reader = Lines {
            input,
            line: line_offset,
        };
        let header = reader.next_line()?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(reader.error(format!("expected `{MAGIC}` header")));
        }
        match parts.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(VERSION) => {}
            other => return Err(reader.error(format!("unsupported version {other:?}"))),
        }

        let head_line = reader.next_line()?;
        let fields: Vec<&str> = head_line.split_whitespace().collect();
        let (kind, out_dim) = match fields.as_slice() {
            ["head", kind, dim] => {
                let kind = match *kind {
                    "linear" => HeadKind::Linear,
                    "softmax" => HeadKind::Softmax,
                    other => return Err(reader.error(format!("unknown head kind `{other}`"))),
                };
                (kind, reader.parse_usize(dim)?)
            }
            _ => return Err(reader.error("expected `head <kind> <dim>`".into())),
        };

        let mut dims = Vec::new();
        let count = loop {
            let line = reader.next_line()?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["layer", i, h] => dims.push((reader.parse_usize(i)?, reader.parse_usize(h)?)),
                ["params", n] => break reader.parse_usize(n)?,
                _ => return Err(reader.error("expected `layer` or `params` line".into())),
            }
        };
        if dims.is_empty() || out_dim == 0 || dims.iter().any(|&(i, h)| i == 0 || h == 0) {
            return Err(reader.error("network needs at least one non-empty layer".into()));
        }

        let layers = dims.iter().map(|&(i, h)| LstmLayerParams::zeros(i, h)).collect();
        let top = dims.last().map(|d| d.1).unwrap_or(0);
        let head = OutputHead {
            weights: Matrix::zeros(out_dim, top),
            bias: Matrix::zeros(out_dim, 1),
            kind,
        };
        let mut net = StackedNet::from_parts(layers, head)?;
        if net.param_count() != count {
            return Err(reader.error(format!(
                "header declares {count} parameters, shapes need {}",
                net.param_count()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let line = reader.next_line()?;
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|_| reader.error(format!("bad number `{}`", line.trim())))?;
            if !v.is_finite() {
                return Err(reader.error("non-finite parameter".into()));
            }
            values.push(v);
        }
        net.unflatten(&values)?;
        Ok(net)
    }
}

struct Lines<'a, R> {
    input: &'a mut R,
    line: usize,
}

impl<R: BufRead> Lines<'_, R> {
    fn next_line(&mut self) -> Result<String, NeuralError> {
        let mut buf = String::new();
        let n = self.input.read_line(&mut buf)?;
        self.line += 1;
        if n == 0 {
            return Err(self.error("unexpected end of file".into()));
        }
        Ok(buf.trim_end().to_string())
    }

    fn parse_usize(&self, s: &str) -> Result<usize, NeuralError> {
        s.parse().map_err(|_| self.error(format!("bad integer `{s}`")))
    }

    fn error(&self, msg: String) -> NeuralError {
        NeuralError::Format { line: self.line, msg }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::NetSpec;
    use crate::numkit::SeededRng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn text_roundtrip_is_bit_exact(seed in any::<u64>(), layers in 1usize..3, cells in 1usize..6, softmax in any::<bool>()) {
            let kind = if softmax { HeadKind::Softmax } else { HeadKind::Linear };
            let net = StackedNet::new(&NetSpec::uniform(3, layers, cells, 2, kind), &mut SeededRng::new(seed)).unwrap();
            let mut buf = Vec::new();
            net.write_text(&mut buf).unwrap();
            let back = StackedNet::read_text(&mut buf.as_slice(), 0).unwrap();
            prop_assert_eq!(back, net);
        }
    }

    #[test]
    fn reports_line_of_bad_value() {
        let net = StackedNet::new(&NetSpec::uniform(1, 1, 1, 1, HeadKind::Linear), &mut SeededRng::new(1)).unwrap();
        let mut buf = Vec::new();
        net.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("params 14\n", "params 14\nxyz\n", 1);
        let err = StackedNet::read_text(&mut text.as_bytes(), 10).unwrap_err();
        match err {
            NeuralError::Format { line, .. } => assert_eq!(line, 15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let err = StackedNet::read_text(&mut "stacked-lstm 7\n".as_bytes(), 0).unwrap_err();
        assert!(matches!(err, NeuralError::Format { line: 1, .. }));
        let err = StackedNet::read_text(&mut "stacked-lstm 1\nhead linear 1\nlayer 1 1\nparams 14\n0\n".as_bytes(), 0)
            .unwrap_err();
        assert!(matches!(err, NeuralError::Format { .. }));
    }
}
