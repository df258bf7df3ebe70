//! Mechanism bundle: a trained releaser plus what is needed to apply it to
//! raw consumption data.
//!
//! ```text
//! diprivacy-mechanism 1
//! observation_dim <n>
//! noise_dim <m>
//! alphabet_size <k>
//! norm_min <value>
//! norm_max <value>
//! <releaser network in stacked-lstm text format>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::neural::StackedNet;

use super::{MechError, Releaser};

const MAGIC: &str = "diprivacy-mechanism";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismBundle {
    pub releaser: Releaser,
    pub alphabet_size: usize,
    /// Min-max constants of the training consumption series.
    pub norm_min: f64,
    pub norm_max: f64,
}

impl MechanismBundle {
    pub fn write<W: Write>(&self, out: &mut W) -> Result<(), MechError> {
        writeln!(out, "{MAGIC} {VERSION}")?;
        writeln!(out, "observation_dim {}", self.releaser.observation_dim)?;
        writeln!(out, "noise_dim {}", self.releaser.noise_dim)?;
        writeln!(out, "alphabet_size {}", self.alphabet_size)?;
        writeln!(out, "norm_min {:e}", self.norm_min)?;
        writeln!(out, "norm_max {:e}", self.norm_max)?;
        self.releaser.net.write_text(out)?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: &mut R) -> Result<Self, MechError> {
        let mut line_no = 0;
        let mut next = |expect: &str| -> Result<String, MechError> {
            let mut buf = String::new();
            input.read_line(&mut buf)?;
            line_no += 1;
            let mut parts = buf.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(k), Some(v), None) if k == expect => Ok(v.to_string()),
                _ => Err(MechError::Bundle(format!("line {line_no}: expected `{expect} <value>`"))),
            }
        };
        let version = next(MAGIC)?;
        if version != VERSION.to_string() {
            return Err(MechError::Bundle(format!("unsupported version {version}")));
        }
        let int = |s: String, what: &str| {
            s.parse::<usize>()
                .map_err(|_| MechError::Bundle(format!("bad {what} `{s}`")))
        };
        let float = |s: String, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| MechError::Bundle(format!("bad {what} `{s}`")))
        };
        let observation_dim = int(next("observation_dim")?, "observation_dim")?;
        let noise_dim = int(next("noise_dim")?, "noise_dim")?;
        let alphabet_size = int(next("alphabet_size")?, "alphabet_size")?;
        let norm_min = float(next("norm_min")?, "norm_min")?;
        let norm_max = float(next("norm_max")?, "norm_max")?;
        if alphabet_size < 2 {
            return Err(MechError::Bundle(format!("alphabet size {alphabet_size} < 2")));
        }
        if !(norm_max > norm_min) {
            return Err(MechError::Bundle("norm_max must exceed norm_min".into()));
        }
        let net = StackedNet::read_text(input, 6)?;
        Ok(Self {
            releaser: Releaser::from_net(net, observation_dim, noise_dim)?,
            alphabet_size,
            norm_min,
            norm_max,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), MechError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MechError> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}
