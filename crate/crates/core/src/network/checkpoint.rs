//! Text checkpoint container.
//!
//! ```text
//! scanseg-checkpoint 1
//! use_mcp true
//! trunk_input 206
//! epochs_completed 100
//! adam_step 12000
//! adam_lr 1e-3
//! param context1.weight 64 6
//! <one row of values per line>
//! param context1.bias 64
//! <values>
//! ...
//! adam_m context1.weight 64 6
//! ...
//! adam_v context1.weight 64 6
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip exponent formatting, so a save and
//! load reproduces every bit and identical runs give identical files.
//! Optimizer sections are optional.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::adam::AdamState;
use super::params::{trunk_input_dim, Dense, NetworkParams};
use crate::error::{Error, Result};

const MAGIC: &str = "scanseg-checkpoint";
const VERSION: u32 = 1;

/// Everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub adam: Option<AdamState>,
    pub epochs_completed: usize,
}

fn write_values<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:e}");
    }
    out.push('\n');
}

fn write_set(out: &mut String, section: &str, set: &NetworkParams) {
    for (name, layer) in set.layers() {
        let (rows, cols) = layer.weight.dim();
        let _ = writeln!(out, "{section} {name}.weight {rows} {cols}");
        for row in layer.weight.rows() {
            write_values(out, row.iter());
        }
        let _ = writeln!(out, "{section} {name}.bias {rows}");
        write_values(out, layer.bias.iter());
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let use_mcp = self.params.use_mcp();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "use_mcp {use_mcp}");
        let _ = writeln!(out, "trunk_input {}", trunk_input_dim(use_mcp));
        let _ = writeln!(out, "epochs_completed {}", self.epochs_completed);
        if let Some(adam) = &self.adam {
            let _ = writeln!(out, "adam_step {}", adam.step);
            let _ = writeln!(out, "adam_lr {:e}", adam.lr);
        }
        write_set(&mut out, "param", &self.params);
        if let Some(adam) = &self.adam {
            write_set(&mut out, "adam_m", &adam.first);
            write_set(&mut out, "adam_v", &adam.second);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut header: HashMap<String, String> = HashMap::new();
        let mut tensors: HashMap<(String, String), (Vec<usize>, Vec<f64>)> = HashMap::new();

        let (ln, first) = lines.next().ok_or_else(|| err(1, "empty checkpoint".into()))?;
        match first.split_whitespace().collect::<Vec<_>>()[..] {
            [MAGIC, v] if v == VERSION.to_string() => {}
            _ => return Err(err(ln, format!("expected '{MAGIC} {VERSION}'"))),
        }

        while let Some((ln, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts[0] {
                "param" | "adam_m" | "adam_v" => {
                    if parts.len() < 3 {
                        return Err(err(ln, "tensor header needs a name and shape".into()));
                    }
                    let shape: Vec<usize> = parts[2..]
                        .iter()
                        .map(|s| s.parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| err(ln, "bad tensor shape".into()))?;
                    let value_lines = if shape.len() == 2 { shape[0] } else { 1 };
                    let mut values = Vec::with_capacity(shape.iter().product());
                    for _ in 0..value_lines {
                        let (vl, body) =
                            lines.next().ok_or_else(|| err(ln, "truncated tensor".into()))?;
                        for tok in body.split_whitespace() {
                            values.push(
                                tok.parse::<f64>()
                                    .map_err(|_| err(vl, format!("bad value '{tok}'")))?,
                            );
                        }
                    }
                    if values.len() != shape.iter().product::<usize>() {
                        return Err(err(ln, format!("tensor {} has wrong value count", parts[1])));
                    }
                    tensors.insert((parts[0].to_string(), parts[1].to_string()), (shape, values));
                }
                key => {
                    let value = parts.get(1).ok_or_else(|| err(ln, format!("'{key}' has no value")))?;
                    header.insert(key.to_string(), value.to_string());
                }
            }
        }

        let get = |k: &str| {
            header
                .get(k)
                .ok_or_else(|| err(0, format!("missing header '{k}'")))
        };
        let use_mcp: bool = get("use_mcp")?
            .parse()
            .map_err(|_| err(0, "bad use_mcp".into()))?;
        let trunk_input: usize = get("trunk_input")?
            .parse()
            .map_err(|_| err(0, "bad trunk_input".into()))?;
        if trunk_input != trunk_input_dim(use_mcp) {
            return Err(err(0, format!("trunk_input {trunk_input} inconsistent with use_mcp")));
        }
        let epochs_completed = get("epochs_completed")?
            .parse()
            .map_err(|_| err(0, "bad epochs_completed".into()))?;

        let fill = |section: &str, tensors: &mut HashMap<(String, String), (Vec<usize>, Vec<f64>)>| {
            let mut set = NetworkParams::zeros(use_mcp);
            for (name, layer) in set.layers_mut() {
                let mut take = |suffix: &str| {
                    tensors
                        .remove(&(section.to_string(), format!("{name}.{suffix}")))
                        .ok_or_else(|| err(0, format!("missing {section} {name}.{suffix}")))
                };
                let (wshape, w) = take("weight")?;
                let (bshape, b) = take("bias")?;
                if wshape != [layer.outputs(), layer.inputs()] || bshape != [layer.outputs()] {
                    return Err(err(0, format!("{section} {name} has the wrong shape")));
                }
                *layer = Dense {
                    weight: Array2::from_shape_vec((wshape[0], wshape[1]), w).expect("shape"),
                    bias: Array1::from_vec(b),
                };
            }
            Ok(set)
        };

        let params = fill("param", &mut tensors)?;
        let adam = match header.get("adam_step") {
            Some(step) => {
                let step = step.parse().map_err(|_| err(0, "bad adam_step".into()))?;
                let lr = get("adam_lr")?.parse().map_err(|_| err(0, "bad adam_lr".into()))?;
                let mut state = AdamState::new(&params, lr);
                state.step = step;
                state.first = fill("adam_m", &mut tensors)?;
                state.second = fill("adam_v", &mut tensors)?;
                Some(state)
            }
            None => None,
        };
        if let Some((section, name)) = tensors.keys().next() {
            return Err(err(0, format!("unexpected tensor {section} {name}")));
        }
        Ok(Checkpoint {
            params,
            adam,
            epochs_completed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_round_trip() {
        for use_mcp in [true, false] {
            let params = NetworkParams::init(use_mcp, 11);
            let mut adam = AdamState::new(&params, 0.001);
            adam.step = 17;
            adam.first.trunk.bias[3] = 1.0 / 3.0;
            adam.second.embed.weight[[1, 2]] = 1e-300;
            let ck = Checkpoint {
                params,
                adam: Some(adam),
                epochs_completed: 4,
            };
            let text = ck.to_text();
            let back = Checkpoint::parse(&text, Path::new("ck")).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_text(), text);
            let expected = if use_mcp { "trunk_input 206" } else { "trunk_input 6" };
            assert!(text.lines().nth(2) == Some(expected));
        }
    }

    #[test]
    fn params_only() {
        let ck = Checkpoint {
            params: NetworkParams::init(false, 2),
            adam: None,
            epochs_completed: 0,
        };
        let back = Checkpoint::parse(&ck.to_text(), Path::new("ck")).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::parse("hello\n", Path::new("ck")).is_err());
        let ck = Checkpoint {
            params: NetworkParams::init(false, 2),
            adam: None,
            epochs_completed: 0,
        };
        let text = ck.to_text().replace("trunk_input 6", "trunk_input 206");
        assert!(Checkpoint::parse(&text, Path::new("ck")).is_err());
    }
}
