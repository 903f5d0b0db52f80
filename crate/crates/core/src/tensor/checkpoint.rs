use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::dense::Tensor;
use super::store::{AdamState, ParameterStore};
use crate::error::{io_err, Error, Result};

pub const CHECKPOINT_MAGIC: &str = "MOJITO-CKPT-1";

/// Parameters, optimizer state and free-form metadata in a line-oriented
/// text file:
///
/// ```text
/// MOJITO-CKPT-1
/// meta <key> <value>
/// param <path> <dim>x<dim> <adam step>
/// <values>
/// <first moments>
/// <second moments>
/// end
/// ```
///
/// Floats are written in shortest round-trip form, so a save/load cycle is
/// bit-exact and identical stores produce identical bytes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub store: ParameterStore,
}

fn write_floats(out: &mut String, xs: &[f64]) {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{x:?}").expect("write to string");
    }
    out.push('\n');
}

fn parse_floats(line: Option<&str>, expected: usize, what: &str, name: &str) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| Error::Format(format!("{name}: missing {what} line")))?;
    let xs = line
        .split_ascii_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("{name}: bad float {t:?} in {what}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if xs.len() != expected {
        return Err(Error::Format(format!(
            "{name}: {what} has {} values, expected {expected}",
            xs.len()
        )));
    }
    Ok(xs)
}

impl Checkpoint {
    pub fn new(store: ParameterStore) -> Self {
        Self {
            meta: BTreeMap::new(),
            store,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").expect("write to string");
        }
        for (name, p) in self.store.iter() {
            let dims: Vec<String> = p.tensor.shape().iter().map(usize::to_string).collect();
            writeln!(out, "param {name} {} {}", dims.join("x"), p.adam.step).expect("write");
            write_floats(&mut out, p.tensor.values());
            write_floats(&mut out, &p.adam.m);
            write_floats(&mut out, &p.adam.v);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(CHECKPOINT_MAGIC) => {}
            other => {
                return Err(Error::Format(format!(
                    "not a checkpoint: expected header {CHECKPOINT_MAGIC:?}, found {other:?}"
                )))
            }
        }
        let mut ckpt = Checkpoint::default();
        loop {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format("truncated checkpoint (no end marker)".into()))?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
                continue;
            }
            let Some(rest) = line.strip_prefix("param ") else {
                return Err(Error::Format(format!("unexpected line {line:?}")));
            };
            let fields: Vec<&str> = rest.split(' ').collect();
            let [name, dims, step] = fields.as_slice() else {
                return Err(Error::Format(format!("bad param header {line:?}")));
            };
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Error::Format(format!("{name}: bad shape {dims:?}")))?;
            let step = step
                .parse::<u64>()
                .map_err(|_| Error::Format(format!("{name}: bad step {step:?}")))?;
            let n: usize = shape.iter().product();
            let values = parse_floats(lines.next(), n, "values", name)?;
            let m = parse_floats(lines.next(), n, "first moments", name)?;
            let v = parse_floats(lines.next(), n, "second moments", name)?;
            let tensor = Tensor::new(shape, values)?;
            ckpt.store
                .insert_with_state(name.to_string(), tensor, AdamState { m, v, step })?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_text(&text)
    }
}
