//! Versioned text weights format.
//!
//! ```text
//! reflectgan-weights v1 <role> <n_bands>
//! <network-specific lines, e.g. arch / mode>
//! layer linear <out> <in>
//! weight <out*in values, row-major>
//! bias <out values>
//! layer batchnorm <features> <eps> <momentum>
//! gamma ... / beta ... / running_mean ... / running_var ...
//! layer activation relu | leaky_relu <slope> | tanh | sigmoid
//! layer dropout <p>
//! end
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64` bit pattern.

use std::fmt::Write as _;

use super::{ActivationKind, Layer, NnError};

const MAGIC: &str = "reflectgan-weights";
const VERSION: &str = "v1";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_values(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        out.push(' ');
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightsHeader {
    pub role: String,
    pub n_bands: usize,
}

impl WeightsHeader {
    pub fn line(&self) -> String {
        format!("{MAGIC} {VERSION} {} {}\n", self.role, self.n_bands)
    }
}

pub fn write_layers<'a, I: IntoIterator<Item = &'a Layer>>(out: &mut String, layers: I) {
    for layer in layers {
        match layer {
            Layer::Linear(l) => {
                writeln!(out, "layer linear {} {}", l.out_dim(), l.in_dim()).unwrap();
                push_values(out, "weight", l.weight.data());
                push_values(out, "bias", &l.bias);
            }
            Layer::BatchNorm(b) => {
                writeln!(out, "layer batchnorm {} {} {}", b.features(), fmt_f64(b.eps), fmt_f64(b.momentum)).unwrap();
                push_values(out, "gamma", &b.gamma);
                push_values(out, "beta", &b.beta);
                push_values(out, "running_mean", &b.running_mean);
                push_values(out, "running_var", &b.running_var);
            }
            Layer::Activation(a) => match a.kind {
                ActivationKind::Relu => out.push_str("layer activation relu\n"),
                ActivationKind::LeakyRelu(s) => writeln!(out, "layer activation leaky_relu {}", fmt_f64(s)).unwrap(),
                ActivationKind::Tanh => out.push_str("layer activation tanh\n"),
                ActivationKind::Sigmoid => out.push_str("layer activation sigmoid\n"),
            },
            Layer::Dropout(d) => writeln!(out, "layer dropout {}", fmt_f64(d.p)).unwrap(),
        }
    }
}

/// Line cursor over a weights file.
pub struct WeightsReader<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> WeightsReader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self { lines: text.lines().collect(), pos: 0 }
    }

    /// 1-based number of the line most recently returned.
    pub fn line_no(&self) -> usize {
        self.pos
    }

    pub fn error(&self, message: impl Into<String>) -> NnError {
        NnError::Format { line: self.pos.max(1), message: message.into() }
    }

    pub fn next_line(&mut self) -> Result<&'a str, NnError> {
        let line = self.lines.get(self.pos).copied().ok_or_else(|| {
            NnError::Format { line: self.pos + 1, message: "unexpected end of file".into() }
        })?;
        self.pos += 1;
        Ok(line)
    }

    /// Next line split on whitespace, requiring the first token to be `key`.
    pub fn expect(&mut self, key: &str) -> Result<Vec<&'a str>, NnError> {
        let line = self.next_line()?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some(k) if k == key => Ok(tokens.collect()),
            other => Err(self.error(format!("expected `{key}`, found `{}`", other.unwrap_or("")))),
        }
    }

    pub fn header(&mut self) -> Result<WeightsHeader, NnError> {
        let t = self.expect(MAGIC)?;
        if t.len() != 3 {
            return Err(self.error("header must read `reflectgan-weights v1 <role> <n_bands>`"));
        }
        if t[0] != VERSION {
            return Err(self.error(format!("unsupported weights version {}", t[0])));
        }
        let n_bands = t[2].parse().map_err(|_| self.error(format!("bad band count {}", t[2])))?;
        Ok(WeightsHeader { role: t[1].to_string(), n_bands })
    }

    pub fn parse_f64(&self, s: &str) -> Result<f64, NnError> {
        s.parse::<f64>().map_err(|_| self.error(format!("bad number `{s}`")))
    }

    pub fn parse_usize(&self, s: &str) -> Result<usize, NnError> {
        s.parse::<usize>().map_err(|_| self.error(format!("bad count `{s}`")))
    }

    fn values_into(&mut self, key: &str, dst: &mut [f64]) -> Result<(), NnError> {
        let t = self.expect(key)?;
        if t.len() != dst.len() {
            return Err(self.error(format!("{key}: expected {} values, found {}", dst.len(), t.len())));
        }
        for (d, s) in dst.iter_mut().zip(t) {
            *d = self.parse_f64(s)?;
        }
        Ok(())
    }

    fn shape_check(&self, what: &str, want: &[usize], got: &[&str]) -> Result<(), NnError> {
        let got = got.iter().map(|s| self.parse_usize(s)).collect::<Result<Vec<_>, _>>()?;
        if got != want {
            return Err(self.error(format!("{what}: shape {got:?} does not match network {want:?}")));
        }
        Ok(())
    }
}

/// Reads layer blocks into an already constructed stack, checking that
/// kinds and shapes match what the network expects.
pub fn read_layers<'l, I>(reader: &mut WeightsReader<'_>, layers: I) -> Result<(), NnError>
where
    I: IntoIterator<Item = &'l mut Layer>,
{
    for layer in layers {
        let t = reader.expect("layer")?;
        let kind = t.first().copied().unwrap_or("");
        match layer {
            Layer::Linear(l) if kind == "linear" => {
                reader.shape_check("linear", &[l.out_dim(), l.in_dim()], &t[1..])?;
                reader.values_into("weight", l.weight.data_mut())?;
                reader.values_into("bias", &mut l.bias)?;
            }
            Layer::BatchNorm(b) if kind == "batchnorm" => {
                if t.len() != 4 {
                    return Err(reader.error("batchnorm line needs features, eps and momentum"));
                }
                reader.shape_check("batchnorm", &[b.features()], &t[1..2])?;
                b.eps = reader.parse_f64(t[2])?;
                b.momentum = reader.parse_f64(t[3])?;
                reader.values_into("gamma", &mut b.gamma)?;
                reader.values_into("beta", &mut b.beta)?;
                reader.values_into("running_mean", &mut b.running_mean)?;
                reader.values_into("running_var", &mut b.running_var)?;
            }
            Layer::Activation(a) if kind == "activation" => {
                let parsed = match t.get(1).copied() {
                    Some("relu") => ActivationKind::Relu,
                    Some("tanh") => ActivationKind::Tanh,
                    Some("sigmoid") => ActivationKind::Sigmoid,
                    Some("leaky_relu") => {
                        let s = t.get(2).ok_or_else(|| reader.error("leaky_relu needs a slope"))?;
                        ActivationKind::LeakyRelu(reader.parse_f64(s)?)
                    }
                    other => return Err(reader.error(format!("unknown activation {other:?}"))),
                };
                if std::mem::discriminant(&parsed) != std::mem::discriminant(&a.kind) {
                    return Err(reader.error(format!("activation {parsed:?} where network has {:?}", a.kind)));
                }
                a.kind = parsed;
            }
            Layer::Dropout(d) if kind == "dropout" => {
                let p = reader.parse_f64(t.get(1).ok_or_else(|| reader.error("dropout needs p"))?)?;
                if !(0.0..1.0).contains(&p) {
                    return Err(reader.error(format!("dropout probability {p} out of range")));
                }
                d.p = p;
            }
            other => {
                let want = match other {
                    Layer::Linear(_) => "linear",
                    Layer::BatchNorm(_) => "batchnorm",
                    Layer::Activation(_) => "activation",
                    Layer::Dropout(_) => "dropout",
                };
                return Err(reader.error(format!("layer kind `{kind}` where network has `{want}`")));
            }
        }
    }
    Ok(())
}
