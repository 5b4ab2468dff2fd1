//! Plain-text model files.
//!
//! ```text
//! icl-model 1
//! kind bilinear
//! d 2
//! dbar 6
//! layers 2
//! bilinear
//! W0 6 6
//! <one matrix row per line>
//! ...
//! attention
//! P 7 7
//! ...
//! ```
//!
//! Values use scientific notation with enough digits to round-trip exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{AttentionWeights, BilinearWeights, Layer, ModelKind, TransformerModel};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

const MAGIC: &str = "icl-model 1";

fn fmt_value<T: Scalar>(x: T) -> String {
    format!("{:.*e}", T::ROUND_TRIP_DIGITS - 1, x)
}

fn write_matrix<T: Scalar>(out: &mut String, name: &str, m: &Matrix<T>) {
    let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&x| fmt_value(x)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

pub fn write_model<T: Scalar>(model: &TransformerModel<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind {}", model.kind().name());
    let _ = writeln!(out, "d {}", model.d());
    let _ = writeln!(out, "dbar {}", model.dbar());
    let _ = writeln!(out, "layers {}", model.depth());
    for layer in model.layers() {
        match layer {
            Layer::Attention(w) => {
                out.push_str("attention\n");
                write_matrix(&mut out, "P", &w.p);
                write_matrix(&mut out, "Q", &w.q);
            }
            Layer::Bilinear(w) => {
                out.push_str("bilinear\n");
                write_matrix(&mut out, "W0", &w.w0);
                write_matrix(&mut out, "W1", &w.w1);
            }
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    let l = l.trim();
                    if !l.is_empty() {
                        return Ok(l);
                    }
                }
                None => return Err(self.err("unexpected end of file")),
            }
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn keyed<V: FromStr>(&mut self, key: &str) -> Result<V> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        let v = parts
            .next()
            .ok_or_else(|| self.err(format!("missing value for `{key}`")))?;
        if parts.next().is_some() {
            return Err(self.err("trailing tokens"));
        }
        v.parse().map_err(|_| self.err(format!("bad value for `{key}`")))
    }

    fn matrix<T: Scalar>(&mut self, name: &str) -> Result<Matrix<T>> {
        let l = self.next()?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != name {
            return Err(self.err(format!("expected `{name} <rows> <cols>`")));
        }
        let rows: usize = parts[1].parse().map_err(|_| self.err("bad row count"))?;
        let cols: usize = parts[2].parse().map_err(|_| self.err("bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let l = self.next()?;
            let before = data.len();
            for tok in l.split_whitespace() {
                data.push(T::from_str(tok).map_err(|_| self.err(format!("bad number `{tok}`")))?);
            }
            if data.len() - before != cols {
                return Err(self.err(format!("expected {cols} values")));
            }
        }
        Matrix::new(rows, cols, data)
    }
}

pub fn read_model<T: Scalar>(text: &str) -> Result<TransformerModel<T>> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not a model file"));
    }
    let kind_name: String = lines.keyed("kind")?;
    let kind = ModelKind::parse(&kind_name).ok_or_else(|| lines.err(format!("unknown kind `{kind_name}`")))?;
    let d: usize = lines.keyed("d")?;
    let dbar: usize = lines.keyed("dbar")?;
    let count: usize = lines.keyed("layers")?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        match lines.next()? {
            "attention" => {
                let p = lines.matrix("P")?;
                let q = lines.matrix("Q")?;
                layers.push(Layer::Attention(AttentionWeights::new(p, q)?));
            }
            "bilinear" => {
                let w0 = lines.matrix("W0")?;
                let w1 = lines.matrix("W1")?;
                layers.push(Layer::Bilinear(BilinearWeights::new(w0, w1)?));
            }
            other => return Err(lines.err(format!("unknown layer `{other}`"))),
        }
    }
    TransformerModel::new(kind, d, dbar, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_is_lossless() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for kind in [ModelKind::Linear, ModelKind::Bilinear, ModelKind::BilinearSparse] {
            let m = TransformerModel::<f64>::random(kind, 2, 5, 4, 1.3, &mut rng).unwrap();
            let back: TransformerModel<f64> = read_model(&write_model(&m)).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "icl-model 1\nkind bilinear\nd x\n";
        match read_model::<f64>(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
