use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::nn::Parameterized;

pub const CHECKPOINT_MAGIC: &str = "stable-dyn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing text container of named parameter arrays.
///
/// ```text
/// stable-dyn-checkpoint 1
/// meta <key> <value>
/// tensor <name> <rows> <cols>
/// <one line of space-separated values per row>
/// end
/// ```
///
/// Values use Rust's shortest round-trip decimal form, so a save/load cycle
/// is bit-exact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

impl Checkpoint {
    /// Snapshot of every tensor of `params` under its canonical name.
    pub fn from_params<P: Parameterized + ?Sized>(params: &P) -> Self {
        let tensors = params
            .tensor_names("")
            .into_iter()
            .zip(params.tensors())
            .map(|(n, t)| (n, t.clone()))
            .collect();
        Checkpoint {
            meta: BTreeMap::new(),
            tensors,
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn set_list(&mut self, key: &str, values: &[usize]) -> &mut Self {
        let joined = values.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        self.set(key, joined)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Schema(format!("missing metadata key '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::Schema(format!("metadata '{key}' has unreadable value '{raw}'")))
    }

    pub fn get_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw: String = self.get(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Schema(format!("metadata '{key}' has unreadable list '{raw}'")))
            })
            .collect()
    }

    /// Copies the stored tensors into `params`, which must have exactly the
    /// same names in the same order and matching shapes.
    pub fn restore_into<P: Parameterized + ?Sized>(&self, params: &mut P) -> Result<()> {
        let names = params.tensor_names("");
        let stored: Vec<&str> = self.tensors.iter().map(|(n, _)| n.as_str()).collect();
        if names.iter().map(String::as_str).ne(stored.iter().copied()) {
            return Err(Error::Schema(format!(
                "checkpoint holds [{}] but the model expects [{}]",
                stored.join(", "),
                names.join(", ")
            )));
        }
        let values: Vec<Tensor> = self.tensors.iter().map(|(_, t)| t.clone()).collect();
        params.assign(&values)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").expect("string write");
        }
        for (name, t) in &self.tensors {
            writeln!(out, "tensor {name} {} {}", t.rows(), t.cols()).expect("string write");
            for r in 0..t.rows() {
                let row: Vec<String> = t.row_slice(r).iter().map(f64::to_string).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty checkpoint"))?;
        let mut head = first.split_whitespace();
        if head.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Schema(format!("not a checkpoint: first line is '{first}'")));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(1, "missing schema version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint schema version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }

        let mut ck = Checkpoint::default();
        let mut ended = false;
        while let Some((no, line)) = lines.next() {
            let mut words = line.split_whitespace();
            match words.next() {
                Some("meta") => {
                    let key = words.next().ok_or_else(|| parse_err(no, "meta line without key"))?;
                    let value = words.collect::<Vec<_>>().join(" ");
                    ck.meta.insert(key.to_string(), value);
                }
                Some("tensor") => {
                    let fields: Vec<&str> = words.collect();
                    let [name, rows, cols] = fields[..] else {
                        return Err(parse_err(no, "tensor line needs a name, rows and cols"));
                    };
                    let rows: usize = rows.parse().map_err(|_| parse_err(no, "bad row count"))?;
                    let cols: usize = cols.parse().map_err(|_| parse_err(no, "bad column count"))?;
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rno, row) = lines
                            .next()
                            .ok_or_else(|| parse_err(no, format!("tensor '{name}' is truncated")))?;
                        let before = data.len();
                        for tok in row.split_whitespace() {
                            data.push(
                                tok.parse::<f64>()
                                    .map_err(|_| parse_err(rno, format!("bad number '{tok}'")))?,
                            );
                        }
                        if data.len() - before != cols {
                            return Err(parse_err(
                                rno,
                                format!("expected {cols} values, got {}", data.len() - before),
                            ));
                        }
                    }
                    ck.tensors.push((name.to_string(), Tensor::from_vec(rows, cols, data)?));
                }
                Some("end") => {
                    ended = true;
                    break;
                }
                None => {}
                Some(other) => return Err(parse_err(no, format!("unexpected record '{other}'"))),
            }
        }
        if !ended {
            return Err(parse_err(text.lines().count(), "missing 'end' record"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{ModelKind, TrainConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> crate::train::DynamicsModel {
        let cfg = TrainConfig {
            fhat_hidden: vec![5],
            icnn_hidden: vec![4, 3],
            ..TrainConfig::default()
        };
        cfg.init_model(2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model(1);
        let mut ck = Checkpoint::from_params(&m);
        ck.set("kind", ModelKind::Stable)
            .set("alpha", 0.1)
            .set_list("widths", &[4, 3]);
        let back = Checkpoint::parse(&ck.to_text()).unwrap();
        assert_eq!(back, ck);
        let mut other = model(2);
        back.restore_into(&mut other).unwrap();
        assert_eq!(other, m);
        assert_eq!(back.get::<f64>("alpha").unwrap(), 0.1);
        assert_eq!(back.get_list("widths").unwrap(), vec![4, 3]);
    }

    #[test]
    fn version_mismatch_fails_loudly() {
        let text = Checkpoint::from_params(&model(1)).to_text().replacen(" 1\n", " 2\n", 1);
        let err = Checkpoint::parse(&text).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
        assert!(err.to_string().contains("version 2"));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let good = Checkpoint::from_params(&model(1)).to_text();
        assert!(Checkpoint::parse("hello\n").is_err());
        assert!(Checkpoint::parse(&good.replace("end\n", "")).is_err());
        let cut: String = good.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::parse(&cut).is_err());
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let ck = Checkpoint::from_params(&model(1));
        let mut other = TrainConfig {
            fhat_hidden: vec![7],
            icnn_hidden: vec![4, 3],
            ..TrainConfig::default()
        }
        .init_model(2, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
        assert!(matches!(ck.restore_into(&mut other), Err(Error::Shape(_))));
        let mut naive = TrainConfig {
            kind: ModelKind::Naive,
            ..TrainConfig::default()
        }
        .init_model(2, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
        assert!(matches!(ck.restore_into(&mut naive), Err(Error::Schema(_))));
    }

    proptest! {
        #[test]
        fn any_finite_values_round_trip(values in proptest::collection::vec(any::<f64>(), 1..40)) {
            let t = Tensor::from_vec(1, values.len(), values.clone()).unwrap();
            let ck = Checkpoint { meta: BTreeMap::new(), tensors: vec![("t".into(), t)] };
            let back = Checkpoint::parse(&ck.to_text()).unwrap();
            let got = back.tensors[0].1.as_slice();
            for (a, b) in got.iter().zip(&values) {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }
}
