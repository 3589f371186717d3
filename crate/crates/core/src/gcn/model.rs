use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{param_usize, parse_params, Vocabulary};

const MODEL_MAGIC: &str = "#monogcn-model";
const MODEL_VERSION: &str = "v1";

/// Graph readout applied to the second GCN layer's node embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Avg,
    Sum,
    Max,
}

impl fmt::Display for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Readout::Avg => "avg",
            Readout::Sum => "sum",
            Readout::Max => "max",
        })
    }
}

impl FromStr for Readout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "avg" => Ok(Readout::Avg),
            "sum" => Ok(Readout::Sum),
            "max" => Ok(Readout::Max),
            other => Err(format!("unknown readout `{other}` (expected avg|sum|max)")),
        }
    }
}

/// Layer sizes: input features, two GCN layers and the classifier hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub h1: usize,
    pub h2: usize,
    pub hg: usize,
}

impl Dims {
    pub const DEFAULT_H1: usize = 500;
    pub const DEFAULT_H2: usize = 250;
    pub const DEFAULT_HG: usize = 64;

    pub fn with_input(d: usize) -> Self {
        Dims {
            d,
            h1: Self::DEFAULT_H1,
            h2: Self::DEFAULT_H2,
            hg: Self::DEFAULT_HG,
        }
    }
}

/// All trainable weights. GCN layers have no bias; the classifier head has
/// one hidden layer with bias and a single sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    /// d x h1
    pub w_gcn1: Array2<f64>,
    /// h1 x h2
    pub w_gcn2: Array2<f64>,
    /// h2 x hg
    pub w_hidden: Array2<f64>,
    pub b_hidden: Array1<f64>,
    /// hg (column vector)
    pub w_out: Array1<f64>,
    pub b_out: f64,
    pub nonneg_gcn: bool,
    pub nonneg_gclf: bool,
    pub readout: Readout,
}

/// Gradient of the loss with the same shapes as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_gcn1: Array2<f64>,
    pub w_gcn2: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub b_hidden: Array1<f64>,
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

pub const PARAM_NAMES: [&str; 6] = ["w_gcn1", "w_gcn2", "w_hidden", "b_hidden", "w_out", "b_out"];

fn glorot<R: Rng>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..=a))
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        ModelParams {
            dims,
            w_gcn1: Array2::zeros((dims.d, dims.h1)),
            w_gcn2: Array2::zeros((dims.h1, dims.h2)),
            w_hidden: Array2::zeros((dims.h2, dims.hg)),
            b_hidden: Array1::zeros(dims.hg),
            w_out: Array1::zeros(dims.hg),
            b_out: 0.0,
            nonneg_gcn: false,
            nonneg_gclf: false,
            readout: Readout::Avg,
        }
    }

    /// Uniform on `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`, zero
    /// biases, then projected if any non-negativity flag is set.
    pub fn init<R: Rng>(
        dims: Dims,
        nonneg_gcn: bool,
        nonneg_gclf: bool,
        readout: Readout,
        rng: &mut R,
    ) -> Self {
        let w_gcn1 = glorot(dims.d, dims.h1, dims.d, dims.h1, rng);
        let w_gcn2 = glorot(dims.h1, dims.h2, dims.h1, dims.h2, rng);
        let w_hidden = glorot(dims.h2, dims.hg, dims.h2, dims.hg, rng);
        let w_out = glorot(dims.hg, 1, dims.hg, 1, rng)
            .into_shape_with_order(dims.hg)
            .expect("column");
        let mut m = ModelParams {
            dims,
            w_gcn1,
            w_gcn2,
            w_hidden,
            b_hidden: Array1::zeros(dims.hg),
            w_out,
            b_out: 0.0,
            nonneg_gcn,
            nonneg_gclf,
            readout,
        };
        m.project_in_place();
        m
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w_gcn1.as_slice().expect("standard layout"),
            self.w_gcn2.as_slice().expect("standard layout"),
            self.w_hidden.as_slice().expect("standard layout"),
            self.b_hidden.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            std::slice::from_ref(&self.b_out),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w_gcn1.as_slice_mut().expect("standard layout"),
            self.w_gcn2.as_slice_mut().expect("standard layout"),
            self.w_hidden.as_slice_mut().expect("standard layout"),
            self.b_hidden.as_slice_mut().expect("standard layout"),
            self.w_out.as_slice_mut().expect("standard layout"),
            std::slice::from_mut(&mut self.b_out),
        ]
    }

    /// Copy with every negative entry of the flag-governed weight matrices
    /// set to zero. Biases are never touched.
    pub fn project_nonnegative(&self) -> ModelParams {
        let mut m = self.clone();
        m.project_in_place();
        m
    }

    pub fn project_in_place(&mut self) {
        let clip = |w: &mut f64| {
            if *w < 0.0 {
                *w = 0.0;
            }
        };
        if self.nonneg_gcn {
            self.w_gcn1.map_inplace(clip);
            self.w_gcn2.map_inplace(clip);
        }
        if self.nonneg_gclf {
            self.w_hidden.map_inplace(clip);
            self.w_out.map_inplace(clip);
        }
    }

    /// Negative entries among the governed matrices (zero after projection).
    pub fn governed_negatives(&self) -> usize {
        let count = |s: &[f64]| s.iter().filter(|&&w| w < 0.0).count();
        let t = self.tensors();
        let mut total = 0;
        if self.nonneg_gcn {
            total += count(t[0]) + count(t[1]);
        }
        if self.nonneg_gclf {
            total += count(t[2]) + count(t[4]);
        }
        total
    }

    pub fn is_fully_nonnegative(&self) -> bool {
        self.tensors()
            .iter()
            .enumerate()
            .filter(|(k, _)| matches!(k, 0 | 1 | 2 | 4))
            .all(|(_, s)| s.iter().all(|&w| w >= 0.0))
    }

    pub fn write_to<W: Write>(&self, vocab_hash: &str, mut out: W) -> std::io::Result<()> {
        let Dims { d, h1, h2, hg } = self.dims;
        writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}")?;
        writeln!(out, "dims d={d} h1={h1} h2={h2} hg={hg}")?;
        writeln!(
            out,
            "flags nonneg_gcn={} nonneg_gclf={} readout={}",
            self.nonneg_gcn, self.nonneg_gclf, self.readout
        )?;
        writeln!(out, "vocab_sha256 {vocab_hash}")?;
        let shapes = self.section_shapes();
        for ((name, (rows, cols)), values) in PARAM_NAMES.iter().zip(shapes).zip(self.tensors()) {
            writeln!(out, "section {name} {rows} {cols}")?;
            for row in values.chunks(cols) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
        writeln!(out, "end")?;
        out.flush()
    }

    fn section_shapes(&self) -> [(usize, usize); 6] {
        let Dims { d, h1, h2, hg } = self.dims;
        [(d, h1), (h1, h2), (h2, hg), (1, hg), (hg, 1), (1, 1)]
    }

    pub fn to_text(&self, vocab_hash: &str) -> String {
        let mut buf = Vec::new();
        self.write_to(vocab_hash, &mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("model text is ASCII")
    }

    /// Parses a model file, returning the parameters and the vocabulary hash
    /// it was trained against.
    pub fn parse(text: &str) -> Result<(ModelParams, String)> {
        let corrupt = |msg: String| Error::CorruptModel(msg);
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| {
                Error::CorruptModel(format!("unexpected end of file, expected {what}"))
            })
        };

        let header = next("header")?;
        let version = header
            .strip_prefix(MODEL_MAGIC)
            .map(str::trim)
            .ok_or_else(|| corrupt(format!("bad header `{header}`")))?;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch(format!(
                "model file is `{version}`, expected `{MODEL_VERSION}`"
            )));
        }

        let dims_line = next("dims line")?;
        let params = parse_params(
            dims_line
                .strip_prefix("dims")
                .ok_or_else(|| corrupt("missing dims line".into()))?,
            2,
        )?;
        let dims = Dims {
            d: param_usize(&params, "d", 2)?,
            h1: param_usize(&params, "h1", 2)?,
            h2: param_usize(&params, "h2", 2)?,
            hg: param_usize(&params, "hg", 2)?,
        };

        let flags_line = next("flags line")?;
        let flags = parse_params(
            flags_line
                .strip_prefix("flags")
                .ok_or_else(|| corrupt("missing flags line".into()))?,
            3,
        )?;
        let flag = |key: &str| -> Result<bool> {
            flags
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::CorruptModel(format!("bad or missing flag `{key}`")))
        };
        let readout: Readout = flags
            .get("readout")
            .ok_or_else(|| corrupt("missing readout".into()))?
            .parse()
            .map_err(corrupt)?;

        let hash_line = next("vocab hash line")?;
        let vocab_hash = hash_line
            .strip_prefix("vocab_sha256 ")
            .ok_or_else(|| corrupt("missing vocab_sha256 line".into()))?
            .trim()
            .to_string();

        let mut m = ModelParams::zeros(dims);
        m.nonneg_gcn = flag("nonneg_gcn")?;
        m.nonneg_gclf = flag("nonneg_gclf")?;
        m.readout = readout;
        let shapes = m.section_shapes();
        for ((name, (rows, cols)), dest) in PARAM_NAMES.iter().zip(shapes).zip(m.tensors_mut()) {
            let section = next("section header")?;
            let expected = format!("section {name} {rows} {cols}");
            if section != expected {
                return Err(corrupt(format!("expected `{expected}`, found `{section}`")));
            }
            for r in 0..rows {
                let row = next("weight row")?;
                let mut count = 0;
                for (c, tok) in row.split(' ').enumerate() {
                    if c >= cols {
                        return Err(corrupt(format!("{name} row {r} has too many values")));
                    }
                    dest[r * cols + c] = tok
                        .parse()
                        .map_err(|_| corrupt(format!("{name} row {r}: bad value `{tok}`")))?;
                    count += 1;
                }
                if count != cols {
                    return Err(corrupt(format!(
                        "{name} row {r} has {count} values, expected {cols}"
                    )));
                }
            }
        }
        if next("end marker")? != "end" {
            return Err(corrupt("missing end marker".into()));
        }
        Ok((m, vocab_hash))
    }

    pub fn save(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&vocab.content_hash(), std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Loads a model and refuses it unless it was trained against `vocab`.
    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<ModelParams> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text_checked(&text, vocab)
    }

    pub fn from_text_checked(text: &str, vocab: &Vocabulary) -> Result<ModelParams> {
        let (m, expected) = Self::parse(text)?;
        let actual = vocab.content_hash();
        if expected != actual {
            return Err(Error::VocabularyMismatch { expected, actual });
        }
        if m.dims.d != vocab.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model input dim {} but vocabulary dim {}",
                m.dims.d,
                vocab.dim()
            )));
        }
        Ok(m)
    }
}

impl Gradients {
    pub fn zeros(dims: Dims) -> Self {
        Gradients {
            w_gcn1: Array2::zeros((dims.d, dims.h1)),
            w_gcn2: Array2::zeros((dims.h1, dims.h2)),
            w_hidden: Array2::zeros((dims.h2, dims.hg)),
            b_hidden: Array1::zeros(dims.hg),
            w_out: Array1::zeros(dims.hg),
            b_out: 0.0,
        }
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w_gcn1.as_slice().expect("standard layout"),
            self.w_gcn2.as_slice().expect("standard layout"),
            self.w_hidden.as_slice().expect("standard layout"),
            self.b_hidden.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            std::slice::from_ref(&self.b_out),
        ]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.w_gcn1 += &other.w_gcn1;
        self.w_gcn2 += &other.w_gcn2;
        self.w_hidden += &other.w_hidden;
        self.b_hidden += &other.b_hidden;
        self.w_out += &other.w_out;
        self.b_out += other.b_out;
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}
