//! CSV tables written by the commands and the matching reader.
//!
//! Floats are printed as `{:.16e}` (17 significant digits), so every value
//! reads back bit-exactly. Vector-valued fields expand into numbered columns.

use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};

use crate::CliError;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub trait CsvRecord: Sized {
    /// Header for rows whose vector fields have `width` entries.
    fn header(width: usize) -> Vec<String>;
    fn fields(&self) -> Vec<String>;
    fn parse(fields: &Fields) -> Result<Self, CliError>;
    fn width(&self) -> usize;
}

/// A parsed row addressed by column name.
pub struct Fields<'a> {
    header: &'a StringRecord,
    row: &'a StringRecord,
}

fn bad(msg: String) -> CliError {
    CliError::Config(format!("csv: {msg}"))
}

impl Fields<'_> {
    fn raw(&self, name: &str) -> Result<&str, CliError> {
        let i = self.header.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column '{name}'")))?;
        self.row.get(i).ok_or_else(|| bad(format!("short row at column '{name}'")))
    }

    pub fn f64(&self, name: &str) -> Result<f64, CliError> {
        let s = self.raw(name)?;
        s.parse().map_err(|_| bad(format!("'{s}' in column '{name}' is not a number")))
    }

    pub fn int<T: std::str::FromStr>(&self, name: &str) -> Result<T, CliError> {
        let s = self.raw(name)?;
        s.parse().map_err(|_| bad(format!("'{s}' in column '{name}' is not an integer")))
    }

    pub fn bool(&self, name: &str) -> Result<bool, CliError> {
        match self.raw(name)? {
            "true" => Ok(true),
            "false" => Ok(false),
            s => Err(bad(format!("'{s}' in column '{name}' is not a boolean"))),
        }
    }

    pub fn string(&self, name: &str) -> Result<String, CliError> {
        self.raw(name).map(str::to_string)
    }

    /// Values of `prefix_1, prefix_2, ..` in order.
    pub fn vec<T: std::str::FromStr>(&self, prefix: &str) -> Result<Vec<T>, CliError> {
        let mut out = Vec::new();
        for i in 1.. {
            let name = format!("{prefix}_{i}");
            if !self.header.iter().any(|h| h == name) {
                break;
            }
            let s = self.raw(&name)?;
            out.push(s.parse().map_err(|_| bad(format!("'{s}' in column '{name}' is not a number")))?);
        }
        Ok(out)
    }
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

pub fn write_csv<R: CsvRecord, W: Write>(rows: &[R], width: usize, out: W) -> Result<(), CliError> {
    let mut w = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(out);
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(R::header(width)).map_err(io)?;
    for r in rows {
        if r.width() != width || r.fields().len() != R::header(width).len() {
            return Err(CliError::Io(format!("row width {} differs from table width {width}", r.width())));
        }
        w.write_record(r.fields()).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn to_csv_string<R: CsvRecord>(rows: &[R], width: usize) -> Result<String, CliError> {
    let mut buf = Vec::new();
    write_csv(rows, width, &mut buf)?;
    String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))
}

pub fn read_csv<R: CsvRecord, I: Read>(input: I) -> Result<Vec<R>, CliError> {
    let mut r = ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let row = rec.map_err(|e| bad(e.to_string()))?;
        out.push(R::parse(&Fields { header: &header, row: &row })?);
    }
    Ok(out)
}

/// One sample of `cmd simulate`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationRow {
    pub t: f64,
    pub phi: Vec<f64>,
    pub y: Vec<f64>,
    pub h: f64,
}

impl CsvRecord for SimulationRow {
    fn header(n: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(numbered("phi", n));
        h.extend(numbered("y", n));
        h.push("H".into());
        h
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![fmt_f64(self.t)];
        f.extend(self.phi.iter().chain(&self.y).map(|v| fmt_f64(*v)));
        f.push(fmt_f64(self.h));
        f
    }

    fn parse(f: &Fields) -> Result<Self, CliError> {
        let (phi, y): (Vec<f64>, Vec<f64>) = (f.vec("phi")?, f.vec("y")?);
        if phi.len() != y.len() {
            return Err(bad(format!("{} phi columns but {} y columns", phi.len(), y.len())));
        }
        Ok(Self { t: f.f64("t")?, phi, y, h: f.f64("H")? })
    }

    fn width(&self) -> usize {
        self.phi.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyRow {
    pub index: usize,
    pub omega: f64,
    pub amplitude: f64,
    pub residual: f64,
}

impl CsvRecord for FrequencyRow {
    fn header(_: usize) -> Vec<String> {
        ["index", "omega", "amplitude", "residual"].map(String::from).to_vec()
    }

    fn fields(&self) -> Vec<String> {
        vec![self.index.to_string(), fmt_f64(self.omega), fmt_f64(self.amplitude), fmt_f64(self.residual)]
    }

    fn parse(f: &Fields) -> Result<Self, CliError> {
        Ok(Self {
            index: f.int("index")?,
            omega: f.f64("omega")?,
            amplitude: f.f64("amplitude")?,
            residual: f.f64("residual")?,
        })
    }

    fn width(&self) -> usize {
        0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiophantineRow {
    pub gamma: f64,
    pub k_max: u32,
    pub l_lower: f64,
    pub worst_k: Vec<i64>,
}

impl CsvRecord for DiophantineRow {
    fn header(n: usize) -> Vec<String> {
        let mut h = ["gamma", "k_max", "l_lower"].map(String::from).to_vec();
        h.extend(numbered("worst_k", n));
        h
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![fmt_f64(self.gamma), self.k_max.to_string(), fmt_f64(self.l_lower)];
        f.extend(self.worst_k.iter().map(i64::to_string));
        f
    }

    fn parse(f: &Fields) -> Result<Self, CliError> {
        Ok(Self {
            gamma: f.f64("gamma")?,
            k_max: f.int("k_max")?,
            l_lower: f.f64("l_lower")?,
            worst_k: f.vec("worst_k")?,
        })
    }

    fn width(&self) -> usize {
        self.worst_k.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnfRow {
    pub iteration: usize,
    pub residual: f64,
}

impl CsvRecord for KnfRow {
    fn header(_: usize) -> Vec<String> {
        ["iteration", "residual"].map(String::from).to_vec()
    }

    fn fields(&self) -> Vec<String> {
        vec![self.iteration.to_string(), fmt_f64(self.residual)]
    }

    fn parse(f: &Fields) -> Result<Self, CliError> {
        Ok(Self { iteration: f.int("iteration")?, residual: f.f64("residual")? })
    }

    fn width(&self) -> usize {
        0
    }
}

/// One epsilon of `cmd kam`. Failed cells carry NaN values and a reason code.
#[derive(Clone, Debug, PartialEq)]
pub struct KamRow {
    pub epsilon: f64,
    pub max_torus_deviation: f64,
    pub conjugacy_error: f64,
    pub freq: Vec<f64>,
    pub psi_dist: f64,
    pub passed: bool,
    pub reason: String,
}

impl CsvRecord for KamRow {
    fn header(n: usize) -> Vec<String> {
        let mut h = ["epsilon", "max_torus_deviation", "conjugacy_error"].map(String::from).to_vec();
        h.extend(numbered("freq", n));
        h.extend(["psi_dist", "passed", "reason"].map(String::from));
        h
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![fmt_f64(self.epsilon), fmt_f64(self.max_torus_deviation), fmt_f64(self.conjugacy_error)];
        f.extend(self.freq.iter().map(|v| fmt_f64(*v)));
        f.extend([fmt_f64(self.psi_dist), self.passed.to_string(), self.reason.clone()]);
        f
    }

    fn parse(f: &Fields) -> Result<Self, CliError> {
        Ok(Self {
            epsilon: f.f64("epsilon")?,
            max_torus_deviation: f.f64("max_torus_deviation")?,
            conjugacy_error: f.f64("conjugacy_error")?,
            freq: f.vec("freq")?,
            psi_dist: f.f64("psi_dist")?,
            passed: f.bool("passed")?,
            reason: f.string("reason")?,
        })
    }

    fn width(&self) -> usize {
        self.freq.len()
    }
}

/// One lattice generator; the modular period is repeated on every row.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeRow {
    pub row: usize,
    pub lambda: Vec<f64>,
    pub residual: f64,
    pub modular_period: f64,
}

impl CsvRecord for LatticeRow {
    fn header(n: usize) -> Vec<String> {
        let mut h = vec!["row".to_string()];
        h.extend(numbered("lambda", n));
        h.extend(["residual", "modular_period"].map(String::from));
        h
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![self.row.to_string()];
        f.extend(self.lambda.iter().map(|v| fmt_f64(*v)));
        f.extend([fmt_f64(self.residual), fmt_f64(self.modular_period)]);
        f
    }

    fn parse(f: &Fields) -> Result<Self, CliError> {
        Ok(Self {
            row: f.int("row")?,
            lambda: f.vec("lambda")?,
            residual: f.f64("residual")?,
            modular_period: f.f64("modular_period")?,
        })
    }

    fn width(&self) -> usize {
        self.lambda.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleRow {
    pub name: String,
    pub notes: String,
}

impl CsvRecord for ExampleRow {
    fn header(_: usize) -> Vec<String> {
        ["name", "notes"].map(String::from).to_vec()
    }

    fn fields(&self) -> Vec<String> {
        vec![self.name.clone(), self.notes.clone()]
    }

    fn parse(f: &Fields) -> Result<Self, CliError> {
        Ok(Self { name: f.string("name")?, notes: f.string("notes")? })
    }

    fn width(&self) -> usize {
        0
    }
}
