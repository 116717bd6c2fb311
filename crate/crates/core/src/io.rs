//! File formats for tensors and models.
//!
//! - Dense binary: `"OCT1" | order u32 | dims u64* | values f64*`, little
//!   endian, values first-index-fastest.
//! - Coordinate text: a header line `N d1 ... dN`, then one `i1 ... iN value`
//!   line per entry with 1-based indices. Blank lines and `#` comments are
//!   ignored.
//! - Kruskal text: `kruskal N R`, then per mode a `factor n I` line followed
//!   by `I` rows of `R` values, then a closing `lambda` line.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::cp::KruskalModel;
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix, Shape, SparseTensor};

pub const DENSE_MAGIC: &[u8; 4] = b"OCT1";

pub fn write_dense(t: &DenseTensor, w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(DENSE_MAGIC)?;
    w.write_u32::<LE>(t.order() as u32)?;
    for &d in t.dims() {
        w.write_u64::<LE>(d as u64)?;
    }
    for &v in t.data() {
        w.write_f64::<LE>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dense(r: impl Read) -> Result<DenseTensor> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DENSE_MAGIC {
        return Err(Error::Parse("not a dense tensor file (bad magic)".into()));
    }
    let order = r.read_u32::<LE>()? as usize;
    if !(2..=64).contains(&order) {
        return Err(Error::Parse(format!("implausible tensor order {order}")));
    }
    let dims = (0..order)
        .map(|_| Ok(r.read_u64::<LE>()? as usize))
        .collect::<Result<Vec<_>>>()?;
    let shape = Shape::new(dims)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != shape.numel().saturating_mul(8) {
        return Err(Error::Parse(format!(
            "{} value bytes for a {shape} tensor",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    DenseTensor::from_vec(shape, data)
}

/// Writes the nonzero entries in coordinate form.
pub fn write_coo(t: &SparseTensor, w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    let dims: Vec<String> = t.shape().dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "{} {}", t.shape().order(), dims.join(" "))?;
    for (index, value) in t.entries() {
        for i in index {
            write!(w, "{} ", i + 1)?;
        }
        writeln!(w, "{value}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coo(r: impl Read) -> Result<SparseTensor> {
    let mut lines = BufReader::new(r)
        .lines()
        .enumerate()
        .map(|(n, l)| l.map(|l| (n + 1, l)))
        .filter(|l| {
            l.as_ref()
                .map_or(true, |(_, s)| !s.trim().is_empty() && !s.trim_start().starts_with('#'))
        });
    let (n, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty coordinate file".into()))??;
    let head = parse_fields::<usize>(&header, n)?;
    let (&order, dims) = head
        .split_first()
        .ok_or_else(|| Error::Parse(format!("line {n}: missing header")))?;
    if dims.len() != order {
        return Err(Error::Parse(format!(
            "line {n}: header declares order {order} but lists {} extents",
            dims.len()
        )));
    }
    let shape = Shape::new(dims.to_vec())?;
    let mut entries = Vec::new();
    for line in lines {
        let (n, text) = line?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != order + 1 {
            return Err(Error::Parse(format!(
                "line {n}: expected {} fields, found {}",
                order + 1,
                fields.len()
            )));
        }
        let index = fields[..order]
            .iter()
            .map(|f| match f.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(i - 1),
                _ => Err(Error::Parse(format!("line {n}: bad 1-based index {f:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let value = fields[order]
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("line {n}: bad value: {e}")))?;
        entries.push((index, value));
    }
    SparseTensor::new(shape, entries)
}

pub fn write_kruskal(m: &KruskalModel, w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "kruskal {} {}", m.order(), m.rank())?;
    for (n, f) in m.factors().iter().enumerate() {
        writeln!(w, "factor {n} {}", f.nrows())?;
        for row in f.row_iter() {
            writeln!(w, "{}", join(row.iter()))?;
        }
    }
    writeln!(w, "lambda {}", join(m.lambda().iter()))?;
    w.flush()?;
    Ok(())
}

pub fn read_kruskal(r: impl Read) -> Result<KruskalModel> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, line)) => Ok((n + 1, line?)),
            None => Err(Error::Parse(format!("unexpected end of file, expected {what}"))),
        }
    };
    let (n, header) = next("header")?;
    let (order, rank) = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["kruskal", o, r] => (parse_one::<usize>(o, n)?, parse_one::<usize>(r, n)?),
        _ => return Err(Error::Parse(format!("line {n}: expected `kruskal N R`"))),
    };
    if !(2..=64).contains(&order) {
        return Err(Error::Parse(format!("line {n}: implausible order {order}")));
    }
    let mut factors = Vec::with_capacity(order);
    for mode in 0..order {
        let (n, head) = next("factor header")?;
        let rows = match head.split_whitespace().collect::<Vec<_>>()[..] {
            ["factor", m, i] if parse_one::<usize>(m, n)? == mode => parse_one::<usize>(i, n)?,
            _ => return Err(Error::Parse(format!("line {n}: expected `factor {mode} I`"))),
        };
        let mut data = Vec::with_capacity(rows.saturating_mul(rank).min(1 << 24));
        for _ in 0..rows {
            let (n, line) = next("factor row")?;
            let row = parse_fields::<f64>(&line, n)?;
            if row.len() != rank {
                return Err(Error::Parse(format!("line {n}: expected {rank} values")));
            }
            data.extend(row);
        }
        factors.push(Matrix::from_row_slice(rows, rank, &data));
    }
    let (n, lambda_line) = next("lambda")?;
    let lambda = match lambda_line.strip_prefix("lambda") {
        Some(rest) => parse_fields::<f64>(rest, n)?,
        None => return Err(Error::Parse(format!("line {n}: expected `lambda ...`"))),
    };
    KruskalModel::new(factors, lambda)
}

pub fn save_dense(t: &DenseTensor, path: impl AsRef<Path>) -> Result<()> {
    write_dense(t, std::fs::File::create(path)?)
}

/// Loads a tensor from either the dense binary or the coordinate text format.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(DENSE_MAGIC) {
        read_dense(&bytes[..])
    } else {
        Ok(read_coo(&bytes[..])?.to_dense())
    }
}

pub fn save_kruskal(m: &KruskalModel, path: impl AsRef<Path>) -> Result<()> {
    write_kruskal(m, std::fs::File::create(path)?)
}

pub fn load_kruskal(path: impl AsRef<Path>) -> Result<KruskalModel> {
    read_kruskal(std::fs::File::open(path)?)
}

fn join<'a>(xs: impl Iterator<Item = &'a f64>) -> String {
    xs.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_one<T: std::str::FromStr>(s: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| Error::Parse(format!("line {line}: {s:?}: {e}")))
}

fn parse_fields<T: std::str::FromStr>(s: &str, line: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split_whitespace().map(|f| parse_one(f, line)).collect()
}
