//! TNS1 tensor files and 8-bit PGM image export.
//!
//! TNS1 layout: one ASCII header line `TNS1 <dtype> <ndim> <d0> <d1> ...\n`
//! followed by row-major little-endian scalars. Complex tensors are stored
//! with a trailing extent of 2, real and imaginary parts interleaved per
//! element. Masks use dtype `u8`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ComplexTensor, RealTensor};

fn write_header(out: &mut Vec<u8>, dtype: &str, shape: &[usize]) {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let line = format!("TNS1 {} {} {}\n", dtype, shape.len(), dims.join(" "));
    out.extend_from_slice(line.as_bytes());
}

fn parse_header(line: &str) -> Result<(String, Vec<usize>)> {
    let mut parts = line.split_whitespace();
    match parts.next() {
        Some("TNS1") => {}
        _ => return Err(Error::Format("missing TNS1 magic".into())),
    }
    let dtype = parts
        .next()
        .ok_or_else(|| Error::Format("missing dtype".into()))?
        .to_string();
    let ndim: usize = parts
        .next()
        .ok_or_else(|| Error::Format("missing ndim".into()))?
        .parse()
        .map_err(|_| Error::Format("bad ndim".into()))?;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d: usize = parts
            .next()
            .ok_or_else(|| Error::Format("missing extent".into()))?
            .parse()
            .map_err(|_| Error::Format("bad extent".into()))?;
        shape.push(d);
    }
    if parts.next().is_some() {
        return Err(Error::Format("trailing tokens in header".into()));
    }
    Ok((dtype, shape))
}

fn read_line(r: &mut impl Read) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(Error::Format("unexpected end of header".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        if line.len() > 4096 {
            return Err(Error::Format("header line too long".into()));
        }
        line.push(byte[0]);
    }
    String::from_utf8(line).map_err(|_| Error::Format("header is not UTF-8".into()))
}

/// Serializes a real tensor to TNS1 bytes.
pub fn real_to_bytes<T: Scalar>(t: &RealTensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + t.len() * T::BYTES);
    write_header(&mut out, T::DTYPE, t.shape());
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn write_real<T: Scalar>(path: &Path, t: &RealTensor<T>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&real_to_bytes(t))?;
    Ok(())
}

pub fn read_real<T: Scalar>(path: &Path) -> Result<RealTensor<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let (dtype, shape) = parse_header(&read_line(&mut r)?)?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "{}: dtype {} does not match requested {}",
            path.display(),
            dtype,
            T::DTYPE
        )));
    }
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * T::BYTES];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
    let data = buf.chunks_exact(T::BYTES).map(T::read_le).collect();
    RealTensor::new(shape, data)
}

/// Serializes a complex tensor: logical shape plus trailing extent 2,
/// re/im interleaved per element.
pub fn complex_to_bytes<T: Scalar>(t: &ComplexTensor<T>) -> Vec<u8> {
    let mut shape = t.shape().to_vec();
    shape.push(2);
    let mut out = Vec::with_capacity(64 + 2 * t.len() * T::BYTES);
    write_header(&mut out, T::DTYPE, &shape);
    for i in 0..t.len() {
        let z = t.at(i);
        z.re.write_le(&mut out);
        z.im.write_le(&mut out);
    }
    out
}

pub fn write_complex<T: Scalar>(path: &Path, t: &ComplexTensor<T>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&complex_to_bytes(t))?;
    Ok(())
}

pub fn read_complex<T: Scalar>(path: &Path) -> Result<ComplexTensor<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let (dtype, mut shape) = parse_header(&read_line(&mut r)?)?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "{}: dtype {} does not match requested {}",
            path.display(),
            dtype,
            T::DTYPE
        )));
    }
    if shape.last() != Some(&2) {
        return Err(Error::Format(format!(
            "{}: complex tensor needs trailing extent 2, got {:?}",
            path.display(),
            shape
        )));
    }
    shape.pop();
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; 2 * n * T::BYTES];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for pair in buf.chunks_exact(2 * T::BYTES) {
        re.push(T::read_le(&pair[..T::BYTES]));
        im.push(T::read_le(&pair[T::BYTES..]));
    }
    ComplexTensor::new(RealTensor::new(shape.clone(), re)?, RealTensor::new(shape, im)?)
}

/// Writes a u8 tensor (used for sampling masks).
pub fn write_u8(path: &Path, shape: &[usize], data: &[u8]) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::Dimension(format!(
            "u8 tensor shape {:?} wants {} bytes, got {}",
            shape,
            n,
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(64 + n);
    write_header(&mut out, "u8", shape);
    out.extend_from_slice(data);
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&out)?;
    Ok(())
}

pub fn read_u8(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let (dtype, shape) = parse_header(&read_line(&mut r)?)?;
    if dtype != "u8" {
        return Err(Error::Format(format!(
            "{}: expected u8 tensor, got {}",
            path.display(),
            dtype
        )));
    }
    let n: usize = shape.iter().product();
    let mut data = vec![0u8; n];
    r.read_exact(&mut data)
        .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
    Ok((shape, data))
}

/// Writes an 8-bit binary PGM (P5). `pixels` is row-major, `h * w` long.
pub fn write_pgm(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != h * w {
        return Err(Error::Dimension(format!(
            "pgm {}x{} wants {} pixels, got {}",
            h,
            w,
            h * w,
            pixels.len()
        )));
    }
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P5\n{} {}\n255\n", w, h)?;
    f.write_all(pixels)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_line(&mut r)?;
    if magic.trim() != "P5" {
        return Err(Error::Format(format!("{}: not a P5 PGM", path.display())));
    }
    let dims = read_line(&mut r)?;
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad PGM width".into()))?;
    let h: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad PGM height".into()))?;
    let maxval = read_line(&mut r)?;
    if maxval.trim() != "255" {
        return Err(Error::Format("PGM maxval must be 255".into()));
    }
    let mut data = vec![0u8; h * w];
    r.read_exact(&mut data)
        .map_err(|_| Error::Format(format!("{}: truncated PGM", path.display())))?;
    Ok((h, w, data))
}
