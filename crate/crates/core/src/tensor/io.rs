//! `IWT1` binary container: magic, `u32` rank, `rank` little-endian `u32`
//! extents, then row-major little-endian `f32` values. Values are narrowed
//! to `f32` on write and widened back to `f64` on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const IWT_MAGIC: &[u8; 4] = b"IWT1";

pub fn write_tensor<W: Write>(w: W, tensor: &Tensor) -> Result<()> {
    write_stacked(w, &tensor.shape()[1..], &[tensor.data()], Some(tensor.shape()[0]))
}

/// Writes equal-shaped `items` as one container of shape `N × item_shape`.
pub fn write_stack<W: Write>(w: W, items: &[&Tensor]) -> Result<()> {
    let first = items.first().ok_or_else(|| Error::invalid("cannot write an empty stack"))?;
    if items.iter().any(|t| t.shape() != first.shape()) {
        return Err(Error::shape("stacked tensors must share one shape"));
    }
    let data: Vec<&[f64]> = items.iter().map(|t| t.data()).collect();
    write_stacked(w, first.shape(), &data, None)
}

fn write_stacked<W: Write>(mut w: W, item_shape: &[usize], items: &[&[f64]], lead: Option<usize>) -> Result<()> {
    let lead = lead.unwrap_or(items.len());
    w.write_all(IWT_MAGIC)?;
    w.write_all(&(item_shape.len() as u32 + 1).to_le_bytes())?;
    for &d in std::iter::once(&lead).chain(item_shape) {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::new();
    for item in items {
        buf.clear();
        buf.extend(item.iter().flat_map(|&v| (v as f32).to_le_bytes()));
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != IWT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected IWT1")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rank = u32::from_le_bytes(word) as usize;
    if rank == 0 || rank > 16 {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut word)?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    Ok(shape)
}

fn read_values<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let shape = read_header(&mut r)?;
    let data = read_values(&mut r, shape.iter().product())?;
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

/// Reads a container of shape `N × ...` as `N` separate tensors.
pub fn read_stack<R: Read>(mut r: R) -> Result<Vec<Tensor>> {
    let shape = read_header(&mut r)?;
    if shape.len() < 2 {
        return Err(Error::Format(format!("a stack needs rank ≥ 2, got shape {shape:?}")));
    }
    let item: Vec<usize> = shape[1..].to_vec();
    let n: usize = item.iter().product();
    (0..shape[0])
        .map(|_| Tensor::new(item.clone(), read_values(&mut r, n)?).map_err(|e| Error::Format(e.to_string())))
        .collect()
}

pub fn write_tensor_file(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor(BufReader::new(File::open(path)?))
}

pub fn write_stack_file(path: impl AsRef<Path>, items: &[&Tensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stack(&mut w, items)?;
    w.flush()?;
    Ok(())
}

pub fn read_stack_file(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    read_stack(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let expected: Vec<u8> = [
            b"IWT1".to_vec(),
            2u32.to_le_bytes().to_vec(),
            2u32.to_le_bytes().to_vec(),
            1u32.to_le_bytes().to_vec(),
            1.5f32.to_le_bytes().to_vec(),
            (-2.0f32).to_le_bytes().to_vec(),
        ]
        .concat();
        assert_eq!(buf, expected);
        assert_eq!(read_tensor(&buf[..]).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_tensor(&b"IWT2\x01\x00\x00\x00"[..]).is_err());
        let t = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(read_tensor(&buf[..]).is_err());
    }

    #[test]
    fn values_are_widened_from_f32() {
        let t = Tensor::vector(vec![0.1]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&buf[..]).unwrap();
        assert_eq!(back.data()[0], 0.1f32 as f64);
    }

    #[test]
    fn stack_matches_single_tensor_layout() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let mut stacked = Vec::new();
        write_stack(&mut stacked, &[&a, &b]).unwrap();
        let whole = Tensor::new(vec![2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        let mut single = Vec::new();
        write_tensor(&mut single, &whole).unwrap();
        assert_eq!(stacked, single);
        let back = read_stack(stacked.as_slice()).unwrap();
        assert_eq!(back, vec![a, b.clone()]);
        let c = Tensor::zeros(vec![3]);
        assert!(write_stack(Vec::new(), &[&b, &c]).is_err());
    }
}
