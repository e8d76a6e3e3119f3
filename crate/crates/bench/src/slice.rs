//! `slice`: fixes some indices of a dumped tensor and writes the rest as CSV.

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use layergreen::io;
use layergreen::tensor::default_labels;
use layergreen::DimLabel;
use ndarray::ArrayD;
use num_complex::Complex64 as C64;

/// Parses `dim=index` where `dim` is a label name, its short code or a position.
pub fn parse_fix(spec: &str, labels: &[DimLabel]) -> Result<(usize, usize)> {
    let (d, v) = spec.split_once('=').ok_or_else(|| anyhow!("expected dim=index, got \"{spec}\""))?;
    let dim = match DimLabel::parse(d) {
        Some(l) => labels.iter().position(|&x| x == l).ok_or_else(|| anyhow!("tensor has no {} dimension", l.name()))?,
        None => d.parse::<usize>().map_err(|_| anyhow!("unknown dimension \"{d}\""))?,
    };
    if dim >= labels.len() {
        bail!("dimension {dim} out of range");
    }
    let idx = v.parse::<usize>().map_err(|_| anyhow!("index must be a non-negative integer, got \"{v}\""))?;
    Ok((dim, idx))
}

/// Loads an `LGT1` or `LGK1` file and returns the requested sub-block.
pub fn slice_file(path: &Path, fixes: &[String]) -> Result<(Vec<usize>, ArrayD<C64>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let magic = bytes.get(..4).ok_or_else(|| anyhow!("file too short"))?;
    enum T {
        D(ArrayD<C64>),
        K(layergreen::TuckerTensor),
    }
    let t = if magic == io::DENSE_MAGIC {
        T::D(io::decode_dense(&bytes)?)
    } else if magic == io::TUCKER_MAGIC {
        T::K(io::decode_tucker(&bytes)?)
    } else {
        bail!("{}: not a tensor dump", path.display());
    };
    let dims: Vec<usize> = match &t {
        T::D(a) => a.shape().to_vec(),
        T::K(k) => k.dims(),
    };
    let labels = default_labels(dims.len());
    let mut ranges: Vec<std::ops::Range<usize>> = dims.iter().map(|&n| 0..n).collect();
    let mut free: Vec<bool> = vec![true; dims.len()];
    for f in fixes {
        let (d, i) = parse_fix(f, &labels)?;
        if i >= dims[d] {
            bail!("index {i} out of range for {} (extent {})", labels[d].name(), dims[d]);
        }
        ranges[d] = i..i + 1;
        free[d] = false;
    }
    let block = match t {
        T::D(a) => a.slice_each_axis(|ax| ndarray::Slice::from(ranges[ax.axis.index()].clone())).to_owned(),
        T::K(k) => k.reconstruct_ranges(&ranges)?,
    };
    let keep: Vec<usize> = (0..dims.len()).filter(|&d| free[d]).collect();
    Ok((keep, block))
}

pub fn write_csv(out: &mut dyn Write, labels: &[DimLabel], keep: &[usize], block: &ArrayD<C64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = keep.iter().map(|&d| labels[d].name().to_string()).collect();
    header.extend(["re", "im", "abs"].map(String::from));
    w.write_record(&header)?;
    for (ix, z) in block.indexed_iter() {
        let mut row: Vec<String> = keep.iter().map(|&d| ix[d].to_string()).collect();
        row.extend([format!("{:.9e}", z.re), format!("{:.9e}", z.im), format!("{:.9e}", z.norm())]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fix_by_name_code_and_position() {
        let l = default_labels(3);
        assert_eq!(parse_fix("frequency=4", &l).unwrap(), (2, 4));
        assert_eq!(parse_fix("1=0", &l).unwrap(), (1, 0));
        assert!(parse_fix("mu=0", &l).is_err());
        assert!(parse_fix("z", &l).is_err());
    }
}
