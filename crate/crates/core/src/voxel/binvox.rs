//! binvox v1: an ASCII header followed by run-length `(value, count)` byte
//! pairs. binvox orders voxels y-fastest, then z, then x; grids here are
//! x-fastest, so both directions remap indices.

use super::OccupancyGrid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BinvoxError {
    #[error("malformed binvox header: {0}")]
    MalformedHeader(String),
    #[error("RLE payload ended after {decoded} of {expected} voxels")]
    TruncatedRLEPayload { decoded: usize, expected: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

fn binvox_order(res: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..res).flat_map(move |x| (0..res).flat_map(move |z| (0..res).map(move |y| (x, y, z))))
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, BinvoxError> {
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| start + i)
        .ok_or_else(|| BinvoxError::MalformedHeader("unterminated header line".into()))?;
    *pos = end + 1;
    std::str::from_utf8(&bytes[start..end])
        .map(|s| s.trim_end_matches('\r'))
        .map_err(|_| BinvoxError::MalformedHeader("header is not ASCII".into()))
}

fn parse_floats<const N: usize>(fields: &[&str], what: &str) -> Result<[f64; N], BinvoxError> {
    if fields.len() != N {
        return Err(BinvoxError::MalformedHeader(format!(
            "{what} expects {N} values"
        )));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f
            .parse()
            .map_err(|_| BinvoxError::MalformedHeader(format!("bad {what} value {f:?}")))?;
    }
    Ok(out)
}

pub fn read_binvox(bytes: &[u8]) -> Result<OccupancyGrid, BinvoxError> {
    let mut pos = 0;
    let magic = read_line(bytes, &mut pos)?;
    if magic.trim() != "#binvox 1" {
        return Err(BinvoxError::MalformedHeader(format!(
            "bad magic line {magic:?}"
        )));
    }
    let mut dims: Option<[usize; 3]> = None;
    let mut translate = [0.0; 3];
    let mut scale = 1.0;
    loop {
        let line = read_line(bytes, &mut pos)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first().copied() {
            Some("dim") => {
                let d = parse_floats::<3>(&fields[1..], "dim")?;
                if d.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
                    return Err(BinvoxError::MalformedHeader(format!("bad dim {d:?}")));
                }
                dims = Some(d.map(|v| v as usize));
            }
            Some("translate") => translate = parse_floats::<3>(&fields[1..], "translate")?,
            Some("scale") => scale = parse_floats::<1>(&fields[1..], "scale")?[0],
            Some("data") => break,
            Some(other) => {
                return Err(BinvoxError::MalformedHeader(format!(
                    "unknown line {other:?}"
                )))
            }
            None => return Err(BinvoxError::MalformedHeader("empty header line".into())),
        }
    }
    let [d, h, w] = dims.ok_or_else(|| BinvoxError::MalformedHeader("missing dim line".into()))?;
    if d != h || h != w {
        return Err(BinvoxError::DimensionMismatch(format!(
            "non-cubic grid {d}x{h}x{w}"
        )));
    }
    let res = d;
    let expected = res * res * res;
    let payload = &bytes[pos..];
    let mut values = Vec::with_capacity(expected);
    for pair in payload.chunks(2) {
        let [value, count] = pair else {
            return Err(BinvoxError::TruncatedRLEPayload {
                decoded: values.len(),
                expected,
            });
        };
        if values.len() + *count as usize > expected {
            return Err(BinvoxError::DimensionMismatch(format!(
                "RLE payload holds more than {expected} voxels"
            )));
        }
        values.extend(std::iter::repeat_n(*value != 0, *count as usize));
    }
    if values.len() < expected {
        return Err(BinvoxError::TruncatedRLEPayload {
            decoded: values.len(),
            expected,
        });
    }
    let mut grid = OccupancyGrid {
        resolution: res,
        data: vec![false; expected],
        translate,
        scale,
    };
    for ((x, y, z), v) in binvox_order(res).zip(values) {
        grid.set(x, y, z, v);
    }
    Ok(grid)
}

pub fn write_binvox(grid: &OccupancyGrid) -> Vec<u8> {
    let res = grid.resolution;
    let [tx, ty, tz] = grid.translate;
    let mut out = format!(
        "#binvox 1\ndim {res} {res} {res}\ntranslate {tx} {ty} {tz}\nscale {}\ndata\n",
        grid.scale
    )
    .into_bytes();
    let mut run: Option<(bool, u8)> = None;
    for (x, y, z) in binvox_order(res) {
        let v = grid.get(x, y, z);
        run = match run {
            Some((rv, c)) if rv == v && c < u8::MAX => Some((rv, c + 1)),
            Some((rv, c)) => {
                out.extend_from_slice(&[rv as u8, c]);
                Some((v, 1))
            }
            None => Some((v, 1)),
        };
    }
    if let Some((rv, c)) = run {
        out.extend_from_slice(&[rv as u8, c]);
    }
    out
}
