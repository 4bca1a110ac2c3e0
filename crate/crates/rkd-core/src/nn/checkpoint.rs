//! Model checkpoint format: a small text header, a blank line, then the raw
//! little-endian f32 parameter bytes in canonical flat order.
//!
//! ```text
//! layer_sizes=4,8,3
//! dtype=f32
//! byte_order=little-endian
//! param_count=67
//!
//! <67 * 4 bytes>
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::model::{param_count, MlpModel, ParamVector};

pub fn save_checkpoint(model: &MlpModel, writer: &mut impl Write) -> Result<()> {
    let sizes: Vec<String> = model.layer_sizes().iter().map(|s| s.to_string()).collect();
    writeln!(writer, "layer_sizes={}", sizes.join(","))?;
    writeln!(writer, "dtype=f32")?;
    writeln!(writer, "byte_order=little-endian")?;
    writeln!(writer, "param_count={}", model.param_count())?;
    writeln!(writer)?;
    for &v in model.flatten().values() {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(reader: &mut impl Read) -> Result<MlpModel> {
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    // The first "\n\n" ends the header; the body starts right after it.
    let split = raw
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Checkpoint("no blank line terminating the header".into()))?;
    let header = std::str::from_utf8(&raw[..split])
        .map_err(|_| Error::Checkpoint("header is not valid UTF-8".into()))?;
    let body = &raw[split + 2..];

    let mut layer_sizes: Option<Vec<usize>> = None;
    let mut declared_count: Option<usize> = None;
    for line in header.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
        match key {
            "layer_sizes" => {
                let sizes = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Checkpoint(format!("bad layer_sizes `{value}`")))?;
                layer_sizes = Some(sizes);
            }
            "dtype" => {
                if value != "f32" {
                    return Err(Error::Checkpoint(format!("unsupported dtype `{value}`")));
                }
            }
            "byte_order" => {
                if value != "little-endian" {
                    return Err(Error::Checkpoint(format!("unsupported byte order `{value}`")));
                }
            }
            "param_count" => {
                declared_count = Some(
                    value
                        .parse()
                        .map_err(|_| Error::Checkpoint(format!("bad param_count `{value}`")))?,
                );
            }
            other => {
                return Err(Error::Checkpoint(format!("unknown header key `{other}`")));
            }
        }
    }

    let layer_sizes =
        layer_sizes.ok_or_else(|| Error::Checkpoint("missing layer_sizes".into()))?;
    let declared = declared_count.ok_or_else(|| Error::Checkpoint("missing param_count".into()))?;
    let expected = param_count(&layer_sizes);
    if declared != expected {
        return Err(Error::Checkpoint(format!(
            "param_count {declared} does not match layer sizes {layer_sizes:?} (need {expected})"
        )));
    }
    if body.len() != expected * 4 {
        return Err(Error::Checkpoint(format!(
            "body holds {} bytes, expected {}",
            body.len(),
            expected * 4
        )));
    }
    let mut values = Vec::with_capacity(expected);
    for chunk in body.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter value".into()));
        }
        values.push(v);
    }
    MlpModel::unflatten(&ParamVector::new(values), &layer_sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_mlp;

    #[test]
    fn round_trip_is_bitwise_identical() {
        let m = init_mlp(&[4, 8, 3], 5).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&m, &mut buf).unwrap();
        let m2 = load_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(m.flatten().values(), m2.flatten().values());
        assert_eq!(m.layer_sizes(), m2.layer_sizes());
    }

    #[test]
    fn truncated_body_is_rejected() {
        let m = init_mlp(&[4, 8, 3], 5).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(
            load_checkpoint(&mut buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let text = b"layer_sizes=2,2\ndtype=f32\nbyte_order=little-endian\nparam_count=5\n\n";
        let mut buf = text.to_vec();
        buf.extend(std::iter::repeat(0u8).take(5 * 4));
        assert!(matches!(
            load_checkpoint(&mut buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn unknown_key_and_bad_dtype_are_rejected() {
        let bad_key = b"layer_sizes=2,2\nfoo=bar\n\n".to_vec();
        assert!(load_checkpoint(&mut bad_key.as_slice()).is_err());
        let bad_dtype = b"layer_sizes=2,2\ndtype=f64\nparam_count=6\n\n".to_vec();
        assert!(load_checkpoint(&mut bad_dtype.as_slice()).is_err());
    }
}
