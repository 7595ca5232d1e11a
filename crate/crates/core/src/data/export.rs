//! Binary container and CSV dumps of environment batches.
//!
//! Container layout, all integers `u32` little-endian, floats `f64`
//! little-endian:
//!
//! ```text
//! "MTCRL1"  n_batches
//! per batch:  env_id  name_len  name(utf-8)  n_rows  n_tasks
//!   per task: input_dim  shared_with (task index, or u32::MAX for own data)
//!             [n_rows × input_dim floats, only when not shared]
//!             label_kind (0 binary, 1 class, 2 real)  n_rows label floats
//!             input_dim mask bytes (0/1)
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{DataError, EnvironmentBatch, Labels, Result};
use crate::tensor::Tensor;

pub const CONTAINER_MAGIC: &[u8; 6] = b"MTCRL1";
const OWN_DATA: u32 = u32::MAX;

pub fn write_container<W: Write>(mut w: W, batches: &[EnvironmentBatch]) -> Result<()> {
    w.write_all(CONTAINER_MAGIC)?;
    w.write_u32::<LittleEndian>(batches.len() as u32)?;
    for b in batches {
        w.write_u32::<LittleEndian>(b.env_id as u32)?;
        w.write_u32::<LittleEndian>(b.name.len() as u32)?;
        w.write_all(b.name.as_bytes())?;
        w.write_u32::<LittleEndian>(b.len() as u32)?;
        w.write_u32::<LittleEndian>(b.num_tasks() as u32)?;
        for t in 0..b.num_tasks() {
            let x = &b.inputs[t];
            w.write_u32::<LittleEndian>(x.cols() as u32)?;
            let shared = (0..t).find(|&s| Arc::ptr_eq(&b.inputs[s], x));
            match shared {
                Some(s) => w.write_u32::<LittleEndian>(s as u32)?,
                None => {
                    w.write_u32::<LittleEndian>(OWN_DATA)?;
                    for &v in x.data() {
                        w.write_f64::<LittleEndian>(v)?;
                    }
                }
            }
            let kind = match &b.labels[t] {
                Labels::Binary(_) => 0,
                Labels::Class(_) => 1,
                Labels::Real(_) => 2,
            };
            w.write_u32::<LittleEndian>(kind)?;
            for v in b.labels[t].as_f64() {
                w.write_f64::<LittleEndian>(v)?;
            }
            for &m in &b.causal_masks[t] {
                w.write_u8(u8::from(m))?;
            }
        }
    }
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<Vec<EnvironmentBatch>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return Err(DataError::Format("not an MTCRL1 container".into()));
    }
    let n_batches = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let env_id = r.read_u32::<LittleEndian>()? as usize;
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| DataError::Format("batch name is not utf-8".into()))?;
        let n_rows = r.read_u32::<LittleEndian>()? as usize;
        let n_tasks = r.read_u32::<LittleEndian>()? as usize;
        let mut inputs: Vec<Arc<Tensor>> = Vec::new();
        let (mut labels, mut masks) = (Vec::new(), Vec::new());
        for t in 0..n_tasks {
            let dim = r.read_u32::<LittleEndian>()? as usize;
            let shared = r.read_u32::<LittleEndian>()?;
            let x: Arc<Tensor> = if shared == OWN_DATA {
                let mut data = vec![0.0; n_rows * dim];
                r.read_f64_into::<LittleEndian>(&mut data)?;
                Arc::new(Tensor::matrix(n_rows, dim, data)?)
            } else {
                let s = shared as usize;
                if s >= t {
                    return Err(DataError::Format(format!("task {t} shares unknown task {s}")));
                }
                inputs[s].clone()
            };
            let kind = r.read_u32::<LittleEndian>()?;
            let mut vals = vec![0.0; n_rows];
            r.read_f64_into::<LittleEndian>(&mut vals)?;
            labels.push(match kind {
                0 => Labels::Binary(vals),
                1 => Labels::Class(vals.into_iter().map(|v| v as usize).collect()),
                2 => Labels::Real(vals),
                k => return Err(DataError::Format(format!("unknown label kind {k}"))),
            });
            let mut mask = vec![0u8; dim];
            r.read_exact(&mut mask)?;
            masks.push(mask.into_iter().map(|m| m != 0).collect());
            inputs.push(x);
        }
        let mut batch = EnvironmentBatch::new(name, inputs, labels, masks)?;
        batch.env_id = env_id;
        out.push(batch);
    }
    Ok(out)
}

/// One row per example: `env,row,x0..x{d-1},y0..y{T-1}`. Requires all tasks
/// to share their inputs.
pub fn write_csv<W: Write>(w: W, batches: &[EnvironmentBatch]) -> Result<()> {
    let Some(first) = batches.first() else {
        return Ok(());
    };
    let dim = first.inputs[0].cols();
    let tasks = first.num_tasks();
    if batches
        .iter()
        .any(|b| !b.shares_inputs() || b.inputs[0].cols() != dim || b.num_tasks() != tasks)
    {
        return Err(DataError::Format(
            "csv export needs shared inputs of one width across batches".into(),
        ));
    }
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["env".to_string(), "row".to_string()];
    header.extend((0..dim).map(|j| format!("x{j}")));
    header.extend((0..tasks).map(|t| format!("y{t}")));
    csv.write_record(&header)?;
    for b in batches {
        let ys: Vec<Vec<f64>> = b.labels.iter().map(|l| l.as_f64()).collect();
        for i in 0..b.len() {
            let mut rec = vec![b.name.clone(), i.to_string()];
            rec.extend(b.inputs[0].row_slice(i).iter().map(|v| v.to_string()));
            rec.extend(ys.iter().map(|y| y[i].to_string()));
            csv.write_record(&rec)?;
        }
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batches() -> Vec<EnvironmentBatch> {
        let shared = Arc::new(Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 1e-300]).unwrap());
        let own = Arc::new(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let mut b = EnvironmentBatch::new(
            "valid",
            vec![shared.clone(), shared, own],
            vec![
                Labels::Binary(vec![1.0, -1.0]),
                Labels::Class(vec![4, 9]),
                Labels::Real(vec![0.25, -7.5]),
            ],
            vec![vec![true, false], vec![false, true], vec![true]],
        )
        .unwrap();
        b.env_id = 3;
        vec![b]
    }

    #[test]
    fn container_roundtrip_is_exact() {
        let src = batches();
        let mut buf = Vec::new();
        write_container(&mut buf, &src).unwrap();
        assert_eq!(&buf[..6], b"MTCRL1");
        let back = read_container(buf.as_slice()).unwrap();
        assert_eq!(back, src);
        assert!(Arc::ptr_eq(&back[0].inputs[0], &back[0].inputs[1]));
    }

    #[test]
    fn truncated_container_fails() {
        let mut buf = Vec::new();
        write_container(&mut buf, &batches()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_container(buf.as_slice()).is_err());
        assert!(read_container(&b"MTCRL2\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn csv_needs_shared_inputs() {
        let mut out = Vec::new();
        assert!(write_csv(&mut out, &batches()).is_err());
        let b = batches()[0].select_tasks(&[0, 1]);
        write_csv(&mut out, &[b]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "env,row,x0,x1,y0,y1");
        assert_eq!(text.lines().count(), 3);
    }
}
