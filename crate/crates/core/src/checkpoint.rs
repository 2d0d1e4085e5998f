//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "NASRECKP"
//! version    u32       = 1
//! step       u64       optimizer step counter
//! count      u32       number of tensors
//! repeated count times:
//!   name_len u32, name utf-8 bytes
//!   ndim u32, dims u64 * ndim
//!   has_acc u8         1 when an Adagrad accumulator follows
//!   data f32 * prod(dims)
//!   acc  f32 * prod(dims)   (only when has_acc == 1)
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{NasError, Result};
use crate::optim::Adagrad;
use crate::tensor::{ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"NASRECKP";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    store: &ParamStore<T>,
    opt: Option<&Adagrad<T>>,
    step: u64,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(step)?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for (id, name, t) in store.iter() {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        let acc = opt.and_then(|o| o.accumulator(id));
        w.write_u8(acc.is_some() as u8)?;
        for x in t.data() {
            w.write_f32::<LittleEndian>(x.as_f64() as f32)?;
        }
        if let Some(a) = acc {
            for x in a {
                w.write_f32::<LittleEndian>(x.as_f64() as f32)?;
            }
        }
    }
    Ok(())
}

pub struct Checkpoint<T> {
    pub store: ParamStore<T>,
    pub optimizer: Adagrad<T>,
    pub step: u64,
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R, base_lr: f64) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NasError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(NasError::Format(format!("unsupported checkpoint version {version}")));
    }
    let step = r.read_u64::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut store = ParamStore::new();
    let mut optimizer = Adagrad::new(base_lr);
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NasError::Format(e.to_string()))?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let has_acc = r.read_u8()? == 1;
        let n: usize = shape.iter().product();
        let read_vec = |r: &mut R| -> Result<Vec<T>> {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(T::of(r.read_f32::<LittleEndian>()? as f64));
            }
            Ok(v)
        };
        let data = read_vec(&mut r)?;
        let id = store.add(name, Tensor::new(&shape, data)?)?;
        if has_acc {
            let acc = read_vec(&mut r)?;
            optimizer.set_accumulator(id, acc);
        }
    }
    Ok(Checkpoint {
        store,
        optimizer,
        step,
    })
}
