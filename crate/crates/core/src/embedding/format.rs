//! Binary embedding file.
//!
//! ```text
//! magic      4 bytes  "CFEB"
//! version    u16 LE   1
//! dimension  u32 LE
//! count      u64 LE
//! count × { id_len u16 LE, id UTF-8 bytes, dimension × f32 LE }
//! ```

use std::fs::File;
use std::io::{BufReader, ErrorKind, Read, Write};
use std::path::Path;

use super::{EmbeddingKind, EmbeddingStore, StoreBuilder};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFEB";
pub const FORMAT_VERSION: u16 = 1;

fn read_array<const N: usize, R: Read>(r: &mut R, record: &str, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => {
            Error::ingest(record, format!("truncated payload while reading {what}"))
        }
        _ => Error::ingest(record, e.to_string()),
    })?;
    Ok(buf)
}

/// Reads and validates a whole embedding file, normalizing every vector.
pub fn ingest<R: Read>(input: R, kind: EmbeddingKind) -> Result<EmbeddingStore> {
    let mut r = BufReader::new(input);
    let magic: [u8; 4] = read_array(&mut r, "header", "magic")?;
    if &magic != MAGIC {
        return Err(Error::ingest("header", "bad magic bytes"));
    }
    let version = u16::from_le_bytes(read_array(&mut r, "header", "version")?);
    if version != FORMAT_VERSION {
        return Err(Error::ingest(
            "header",
            format!("unsupported version {version}"),
        ));
    }
    let dim = u32::from_le_bytes(read_array(&mut r, "header", "dimension")?) as usize;
    if dim == 0 {
        return Err(Error::ingest("header", "dimension is zero"));
    }
    let count = u64::from_le_bytes(read_array(&mut r, "header", "record count")?);
    let count = usize::try_from(count)
        .map_err(|_| Error::ingest("header", "record count does not fit in memory"))?;

    // Cap the reservation; a corrupt header must not trigger a huge allocation.
    let mut builder = StoreBuilder::with_capacity(kind, dim, count.min(1 << 16));
    let mut raw = vec![0u8; dim * 4];
    let mut vector = vec![0f64; dim];
    for ordinal in 0..count {
        let record = format!("#{ordinal}");
        let id_len = u16::from_le_bytes(read_array(&mut r, &record, "id length")?) as usize;
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes)
            .map_err(|_| Error::ingest(&record, "truncated payload while reading id"))?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| Error::ingest(&record, "id is not valid UTF-8"))?;
        r.read_exact(&mut raw).map_err(|_| {
            Error::ingest(
                format!("{record} (`{id}`)"),
                "truncated payload while reading vector",
            )
        })?;
        for (dst, chunk) in vector.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        }
        builder.push(id, &vector)?;
    }
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::ingest(
                format!("#{count}"),
                format!("trailing data after {count} declared records"),
            ))
        }
        Err(e) => return Err(Error::ingest(format!("#{count}"), e.to_string())),
    }
    Ok(builder.seal())
}

pub fn ingest_file(path: &Path, kind: EmbeddingKind) -> Result<EmbeddingStore> {
    if !path.exists() {
        return Err(Error::MissingInput {
            path: path.to_path_buf(),
            reason: "embedding file not found".into(),
        });
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest(file, kind)
}

/// Writes records in the given order. Components are stored as f32.
pub fn write_embeddings<'a, W: Write>(
    mut out: W,
    dim: usize,
    records: impl ExactSizeIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let dim32 = u32::try_from(dim).map_err(|_| Error::Argument("dimension exceeds u32".into()))?;
    let io = |e| Error::io("<embedding output>", e);
    let mut buf = Vec::with_capacity(18);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim32.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.write_all(&buf).map_err(io)?;
    for (id, vector) in records {
        if vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: vector.len(),
            });
        }
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::Argument(format!("id `{id}` longer than 65535 bytes")))?;
        buf.clear();
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for &x in vector {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}

impl EmbeddingStore {
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        write_embeddings(out, self.dim(), self.iter_exact())
    }

    fn iter_exact(&self) -> impl ExactSizeIterator<Item = (&str, &[f64])> + '_ {
        (0..self.len()).map(move |i| (self.id(i), self.vector(i)))
    }
}
