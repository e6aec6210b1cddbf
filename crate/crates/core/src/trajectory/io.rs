//! Trajectory file: `b"LGCT"`, version (u32), connection count (u32), iteration
//! count (u64), then one `(layer, to, from)` u32 triple per connection, then
//! each connection's series contiguously as little-endian f64.

use std::io::{Read, Write};

use super::{ConnectionId, TrajectoryError, TrajectoryStore};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"LGCT";
const VERSION: u32 = 1;

pub fn write_store(mut w: impl Write, store: &TrajectoryStore) -> Result<(), TrajectoryError> {
    let n_iter = store.n_iterations();
    w.write_all(TRAJECTORY_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.n_connections() as u32).to_le_bytes())?;
    w.write_all(&(n_iter as u64).to_le_bytes())?;
    for c in store.connections() {
        for v in [c.layer, c.to, c.from] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
    }
    let mut buf = Vec::with_capacity(n_iter * 8);
    for col in store.columns() {
        buf.clear();
        for v in col {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], TrajectoryError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_store(mut r: impl Read, run_id: impl Into<String>) -> Result<TrajectoryStore, TrajectoryError> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(TrajectoryError::Format(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(TrajectoryError::Format(format!("unsupported version {version}")));
    }
    let n_conn = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let n_iter = usize::try_from(u64::from_le_bytes(read_array(&mut r)?))
        .map_err(|_| TrajectoryError::Format("iteration count overflows usize".into()))?;
    let mut connections = Vec::with_capacity(n_conn);
    for _ in 0..n_conn {
        let mut f = [0usize; 3];
        for v in &mut f {
            *v = u32::from_le_bytes(read_array(&mut r)?) as usize;
        }
        connections.push(ConnectionId::new(f[0], f[1], f[2]));
    }
    let mut series = Vec::with_capacity(n_conn);
    let mut buf = vec![0u8; n_iter * 8];
    for _ in 0..n_conn {
        r.read_exact(&mut buf)?;
        series.push(
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        );
    }
    Ok(TrajectoryStore::from_columns(run_id.into(), connections, series))
}

/// One column per connection, header `layer.to.from`, one row per iteration.
pub fn write_store_csv(mut w: impl Write, store: &TrajectoryStore) -> Result<(), TrajectoryError> {
    let header: Vec<String> = store.connections().iter().map(ToString::to_string).collect();
    writeln!(w, "{}", header.join(","))?;
    let cols = store.columns();
    let mut line = String::new();
    for t in 0..store.n_iterations() {
        line.clear();
        for (i, col) in cols.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&col[t].to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
